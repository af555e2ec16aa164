"""Point-cloud file formats, primitive records, and report serialization.

Clouds: ASCII PLY, binary little-endian PLY (both require x, y, z, nx, ny, nz
as float or double properties), and plain XYZN text (six decimals per row).
Structured outputs are JSON with full float round-trip precision; curves go
to CSV. Report JSON deliberately omits wall-clock timings so that equal-seed
runs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
from typing import Optional

import numpy as np

from .datagen import GroundTruth
from .detector import DetectionReport, DetectorConfig
from .geometry import Cone, Cylinder, Plane, PointCloud, Primitive, Sphere
from .metrics import CoverageCurve
from .ppf import Tolerances

NORMAL_BAND = 1e-3


class CloudFormatError(ValueError):
    """Malformed or unsupported input data."""


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}
_REQUIRED = ("x", "y", "z", "nx", "ny", "nz")


def _infer_format(path: str) -> str:
    lower = str(path).lower()
    if lower.endswith(".ply"):
        return "ply"
    if lower.endswith((".xyz", ".xyzn", ".txt")):
        return "xyzn"
    raise CloudFormatError(f"cannot infer cloud format from {path!r}; pass it explicitly")


def _finish_cloud(positions: np.ndarray, normals: np.ndarray, path) -> PointCloud:
    lengths = np.linalg.norm(normals, axis=1)
    off = np.abs(lengths - 1.0)
    if np.any(off > NORMAL_BAND):
        worst = float(off.max())
        raise CloudFormatError(
            f"{path}: normals must be unit length within {NORMAL_BAND} "
            f"(worst deviation {worst:.4g}); renormalization refused"
        )
    return PointCloud(positions, normals / lengths[:, None])


def _parse_rows(lines, n_fields: int, path, first_line: int) -> np.ndarray:
    rows = np.empty((len(lines), n_fields))
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) < n_fields:
            raise CloudFormatError(
                f"{path}:{first_line + i}: expected {n_fields} values, got {len(parts)}"
            )
        try:
            rows[i] = [float(p) for p in parts[:n_fields]]
        except ValueError as exc:
            raise CloudFormatError(f"{path}:{first_line + i}: {exc}") from None
    return rows


def read_xyzn(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.readlines()
    lines, numbers = [], []
    for i, line in enumerate(raw):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            lines.append(stripped)
            numbers.append(i + 1)
    if not lines:
        raise CloudFormatError(f"{path}: no data rows")
    rows = np.empty((len(lines), 6))
    for k, line in enumerate(lines):
        parts = line.split()
        if len(parts) != 6:
            raise CloudFormatError(
                f"{path}:{numbers[k]}: expected 6 values (x y z nx ny nz), got {len(parts)}"
            )
        try:
            rows[k] = [float(p) for p in parts]
        except ValueError as exc:
            raise CloudFormatError(f"{path}:{numbers[k]}: {exc}") from None
    return _finish_cloud(rows[:, :3], rows[:, 3:], path)


def write_xyzn(path, cloud: PointCloud):
    data = np.hstack([cloud.positions, cloud.normals])
    with open(path, "w", encoding="utf-8") as fh:
        for row in data:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _read_ply_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise CloudFormatError(f"{path}: not a PLY file")
    fmt = None
    n_vertex = None
    properties = []
    in_vertex = False
    header_lines = 1
    while True:
        line = fh.readline()
        if not line:
            raise CloudFormatError(f"{path}: unexpected end of header")
        header_lines += 1
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary"
            elif parts[1] == "binary_big_endian":
                raise CloudFormatError(
                    f"{path}: big-endian PLY is not supported; convert to little-endian"
                )
            else:
                raise CloudFormatError(f"{path}: unknown PLY format {parts[1]!r}")
        elif parts[0] == "element":
            if parts[1] == "vertex":
                if n_vertex is not None:
                    raise CloudFormatError(f"{path}: duplicate vertex element")
                n_vertex = int(parts[2])
                in_vertex = True
            else:
                if n_vertex is None:
                    raise CloudFormatError(
                        f"{path}: only PLY files with a leading vertex element are supported"
                    )
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise CloudFormatError(f"{path}: list properties on vertices are not supported")
            if parts[1] not in _PLY_TYPES:
                raise CloudFormatError(
                    f"{path}: unsupported vertex property type {parts[1]!r} (need float/double)"
                )
            properties.append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
    if fmt is None or n_vertex is None:
        raise CloudFormatError(f"{path}: incomplete PLY header")
    names = [p[0] for p in properties]
    missing = [f for f in _REQUIRED if f not in names]
    if missing:
        if set(missing) & {"nx", "ny", "nz"}:
            raise CloudFormatError(
                f"{path}: normals required (missing vertex properties: {', '.join(missing)})"
            )
        raise CloudFormatError(f"{path}: missing vertex properties: {', '.join(missing)}")
    return fmt, n_vertex, properties, header_lines


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, n_vertex, properties, header_lines = _read_ply_header(fh, path)
        names = [p[0] for p in properties]
        if fmt == "binary":
            dtype = np.dtype(properties)
            buf = fh.read(dtype.itemsize * n_vertex)
            if len(buf) < dtype.itemsize * n_vertex:
                raise CloudFormatError(f"{path}: truncated binary vertex data")
            data = np.frombuffer(buf, dtype=dtype, count=n_vertex)
            cols = {name: data[name].astype(np.float64) for name in _REQUIRED}
        else:
            lines = fh.read().decode("ascii", errors="replace").splitlines()
            lines = [ln for ln in lines if ln.strip()]
            if len(lines) < n_vertex:
                raise CloudFormatError(
                    f"{path}: vertex element declares {n_vertex} rows, found {len(lines)}"
                )
            rows = _parse_rows(lines[:n_vertex], len(properties), path, header_lines + 1)
            cols = {name: rows[:, i] for i, name in enumerate(names) if name in _REQUIRED}
    positions = np.column_stack([cols["x"], cols["y"], cols["z"]])
    normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
    return _finish_cloud(positions, normals, path)


def write_ply(path, cloud: PointCloud, binary: bool = False):
    n = len(cloud)
    ptype = "double"
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
    ]
    header += [f"property {ptype} {name}" for name in _REQUIRED]
    header.append("end_header")
    data = np.hstack([cloud.positions, cloud.normals])
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(header) + "\n")
            for row in data:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_cloud(path, fmt: Optional[str] = None) -> PointCloud:
    fmt = fmt or _infer_format(path)
    if fmt in ("ply", "ply-ascii", "ply-binary"):
        return read_ply(path)
    if fmt == "xyzn":
        return read_xyzn(path)
    raise CloudFormatError(f"unknown cloud format {fmt!r}")


def write_cloud(path, cloud: PointCloud, fmt: Optional[str] = None):
    fmt = fmt or _infer_format(path)
    if fmt in ("ply", "ply-ascii"):
        write_ply(path, cloud, binary=False)
    elif fmt == "ply-binary":
        write_ply(path, cloud, binary=True)
    elif fmt == "xyzn":
        write_xyzn(path, cloud)
    else:
        raise CloudFormatError(f"unknown cloud format {fmt!r}")


def primitive_to_record(prim: Primitive, vote_mass: Optional[float] = None) -> dict:
    if isinstance(prim, Plane):
        rec = {"type": "plane", "normal": prim.normal.tolist(), "offset": prim.offset}
    elif isinstance(prim, Sphere):
        rec = {"type": "sphere", "center": prim.center.tolist(), "radius": prim.radius}
    elif isinstance(prim, Cylinder):
        rec = {
            "type": "cylinder",
            "axis": prim.axis.tolist(),
            "foot": prim.foot.tolist(),
            "radius": prim.radius,
        }
    elif isinstance(prim, Cone):
        rec = {
            "type": "cone",
            "apex": prim.apex.tolist(),
            "axis": prim.axis.tolist(),
            "opening_angle_rad": prim.opening_angle,
        }
    else:
        raise TypeError(f"unknown primitive type: {type(prim)!r}")
    if vote_mass is not None:
        rec["vote_mass"] = float(vote_mass)
    return rec


def record_to_primitive(rec: dict) -> Primitive:
    try:
        kind = rec["type"]
        if kind == "plane":
            return Plane(rec["normal"], rec["offset"])
        if kind == "sphere":
            return Sphere(rec["center"], rec["radius"])
        if kind == "cylinder":
            return Cylinder(rec["axis"], rec["foot"], rec["radius"])
        if kind == "cone":
            return Cone(rec["apex"], rec["axis"], rec["opening_angle_rad"])
    except KeyError as exc:
        raise CloudFormatError(f"primitive record missing field {exc}") from None
    raise CloudFormatError(f"unknown primitive type tag {rec.get('type')!r}")


def config_to_dict(config: DetectorConfig) -> dict:
    return {
        "n_reference": config.n_reference,
        "n_pair": config.n_pair,
        "angle_bin": config.angle_bin,
        "radius_bin_fraction": config.radius_bin_fraction,
        "radius_bin_count": config.radius_bin_count,
        "max_pair_distance_fraction": config.max_pair_distance_fraction,
        "min_votes": config.min_votes,
        "cluster_dist_fraction": config.cluster_dist_fraction,
        "cluster_angle": config.cluster_angle,
        "tolerances": {
            "eps_np": config.tolerances.eps_np,
            "eps_pc": config.tolerances.eps_pc,
            "eps_as": config.tolerances.eps_as,
            "eps_vt": config.tolerances.eps_vt,
        },
        "enabled_types": list(config.enabled_types),
        "use_vote_spreading": config.use_vote_spreading,
        "use_bin_averaging": config.use_bin_averaging,
        "use_cluster_averaging": config.use_cluster_averaging,
        "per_type_extraction": config.per_type_extraction,
        "vote_floor_on": config.vote_floor_on,
        "min_cone_angle": config.min_cone_angle,
        "rng_seed": config.rng_seed,
    }


def config_from_dict(data: dict) -> DetectorConfig:
    kwargs = dict(data)
    tol = kwargs.pop("tolerances", None)
    if tol is not None:
        kwargs["tolerances"] = Tolerances(**tol)
    kwargs["enabled_types"] = tuple(kwargs.get("enabled_types", ("plane", "sphere", "cylinder", "cone")))
    return DetectorConfig(**kwargs)


def _dump_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def write_report(path, report: DetectionReport):
    """Serialize a detection report (timings excluded, see module docstring)."""
    payload = {
        "scene_diameter": report.scene_diameter,
        "config": config_to_dict(report.config),
        "primitives": [
            primitive_to_record(p, m)
            for p, m in zip(report.primitives, report.vote_masses)
        ],
        "inlier_labels": np.asarray(report.labels).tolist(),
    }
    _dump_json(path, payload)


def read_report(path) -> DetectionReport:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key in ("scene_diameter", "config", "primitives", "inlier_labels"):
        if key not in data:
            raise CloudFormatError(f"{path}: report missing field {key!r}")
    prims = [record_to_primitive(rec) for rec in data["primitives"]]
    masses = [float(rec.get("vote_mass", 0.0)) for rec in data["primitives"]]
    labels = np.asarray(data["inlier_labels"], dtype=np.int64)
    return DetectionReport(
        primitives=prims,
        vote_masses=masses,
        labels=labels,
        config=config_from_dict(data["config"]),
        scene_diameter=float(data["scene_diameter"]),
        timings_ms={},
    )


def write_ground_truth(path, gt: GroundTruth):
    payload = {
        "noise_sigma": gt.noise_sigma,
        "sigma_abs": gt.sigma_abs,
        "diameter": gt.diameter,
        "primitives": [primitive_to_record(p) for p in gt.primitives],
        "labels": np.asarray(gt.labels).tolist(),
    }
    _dump_json(path, payload)


def read_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key in ("noise_sigma", "sigma_abs", "diameter", "primitives", "labels"):
        if key not in data:
            raise CloudFormatError(f"{path}: ground truth missing field {key!r}")
    return GroundTruth(
        primitives=[record_to_primitive(rec) for rec in data["primitives"]],
        labels=np.asarray(data["labels"], dtype=np.int64),
        noise_sigma=float(data["noise_sigma"]),
        sigma_abs=float(data["sigma_abs"]),
        diameter=float(data["diameter"]),
    )


def write_curves_csv(path, p_curve: CoverageCurve, s_curve: Optional[CoverageCurve] = None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,p_coverage,s_coverage\n")
        for i, eps in enumerate(p_curve.epsilons):
            s_val = s_curve.values[i] if s_curve is not None else math.nan
            fh.write(f"{eps:.17g},{p_curve.values[i]:.17g},{s_val:.17g}\n")


def write_labels_csv(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point_index,primitive_index\n")
        for i, lab in enumerate(np.asarray(labels)):
            fh.write(f"{i},{int(lab)}\n")
