"""Synthetic depth-camera scenes: analytic primitives ray-cast with exact normals.

A pinhole camera shoots one ray per pixel (row-major); each ray keeps the
nearest front-facing hit over all placed primitives, recording the exact
position, exact outward normal, and the primitive index. Gaussian depth noise
(standard deviation sigma * scene diameter, clipped at four sigma) displaces
positions along the ray; normals stay exact at the noiseless hit unless an
explicit angular jitter is requested.

Primitives are rendered as bounded patches (discs, capped cylinders and
cones) so several of them fit in one view; the ground truth stores the
corresponding unbounded primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    Cone,
    Cylinder,
    Plane,
    PointCloud,
    Primitive,
    Sphere,
    scene_diameter,
    surface_normal_at,
)

_T_MIN = 1e-9


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene.

    ``counts`` maps primitive kind to the number of instances (total 1..20).
    ``noise_sigma`` and all size parameters are fractions of the scene scale;
    sizes refer to the nominal scale of the camera frustum box, noise to the
    realized cloud diameter.
    """

    counts: dict
    noise_sigma: float = 0.0
    width: int = 400
    height: int = 400
    fov_deg: float = 60.0
    camera_position: tuple = (0.0, 0.0, 0.0)
    camera_rotation: Optional[tuple] = None  # row-major 3x3, None = identity
    depth_range: tuple = (2.0, 4.0)
    size_range: tuple = (0.04, 0.12)
    cone_angle_range_deg: tuple = (15.0, 40.0)
    min_visible_fraction: float = 0.015
    normal_jitter_deg: float = 0.0
    backdrop_plane: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        total = sum(self.counts.values())
        if not 1 <= total <= 20:
            raise ValueError(f"total primitive count must be in [1, 20], got {total}")
        bad = [k for k in self.counts if k not in ("plane", "sphere", "cylinder", "cone")]
        if bad:
            raise ValueError(f"unknown primitive kinds: {bad}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.width * self.height > 160_000:
            raise ValueError("resolution must not exceed 160k pixels")
        if not 0 < self.depth_range[0] < self.depth_range[1]:
            raise ValueError("depth_range must be increasing and positive")

    @property
    def nominal_scale(self) -> float:
        z0, z1 = self.depth_range
        hw = z1 * math.tan(math.radians(self.fov_deg) / 2)
        return math.sqrt(2 * (2 * hw) ** 2 + (z1 - z0) ** 2)

    def to_dict(self) -> dict:
        rot = self.camera_rotation
        return {
            "counts": dict(self.counts),
            "noise_sigma": self.noise_sigma,
            "width": self.width,
            "height": self.height,
            "fov_deg": self.fov_deg,
            "camera_position": list(self.camera_position),
            "camera_rotation": None if rot is None else [list(r) for r in rot],
            "depth_range": list(self.depth_range),
            "size_range": list(self.size_range),
            "cone_angle_range_deg": list(self.cone_angle_range_deg),
            "min_visible_fraction": self.min_visible_fraction,
            "normal_jitter_deg": self.normal_jitter_deg,
            "backdrop_plane": self.backdrop_plane,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        if "counts" not in data:
            raise ValueError("scene spec requires a 'counts' mapping")
        kwargs = {"counts": dict(data["counts"])}
        for key in (
            "noise_sigma", "width", "height", "fov_deg", "min_visible_fraction",
            "normal_jitter_deg", "backdrop_plane", "rng_seed",
        ):
            if key in data:
                kwargs[key] = data[key]
        for key in ("camera_position", "depth_range", "size_range", "cone_angle_range_deg"):
            if key in data:
                kwargs[key] = tuple(data[key])
        if data.get("camera_rotation") is not None:
            kwargs["camera_rotation"] = tuple(tuple(r) for r in data["camera_rotation"])
        unknown = set(data) - set(kwargs) - {"camera_rotation"}
        if unknown:
            raise ValueError(f"unknown scene spec fields: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class GroundTruth:
    primitives: list
    labels: np.ndarray  # per-point index into primitives
    noise_sigma: float  # fraction of the noiseless cloud diameter
    sigma_abs: float    # absolute noise standard deviation
    diameter: float     # noiseless cloud diameter


@dataclass
class _Patch:
    """A primitive plus the finite extent actually rendered."""

    primitive: Primitive
    center: np.ndarray = None       # plane disc center
    patch_radius: float = 0.0       # plane disc radius
    half_height: float = 0.0        # cylinder axial half-extent around center
    height: float = 0.0             # cone axial extent from the apex


def _quadratic_roots(a, b, c):
    """Real roots of a t^2 + 2 b t + c, ascending; NaN where complex."""
    disc = b * b - a * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, (-b - sq) / a, np.nan)
        t2 = np.where(ok, (-b + sq) / a, np.nan)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    return lo, hi


def _patch_hits(origin: np.ndarray, dirs: np.ndarray, patch: _Patch) -> np.ndarray:
    """Ray parameter of the nearest front-facing in-bounds hit, inf for misses."""
    prim = patch.primitive
    m = dirs.shape[0]
    t_out = np.full(m, np.inf)
    if isinstance(prim, Plane):
        denom = dirs @ prim.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (prim.offset - origin @ prim.normal) / denom
        ok = (denom < 0.0) & (t > _T_MIN)
        if patch.center is not None:
            hits = origin + t[:, None] * dirs
            ok &= np.linalg.norm(hits - patch.center, axis=1) <= patch.patch_radius
        t_out[ok] = t[ok]
        return t_out
    if isinstance(prim, Sphere):
        oc = origin - prim.center
        b = dirs @ oc
        c = oc @ oc - prim.radius**2
        lo, _ = _quadratic_roots(np.ones(m), b, np.full(m, c))
        ok = np.isfinite(lo) & (lo > _T_MIN)
        t_out[ok] = lo[ok]
        return t_out
    if isinstance(prim, Cylinder):
        a = prim.axis
        oc = origin - prim.foot
        d_par = dirs @ a
        dd = dirs - d_par[:, None] * a
        oo = oc - (oc @ a) * a
        qa = np.einsum("ij,ij->i", dd, dd)
        qb = dd @ oo
        qc = oo @ oo - prim.radius**2
        good = qa > 1e-14
        lo = np.full(m, np.nan)
        lo[good], _ = _quadratic_roots(qa[good], qb[good], np.full(good.sum(), qc))
        ok = np.isfinite(lo) & (lo > _T_MIN)
        if patch.half_height > 0:
            u = (origin @ a - patch.center @ a) + lo * d_par
            ok &= np.abs(u) <= patch.half_height
        t_out[ok] = lo[ok]
        return t_out
    if isinstance(prim, Cone):
        a = prim.axis
        cos2 = math.cos(prim.opening_angle) ** 2
        oc = origin - prim.apex
        d_par = dirs @ a
        o_par = float(oc @ a)
        qa = d_par**2 - cos2
        qb = o_par * d_par - cos2 * (dirs @ oc)
        qc = o_par**2 - cos2 * float(oc @ oc)
        lo = np.full(m, np.nan)
        hi = np.full(m, np.nan)
        quad = np.abs(qa) > 1e-14
        lo[quad], hi[quad] = _quadratic_roots(qa[quad], qb[quad], np.full(quad.sum(), qc))
        lin = ~quad & (np.abs(qb) > 1e-14)
        lo[lin] = -qc / (2.0 * qb[lin])
        for root in (lo, hi):
            ok = np.isfinite(root) & (root > _T_MIN) & ~np.isfinite(t_out)
            if not np.any(ok):
                continue
            hits = origin + root[ok, None] * dirs[ok]
            u = (hits - prim.apex) @ a
            valid = (u > _T_MIN) & (u <= patch.height if patch.height > 0 else np.full(ok.sum(), True))
            nrm = surface_normal_at(hits, prim)
            valid &= np.einsum("ij,ij->i", nrm, dirs[ok]) < 0.0
            idx = np.flatnonzero(ok)[valid]
            t_out[idx] = root[idx]
        return t_out
    raise TypeError(f"unknown primitive type: {type(prim)!r}")


def intersect_ray(origin, direction, primitive: Primitive) -> Optional[float]:
    """Nearest positive front-facing ray hit on an unbounded primitive, or None."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    patch = _Patch(primitive)
    t = _patch_hits(origin, direction[None, :], patch)[0]
    if not np.isfinite(t):
        return None
    if not isinstance(primitive, Cone):
        hit = origin + t * direction
        if float(surface_normal_at(hit, primitive) @ direction) >= 0.0:
            return None
    return float(t)


def _pixel_rays(spec: SceneSpec):
    f = (spec.width / 2.0) / math.tan(math.radians(spec.fov_deg) / 2.0)
    u = np.arange(spec.width) + 0.5 - spec.width / 2.0
    v = np.arange(spec.height) + 0.5 - spec.height / 2.0
    uu, vv = np.meshgrid(u, v)  # row-major: v (rows) outer, u (cols) inner
    dirs = np.stack([uu.ravel() / f, vv.ravel() / f, np.ones(uu.size)], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if spec.camera_rotation is not None:
        rot = np.asarray(spec.camera_rotation, dtype=np.float64)
        dirs = dirs @ rot.T
    origin = np.asarray(spec.camera_position, dtype=np.float64)
    return origin, dirs


def _random_unit(rng) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _draw_patch(kind: str, spec: SceneSpec, rng) -> _Patch:
    scale = spec.nominal_scale
    z0, z1 = spec.depth_range
    z = rng.uniform(z0 + 0.1 * (z1 - z0), z1 - 0.1 * (z1 - z0))
    size = rng.uniform(*spec.size_range) * scale
    hw = z * math.tan(math.radians(spec.fov_deg) / 2.0)
    hw = max(0.15 * hw, hw - size)
    center_cam = np.array([rng.uniform(-hw, hw), rng.uniform(-hw, hw), z])
    if spec.camera_rotation is not None:
        rot = np.asarray(spec.camera_rotation, dtype=np.float64)
        center = rot @ center_cam + np.asarray(spec.camera_position)
        view = rot @ np.array([0.0, 0.0, 1.0])
    else:
        center = center_cam + np.asarray(spec.camera_position)
        view = np.array([0.0, 0.0, 1.0])

    if kind == "plane":
        n = _random_unit(rng)
        if float(n @ view) > 0.0:
            n = -n
        return _Patch(Plane(n, float(n @ center)), center=center, patch_radius=size)
    if kind == "sphere":
        return _Patch(Sphere(center, 0.5 * size))
    if kind == "cylinder":
        axis = _random_unit(rng)
        return _Patch(
            Cylinder(axis, center, 0.45 * size), center=center, half_height=0.8 * size
        )
    theta = math.radians(rng.uniform(*spec.cone_angle_range_deg))
    axis = _random_unit(rng)
    # keep the rendered band inside the voting range of the axis offset
    max_height = 0.11 * scale * math.cos(theta) / math.tan(theta)
    height = min(2.5 * size, max_height)
    return _Patch(Cone(center, axis, theta), height=height)


def _render(origin, dirs, patches):
    ts = np.stack([_patch_hits(origin, dirs, p) for p in patches])
    owner = np.argmin(ts, axis=0)
    t_best = ts[owner, np.arange(dirs.shape[0])]
    visible = np.isfinite(t_best)
    return owner, t_best, visible


def generate_scene(spec: SceneSpec):
    """Render a scene spec into a point cloud and its ground truth.

    Primitives that stay below the visibility floor are redrawn up to ten
    times and dropped from the scene if still not visible enough.
    Deterministic for a given spec.
    """
    rng = np.random.default_rng(spec.rng_seed)
    origin, dirs = _pixel_rays(spec)
    n_rays = dirs.shape[0]
    min_px = max(1, int(spec.min_visible_fraction * n_rays))

    patches = []
    if spec.backdrop_plane:
        # camera-facing wall behind the scene so every ray hits something
        z_back = spec.depth_range[1] * 1.1
        if spec.camera_rotation is not None:
            rot = np.asarray(spec.camera_rotation, dtype=np.float64)
            view = rot @ np.array([0.0, 0.0, 1.0])
        else:
            view = np.array([0.0, 0.0, 1.0])
        center = np.asarray(spec.camera_position) + z_back * view
        radius = 3.0 * z_back * math.tan(math.radians(spec.fov_deg) / 2.0)
        patches.append(
            _Patch(Plane(-view, float(-view @ center)), center=center, patch_radius=radius)
        )
    n_fixed = len(patches)
    for kind in ("plane", "sphere", "cylinder", "cone"):
        for _ in range(spec.counts.get(kind, 0)):
            patches.append(_draw_patch(kind, spec, rng))

    for _ in range(10):
        owner, t_best, visible = _render(origin, dirs, patches)
        counts = np.bincount(owner[visible], minlength=len(patches))
        bad = np.flatnonzero(counts < min_px)
        bad = bad[bad >= n_fixed]
        if bad.size == 0:
            break
        for b in bad:
            patches[b] = _draw_patch(patches[b].primitive.kind, spec, rng)
    else:
        owner, t_best, visible = _render(origin, dirs, patches)
        counts = np.bincount(owner[visible], minlength=len(patches))
        keep = [i for i in range(len(patches)) if counts[i] >= min_px or i < n_fixed]
        if not keep:
            raise RuntimeError("no primitive became visible; relax the scene spec")
        patches = [patches[i] for i in keep]
        owner, t_best, visible = _render(origin, dirs, patches)

    ray_dirs = dirs[visible]
    positions = origin + t_best[visible, None] * ray_dirs
    labels = owner[visible].astype(np.int64)
    normals = np.empty_like(positions)
    for i, patch in enumerate(patches):
        sel = labels == i
        normals[sel] = surface_normal_at(positions[sel], patch.primitive)

    diameter = scene_diameter(positions)
    sigma_abs = spec.noise_sigma * diameter
    if sigma_abs > 0.0:
        depth_noise = rng.standard_normal(positions.shape[0]) * sigma_abs
        np.clip(depth_noise, -4.0 * sigma_abs, 4.0 * sigma_abs, out=depth_noise)
        positions = positions + depth_noise[:, None] * ray_dirs
    if spec.normal_jitter_deg > 0.0:
        normals = _jitter_normals(normals, math.radians(spec.normal_jitter_deg), rng)

    cloud = PointCloud(positions, normals)
    gt = GroundTruth(
        primitives=[p.primitive for p in patches],
        labels=labels,
        noise_sigma=spec.noise_sigma,
        sigma_abs=sigma_abs,
        diameter=diameter,
    )
    return cloud, gt


def _jitter_normals(normals: np.ndarray, sigma_rad: float, rng) -> np.ndarray:
    """Rotate each normal by a Gaussian angle about a random tangent axis."""
    n = normals.shape[0]
    raw = rng.normal(size=(n, 3))
    tangent = raw - np.einsum("ij,ij->i", raw, normals)[:, None] * normals
    norms = np.linalg.norm(tangent, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    tangent /= norms
    ang = rng.normal(scale=sigma_rad, size=n)
    out = np.cos(ang)[:, None] * normals + np.sin(ang)[:, None] * tangent
    return out / np.linalg.norm(out, axis=1, keepdims=True)
