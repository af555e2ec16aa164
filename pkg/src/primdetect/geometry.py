"""Analytic primitive surfaces: signed distances, closest-point projections, normals.

All primitives are unbounded surfaces (infinite plane, full sphere, infinite
cylinder, single-nappe infinite cone). Instances are immutable after
construction and every operation is pure, so concurrent reads are safe.
Point arguments broadcast over leading dimensions: a single point ``(3,)``
yields scalars, an ``(..., 3)`` array yields ``(...,)`` results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

UNIT_TOL = 1e-6
_RADIAL_EPS = 1e-12


def _vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).copy()
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def _unit3(x, name: str) -> np.ndarray:
    v = _vec3(x, name)
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be unit length, got |v| = {n:.8f}")
    return v / n


def canonical_axis_sign(axis: np.ndarray) -> np.ndarray:
    """Flip an undirected axis so its largest-magnitude component is positive."""
    k = int(np.argmax(np.abs(axis)))
    return -axis if axis[k] < 0 else axis


def _fallback_radial(axis: np.ndarray | None) -> np.ndarray:
    """Deterministic direction used where a radial direction is undefined.

    First of +x, +y, +z that is not almost parallel to ``axis``, projected
    into the plane perpendicular to the axis.
    """
    if axis is None:
        return np.array([1.0, 0.0, 0.0])
    for e in np.eye(3):
        if abs(float(e @ axis)) < 0.9:
            d = e - (e @ axis) * axis
            return d / np.linalg.norm(d)
    raise AssertionError("unreachable: unit axis cannot align with all basis vectors")


@dataclass(frozen=True)
class Plane:
    """Oriented plane: points p with normal @ p == offset."""

    normal: np.ndarray
    offset: float
    kind: ClassVar[str] = "plane"

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit3(self.normal, "plane normal"))
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    kind: ClassVar[str] = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "sphere center"))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Cylinder:
    """Infinite cylinder. ``foot`` is the axis point closest to the origin.

    The axis sign is canonicalized (largest-magnitude component positive) and
    the foot is snapped onto the plane through the origin perpendicular to the
    axis, so equal cylinders compare equal regardless of input sign.
    """

    axis: np.ndarray
    foot: np.ndarray
    radius: float
    kind: ClassVar[str] = "cylinder"

    def __post_init__(self):
        a = canonical_axis_sign(_unit3(self.axis, "cylinder axis"))
        f = _vec3(self.foot, "cylinder foot")
        f = f - (f @ a) * a
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "foot", f)
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError(f"cylinder radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Cone:
    """Single-nappe cone: apex, unit axis pointing into the cone, opening angle.

    The opening angle is the half-angle between axis and slant surface,
    strictly inside (0, pi/2). Exact surface normals n satisfy
    sin(opening_angle) == -axis @ n.
    """

    apex: np.ndarray
    axis: np.ndarray
    opening_angle: float
    kind: ClassVar[str] = "cone"

    def __post_init__(self):
        object.__setattr__(self, "apex", _vec3(self.apex, "cone apex"))
        object.__setattr__(self, "axis", _unit3(self.axis, "cone axis"))
        object.__setattr__(self, "opening_angle", float(self.opening_angle))
        if not 0.0 < self.opening_angle < math.pi / 2:
            raise ValueError(
                f"cone opening angle must be in (0, pi/2), got {self.opening_angle}"
            )


Primitive = Union[Plane, Sphere, Cylinder, Cone]

PRIMITIVE_KINDS = ("plane", "sphere", "cylinder", "cone")


@dataclass(frozen=True)
class OrientedPoint:
    position: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "normal", _unit3(self.normal, "normal"))


class PointCloud:
    """Positions with unit outward normals and a cached scene diameter.

    The scene diameter is the axis-aligned bounding-box diagonal of the
    positions; all detector length thresholds are fractions of it.
    """

    __slots__ = ("positions", "normals", "diameter")

    def __init__(self, positions, normals):
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        nrm = np.ascontiguousarray(normals, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape != nrm.shape:
            raise ValueError(f"expected matching (N, 3) arrays, got {pos.shape} / {nrm.shape}")
        if pos.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        lengths = np.linalg.norm(nrm, axis=1)
        if np.any(np.abs(lengths - 1.0) > UNIT_TOL):
            worst = float(np.max(np.abs(lengths - 1.0)))
            raise ValueError(f"normals must be unit length within {UNIT_TOL}, worst deviation {worst:.3g}")
        self.positions = pos
        self.normals = nrm
        self.diameter = scene_diameter(pos)
        pos.setflags(write=False)
        nrm.setflags(write=False)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def point(self, index: int) -> OrientedPoint:
        return OrientedPoint(self.positions[index], self.normals[index])


def scene_diameter(positions) -> float:
    """Bounding-box diagonal length of a set of positions."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        raise ValueError("cannot compute the diameter of an empty point set")
    extent = pos.max(axis=0) - pos.min(axis=0)
    return float(np.linalg.norm(extent))


def _flatten(points):
    p = np.asarray(points, dtype=np.float64)
    scalar = p.ndim == 1
    flat = p.reshape(-1, 3)
    return flat, scalar, p.shape[:-1]


def _restore(values: np.ndarray, scalar: bool, lead):
    if scalar:
        return float(values[0])
    return values.reshape(lead)


def _cone_frame(flat: np.ndarray, cone: Cone):
    rel = flat - cone.apex
    u = rel @ cone.axis
    rhovec = rel - u[:, None] * cone.axis
    rho = np.linalg.norm(rhovec, axis=1)
    return rel, u, rhovec, rho


def signed_distance(points, primitive: Primitive):
    """Signed orthogonal distance to the surface: positive outside, negative inside.

    For cones, points whose closest surface point is the apex (the region
    behind it) get the positive distance to the apex, keeping the function
    continuous and total.
    """
    flat, scalar, lead = _flatten(points)
    if isinstance(primitive, Plane):
        d = flat @ primitive.normal - primitive.offset
    elif isinstance(primitive, Sphere):
        d = np.linalg.norm(flat - primitive.center, axis=1) - primitive.radius
    elif isinstance(primitive, Cylinder):
        rel = flat - primitive.foot
        rad = rel - (rel @ primitive.axis)[:, None] * primitive.axis
        d = np.linalg.norm(rad, axis=1) - primitive.radius
    elif isinstance(primitive, Cone):
        rel, u, _, rho = _cone_frame(flat, primitive)
        sin_t = math.sin(primitive.opening_angle)
        cos_t = math.cos(primitive.opening_angle)
        along = u * cos_t + rho * sin_t
        slant = rho * cos_t - u * sin_t
        d = np.where(along < 0.0, np.linalg.norm(rel, axis=1), slant)
    else:
        raise TypeError(f"unknown primitive type: {type(primitive)!r}")
    return _restore(d, scalar, lead)


def _radial_units(rhovec: np.ndarray, rho: np.ndarray, axis: np.ndarray | None) -> np.ndarray:
    out = np.empty_like(rhovec)
    ok = rho > _RADIAL_EPS
    out[ok] = rhovec[ok] / rho[ok, None]
    if not np.all(ok):
        out[~ok] = _fallback_radial(axis)
    return out


def project(points, primitive: Primitive):
    """Closest point on the surface.

    Points on a sphere center, cylinder axis, or cone apex region are
    tie-broken deterministically (+x first); cone apex-region points map to
    the apex itself.
    """
    flat, scalar, lead = _flatten(points)
    if isinstance(primitive, Plane):
        d = flat @ primitive.normal - primitive.offset
        out = flat - d[:, None] * primitive.normal
    elif isinstance(primitive, Sphere):
        rel = flat - primitive.center
        r = np.linalg.norm(rel, axis=1)
        dirs = _radial_units(rel, r, None)
        out = primitive.center + primitive.radius * dirs
    elif isinstance(primitive, Cylinder):
        rel = flat - primitive.foot
        u = rel @ primitive.axis
        rhovec = rel - u[:, None] * primitive.axis
        rho = np.linalg.norm(rhovec, axis=1)
        dirs = _radial_units(rhovec, rho, primitive.axis)
        out = primitive.foot + u[:, None] * primitive.axis + primitive.radius * dirs
    elif isinstance(primitive, Cone):
        rel, u, rhovec, rho = _cone_frame(flat, primitive)
        sin_t = math.sin(primitive.opening_angle)
        cos_t = math.cos(primitive.opening_angle)
        along = u * cos_t + rho * sin_t
        dirs = _radial_units(rhovec, rho, primitive.axis)
        slant_dir = cos_t * primitive.axis + sin_t * dirs
        t = np.maximum(along, 0.0)
        out = primitive.apex + t[:, None] * slant_dir
    else:
        raise TypeError(f"unknown primitive type: {type(primitive)!r}")
    if scalar:
        return out[0]
    return out.reshape(lead + (3,))


def surface_normal_at(points, primitive: Primitive):
    """Outward unit gradient of the signed distance at the given points.

    On the surface this equals the analytic outward normal. At gradient
    singularities (sphere center, cylinder axis, cone apex) a deterministic
    fallback direction is returned.
    """
    flat, scalar, lead = _flatten(points)
    if isinstance(primitive, Plane):
        out = np.broadcast_to(primitive.normal, flat.shape).copy()
    elif isinstance(primitive, Sphere):
        rel = flat - primitive.center
        out = _radial_units(rel, np.linalg.norm(rel, axis=1), None)
    elif isinstance(primitive, Cylinder):
        rel = flat - primitive.foot
        rhovec = rel - (rel @ primitive.axis)[:, None] * primitive.axis
        out = _radial_units(rhovec, np.linalg.norm(rhovec, axis=1), primitive.axis)
    elif isinstance(primitive, Cone):
        rel, u, rhovec, rho = _cone_frame(flat, primitive)
        sin_t = math.sin(primitive.opening_angle)
        cos_t = math.cos(primitive.opening_angle)
        along = u * cos_t + rho * sin_t
        dirs = _radial_units(rhovec, rho, primitive.axis)
        slant_normal = cos_t * dirs - sin_t * primitive.axis
        behind = along < 0.0
        out = slant_normal
        if np.any(behind):
            rn = np.linalg.norm(rel, axis=1)
            apex_dir = _radial_units(rel, rn, primitive.axis)
            out = np.where(behind[:, None], apex_dir, slant_normal)
    else:
        raise TypeError(f"unknown primitive type: {type(primitive)!r}")
    if scalar:
        return out[0]
    return out.reshape(lead + (3,))


def transform_primitive(primitive: Primitive, rotation, translation) -> Primitive:
    """Apply a rigid transform p -> R p + t to a primitive."""
    rot = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    if isinstance(primitive, Plane):
        n = rot @ primitive.normal
        return Plane(n, primitive.offset + float(n @ t))
    if isinstance(primitive, Sphere):
        return Sphere(rot @ primitive.center + t, primitive.radius)
    if isinstance(primitive, Cylinder):
        return Cylinder(rot @ primitive.axis, rot @ primitive.foot + t, primitive.radius)
    if isinstance(primitive, Cone):
        return Cone(rot @ primitive.apex + t, rot @ primitive.axis, primitive.opening_angle)
    raise TypeError(f"unknown primitive type: {type(primitive)!r}")


def transform_cloud(cloud: PointCloud, rotation, translation) -> PointCloud:
    rot = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    return PointCloud(cloud.positions @ rot.T + t, cloud.normals @ rot.T)
