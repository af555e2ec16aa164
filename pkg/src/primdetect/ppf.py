"""Trig-free point-pair features, relaxed voting conditions, and per-pair votes.

The pair feature of two oriented points (p_r, n_r), (p_i, n_i) with
d = p_i - p_r is the 4-vector

    c1 = |d|^2,  c2 = n_r . d,  c3 = n_i . d,  c4 = n_r . n_i.

Condition checks below are pure polynomial comparisons against precomputed
tolerance constants; inverse trig appears only in the constraint weights,
which are evaluated solely for pairs that actually vote.

All check and weight functions accept scalars or equally-shaped arrays in the
feature fields and broadcast elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .accumulator import hemisphere_canonical
from .geometry import Cone

PARALLEL_EPS = 1e-12


class PairFeature(NamedTuple):
    c1: float
    c2: float
    c3: float
    c4: float


class CylinderVote(NamedTuple):
    radius: float
    angle: float


class ConeVote(NamedTuple):
    axis_offset: float
    axis_dir: np.ndarray


@dataclass(frozen=True)
class Tolerances:
    """Relaxation half-widths (radians) for the four voting conditions.

    Caches cos/sin^2 of each tolerance so the condition checks stay free of
    trigonometric calls. Defaults equal the 10 degree accumulator bin size.
    """

    eps_np: float = math.radians(10.0)
    eps_pc: float = math.radians(10.0)
    eps_as: float = math.radians(10.0)
    eps_vt: float = math.radians(10.0)

    def __post_init__(self):
        for name in ("eps_np", "eps_pc", "eps_as", "eps_vt"):
            v = getattr(self, name)
            if not 0.0 < v < math.pi / 2:
                raise ValueError(f"{name} must be in (0, pi/2), got {v}")
        object.__setattr__(self, "cos_np", math.cos(self.eps_np))
        object.__setattr__(self, "sin2_pc", math.sin(self.eps_pc) ** 2)
        object.__setattr__(self, "cos_as", math.cos(self.eps_as))
        object.__setattr__(self, "cos_vt", math.cos(self.eps_vt))

    @classmethod
    def from_angle_bin(cls, angle_bin: float) -> "Tolerances":
        return cls(angle_bin, angle_bin, angle_bin, angle_bin)


def compute_pair_feature(p_r, n_r, p_i, n_i) -> Optional[PairFeature]:
    """Pair feature of two oriented points, or None for coincident positions."""
    p_r = np.asarray(p_r, dtype=np.float64)
    p_i = np.asarray(p_i, dtype=np.float64)
    d = p_i - p_r
    c1 = float(d @ d)
    if c1 <= 0.0:
        return None
    n_r = np.asarray(n_r, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    return PairFeature(c1, float(n_r @ d), float(n_i @ d), float(n_r @ n_i))


def convexity_admissible(c: PairFeature):
    """Both outward normals consistent with a convex surface between the points."""
    return (c.c2 <= 0.0) & (c.c3 >= 0.0)


def _s2(c: PairFeature):
    return np.sqrt(np.maximum(c.c1 - np.square(c.c2), 0.0))


def _s3(c: PairFeature):
    return np.sqrt(np.maximum(c.c1 - np.square(c.c3), 0.0))


def check_np(c: PairFeature, tol: Tolerances):
    """Normals parallel within tolerance."""
    return c.c4 > tol.cos_np


def check_pc(c: PairFeature, tol: Tolerances):
    """Both points coplanar: displacement nearly perpendicular to both normals."""
    bound = tol.sin2_pc * c.c1
    return (np.square(c.c2) < bound) & (np.square(c.c3) < bound)


def check_as(c: PairFeature, tol: Tolerances):
    """Angles symmetric: displacement angles to the two normals sum to pi."""
    return _s2(c) * _s3(c) - c.c2 * c.c3 > tol.cos_as * c.c1


def check_vt(c: PairFeature, tol: Tolerances):
    """Vectors triangular: angle difference equals the normal-normal angle."""
    s2, s3 = _s2(c), _s3(c)
    s4 = np.sqrt(np.maximum(1.0 - np.square(c.c4), 0.0))
    lhs = c.c2 * c.c3 * c.c4 + s2 * s3 * c.c4 + s2 * c.c3 * s4 - c.c2 * s3 * s4
    return lhs > tol.cos_vt * c.c1


def _clip_unit(x):
    return np.clip(x, -1.0, 1.0)


def deviation_np(c: PairFeature):
    """Angle between the normals."""
    return np.arccos(_clip_unit(c.c4))


def deviation_pc(c: PairFeature):
    """Deviations of the two displacement angles from a right angle."""
    rt = np.sqrt(c.c1)
    return np.arcsin(_clip_unit(np.abs(c.c2) / rt)), np.arcsin(_clip_unit(np.abs(c.c3) / rt))


def deviation_as(c: PairFeature):
    return np.arccos(_clip_unit((_s2(c) * _s3(c) - c.c2 * c.c3) / c.c1))


def deviation_vt(c: PairFeature):
    s2, s3 = _s2(c), _s3(c)
    s4 = np.sqrt(np.maximum(1.0 - np.square(c.c4), 0.0))
    lhs = c.c2 * c.c3 * c.c4 + s2 * s3 * c.c4 + s2 * c.c3 * s4 - c.c2 * s3 * s4
    return np.arccos(_clip_unit(lhs / c.c1))


def _linear_weight(dev, eps: float):
    return np.maximum(1.0 - dev / eps, 0.0)


def constraint_weight_np(c: PairFeature, tol: Tolerances):
    return _linear_weight(deviation_np(c), tol.eps_np)


def constraint_weight_pc(c: PairFeature, tol: Tolerances):
    """Product of the two coplanarity factors; counts as two constraints."""
    d2, d3 = deviation_pc(c)
    return _linear_weight(d2, tol.eps_pc) * _linear_weight(d3, tol.eps_pc)


def constraint_weight_as(c: PairFeature, tol: Tolerances):
    return _linear_weight(deviation_as(c), tol.eps_as)


def constraint_weight_vt(c: PairFeature, tol: Tolerances):
    return _linear_weight(deviation_vt(c), tol.eps_vt)


def sphere_radius(c: PairFeature):
    """Radius of the sphere (or cylinder) through an admissible pair.

    Requires non-parallel normals; raises for c4 within 1e-12 of 1.
    """
    if np.any(np.asarray(c.c4) >= 1.0 - PARALLEL_EPS):
        raise ValueError("radius undefined for numerically parallel normals")
    return (c.c2 - c.c3) / (2.0 * (c.c4 - 1.0))


def rotation_to_x(n: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the unit vector n onto +x.

    Falls back to the identity for n == +x and to a half-turn about z for
    n == -x. The same convention must be used when voting and when mapping
    an extracted angle back to an axis.
    """
    c = float(n[0])
    if c > 1.0 - PARALLEL_EPS:
        return np.eye(3)
    if c < -1.0 + PARALLEL_EPS:
        return np.diag([-1.0, -1.0, 1.0])
    k = np.array([0.0, n[2], -n[1]])  # n x (1,0,0)
    kx = np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )
    return np.eye(3) + kx + kx @ kx / (1.0 + c)


def cylinder_vote(p_r, n_r, p_i, n_i, c: PairFeature) -> CylinderVote:
    """Radius and tangent-plane axis angle voted by a cylinder-compatible pair.

    The candidate axis is the direction orthogonal to both normals; its angle
    is measured against the y-axis after rotating n_r onto +x.
    """
    radius = float(sphere_radius(c))
    n_r = np.asarray(n_r, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    axis = np.cross(n_r, n_i)
    norm = float(np.linalg.norm(axis))
    if norm < PARALLEL_EPS:
        raise ValueError("cylinder axis undefined for parallel normals")
    rotated = rotation_to_x(n_r) @ (axis / norm)
    angle = math.atan2(rotated[2], rotated[1]) % math.pi
    return CylinderVote(radius, angle)


def cylinder_axis_from_angle(angle: float, n_r) -> np.ndarray:
    """Inverse of the cylinder angle chart: axis direction for a voted angle."""
    rot = rotation_to_x(np.asarray(n_r, dtype=np.float64))
    return rot.T @ np.array([0.0, math.cos(angle), math.sin(angle)])


def cone_vote(
    p_r,
    n_r,
    p_i,
    n_i,
    c: PairFeature,
    *,
    s_max: float = math.inf,
    min_separation: float = 0.0,
) -> Optional[ConeVote]:
    """Axis-point offset and axis direction voted by a cone-compatible pair.

    Walking distance s from each point along its negative normal reaches the
    axis; the axis direction is the line through the two axis feet. Returns
    None when the offset is non-positive or out of range, or when the feet
    coincide (same height on the cone, or a sphere-like pair).
    """
    if c.c4 >= 1.0 - PARALLEL_EPS:
        return None
    s_r = c.c3 / (1.0 - c.c4)
    if not 0.0 < s_r <= s_max:
        return None
    p_r = np.asarray(p_r, dtype=np.float64)
    p_i = np.asarray(p_i, dtype=np.float64)
    n_r = np.asarray(n_r, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    sep = (p_i - p_r) - (c.c3 * n_r + c.c2 * n_i) / (c.c4 - 1.0)
    norm = float(np.linalg.norm(sep))
    if norm <= max(min_separation, PARALLEL_EPS):
        return None
    return ConeVote(float(s_r), hemisphere_canonical(sep / norm))


def extract_cone(
    s_r_hat: float,
    a_hat,
    p_r,
    n_r,
    *,
    min_axis_dot: float = 1e-9,
) -> Optional[Cone]:
    """Cone through a reference point given winning vote parameters.

    Returns None when the voted axis lies (numerically) in the tangent plane
    at the reference point, which describes a cylinder rather than a cone, or
    when the implied opening angle leaves (0, pi/2).
    """
    a_hat = np.asarray(a_hat, dtype=np.float64)
    n_r = np.asarray(n_r, dtype=np.float64)
    p_r = np.asarray(p_r, dtype=np.float64)
    a_dot_n = float(a_hat @ n_r)
    if abs(a_dot_n) < min_axis_dot:
        return None
    apex = p_r + s_r_hat * (a_hat / a_dot_n - n_r)
    orient = float((p_r - apex) @ a_hat)
    if orient == 0.0:
        return None
    axis = a_hat if orient > 0.0 else -a_hat
    sin_theta = -float(axis @ n_r)
    if not min_axis_dot <= sin_theta <= 1.0 - PARALLEL_EPS:
        return None
    return Cone(apex, axis, math.asin(sin_theta))
