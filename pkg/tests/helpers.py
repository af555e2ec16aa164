"""Shared oracle machinery for the test suite.

Everything here is deliberately independent of the package's voting-path
implementations: surface samplers construct exact points from primitive
parameterizations, and the angle-form feature evaluates conditions through
explicit inverse trigonometry.
"""

from __future__ import annotations

import math

import numpy as np

from primdetect.geometry import Cone, Cylinder, Plane, Sphere


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation matrix (QR sign-fixed)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


def random_unit(rng, n=None) -> np.ndarray:
    v = rng.normal(size=3 if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def perpendicular_unit(axis: np.ndarray, psi: float) -> np.ndarray:
    """Unit vector perpendicular to axis at in-plane angle psi."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ axis) * axis
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return math.cos(psi) * u + math.sin(psi) * v


def random_primitive(kind: str, rng, scale: float = 1.0):
    center = rng.uniform(-2, 2, 3) * scale
    if kind == "plane":
        return Plane(random_unit(rng), float(rng.uniform(-2, 2) * scale))
    if kind == "sphere":
        return Sphere(center, float(rng.uniform(0.2, 2.0) * scale))
    if kind == "cylinder":
        return Cylinder(random_unit(rng), center, float(rng.uniform(0.2, 2.0) * scale))
    if kind == "cone":
        return Cone(center, random_unit(rng), float(rng.uniform(0.15, 1.3)))
    raise ValueError(kind)


def sample_surface(prim, n: int, rng, extent: float = 3.0):
    """Exact on-surface points with exact outward normals."""
    if isinstance(prim, Plane):
        u = perpendicular_unit(prim.normal, 0.0)
        v = np.cross(prim.normal, u)
        ab = rng.uniform(-extent, extent, (n, 2))
        pts = prim.offset * prim.normal + ab[:, :1] * u + ab[:, 1:] * v
        return pts, np.tile(prim.normal, (n, 1))
    if isinstance(prim, Sphere):
        dirs = random_unit(rng, n)
        return prim.center + prim.radius * dirs, dirs
    if isinstance(prim, Cylinder):
        psis = rng.uniform(0, 2 * math.pi, n)
        heights = rng.uniform(-extent, extent, n)
        radial = np.array([perpendicular_unit(prim.axis, p) for p in psis])
        pts = prim.foot + heights[:, None] * prim.axis + prim.radius * radial
        return pts, radial
    if isinstance(prim, Cone):
        psis = rng.uniform(0, 2 * math.pi, n)
        ts = rng.uniform(0.1 * extent, extent, n)
        radial = np.array([perpendicular_unit(prim.axis, p) for p in psis])
        cos_t, sin_t = math.cos(prim.opening_angle), math.sin(prim.opening_angle)
        slant = cos_t * prim.axis + sin_t * radial
        pts = prim.apex + ts[:, None] * slant
        normals = cos_t * radial - sin_t * prim.axis
        return pts, normals
    raise TypeError(type(prim))


def exact_pair(prim, rng, extent: float = 3.0, max_tries: int = 50):
    """Two distinct exact surface points of one primitive."""
    for _ in range(max_tries):
        pts, nrm = sample_surface(prim, 2, rng, extent)
        if np.linalg.norm(pts[1] - pts[0]) > 1e-9:
            return pts[0], nrm[0], pts[1], nrm[1]
    raise RuntimeError("failed to sample a distinct pair")


def angle_features(p_r, n_r, p_i, n_i):
    """Angle-form pair feature (distance plus three angles), the trig oracle."""
    d = np.asarray(p_i, float) - np.asarray(p_r, float)
    f1 = np.linalg.norm(d)
    du = d / f1
    f2 = math.acos(np.clip(du @ n_r, -1, 1))
    f3 = math.acos(np.clip(du @ n_i, -1, 1))
    f4 = math.acos(np.clip(np.asarray(n_r, float) @ n_i, -1, 1))
    return f1, f2, f3, f4


def angle_form_checks(f, eps: float):
    """Reference evaluation of the four relaxed conditions in angle space."""
    _, f2, f3, f4 = f
    return {
        "np": abs(f4) < eps,
        "pc": abs(f2 - math.pi / 2) < eps and abs(f3 - math.pi / 2) < eps,
        "as": abs(f2 + f3 - math.pi) < eps,
        "vt": abs(f2 - f3 - f4) < eps,
    }


def feature_from_angles(f1: float, f2: float, f3: float, f4: float):
    """Synthesize the quadratic-form feature from angle-form values."""
    from primdetect.ppf import PairFeature

    return PairFeature(
        f1 * f1, f1 * math.cos(f2), f1 * math.cos(f3), math.cos(f4)
    )
