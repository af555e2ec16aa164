"""Pure-numpy voting backend: vectorized over the pair axis, one reference at a time.

Slower than the JIT backend but dependency-light; selected with
PRIMDETECT_BACKEND=numpy. Produces the same per-reference extractions
(up to floating-point rounding of transcendental calls).
"""

from __future__ import annotations

import math

import numpy as np

from . import ppf
from .accumulator import (
    ConeAccumulator,
    GridAccumulator1D,
    GridAccumulator2D,
    hemisphere_canonical,
)

PLANE, SPHERE, CYLINDER, CONE = 0, 1, 2, 3


def run(positions, normals, ref_idx, pair_idx, prm):
    """Vote and extract for each reference point.

    Returns (peaks, masses, params): peaks is the (K, 4) maximal single-bin
    value per type (the statistic that is comparable across voting-space
    dimensions), masses the (K, 4) neighborhood vote mass used for
    thresholding, params (K, 4, 4) with rows sphere -> (radius, 0, 0, 0),
    cylinder -> (radius, angle, 0, 0), cone -> (axis offset, axis x, y, z).
    Thresholding happens in the caller.
    """
    n_refs = ref_idx.shape[0]
    peaks = np.zeros((n_refs, 4))
    masses = np.zeros((n_refs, 4))
    params = np.zeros((n_refs, 4, 4))

    sphere_acc = GridAccumulator1D(prm.r_bin, prm.n_rbins)
    cyl_acc = GridAccumulator2D(prm.r_bin, prm.n_rbins, prm.angle_bin)
    cone_acc = ConeAccumulator(prm.r_bin, prm.n_rbins, prm.hemisphere)
    tol = prm.tolerances

    for k in range(n_refs):
        r = int(ref_idx[k])
        p_r = positions[r]
        n_r = normals[r]
        idx = pair_idx[k]

        d = positions[idx] - p_r
        c1 = np.einsum("ij,ij->i", d, d)
        n_i = normals[idx]
        c2 = d @ n_r
        c3 = np.einsum("ij,ij->i", d, n_i)
        c4 = n_i @ n_r
        feat = ppf.PairFeature(c1, c2, c3, c4)

        admissible = (idx != r) & (c1 > 0.0) & (c1 <= prm.max_d2) & (c2 <= 0.0) & (c3 >= 0.0)
        parallel = feat.c4 > tol.cos_np

        plane_total = 0.0
        if prm.enable[PLANE]:
            pm = admissible & parallel & ppf.check_pc(feat, tol)
            if np.any(pm):
                if prm.use_spreading:
                    sub = ppf.PairFeature(c1[pm], c2[pm], c3[pm], c4[pm])
                    w = ppf.constraint_weight_np(sub, tol) * ppf.constraint_weight_pc(sub, tol)
                    plane_total = float(np.sum(w))
                else:
                    plane_total = float(np.count_nonzero(pm))
        peaks[k, PLANE] = plane_total
        masses[k, PLANE] = plane_total

        curved = admissible & ~parallel

        if prm.enable[CONE] and np.any(curved):
            cm = np.flatnonzero(curved)
            s_r = c3[cm] / (1.0 - c4[cm])
            scale = 1.0 / (c4[cm] - 1.0)
            sep = d[cm] - (c3[cm, None] * n_r + c2[cm, None] * n_i[cm]) * scale[:, None]
            norm = np.linalg.norm(sep, axis=1)
            ok = (s_r > 0.0) & (s_r <= prm.s_max) & (norm > prm.min_sep)
            if np.any(ok):
                dirs = hemisphere_canonical(sep[ok] / norm[ok, None])
                if prm.use_spreading:
                    cone_acc.spread_votes(s_r[ok], dirs, 1.0)
                else:
                    cone_acc.nearest_votes(s_r[ok], dirs, 1.0)

        if (prm.enable[CYLINDER] or prm.enable[SPHERE]) and np.any(curved):
            as_ok = curved & ppf.check_as(feat, tol)
            am = np.flatnonzero(as_ok)
            if am.size:
                sub = ppf.PairFeature(c1[am], c2[am], c3[am], c4[am])
                radius = np.asarray(ppf.sphere_radius(sub))
                w_as = ppf.constraint_weight_as(sub, tol) if prm.use_spreading else np.ones(am.size)
                if prm.enable[CYLINDER]:
                    axis = np.cross(np.broadcast_to(n_r, (am.size, 3)), n_i[am])
                    good = np.linalg.norm(axis, axis=1) > ppf.PARALLEL_EPS
                    rot = ppf.rotation_to_x(n_r)
                    rotated = axis[good] @ rot.T
                    angle = np.mod(np.arctan2(rotated[:, 2], rotated[:, 1]), math.pi)
                    if prm.use_spreading:
                        cyl_acc.spread_votes(radius[good], angle, w_as[good])
                    else:
                        cyl_acc.nearest_votes(radius[good], angle, 1.0)
                if prm.enable[SPHERE]:
                    vt = np.asarray(ppf.check_vt(sub, tol))
                    if np.any(vt):
                        vsub = ppf.PairFeature(sub.c1[vt], sub.c2[vt], sub.c3[vt], sub.c4[vt])
                        if prm.use_spreading:
                            w = w_as[vt] * ppf.constraint_weight_vt(vsub, tol)
                            sphere_acc.spread_votes(radius[vt], w)
                        else:
                            sphere_acc.nearest_votes(radius[vt], 1.0)

        if prm.enable[SPHERE]:
            out = sphere_acc.extract_max(min_votes=0.0, average=prm.use_bin_averaging)
            if out is not None:
                (rad,), mass = out
                peaks[k, SPHERE] = sphere_acc.values.max()
                masses[k, SPHERE] = mass
                params[k, SPHERE, 0] = rad
            sphere_acc.reset()
        if prm.enable[CYLINDER]:
            out = cyl_acc.extract_max(min_votes=0.0, average=prm.use_bin_averaging)
            if out is not None:
                (rad, ang), mass = out
                peaks[k, CYLINDER] = cyl_acc.values.max()
                masses[k, CYLINDER] = mass
                params[k, CYLINDER, 0] = rad
                params[k, CYLINDER, 1] = ang
            cyl_acc.reset()
        if prm.enable[CONE]:
            out = cone_acc.extract_max(min_votes=0.0, average=prm.use_bin_averaging)
            if out is not None:
                (s_val, direction), mass = out
                peaks[k, CONE] = cone_acc.values.max()
                masses[k, CONE] = mass
                params[k, CONE, 0] = s_val
                params[k, CONE, 1:4] = direction
            cone_acc.reset()
    return peaks, masses, params
