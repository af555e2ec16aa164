"""JIT voting backend: the per-pair loop and per-reference extraction as njit kernels.

This mirrors the numpy backend operation for operation; keep the two in sync.
Accumulator buffers are allocated once per call and reset per reference, so a
single call is safe to run on its own thread (nogil) with private state.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
PARALLEL_EPS = 1e-12


@njit(cache=True, nogil=True)
def _clip_unit(x):
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


@njit(cache=True, nogil=True)
def _spread_1d(acc, value, weight, bin_w, n):
    u = value / bin_w - 0.5
    if u < 0.0:
        u = 0.0
    elif u > n - 1.0:
        u = n - 1.0
    lo = int(u)
    if lo > n - 2:
        lo = n - 2
    f = u - lo
    acc[lo] += weight * (1.0 - f)
    acc[lo + 1] += weight * f


@njit(cache=True, nogil=True)
def _spread_2d(acc, radius, angle, weight, bin_w, n_r, n_a):
    u = radius / bin_w - 0.5
    if u < 0.0:
        u = 0.0
    elif u > n_r - 1.0:
        u = n_r - 1.0
    rlo = int(u)
    if rlo > n_r - 2:
        rlo = n_r - 2
    fr = u - rlo
    t = (angle % math.pi) * n_a / math.pi - 0.5
    alo = int(math.floor(t))
    fa = t - alo
    alo %= n_a
    if alo < 0:
        alo += n_a
    ahi = alo + 1
    if ahi == n_a:
        ahi = 0
    acc[rlo, alo] += weight * (1.0 - fr) * (1.0 - fa)
    acc[rlo, ahi] += weight * (1.0 - fr) * fa
    acc[rlo + 1, alo] += weight * fr * (1.0 - fa)
    acc[rlo + 1, ahi] += weight * fr * fa


@njit(cache=True, nogil=True)
def _hemi_stencil(vx, vy, vz, nodes, ring_count, ring_start, n_rings, cells, wts):
    """Fill 4 stencil cells and weights for a canonical-hemisphere direction."""
    theta = math.acos(_clip_unit(vz))
    phi = math.atan2(vy, vx)
    if phi < 0.0:
        phi += TWO_PI
    idx = 0
    last = nodes.shape[0] - 2
    while idx < last and theta >= nodes[idx + 1]:
        idx += 1
    a = (theta - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    for side in range(2):
        ring = idx + side
        if ring > n_rings:
            ring_eff = n_rings
            pp = phi + math.pi
            if pp >= TWO_PI:
                pp -= TWO_PI
        else:
            ring_eff = ring
            pp = phi
        n_k = ring_count[ring_eff]
        t = pp * n_k / TWO_PI
        j = int(t)
        b = t - j
        if j >= n_k:
            j = 0
        jhi = j + 1
        if jhi == n_k:
            jhi = 0
        radial = a if side == 1 else 1.0 - a
        base = ring_start[ring_eff]
        cells[2 * side] = base + j
        cells[2 * side + 1] = base + jhi
        wts[2 * side] = radial * (1.0 - b)
        wts[2 * side + 1] = radial * b


@njit(cache=True, nogil=True)
def _hemi_lookup(vx, vy, vz, ring_bounds, ring_count, ring_start, n_rings):
    theta = math.acos(_clip_unit(vz))
    phi = math.atan2(vy, vx)
    if phi < 0.0:
        phi += TWO_PI
    k = 0
    while k < n_rings and theta >= ring_bounds[k + 1]:
        k += 1
    n_k = ring_count[k]
    j = int(math.floor(phi * n_k / TWO_PI + 0.5)) % n_k
    return ring_start[k] + j


@njit(cache=True, nogil=True)
def _extract_1d(acc, bin_w, n, use_avg):
    best = 0.0
    mi = -1
    for i in range(n):
        if acc[i] > best:
            best = acc[i]
            mi = i
    if mi < 0:
        return 0.0, 0.0, 0.0
    lo = mi - 1 if mi > 0 else 0
    hi = mi + 2 if mi + 2 <= n else n
    mass = 0.0
    wsum = 0.0
    for i in range(lo, hi):
        mass += acc[i]
        wsum += acc[i] * (i + 0.5) * bin_w
    if use_avg:
        return best, mass, wsum / mass
    return best, mass, (mi + 0.5) * bin_w


@njit(cache=True, nogil=True)
def _extract_2d(acc, bin_w, n_r, n_a, use_avg):
    best = 0.0
    ri = -1
    ai = -1
    for i in range(n_r):
        for j in range(n_a):
            if acc[i, j] > best:
                best = acc[i, j]
                ri = i
                ai = j
    if ri < 0:
        return 0.0, 0.0, 0.0, 0.0
    rlo = ri - 1 if ri > 0 else 0
    rhi = ri + 2 if ri + 2 <= n_r else n_r
    ang_bin = math.pi / n_a
    mass = 0.0
    rsum = 0.0
    asum = 0.0
    for i in range(rlo, rhi):
        for o in range(-1, 2):
            j = (ai + o) % n_a
            v = acc[i, j]
            mass += v
            rsum += v * (i + 0.5) * bin_w
            asum += v * ((ai + 0.5) + o) * ang_bin
    if mass <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    if use_avg:
        return best, mass, rsum / mass, (asum / mass) % math.pi
    return best, mass, (ri + 0.5) * bin_w, (ai + 0.5) * ang_bin


@njit(cache=True, nogil=True)
def _extract_cone(
    acc, bin_w, n_s, cell_theta, cell_phi, cell_dirs,
    adj_start, adj_cell, adj_mirror, use_avg,
):
    n_c = cell_theta.shape[0]
    best = 0.0
    bi = -1
    ci = -1
    for i in range(n_s):
        for j in range(n_c):
            if acc[i, j] > best:
                best = acc[i, j]
                bi = i
                ci = j
    if bi < 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    rlo = bi - 1 if bi > 0 else 0
    rhi = bi + 2 if bi + 2 <= n_s else n_s
    n_adj = adj_start[ci + 1] - adj_start[ci]
    n_entries = n_adj + 1
    total = 0.0
    s_sum = 0.0
    theta_sum = 0.0
    cmass = np.empty(n_entries)
    for e in range(n_entries):
        if e == 0:
            cell = ci
            mir = False
        else:
            cell = adj_cell[adj_start[ci] + e - 1]
            mir = adj_mirror[adj_start[ci] + e - 1] != 0
        m = 0.0
        for r in range(rlo, rhi):
            v = acc[r, cell]
            m += v
            s_sum += v * (r + 0.5) * bin_w
        theta_eff = math.pi - cell_theta[cell] if mir else cell_theta[cell]
        theta_sum += m * theta_eff
        cmass[e] = m
        total += m
    if total <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if not use_avg:
        return best, total, (bi + 0.5) * bin_w, cell_dirs[ci, 0], cell_dirs[ci, 1], cell_dirs[ci, 2]
    s_mean = s_sum / total
    theta_mean = theta_sum / total
    # reference longitude: the max cell, or its heaviest non-cap neighbor
    have_ref = False
    phi_ref = 0.0
    if ci != 0:
        phi_ref = cell_phi[ci]
        have_ref = True
    else:
        bm = -1.0
        for e in range(1, n_entries):
            cell = adj_cell[adj_start[ci] + e - 1]
            if cell != 0 and cmass[e] > bm:
                bm = cmass[e]
                mir = adj_mirror[adj_start[ci] + e - 1] != 0
                phi_ref = cell_phi[cell] - math.pi if mir else cell_phi[cell]
                have_ref = True
    if not have_ref:
        return best, total, s_mean, 0.0, 0.0, 1.0
    phi_sum = 0.0
    phi_mass = 0.0
    for e in range(n_entries):
        if e == 0:
            cell = ci
            mir = False
        else:
            cell = adj_cell[adj_start[ci] + e - 1]
            mir = adj_mirror[adj_start[ci] + e - 1] != 0
        if cell == 0:
            continue
        phi_eff = cell_phi[cell] - math.pi if mir else cell_phi[cell]
        phi_u = phi_ref + ((phi_eff - phi_ref + math.pi) % TWO_PI - math.pi)
        phi_sum += cmass[e] * phi_u
        phi_mass += cmass[e]
    if phi_mass <= 0.0:
        return best, total, s_mean, 0.0, 0.0, 1.0
    phi_mean = phi_sum / phi_mass
    st = math.sin(theta_mean)
    ct = math.cos(theta_mean)
    dx = st * math.cos(phi_mean)
    dy = st * math.sin(phi_mean)
    dz = ct
    if dz < 0.0 or (dz == 0.0 and (dx < 0.0 or (dx == 0.0 and dy < 0.0))):
        dx, dy, dz = -dx, -dy, -dz
    return best, total, s_mean, dx, dy, dz


@njit(cache=True, nogil=True)
def detect_batch(
    positions, normals, ref_idx, pair_idx,
    max_d2, r_bin, n_rbins, n_abins,
    cos_np, sin2_pc, cos_as, cos_vt,
    eps_np, eps_pc, eps_as, eps_vt,
    min_sep, s_max,
    nodes, ring_bounds, ring_count, ring_start, n_rings,
    cell_theta, cell_phi, cell_dirs, adj_start, adj_cell, adj_mirror,
    enable_plane, enable_sphere, enable_cyl, enable_cone,
    use_spread, use_binavg,
    out_peak, out_mass, out_params,
):
    n_refs = ref_idx.shape[0]
    n_pairs = pair_idx.shape[1]
    n_cells = cell_theta.shape[0]
    sph = np.zeros(n_rbins)
    cyl = np.zeros((n_rbins, n_abins))
    cone = np.zeros((n_rbins, n_cells))
    stencil_cells = np.empty(4, dtype=np.int64)
    stencil_wts = np.empty(4)

    for k in range(n_refs):
        r = ref_idx[k]
        prx = positions[r, 0]
        pry = positions[r, 1]
        prz = positions[r, 2]
        nrx = normals[r, 0]
        nry = normals[r, 1]
        nrz = normals[r, 2]
        if enable_sphere:
            sph[:] = 0.0
        if enable_cyl:
            cyl[:, :] = 0.0
        if enable_cone:
            cone[:, :] = 0.0
        plane_total = 0.0

        # rotation taking n_r to +x; only rows 1 and 2 feed the angle chart
        cx = nrx
        if cx > 1.0 - PARALLEL_EPS:
            r10, r11, r12 = 0.0, 1.0, 0.0
            r20, r21, r22 = 0.0, 0.0, 1.0
        elif cx < -1.0 + PARALLEL_EPS:
            r10, r11, r12 = 0.0, -1.0, 0.0
            r20, r21, r22 = 0.0, 0.0, 1.0
        else:
            f = 1.0 / (1.0 + cx)
            r10, r11, r12 = -nry, 1.0 - nry * nry * f, -nry * nrz * f
            r20, r21, r22 = -nrz, -nry * nrz * f, 1.0 - nrz * nrz * f

        for m in range(n_pairs):
            i = pair_idx[k, m]
            if i == r:
                continue
            dx = positions[i, 0] - prx
            dy = positions[i, 1] - pry
            dz = positions[i, 2] - prz
            c1 = dx * dx + dy * dy + dz * dz
            if c1 <= 0.0 or c1 > max_d2:
                continue
            c2 = nrx * dx + nry * dy + nrz * dz
            if c2 > 0.0:
                continue
            nix = normals[i, 0]
            niy = normals[i, 1]
            niz = normals[i, 2]
            c3 = nix * dx + niy * dy + niz * dz
            if c3 < 0.0:
                continue
            c4 = nrx * nix + nry * niy + nrz * niz

            if c4 > cos_np:
                if enable_plane:
                    bound = sin2_pc * c1
                    if c2 * c2 < bound and c3 * c3 < bound:
                        if use_spread:
                            rt = math.sqrt(c1)
                            w = 1.0 - math.acos(_clip_unit(c4)) / eps_np
                            w *= 1.0 - math.asin(_clip_unit(abs(c2) / rt)) / eps_pc
                            w *= 1.0 - math.asin(_clip_unit(abs(c3) / rt)) / eps_pc
                            if w > 0.0:
                                plane_total += w
                        else:
                            plane_total += 1.0
            else:
                if enable_cone:
                    s_r = c3 / (1.0 - c4)
                    if 0.0 < s_r <= s_max:
                        g = 1.0 / (c4 - 1.0)
                        sx = dx - (c3 * nrx + c2 * nix) * g
                        sy = dy - (c3 * nry + c2 * niy) * g
                        sz = dz - (c3 * nrz + c2 * niz) * g
                        nn = math.sqrt(sx * sx + sy * sy + sz * sz)
                        if nn > min_sep:
                            vx = sx / nn
                            vy = sy / nn
                            vz = sz / nn
                            if vz < 0.0 or (vz == 0.0 and (vx < 0.0 or (vx == 0.0 and vy < 0.0))):
                                vx, vy, vz = -vx, -vy, -vz
                            if use_spread:
                                _hemi_stencil(vx, vy, vz, nodes, ring_count, ring_start,
                                              n_rings, stencil_cells, stencil_wts)
                                u = s_r / r_bin - 0.5
                                if u < 0.0:
                                    u = 0.0
                                elif u > n_rbins - 1.0:
                                    u = n_rbins - 1.0
                                slo = int(u)
                                if slo > n_rbins - 2:
                                    slo = n_rbins - 2
                                fs = u - slo
                                for q in range(4):
                                    cone[slo, stencil_cells[q]] += (1.0 - fs) * stencil_wts[q]
                                    cone[slo + 1, stencil_cells[q]] += fs * stencil_wts[q]
                            else:
                                si = int(s_r / r_bin)
                                if si >= n_rbins:
                                    si = n_rbins - 1
                                cell = _hemi_lookup(vx, vy, vz, ring_bounds, ring_count,
                                                    ring_start, n_rings)
                                cone[si, cell] += 1.0
                if enable_cyl or enable_sphere:
                    s2 = math.sqrt(max(c1 - c2 * c2, 0.0))
                    s3 = math.sqrt(max(c1 - c3 * c3, 0.0))
                    as_lhs = s2 * s3 - c2 * c3
                    if as_lhs > cos_as * c1:
                        radius = (c2 - c3) / (2.0 * (c4 - 1.0))
                        if 0.0 < radius <= s_max:
                            if use_spread:
                                w_as = 1.0 - math.acos(_clip_unit(as_lhs / c1)) / eps_as
                                if w_as < 0.0:
                                    w_as = 0.0
                            else:
                                w_as = 1.0
                            if enable_cyl:
                                ax = nry * niz - nrz * niy
                                ay = nrz * nix - nrx * niz
                                az = nrx * niy - nry * nix
                                if ax * ax + ay * ay + az * az > PARALLEL_EPS * PARALLEL_EPS:
                                    an = math.sqrt(ax * ax + ay * ay + az * az)
                                    ux, uy, uz = ax / an, ay / an, az / an
                                    ry_ = r10 * ux + r11 * uy + r12 * uz
                                    rz_ = r20 * ux + r21 * uy + r22 * uz
                                    angle = math.atan2(rz_, ry_) % math.pi
                                    if use_spread:
                                        _spread_2d(cyl, radius, angle, w_as, r_bin, n_rbins, n_abins)
                                    else:
                                        ri_ = int(radius / r_bin)
                                        if ri_ >= n_rbins:
                                            ri_ = n_rbins - 1
                                        ai_ = int((angle % math.pi) * n_abins / math.pi) % n_abins
                                        cyl[ri_, ai_] += 1.0
                            if enable_sphere:
                                s4 = math.sqrt(max(1.0 - c4 * c4, 0.0))
                                vt_lhs = c2 * c3 * c4 + s2 * s3 * c4 + s2 * c3 * s4 - c2 * s3 * s4
                                if vt_lhs > cos_vt * c1:
                                    if use_spread:
                                        w = w_as * (1.0 - math.acos(_clip_unit(vt_lhs / c1)) / eps_vt)
                                        if w > 0.0:
                                            _spread_1d(sph, radius, w, r_bin, n_rbins)
                                    else:
                                        si = int(radius / r_bin)
                                        if si >= n_rbins:
                                            si = n_rbins - 1
                                        sph[si] += 1.0

        if enable_plane:
            # zero-dimensional space: the whole accumulator is one bin
            out_peak[k, 0] = plane_total
            out_mass[k, 0] = plane_total
        if enable_sphere:
            peak, mass, rad = _extract_1d(sph, r_bin, n_rbins, use_binavg)
            out_peak[k, 1] = peak
            out_mass[k, 1] = mass
            out_params[k, 1, 0] = rad
        if enable_cyl:
            peak, mass, rad, ang = _extract_2d(cyl, r_bin, n_rbins, n_abins, use_binavg)
            out_peak[k, 2] = peak
            out_mass[k, 2] = mass
            out_params[k, 2, 0] = rad
            out_params[k, 2, 1] = ang
        if enable_cone:
            peak, mass, s_val, dxx, dyy, dzz = _extract_cone(
                cone, r_bin, n_rbins, cell_theta, cell_phi, cell_dirs,
                adj_start, adj_cell, adj_mirror, use_binavg,
            )
            out_peak[k, 3] = peak
            out_mass[k, 3] = mass
            out_params[k, 3, 0] = s_val
            out_params[k, 3, 1] = dxx
            out_params[k, 3, 2] = dyy
            out_params[k, 3, 3] = dzz


def run(positions, normals, ref_idx, pair_idx, prm):
    """Dispatch wrapper matching the numpy backend's signature."""
    n_refs = ref_idx.shape[0]
    peaks = np.zeros((n_refs, 4))
    masses = np.zeros((n_refs, 4))
    params = np.zeros((n_refs, 4, 4))
    hemi = prm.hemisphere
    tol = prm.tolerances
    detect_batch(
        positions, normals, ref_idx, pair_idx,
        prm.max_d2, prm.r_bin, prm.n_rbins, prm.n_abins,
        tol.cos_np, tol.sin2_pc, tol.cos_as, tol.cos_vt,
        tol.eps_np, tol.eps_pc, tol.eps_as, tol.eps_vt,
        prm.min_sep, prm.s_max,
        hemi.nodes, hemi.ring_bounds, hemi.ring_count, hemi.ring_start, hemi.n_rings,
        hemi.cell_theta, hemi.cell_phi, hemi.cell_dirs,
        hemi.adj_start, hemi.adj_cell, hemi.adj_mirror,
        prm.enable[0], prm.enable[1], prm.enable[2], prm.enable[3],
        prm.use_spreading, prm.use_bin_averaging,
        peaks, masses, params,
    )
    return peaks, masses, params
