"""Vote accumulators with linear-interpolation spreading and weighted extraction.

Four vote stores, one per primitive type:

* plane: a single scalar (the local voting space is zero-dimensional),
* sphere: a 1D radius grid,
* cylinder: a radius grid crossed with a cyclic angle axis of period pi,
* cone: a radius-like axis-offset grid crossed with a hemisphere grid.

Spreading splits each vote over the bins bracketing its coordinates with
multilinear weights, so the weighted average of bin centers around the
maximum reproduces exact parameters. Extraction returns the vote-mass
weighted mean of bin centers over the maximal bin and its immediate
neighbors, or the maximal bin alone when bin averaging is disabled.

One accumulator set is owned by a single worker at a time; parallelism
happens across reference points with private accumulators.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


def hemisphere_canonical(v):
    """Map directions into the canonical hemisphere (z > 0, deterministic ties).

    Antipodal directions map to the same representative. Accepts a single
    direction ``(3,)`` or an array ``(..., 3)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        x, y, z = v
        if z < 0.0 or (z == 0.0 and (x < 0.0 or (x == 0.0 and y < 0.0))):
            return -v
        return v.copy()
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    flip = (z < 0.0) | ((z == 0.0) & ((x < 0.0) | ((x == 0.0) & (y < 0.0))))
    return np.where(flip[..., None], -v, v)


class ScalarAccumulator:
    """Plane vote mass for the current reference point."""

    __slots__ = ("total",)

    def __init__(self):
        self.total = 0.0

    def reset(self):
        self.total = 0.0

    def add(self, weight: float):
        self.total += weight

    def add_many(self, weights):
        self.total += float(np.sum(weights))

    def extract_max(self, min_votes: float = 8.0) -> Optional[Tuple[tuple, float]]:
        if self.total <= min_votes:
            return None
        return (), self.total


class GridAccumulator1D:
    """Uniform bins over (0, bin_width * bin_count] with linear spreading."""

    def __init__(self, bin_width: float, bin_count: int):
        if not bin_width > 0 or bin_count < 2:
            raise ValueError("need positive bin width and at least two bins")
        self.bin_width = float(bin_width)
        self.bin_count = int(bin_count)
        self.values = np.zeros(self.bin_count)
        self.dropped = 0

    @property
    def r_max(self) -> float:
        return self.bin_width * self.bin_count

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bin_count) + 0.5) * self.bin_width

    def reset(self):
        self.values[:] = 0.0
        self.dropped = 0

    def _coords(self, values):
        """Bracketing bin index and fraction, with edge values clamped inward."""
        u = np.clip(values / self.bin_width - 0.5, 0.0, self.bin_count - 1.0)
        lo = np.minimum(u.astype(np.int64), self.bin_count - 2)
        return lo, u - lo

    def spread_votes(self, values, weights):
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), values.shape)
        ok = (values > 0.0) & (values <= self.r_max)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        v, w = values[ok], weights[ok]
        lo, f = self._coords(v)
        np.add.at(self.values, lo, w * (1.0 - f))
        np.add.at(self.values, lo + 1, w * f)

    def spread_vote(self, value: float, weight: float):
        self.spread_votes([value], [weight])

    def nearest_votes(self, values, weights):
        """Full weight into the containing bin (no spreading)."""
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), values.shape)
        ok = (values > 0.0) & (values <= self.r_max)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        idx = np.clip((values[ok] / self.bin_width).astype(np.int64), 0, self.bin_count - 1)
        np.add.at(self.values, idx, weights[ok])

    def extract_max(self, min_votes: float = 8.0, average: bool = True, window: int = 1):
        """Weighted mean of bin centers around the maximum, with its mass.

        ``window`` is the neighborhood radius in bins (1 = immediate
        neighbors). Returns None when empty or below the vote floor.
        """
        if not np.any(self.values > 0.0):
            return None
        i = int(np.argmax(self.values))
        lo, hi = max(i - window, 0), min(i + window + 1, self.bin_count)
        window = self.values[lo:hi]
        mass = float(window.sum())
        if mass <= min_votes:
            return None
        if average:
            value = float(window @ self.centers[lo:hi]) / mass
        else:
            value = float(self.centers[i])
        return (value,), mass


class GridAccumulator2D:
    """Radius bins crossed with a cyclic angle axis of period pi."""

    def __init__(self, bin_width: float, bin_count: int, angle_bin: float):
        self.radius = GridAccumulator1D(bin_width, bin_count)
        self.angle_count = max(1, round(math.pi / angle_bin))
        self.angle_bin = math.pi / self.angle_count
        self.values = np.zeros((bin_count, self.angle_count))
        self.dropped = 0

    @property
    def angle_centers(self) -> np.ndarray:
        return (np.arange(self.angle_count) + 0.5) * self.angle_bin

    def reset(self):
        self.values[:] = 0.0
        self.dropped = 0

    def _inrange(self, radii):
        return (radii > 0.0) & (radii <= self.radius.r_max)

    def spread_votes(self, radii, angles, weights):
        radii = np.atleast_1d(np.asarray(radii, dtype=np.float64))
        angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), radii.shape)
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), radii.shape)
        ok = self._inrange(radii)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        r, ang, w = radii[ok], angles[ok], weights[ok]
        rlo, fr = self.radius._coords(r)
        t = np.mod(ang, math.pi) / self.angle_bin - 0.5
        alo = np.floor(t).astype(np.int64)
        fa = t - alo
        alo %= self.angle_count
        ahi = (alo + 1) % self.angle_count
        flat = self.values.reshape(-1)
        na = self.angle_count
        np.add.at(flat, rlo * na + alo, w * (1.0 - fr) * (1.0 - fa))
        np.add.at(flat, rlo * na + ahi, w * (1.0 - fr) * fa)
        np.add.at(flat, (rlo + 1) * na + alo, w * fr * (1.0 - fa))
        np.add.at(flat, (rlo + 1) * na + ahi, w * fr * fa)

    def spread_vote(self, radius: float, angle: float, weight: float):
        self.spread_votes([radius], [angle], [weight])

    def nearest_votes(self, radii, angles, weights):
        radii = np.atleast_1d(np.asarray(radii, dtype=np.float64))
        angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), radii.shape)
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), radii.shape)
        ok = self._inrange(radii)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        ri = np.clip((radii[ok] / self.radius.bin_width).astype(np.int64), 0, self.radius.bin_count - 1)
        ai = (np.mod(angles[ok], math.pi) / self.angle_bin).astype(np.int64) % self.angle_count
        np.add.at(self.values.reshape(-1), ri * self.angle_count + ai, weights[ok])

    def extract_max(self, min_votes: float = 8.0, average: bool = True, window: int = 1):
        if not np.any(self.values > 0.0):
            return None
        ri, ai = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        rlo, rhi = max(ri - window, 0), min(ri + window + 1, self.radius.bin_count)
        if self.angle_count >= 2 * window + 1:
            offs = tuple(range(-window, window + 1))
        else:
            offs = tuple(range(self.angle_count))
            ai = 0
        cols = [(ai + o) % self.angle_count for o in offs]
        block = self.values[rlo:rhi][:, cols]
        mass = float(block.sum())
        if mass <= min_votes:
            return None
        if average:
            r_centers = self.radius.centers[rlo:rhi]
            radius = float(block.sum(axis=1) @ r_centers) / mass
            ang_unwrapped = self.angle_centers[ai] + np.array(offs) * self.angle_bin
            angle = float(block.sum(axis=0) @ ang_unwrapped) / mass % math.pi
        else:
            radius = float(self.radius.centers[ri])
            angle = float(self.angle_centers[ai])
        return (radius, angle), mass


class HemisphereGrid:
    """Near-equal-area cells on the canonical hemisphere.

    A polar cap cell sits at the pole, surrounded by latitude rings whose
    per-ring cell counts keep each cell's solid angle close to angle_bin
    squared. The pole neighborhood is treated as a flat disc (the latitude
    rings are its concentric circles), rings further out use the plain
    colatitude/longitude chart; with this ring layout the two charts share
    the same interpolation stencils, so votes and extractions agree exactly.

    Antipodal directions map to the same cell. Directions past the equator
    wrap to cells near the opposite longitude, which extraction reads back
    at mirrored coordinates.
    """

    def __init__(self, angle_bin: float = math.radians(10.0)):
        if not 0.0 < angle_bin < math.pi / 2:
            raise ValueError("angle_bin must be in (0, pi/2)")
        self.angle_bin = float(angle_bin)
        cap = angle_bin / math.sqrt(math.pi)  # cap area ~ angle_bin^2
        self.n_rings = max(1, round((math.pi / 2 - cap) / angle_bin))
        self.ring_width = (math.pi / 2 - cap) / self.n_rings
        self.cap_theta = cap

        target = angle_bin * angle_bin
        bounds = [0.0, cap] + [cap + (k + 1) * self.ring_width for k in range(self.n_rings)]
        self.ring_bounds = np.array(bounds)
        counts = [1]
        theta_c = [0.0]
        for k in range(self.n_rings):
            lo, hi = bounds[k + 1], bounds[k + 2]
            area = TWO_PI * (math.cos(lo) - math.cos(hi))
            counts.append(max(1, round(area / target)))
            theta_c.append(0.5 * (lo + hi))
        self.ring_count = np.array(counts, dtype=np.int64)
        self.ring_theta = np.array(theta_c)
        self.ring_start = np.concatenate(([0], np.cumsum(self.ring_count)))[:-1]
        self.n_cells = int(self.ring_count.sum())
        # radial interpolation nodes: cap center, ring centers, mirrored last ring
        self.nodes = np.concatenate((self.ring_theta, [math.pi - self.ring_theta[-1]]))

        cell_theta = np.empty(self.n_cells)
        cell_phi = np.empty(self.n_cells)
        cell_area = np.empty(self.n_cells)
        cell_ring = np.empty(self.n_cells, dtype=np.int64)
        for k in range(self.n_rings + 1):
            n_k = int(self.ring_count[k])
            s = int(self.ring_start[k])
            lo, hi = bounds[k], bounds[k + 1]
            ring_area = TWO_PI * (math.cos(lo) - math.cos(hi))
            for j in range(n_k):
                cell_theta[s + j] = self.ring_theta[k]
                cell_phi[s + j] = j * (TWO_PI / n_k)
                cell_area[s + j] = ring_area / n_k
                cell_ring[s + j] = k
        self.cell_theta = cell_theta
        self.cell_phi = cell_phi
        self.cell_area = cell_area
        self.cell_ring = cell_ring
        st, ct = np.sin(cell_theta), np.cos(cell_theta)
        self.cell_dirs = np.stack((st * np.cos(cell_phi), st * np.sin(cell_phi), ct), axis=1)
        self._build_adjacency()

    def _build_adjacency(self):
        """1-ring neighbors: cells whose interpolation stencils can co-occur."""
        adj_cell: list[int] = []
        adj_mirror: list[bool] = []
        starts = [0]

        def angdiff(a, b):
            return abs((a - b + math.pi) % TWO_PI - math.pi)

        slack = 1e-9
        for cell in range(self.n_cells):
            k = int(self.cell_ring[cell])
            n_k = int(self.ring_count[k])
            dphi_k = TWO_PI / n_k
            phi = self.cell_phi[cell]
            neighbors: list[tuple[int, bool]] = []
            if n_k > 1:
                s = int(self.ring_start[k])
                j = cell - s
                for o in (-1, 1):
                    other = s + (j + o) % n_k
                    if other != cell and (other, False) not in neighbors:
                        neighbors.append((other, False))
            for kk in (k - 1, k + 1):
                if 0 <= kk <= self.n_rings:
                    n_kk = int(self.ring_count[kk])
                    dphi_kk = TWO_PI / n_kk
                    s = int(self.ring_start[kk])
                    for j in range(n_kk):
                        if angdiff(phi, self.cell_phi[s + j]) < dphi_k + dphi_kk + slack:
                            neighbors.append((s + j, False))
            if k == self.n_rings:
                s = int(self.ring_start[k])
                for j in range(n_k):
                    if angdiff(phi, self.cell_phi[s + j] + math.pi) < 2 * dphi_k + slack:
                        entry = (s + j, True)
                        if s + j != cell and entry not in neighbors:
                            neighbors.append(entry)
            for other, mir in neighbors:
                adj_cell.append(other)
                adj_mirror.append(mir)
            starts.append(len(adj_cell))
        self.adj_start = np.array(starts, dtype=np.int64)
        self.adj_cell = np.array(adj_cell, dtype=np.int64)
        self.adj_mirror = np.array(adj_mirror, dtype=np.uint8)

    def cell_angular_radius(self, cell: int) -> float:
        """Radius of the disc with the same solid angle as the cell."""
        return math.sqrt(self.cell_area[cell] / math.pi)

    def _theta_phi(self, dirs: np.ndarray):
        v = hemisphere_canonical(dirs)
        theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
        return theta, phi

    def lookup(self, direction) -> tuple[int, tuple[float, float]]:
        """Containing cell of a unit direction, plus in-chart offsets from its center."""
        theta, phi = self._theta_phi(np.asarray(direction, dtype=np.float64))
        theta, phi = float(theta), float(phi)
        k = min(max(int(np.searchsorted(self.ring_bounds, theta, side="right")) - 1, 0), self.n_rings)
        n_k = int(self.ring_count[k])
        dphi = TWO_PI / n_k
        j = int(math.floor(phi / dphi + 0.5)) % n_k
        cell = int(self.ring_start[k]) + j
        dphi_off = (phi - self.cell_phi[cell] + math.pi) % TWO_PI - math.pi
        return cell, (theta - self.cell_theta[cell], dphi_off)

    def lookup_many(self, dirs) -> np.ndarray:
        theta, phi = self._theta_phi(np.asarray(dirs, dtype=np.float64))
        k = np.clip(np.searchsorted(self.ring_bounds, theta, side="right") - 1, 0, self.n_rings)
        n_k = self.ring_count[k]
        j = np.floor(phi * n_k / TWO_PI + 0.5).astype(np.int64) % n_k
        return self.ring_start[k] + j

    def interp_many(self, dirs) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear stencil cells (m, 4) and weights (m, 4) for unit directions."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        theta, phi = self._theta_phi(dirs)
        idx = np.clip(np.searchsorted(self.nodes, theta, side="right") - 1, 0, len(self.nodes) - 2)
        a = (theta - self.nodes[idx]) / (self.nodes[idx + 1] - self.nodes[idx])

        cells = np.empty((dirs.shape[0], 4), dtype=np.int64)
        wts = np.empty((dirs.shape[0], 4))
        for side, ring in enumerate((idx, idx + 1)):
            mirror = ring > self.n_rings
            ring_eff = np.where(mirror, self.n_rings, ring)
            pp = np.where(mirror, np.mod(phi + math.pi, TWO_PI), phi)
            n_k = self.ring_count[ring_eff]
            t = pp * n_k / TWO_PI
            j = np.floor(t).astype(np.int64)
            b = t - j
            j %= n_k
            base = self.ring_start[ring_eff]
            radial = (1.0 - a) if side == 0 else a
            cells[:, 2 * side] = base + j
            cells[:, 2 * side + 1] = base + (j + 1) % n_k
            wts[:, 2 * side] = radial * (1.0 - b)
            wts[:, 2 * side + 1] = radial * b
        return cells, wts


class ConeAccumulator:
    """Axis-offset bins crossed with a hemisphere grid of axis directions."""

    def __init__(self, bin_width: float, bin_count: int, hemisphere: HemisphereGrid):
        self.s_axis = GridAccumulator1D(bin_width, bin_count)
        self.hemisphere = hemisphere
        self.values = np.zeros((bin_count, hemisphere.n_cells))
        self.dropped = 0

    def reset(self):
        self.values[:] = 0.0
        self.dropped = 0

    def spread_votes(self, s_values, dirs, weights):
        s_values = np.atleast_1d(np.asarray(s_values, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), s_values.shape)
        ok = (s_values > 0.0) & (s_values <= self.s_axis.r_max)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        s, w = s_values[ok], weights[ok]
        cells, cw = self.hemisphere.interp_many(dirs[ok])
        slo, fs = self.s_axis._coords(s)
        flat = self.values.reshape(-1)
        nc = self.hemisphere.n_cells
        for col in range(4):
            np.add.at(flat, slo * nc + cells[:, col], w * (1.0 - fs) * cw[:, col])
            np.add.at(flat, (slo + 1) * nc + cells[:, col], w * fs * cw[:, col])

    def spread_vote(self, s_value: float, direction, weight: float):
        self.spread_votes([s_value], [direction], [weight])

    def nearest_votes(self, s_values, dirs, weights):
        s_values = np.atleast_1d(np.asarray(s_values, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), s_values.shape)
        ok = (s_values > 0.0) & (s_values <= self.s_axis.r_max)
        self.dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            return
        si = np.clip((s_values[ok] / self.s_axis.bin_width).astype(np.int64), 0, self.s_axis.bin_count - 1)
        cells = self.hemisphere.lookup_many(dirs[ok])
        np.add.at(self.values.reshape(-1), si * self.hemisphere.n_cells + cells, weights[ok])

    def _neighbor_entries(self, cell: int):
        hemi = self.hemisphere
        lo, hi = int(hemi.adj_start[cell]), int(hemi.adj_start[cell + 1])
        entries = [(cell, False)]
        entries.extend(
            (int(hemi.adj_cell[e]), bool(hemi.adj_mirror[e])) for e in range(lo, hi)
        )
        return entries

    def extract_max(self, min_votes: float = 8.0, average: bool = True):
        if not np.any(self.values > 0.0):
            return None
        bi, ci = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        rows = range(max(bi - 1, 0), min(bi + 2, self.s_axis.bin_count))
        entries = self._neighbor_entries(int(ci))
        hemi = self.hemisphere
        s_centers = self.s_axis.centers

        total = 0.0
        s_sum = 0.0
        theta_sum = 0.0
        cell_mass = []
        for cell, mir in entries:
            m = 0.0
            for r in rows:
                v = self.values[r, cell]
                m += v
                s_sum += v * s_centers[r]
            theta_eff = math.pi - hemi.cell_theta[cell] if mir else hemi.cell_theta[cell]
            theta_sum += m * theta_eff
            cell_mass.append(m)
            total += m
        if total <= min_votes:
            return None
        if not average:
            return (float(s_centers[bi]), hemi.cell_dirs[ci].copy()), float(total)

        s_mean = s_sum / total
        theta_mean = theta_sum / total
        # longitude: mass-weighted mean of unwrapped centers, cap excluded
        if ci != 0:
            phi_ref = hemi.cell_phi[ci]
        else:
            best, phi_ref = -1.0, None
            for (cell, mir), m in zip(entries, cell_mass):
                if cell != 0 and m > best:
                    best = m
                    phi_ref = hemi.cell_phi[cell] - math.pi if mir else hemi.cell_phi[cell]
        if phi_ref is None:
            direction = np.array([0.0, 0.0, 1.0])
        else:
            phi_sum, phi_mass = 0.0, 0.0
            for (cell, mir), m in zip(entries, cell_mass):
                if cell == 0:
                    continue
                phi_eff = hemi.cell_phi[cell] - math.pi if mir else hemi.cell_phi[cell]
                phi_u = phi_ref + ((phi_eff - phi_ref + math.pi) % TWO_PI - math.pi)
                phi_sum += m * phi_u
                phi_mass += m
            if phi_mass <= 0.0:
                direction = np.array([0.0, 0.0, 1.0])
            else:
                phi_mean = phi_sum / phi_mass
                st, ct = math.sin(theta_mean), math.cos(theta_mean)
                direction = hemisphere_canonical(
                    np.array([st * math.cos(phi_mean), st * math.sin(phi_mean), ct])
                )
        return (float(s_mean), direction), float(total)
