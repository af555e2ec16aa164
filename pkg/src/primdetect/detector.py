"""End-to-end voting pipeline: reference loop, joint per-pair voting decisions,
candidate extraction, clustering by weighted averaging, and inlier assignment.

Per reference point, every sampled pair casts votes following the joint
decision tree: convexity gate, then either the plane branch (parallel
normals + coplanarity) or the curved branch, where every admissible pair
votes for a cone, symmetric-angle pairs additionally vote for a cylinder,
and triangular pairs also vote for a sphere. Plane pairs are disjoint from
the curved types.

Reference-point iterations are independent; with PRIMDETECT_THREADS > 1 they
run on worker threads with private accumulators and are merged in reference
order, so results match the serial run bit for bit.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ppf
from .accumulator import (
    ConeAccumulator,
    GridAccumulator1D,
    GridAccumulator2D,
    HemisphereGrid,
    ScalarAccumulator,
)
from .geometry import (
    Cone,
    Cylinder,
    OrientedPoint,
    Plane,
    PointCloud,
    Primitive,
    Sphere,
    signed_distance,
    surface_normal_at,
)

TYPE_ORDER = ("plane", "sphere", "cylinder", "cone")
BACKENDS = ("numba", "numpy")

# a candidate's reference point must lie this close to its surface
REF_SURFACE_FRACTION = 0.02
CONE_SEPARATION_FRACTION = 1e-9


def default_backend() -> str:
    env = os.environ.get("PRIMDETECT_BACKEND", "").strip().lower()
    if env in BACKENDS:
        return env
    if env:
        raise ValueError(f"PRIMDETECT_BACKEND must be one of {BACKENDS}, got {env!r}")
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


def default_threads() -> int:
    env = os.environ.get("PRIMDETECT_THREADS", "").strip()
    if not env:
        return 0
    n = int(env)
    if n < 0:
        raise ValueError("PRIMDETECT_THREADS must be >= 0")
    return n


@dataclass(frozen=True)
class DetectorConfig:
    """Detection parameters. Length fractions are relative to the scene diameter."""

    n_reference: int = 2048
    n_pair: int = 2048
    angle_bin: float = math.radians(10.0)
    radius_bin_fraction: float = 0.005
    radius_bin_count: int = 40
    max_pair_distance_fraction: float = 0.2
    min_votes: float = 8.0
    cluster_dist_fraction: float = 0.01
    cluster_angle: float = math.radians(20.0)
    tolerances: Optional[ppf.Tolerances] = None
    enabled_types: tuple = TYPE_ORDER
    use_vote_spreading: bool = True
    use_bin_averaging: bool = True
    use_cluster_averaging: bool = True
    per_type_extraction: bool = False
    vote_floor_on: str = "peak"  # "peak" or "neighborhood"
    min_cone_angle: Optional[float] = None
    rng_seed: int = 0
    backend: Optional[str] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if self.n_reference <= 0 or self.n_pair <= 0 or self.radius_bin_count <= 0:
            raise ValueError("counts must be positive")
        for name in ("radius_bin_fraction", "max_pair_distance_fraction", "cluster_dist_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if not 0.0 < self.angle_bin <= math.pi / 3:
            raise ValueError("angle_bin must be in (0, pi/3]")
        if self.tolerances is None:
            object.__setattr__(self, "tolerances", ppf.Tolerances.from_angle_bin(self.angle_bin))
        if self.min_cone_angle is None:
            object.__setattr__(self, "min_cone_angle", self.angle_bin / 4.0)
        types = tuple(self.enabled_types)
        bad = [t for t in types if t not in TYPE_ORDER]
        if bad or not types:
            raise ValueError(f"enabled_types must be a non-empty subset of {TYPE_ORDER}")
        object.__setattr__(self, "enabled_types", types)
        if self.vote_floor_on not in ("peak", "neighborhood"):
            raise ValueError("vote_floor_on must be 'peak' or 'neighborhood'")
        if self.backend is not None and self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    @property
    def angle_bin_count(self) -> int:
        return max(1, round(math.pi / self.angle_bin))

    def enabled_mask(self) -> tuple:
        return tuple(t in self.enabled_types for t in TYPE_ORDER)


@dataclass(frozen=True)
class VoteParams:
    """Scale-resolved voting constants shared by the kernel backends."""

    max_d2: float
    r_bin: float
    n_rbins: int
    angle_bin: float
    n_abins: int
    s_max: float
    min_sep: float
    tolerances: ppf.Tolerances
    hemisphere: HemisphereGrid
    enable: tuple
    use_spreading: bool
    use_bin_averaging: bool

    @classmethod
    def from_config(cls, config: DetectorConfig, diameter: float) -> "VoteParams":
        r_bin = config.radius_bin_fraction * diameter
        return cls(
            max_d2=(config.max_pair_distance_fraction * diameter) ** 2,
            r_bin=r_bin,
            n_rbins=config.radius_bin_count,
            angle_bin=config.angle_bin,
            n_abins=config.angle_bin_count,
            s_max=r_bin * config.radius_bin_count,
            min_sep=CONE_SEPARATION_FRACTION * diameter,
            tolerances=config.tolerances,
            hemisphere=HemisphereGrid(config.angle_bin),
            enable=config.enabled_mask(),
            use_spreading=config.use_vote_spreading,
            use_bin_averaging=config.use_bin_averaging,
        )


@dataclass
class AccumulatorSet:
    """One private set of vote stores, reset per reference point."""

    plane: ScalarAccumulator
    sphere: GridAccumulator1D
    cylinder: GridAccumulator2D
    cone: ConeAccumulator

    @classmethod
    def create(cls, params: VoteParams) -> "AccumulatorSet":
        return cls(
            plane=ScalarAccumulator(),
            sphere=GridAccumulator1D(params.r_bin, params.n_rbins),
            cylinder=GridAccumulator2D(params.r_bin, params.n_rbins, params.angle_bin),
            cone=ConeAccumulator(params.r_bin, params.n_rbins, params.hemisphere),
        )

    def reset(self):
        self.plane.reset()
        self.sphere.reset()
        self.cylinder.reset()
        self.cone.reset()


@dataclass(frozen=True)
class Candidate:
    primitive: Primitive
    reference: OrientedPoint
    vote_mass: float


@dataclass
class DetectionReport:
    primitives: list
    vote_masses: list
    labels: np.ndarray
    config: DetectorConfig
    scene_diameter: float
    timings_ms: dict = field(default_factory=dict)


def vote_pair(p_r, n_r, p_i, n_i, accumulators: AccumulatorSet, params: VoteParams):
    """Cast all votes for one pair, following the joint decision tree.

    Reference implementation of a single kernel iteration; the array backends
    replicate this control flow.
    """
    feat = ppf.compute_pair_feature(p_r, n_r, p_i, n_i)
    if feat is None or feat.c1 > params.max_d2 or not ppf.convexity_admissible(feat):
        return
    tol = params.tolerances
    spread = params.use_spreading
    if ppf.check_np(feat, tol):
        if params.enable[0] and ppf.check_pc(feat, tol):
            if spread:
                w = ppf.constraint_weight_np(feat, tol) * ppf.constraint_weight_pc(feat, tol)
                accumulators.plane.add(float(w))
            else:
                accumulators.plane.add(1.0)
        return
    if params.enable[3]:
        vote = ppf.cone_vote(p_r, n_r, p_i, n_i, feat, s_max=params.s_max,
                             min_separation=params.min_sep)
        if vote is not None:
            if spread:
                accumulators.cone.spread_vote(vote.axis_offset, vote.axis_dir, 1.0)
            else:
                accumulators.cone.nearest_votes([vote.axis_offset], [vote.axis_dir], 1.0)
    if (params.enable[1] or params.enable[2]) and ppf.check_as(feat, tol):
        w_as = float(ppf.constraint_weight_as(feat, tol)) if spread else 1.0
        if params.enable[2]:
            try:
                cyl = ppf.cylinder_vote(p_r, n_r, p_i, n_i, feat)
            except ValueError:
                cyl = None
            if cyl is not None:
                if spread:
                    accumulators.cylinder.spread_vote(cyl.radius, cyl.angle, w_as)
                else:
                    accumulators.cylinder.nearest_votes([cyl.radius], [cyl.angle], 1.0)
        if params.enable[1] and ppf.check_vt(feat, tol):
            radius = float(ppf.sphere_radius(feat))
            if spread:
                w = w_as * float(ppf.constraint_weight_vt(feat, tol))
                accumulators.sphere.spread_vote(radius, w)
            else:
                accumulators.sphere.nearest_votes([radius], 1.0)


def _build_primitive(type_index: int, row: np.ndarray, p_r, n_r,
                     config: DetectorConfig, diameter: float) -> Optional[Primitive]:
    """Primitive through the reference point from extracted vote parameters."""
    if type_index == 0:
        prim = Plane(n_r, float(n_r @ p_r))
    elif type_index == 1:
        radius = float(row[0])
        if radius <= 0.0:
            return None
        prim = Sphere(p_r - radius * n_r, radius)
    elif type_index == 2:
        radius = float(row[0])
        if radius <= 0.0:
            return None
        axis = ppf.cylinder_axis_from_angle(float(row[1]), n_r)
        prim = Cylinder(axis, p_r - radius * n_r, radius)
    else:
        prim = ppf.extract_cone(
            float(row[0]), row[1:4], p_r, n_r,
            min_axis_dot=math.sin(config.min_cone_angle),
        )
        if prim is None:
            return None
    if abs(float(signed_distance(p_r, prim))) >= REF_SURFACE_FRACTION * diameter:
        return None
    return prim


def _candidates_for_reference(peaks, masses, params_rows, p_r, n_r, config, diameter):
    """At most one candidate per reference (all passing types when per-type).

    Types are ranked by their maximal single-bin value: with tolerances tied
    to the bin size, the expected per-bin deposit of a vote is the same for
    every type, so peak heights are comparable across voting-space
    dimensions (neighborhood sums are not: they re-assemble the spread mass
    and would systematically favor higher-dimensional spaces). The vote
    floor applies to the same peak statistic by default: a neighborhood-sum
    floor lets diffuse cross-surface votes through in the unconstrained cone
    space. Candidates carry the spread neighborhood mass into clustering.
    """
    order = sorted(range(4), key=lambda t: (-peaks[t], t))
    floor = peaks if config.vote_floor_on == "peak" else masses
    picked = []
    for t in order:
        if floor[t] <= config.min_votes:
            continue
        prim = _build_primitive(t, params_rows[t], p_r, n_r, config, diameter)
        if prim is None:
            continue
        picked.append(Candidate(prim, OrientedPoint(p_r, n_r), float(masses[t])))
        if not config.per_type_extraction:
            break
    return picked


def _run_kernel(backend: str, positions, normals, ref_idx, pair_idx, vparams, threads: int):
    if backend == "numba":
        from . import _kernels_numba as kernel
    else:
        from . import _kernels_numpy as kernel
    if threads <= 1 or ref_idx.shape[0] < 2 * threads:
        return kernel.run(positions, normals, ref_idx, pair_idx, vparams)
    chunks = np.array_split(np.arange(ref_idx.shape[0]), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(kernel.run, positions, normals, ref_idx[c], pair_idx[c], vparams)
            for c in chunks
            if c.size
        ]
        results = [f.result() for f in futures]
    peaks = np.concatenate([r[0] for r in results], axis=0)
    masses = np.concatenate([r[1] for r in results], axis=0)
    params = np.concatenate([r[2] for r in results], axis=0)
    return peaks, masses, params


def detect(cloud: PointCloud, config: DetectorConfig = DetectorConfig()) -> DetectionReport:
    """Detect primitives in an oriented point cloud.

    Deterministic given the cloud, the configuration, and the seed: reference
    points are drawn without replacement (all points when the cloud is smaller
    than n_reference), pair partners with replacement, and pairs farther apart
    than the distance cap are skipped rather than resampled.
    """
    if len(cloud) < 2:
        raise ValueError("detection needs at least two points")
    t_start = time.perf_counter()
    timings = {}
    n = len(cloud)
    rng = np.random.default_rng(config.rng_seed)
    if n > config.n_reference:
        ref_idx = rng.choice(n, size=config.n_reference, replace=False).astype(np.int64)
    else:
        ref_idx = np.arange(n, dtype=np.int64)
    pair_idx = rng.integers(0, n, size=(ref_idx.shape[0], config.n_pair), dtype=np.int64)
    vparams = VoteParams.from_config(config, cloud.diameter)
    timings["sampling"] = (time.perf_counter() - t_start) * 1e3

    t0 = time.perf_counter()
    backend = config.backend or default_backend()
    threads = config.threads if config.threads is not None else default_threads()
    peaks, masses, tparams = _run_kernel(
        backend, cloud.positions, cloud.normals, ref_idx, pair_idx, vparams, threads
    )
    timings["voting"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    candidates = []
    for k in range(ref_idx.shape[0]):
        r = int(ref_idx[k])
        candidates.extend(
            _candidates_for_reference(
                peaks[k], masses[k], tparams[k], cloud.positions[r], cloud.normals[r],
                config, cloud.diameter,
            )
        )
    merged = cluster(candidates, cloud, config)
    timings["clustering"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    primitives = [p for p, _ in merged]
    vote_masses = [m for _, m in merged]
    if primitives:
        labels = assign_inliers(cloud, primitives, config)
    else:
        labels = np.full(n, -1, dtype=np.int64)
    timings["inliers"] = (time.perf_counter() - t0) * 1e3
    timings["total"] = (time.perf_counter() - t_start) * 1e3

    return DetectionReport(
        primitives=primitives,
        vote_masses=vote_masses,
        labels=labels,
        config=config,
        scene_diameter=cloud.diameter,
        timings_ms=timings,
    )


def dump_accumulators(cloud: PointCloud, config: DetectorConfig, out_dir) -> None:
    """Write the accumulator contents for the first reference point as CSVs.

    Debug aid: replays the votes of reference point 0 (same sampling as
    detect) through the reference implementation and dumps bin centers with
    their masses.
    """
    import os as _os

    rng = np.random.default_rng(config.rng_seed)
    n = len(cloud)
    if n > config.n_reference:
        ref_idx = rng.choice(n, size=config.n_reference, replace=False).astype(np.int64)
    else:
        ref_idx = np.arange(n, dtype=np.int64)
    pair_idx = rng.integers(0, n, size=(ref_idx.shape[0], config.n_pair), dtype=np.int64)
    vparams = VoteParams.from_config(config, cloud.diameter)
    accs = AccumulatorSet.create(vparams)
    r = int(ref_idx[0])
    p_r, n_r = cloud.positions[r], cloud.normals[r]
    for i in pair_idx[0]:
        if i == r:
            continue
        vote_pair(p_r, n_r, cloud.positions[i], cloud.normals[i], accs, vparams)
    _os.makedirs(out_dir, exist_ok=True)
    with open(_os.path.join(out_dir, "plane.csv"), "w", encoding="utf-8") as fh:
        fh.write("mass\n")
        fh.write(f"{accs.plane.total:.17g}\n")
    with open(_os.path.join(out_dir, "sphere.csv"), "w", encoding="utf-8") as fh:
        fh.write("radius,mass\n")
        for c, v in zip(accs.sphere.centers, accs.sphere.values):
            fh.write(f"{c:.17g},{v:.17g}\n")
    with open(_os.path.join(out_dir, "cylinder.csv"), "w", encoding="utf-8") as fh:
        fh.write("radius,angle,mass\n")
        for i, rc in enumerate(accs.cylinder.radius.centers):
            for j, ac in enumerate(accs.cylinder.angle_centers):
                fh.write(f"{rc:.17g},{ac:.17g},{accs.cylinder.values[i, j]:.17g}\n")
    hemi = vparams.hemisphere
    with open(_os.path.join(out_dir, "cone.csv"), "w", encoding="utf-8") as fh:
        fh.write("axis_offset,dir_x,dir_y,dir_z,mass\n")
        for i, sc in enumerate(accs.cone.s_axis.centers):
            row = accs.cone.values[i]
            for j in np.flatnonzero(row):
                d = hemi.cell_dirs[j]
                fh.write(f"{sc:.17g},{d[0]:.17g},{d[1]:.17g},{d[2]:.17g},{row[j]:.17g}\n")


def _merge_cluster(members: Sequence[Candidate]) -> Primitive:
    """Vote-mass weighted average of same-type candidate primitives."""
    weights = np.array([c.vote_mass for c in members])
    total = weights.sum()
    first = members[0].primitive
    if isinstance(first, Plane):
        normals = np.array([c.primitive.normal for c in members])
        offsets = np.array([c.primitive.offset for c in members])
        flip = normals @ first.normal < 0.0
        normals[flip] *= -1.0
        offsets[flip] *= -1.0
        n = weights @ normals
        n /= np.linalg.norm(n)
        return Plane(n, float(weights @ offsets / total))
    if isinstance(first, Sphere):
        centers = np.array([c.primitive.center for c in members])
        radii = np.array([c.primitive.radius for c in members])
        return Sphere(weights @ centers / total, float(weights @ radii / total))
    if isinstance(first, Cylinder):
        axes = np.array([c.primitive.axis for c in members])
        flip = axes @ first.axis < 0.0
        axes[flip] *= -1.0
        axis = weights @ axes
        axis /= np.linalg.norm(axis)
        feet = np.array([c.primitive.foot for c in members])
        radii = np.array([c.primitive.radius for c in members])
        return Cylinder(axis, weights @ feet / total, float(weights @ radii / total))
    axes = np.array([c.primitive.axis for c in members])
    flip = axes @ first.axis < 0.0
    axes[flip] *= -1.0
    axis = weights @ axes
    axis /= np.linalg.norm(axis)
    apexes = np.array([c.primitive.apex for c in members])
    angles = np.array([c.primitive.opening_angle for c in members])
    return Cone(weights @ apexes / total, axis, float(weights @ angles / total))


def cluster(candidates: Sequence[Candidate], cloud: PointCloud,
            config: DetectorConfig) -> list:
    """Greedy agglomeration of candidates in descending vote-mass order.

    A candidate joins the first cluster (creation order) of the same type
    containing any member whose reference point lies on the candidate's
    surface within the distance threshold with an agreeing normal.
    Membership is single-linkage: per-candidate parameter noise is
    comparable to the distance threshold at realistic noise levels, so
    testing only against the seed fragments true surfaces into duplicate
    clusters. Cluster parameters are the vote-mass weighted average of the
    members, or the strongest member when averaging is disabled.
    """
    if not candidates:
        return []
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].vote_mass, i))
    dist_max = config.cluster_dist_fraction * cloud.diameter
    cos_max = math.cos(config.cluster_angle)

    n = len(candidates)
    pos_buf = np.empty((n, 3))
    nrm_buf = np.empty((n, 3))
    row_cluster = np.empty(n, dtype=np.int64)
    rows_by_kind: dict = {}
    kinds: list[str] = []
    members: list[list[Candidate]] = []
    count = 0
    for i in order:
        cand = candidates[i]
        kind = cand.primitive.kind
        target = -1
        rows = rows_by_kind.get(kind)
        if rows:
            idx = np.asarray(rows)
            dist = np.abs(signed_distance(pos_buf[idx], cand.primitive))
            grads = surface_normal_at(pos_buf[idx], cand.primitive)
            cosang = np.einsum("ij,ij->i", nrm_buf[idx], grads)
            ok = (dist < dist_max) & (cosang > cos_max)
            if np.any(ok):
                target = int(row_cluster[idx[ok]].min())
        if target < 0:
            target = len(members)
            kinds.append(kind)
            members.append([cand])
        else:
            members[target].append(cand)
        pos_buf[count] = cand.reference.position
        nrm_buf[count] = cand.reference.normal
        row_cluster[count] = target
        rows_by_kind.setdefault(kind, []).append(count)
        count += 1

    out = []
    for group in members:
        total = float(sum(c.vote_mass for c in group))
        if config.use_cluster_averaging:
            out.append((_merge_cluster(group), total))
        else:
            out.append((group[0].primitive, total))
    return out


def assign_inliers(cloud: PointCloud, primitives: Sequence[Primitive],
                   config: DetectorConfig) -> np.ndarray:
    """Label each point with the closest compatible primitive, or -1.

    The closest primitive by absolute distance wins (ties within 1e-12 go to
    the lower index); the point stays unlabeled when that distance exceeds
    the cluster distance threshold or the normal-compatibility test fails.
    """
    if not primitives:
        return np.full(len(cloud), -1, dtype=np.int64)
    dist_max = config.cluster_dist_fraction * cloud.diameter
    cos_max = math.cos(config.cluster_angle)
    dists = np.stack([np.abs(signed_distance(cloud.positions, p)) for p in primitives])
    compat = np.stack([
        np.einsum("ij,ij->i", cloud.normals, surface_normal_at(cloud.positions, p)) > cos_max
        for p in primitives
    ])
    dmin = dists.min(axis=0)
    chosen = np.argmax(dists <= dmin + 1e-12, axis=0)
    cols = np.arange(len(cloud))
    ok = (dists[chosen, cols] < dist_max) & compat[chosen, cols]
    return np.where(ok, chosen, -1).astype(np.int64)
