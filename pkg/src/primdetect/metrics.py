"""Evaluation protocol: coverage curves, data-aware object distance, detection scores.

Coverage curves are empirical CDFs of point-to-primitive distances on an
epsilon grid expressed as fractions of the scene diameter. The data-aware
object distance (DOD) compares two primitives through the data: it averages,
over a point set, the distance between each point's projections onto the two
surfaces, which makes it comparable across primitive types and invariant to
rigid changes of the coordinate system.

Detection scoring follows region-overlap correspondence: a ground-truth
object and a detection correspond when each side's inlier set covers at
least a fraction T of the other's. Correct / missed / noise counts are
normalized by the ground-truth and detection counts; over- and
under-segmentation mean precision + noise rate need not sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import PointCloud, Primitive, project, signed_distance

DEFAULT_OVERLAP_T = 0.6


def default_epsilon_grid(n: int = 100) -> np.ndarray:
    """Logarithmic epsilon grid (fractions of the scene diameter)."""
    return np.logspace(-4, -1, n)


@dataclass
class CoverageCurve:
    epsilons: np.ndarray      # fractions of the scene diameter, increasing
    values: np.ndarray        # coverage in [0, 1], non-decreasing
    mean_error: float         # mean absolute point error (absolute units)
    n_primitives: int = 1

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class PrReport:
    precision: float
    recall: float
    missed_rate: float
    noise_rate: float
    threshold: float
    n_detections: int
    n_gt: int
    n_correct: int
    n_missed: int
    n_noise: int
    matches: list = field(default_factory=list)  # (gt index, detection index)


def point_errors(cloud: PointCloud, primitives: Sequence[Primitive]) -> np.ndarray:
    """Distance of each point to its nearest detected primitive (inf if none)."""
    if not primitives:
        return np.full(len(cloud), np.inf)
    dists = np.stack([np.abs(signed_distance(cloud.positions, p)) for p in primitives])
    return dists.min(axis=0)


def p_coverage(errors: np.ndarray, eps_grid: np.ndarray, diameter: float) -> CoverageCurve:
    """Fraction of points with error below each epsilon (epsilon in diameter fractions)."""
    errors = np.asarray(errors, dtype=np.float64)
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    vals = np.array([np.mean(errors < e * diameter) for e in eps_grid])
    finite = errors[np.isfinite(errors)]
    mean_err = float(finite.mean()) if finite.size == errors.size else float("inf")
    return CoverageCurve(eps_grid, vals, mean_err)


def s_coverage(
    cloud: PointCloud,
    primitives: Sequence[Primitive],
    labels: np.ndarray,
    eps_grid: np.ndarray,
) -> CoverageCurve:
    """Unweighted mean of per-primitive coverage curves over each one's inliers.

    Primitives without inliers are excluded; with no primitives at all the
    curve is identically zero.
    """
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    curves = []
    means = []
    for k, prim in enumerate(primitives):
        pts = cloud.positions[labels == k]
        if pts.shape[0] == 0:
            continue
        err = np.abs(signed_distance(pts, prim))
        curves.append(np.array([np.mean(err < e * cloud.diameter) for e in eps_grid]))
        means.append(err.mean())
    if not curves:
        return CoverageCurve(eps_grid, np.zeros_like(eps_grid), float("inf"), 0)
    return CoverageCurve(
        eps_grid, np.mean(curves, axis=0), float(np.mean(means)), len(curves)
    )


def dod(gt: Primitive, detected: Primitive, points) -> float:
    """Data-aware object distance over a point set.

    Mean distance between each point's projections onto the two primitives;
    zero iff the projections coincide everywhere on the set.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValueError("DOD needs at least one point")
    return float(np.mean(np.linalg.norm(project(points, gt) - project(points, detected), axis=1)))


def match_and_score(
    gt_labels: np.ndarray,
    det_labels: np.ndarray,
    n_gt: int,
    n_det: int,
    threshold: float = DEFAULT_OVERLAP_T,
) -> PrReport:
    """Correspondence-based detection scores over two labelings of one cloud.

    Labels are per-point object indices with -1 for unassigned. Pairs whose
    mutual coverage reaches the threshold are matched greedily one-to-one in
    descending intersection size (ties resolved by ascending indices).
    """
    gt_labels = np.asarray(gt_labels)
    det_labels = np.asarray(det_labels)
    if gt_labels.shape != det_labels.shape:
        raise ValueError("label arrays must cover the same cloud")
    gt_sizes = np.bincount(gt_labels[gt_labels >= 0], minlength=n_gt)
    det_sizes = np.bincount(det_labels[det_labels >= 0], minlength=n_det)
    both = (gt_labels >= 0) & (det_labels >= 0)
    inter = np.zeros((n_gt, n_det), dtype=np.int64)
    if np.any(both) and n_gt and n_det:
        pair_ids = gt_labels[both] * n_det + det_labels[both]
        counts = np.bincount(pair_ids, minlength=n_gt * n_det)
        inter = counts.reshape(n_gt, n_det)

    qualifying = []
    for g in range(n_gt):
        for d in range(n_det):
            i = inter[g, d]
            if i > 0 and i >= threshold * gt_sizes[g] and i >= threshold * det_sizes[d]:
                qualifying.append((int(i), g, d))
    qualifying.sort(key=lambda t: (-t[0], t[1], t[2]))
    gt_used = np.zeros(n_gt, dtype=bool)
    det_used = np.zeros(n_det, dtype=bool)
    matches = []
    for _, g, d in qualifying:
        if not gt_used[g] and not det_used[d]:
            gt_used[g] = True
            det_used[d] = True
            matches.append((g, d))
    gt_any = {g for _, g, _ in qualifying}
    det_any = {d for _, _, d in qualifying}
    n_correct = len(matches)
    n_missed = n_gt - len(gt_any)
    n_noise = n_det - len(det_any)
    return PrReport(
        precision=n_correct / n_det if n_det else 0.0,
        recall=n_correct / n_gt if n_gt else 0.0,
        missed_rate=n_missed / n_gt if n_gt else 0.0,
        noise_rate=n_noise / n_det if n_det else 0.0,
        threshold=threshold,
        n_detections=n_det,
        n_gt=n_gt,
        n_correct=n_correct,
        n_missed=n_missed,
        n_noise=n_noise,
        matches=matches,
    )


def evaluate_detection(
    cloud: PointCloud,
    gt_primitives: Sequence[Primitive],
    gt_labels: np.ndarray,
    det_primitives: Sequence[Primitive],
    det_labels: np.ndarray,
    eps_grid: Optional[np.ndarray] = None,
    threshold: float = DEFAULT_OVERLAP_T,
    sigma_abs: Optional[float] = None,
) -> dict:
    """Full scoring of one detection result against ground truth."""
    if eps_grid is None:
        eps_grid = default_epsilon_grid()
    errors = point_errors(cloud, det_primitives)
    p_curve = p_coverage(errors, eps_grid, cloud.diameter)
    s_curve = s_coverage(cloud, det_primitives, det_labels, eps_grid)
    pr = match_and_score(gt_labels, det_labels, len(gt_primitives), len(det_primitives), threshold)
    dods = []
    for g, d in pr.matches:
        pts = cloud.positions[np.asarray(gt_labels) == g]
        dods.append(dod(gt_primitives[g], det_primitives[d], pts))
    out = {
        "precision": pr.precision,
        "recall": pr.recall,
        "missed_rate": pr.missed_rate,
        "noise_rate": pr.noise_rate,
        "counts": {
            "detections": pr.n_detections,
            "gt_objects": pr.n_gt,
            "correct": pr.n_correct,
            "missed": pr.n_missed,
            "noise": pr.n_noise,
        },
        "matches": [[g, d] for g, d in pr.matches],
        "dod_per_match": dods,
        "dod_mean": float(np.mean(dods)) if dods else None,
        "mean_point_error": p_curve.mean_error if np.isfinite(p_curve.mean_error) else None,
        "overlap_threshold": threshold,
    }
    if sigma_abs and dods:
        out["dod_mean_in_sigma"] = float(np.mean(dods) / sigma_abs)
    return out, p_curve, s_curve
