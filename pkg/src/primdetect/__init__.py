"""Geometric primitive detection in oriented point clouds via pair-feature Hough voting."""

from .accumulator import (
    ConeAccumulator,
    GridAccumulator1D,
    GridAccumulator2D,
    HemisphereGrid,
    ScalarAccumulator,
    hemisphere_canonical,
)
from .cloudio import read_cloud, read_report, write_cloud, write_report
from .datagen import GroundTruth, SceneSpec, generate_scene, intersect_ray
from .detector import (
    Candidate,
    DetectionReport,
    DetectorConfig,
    assign_inliers,
    cluster,
    detect,
    vote_pair,
)
from .geometry import (
    Cone,
    Cylinder,
    OrientedPoint,
    Plane,
    PointCloud,
    Primitive,
    Sphere,
    project,
    scene_diameter,
    signed_distance,
    surface_normal_at,
)
from .metrics import (
    CoverageCurve,
    PrReport,
    dod,
    evaluate_detection,
    match_and_score,
    p_coverage,
    point_errors,
    s_coverage,
)
from .ppf import (
    ConeVote,
    CylinderVote,
    PairFeature,
    Tolerances,
    check_as,
    check_np,
    check_pc,
    check_vt,
    compute_pair_feature,
    cone_vote,
    convexity_admissible,
    constraint_weight_as,
    constraint_weight_np,
    constraint_weight_pc,
    constraint_weight_vt,
    cylinder_vote,
    extract_cone,
    sphere_radius,
)

__version__ = "0.1.0"
