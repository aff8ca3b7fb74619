"""Object-level motion segmentation by fusing geometric motion models.

Two complementary motion cues are fit per object and frame pair — an
epipolar model on point trajectories and a linearized flow+depth model —
then cross-fitting residuals become rank-based affinities that are fused
with co-regularized multi-view spectral clustering.
"""

from .affinity import (
    VIEW_FLOW,
    VIEW_TRAJECTORY,
    AffinityMatrix,
    ResidualMatrix,
    ScoreMatrix,
    accumulate_affinity,
    normalize_affinity,
    ork_scores,
    residual_matrix_flow,
    residual_matrix_traj,
)
from .bundle_io import read_bundle, sanitize_tracks, write_bundle
from .core import (
    DepthField,
    EngineConfig,
    FlowField,
    LabelMap,
    ObjectMeta,
    SceneBundle,
    Track,
    TrackSet,
    Violation,
    validate_bundle,
)
from .epipolar import (
    Correspondence,
    Degenerate,
    FundamentalMatrix,
    RansacConfig,
    condition_points,
    eight_point,
    ransac_fit_fundamental,
    sampson_distance,
)
from .flowdepth import (
    FlowDepthModel,
    FlowSample,
    design_rows,
    fit_flow_depth_model,
    flow_model_residual,
)
from .fusion import (
    ClusterAssignment,
    Embedding,
    SegmentationResult,
    ViewLaplacian,
    cluster_objects,
    coregularized_embeddings,
    normalized_laplacian,
    segment_scene,
)
from .metrics import MetricReport, evaluate, label_accuracy
from .synth import CameraModel, RigidBody, ScenarioSpec, generate_scene, project

__version__ = "0.1.0"
