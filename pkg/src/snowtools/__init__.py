"""Surface-normal supervision toolkit.

Geometric losses over depth fields, a desk-scale depth-field optimizer,
depth/normal evaluation metrics, and the crowd annotation protocol with a
live HTTP service.
"""

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    DegenerateGeometryError,
    DepthMap,
    NormalMap,
    Point3,
    back_project,
    derive_normals,
    downsample,
    scale_intrinsics,
    should_be_depth,
)
from .losses import (
    DEFAULT_MARGIN,
    LossConfig,
    LossResult,
    NormalAnnotation,
    RelativeDepthAnnotation,
    angle_normal_loss,
    composite_loss,
    depth_normal_loss,
    legacy_ordinal_loss,
    margin_ordinal_loss,
    positivity_inverse,
    positivity_transform,
)
from .metrics import (
    AlignmentResult,
    MetricReport,
    NormalErrorReport,
    OrdinalReport,
    ls_align,
    metric_suite,
    normal_error_stats,
    normalize_to_stats,
    wkdr,
    wkdr_sweep,
)
from .annotations import (
    AggregateResult,
    AnnotationTask,
    ConsistencyReport,
    WorkerResponse,
    aggregate_pair,
    consistency_stats,
    generate_normal_annotations,
    generate_ordinal_pairs,
    gold_check,
)
from .optimizer import DivergenceError, OptimizeJob, OptimizeTrace, finite_diff_gradient, optimize_depth

__version__ = "0.1.0"
