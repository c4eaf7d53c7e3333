"""splatdyn: Gaussian-splat dynamics.

Explicit MPM time-stepping of Gaussian kernel clouds, depth-sorted
compositing renderers (color/depth/alpha and hard depth), depth-supervised
splat refinement, keyframe feature propagation math, and score-table
normalization, with byte-stable file formats and a CLI.
"""

__version__ = "0.1.0"

from .gaussians import Camera, GaussianCloud, Splats2D, azimuth_camera, project
from .kinematics import Binding, BoundState, advance, bind, sync, update_covariance
from .metrics import ScoreTable, dssim, ssim, zscore_columns, zscore_normalize
from .mpm import (
    Collider,
    ConstitutiveModel,
    ExternalLoad,
    MpmGrid,
    MpmSolver,
    MpmState,
    Region,
    make_preset,
)
from .propagate import (
    LAYER_TAPS,
    CorrespondenceField,
    FeatureMap,
    InjectionSchedule,
    KeyframeSet,
    attention,
    blend,
    extended_attention,
    injection_gate,
    nn_correspondence,
    propagate,
    propagate_sequence,
    select_keyframes,
)
from .refine import (
    SplatParameters,
    SupervisionView,
    TrainSchedule,
    load_views,
    optimize,
)
from .render import RenderOutput, render, render_hard_depth

__all__ = [
    "__version__",
    "Camera",
    "GaussianCloud",
    "Splats2D",
    "azimuth_camera",
    "project",
    "RenderOutput",
    "render",
    "render_hard_depth",
    "Binding",
    "BoundState",
    "advance",
    "bind",
    "sync",
    "update_covariance",
    "Collider",
    "ConstitutiveModel",
    "ExternalLoad",
    "MpmGrid",
    "MpmSolver",
    "MpmState",
    "Region",
    "make_preset",
    "SplatParameters",
    "SupervisionView",
    "TrainSchedule",
    "load_views",
    "optimize",
    "ScoreTable",
    "dssim",
    "ssim",
    "zscore_columns",
    "zscore_normalize",
    "LAYER_TAPS",
    "CorrespondenceField",
    "FeatureMap",
    "InjectionSchedule",
    "KeyframeSet",
    "attention",
    "blend",
    "extended_attention",
    "injection_gate",
    "nn_correspondence",
    "propagate",
    "propagate_sequence",
    "select_keyframes",
]
