"""Adversarial 3D Gaussian splat objects.

A numpy/scipy toolkit that renders clouds of anisotropic 3D Gaussians
through a differentiable splatting rasterizer, cleans them with density
pruning and camera-aware denoising, augments rendered views with
deployment-condition transforms, and runs gradient attacks that drive a
victim detector's confidence down while preserving the object's shape.
"""

from .attack import (
    APPEARANCE_MASK,
    FULL_MASK,
    GEOMETRY_MASK,
    AttackConfig,
    AttackReport,
    DimensionMask,
    WeightState,
    adv_loss,
    dynamic_weights,
    run_attack,
    shape_loss,
    total_loss,
)
from .augmentation import AugmentConfig, apply_all, make_epoch_stream
from .cameras import CameraPose, ViewpointSet, make_orbit_viewpoints
from .cloud import Gaussian, GaussianCloud, IndexMap, make_synthetic_cloud
from .filtering import (
    FilterConfig,
    artifact_removal,
    filter_cloud,
    local_density,
    make_planted_cloud,
    structural_denoise,
    topological_prune,
)
from .gsio import load_cloud, load_json, load_ply, save_cloud, save_json, save_ply
from .metrics import SweepResult, lcr, psnr, ssim, sweep_eval
from .quaternions import quat_conjugate, quat_inverse, quat_mul, quat_normalize
from .renderer import (
    ParamGradients,
    RenderedView,
    RenderSettings,
    render,
    render_batch,
    render_with_grad,
)
from .victim import (
    AdapterConfig,
    ConfidenceScore,
    ToyDetector,
    ToyDetectorSpec,
    calibrate_toy_detector,
    external_score,
    toy_confidence,
)

__version__ = "0.1.0"
