"""Zero-shot low-light image enhancement.

A self-contained toolkit: a reverse-mode autodiff tensor core, a
multi-scale curve-estimation network built from depthwise-separable
convolutions and spatial attention, a recurrent quadratic enhancer, a
no-reference composite training objective, an Adam trainer with binary
checkpointing, PNG/PPM imaging, and PSNR/SSIM/MAD evaluation.
"""

from .blocks import (
    ConvParams,
    SpatialAttentionParams,
    avg_pool,
    concat_channels,
    depthwise_conv2d,
    dsc_forward,
    pointwise_conv2d,
    resize_bilinear,
    slice_channels,
    spatial_attention_forward,
)
from .enhancer import EnhanceSpec, enhance, enhance_trace
from .imaging import (
    ImageBuffer,
    ImageFormatError,
    from_unit,
    load_image,
    save_image,
    scan_corpus,
    to_unit,
)
from .losses import (
    ExposureTarget,
    LossWeights,
    color_constancy_loss,
    composite_loss,
    exposure_loss,
    spatial_consistency_loss,
    toy_quality_probe,
    tv_loss,
)
from .metrics import MetricReport, PairResult, evaluate_pairs, mad, psnr, ssim
from .network import (
    ArchitectureSummary,
    CurveMap,
    CurveNet,
    CurveNetConfig,
    build,
    describe,
    forward,
)
from .tensor import (
    GradCheckReport,
    Tensor,
    backward,
    elementwise,
    from_op,
    grad_check,
    reduce,
    tensor_mean,
    tensor_sum,
)
from .trainer import (
    AdamState,
    Checkpoint,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    TrainConfig,
    TrainResult,
    adam_step,
    clip_gradients,
    load_checkpoint,
    restore,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSummary",
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "CheckpointMagicError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "ConvParams",
    "CurveMap",
    "CurveNet",
    "CurveNetConfig",
    "EnhanceSpec",
    "ExposureTarget",
    "GradCheckReport",
    "ImageBuffer",
    "ImageFormatError",
    "LossWeights",
    "MetricReport",
    "PairResult",
    "SpatialAttentionParams",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "avg_pool",
    "backward",
    "build",
    "clip_gradients",
    "color_constancy_loss",
    "composite_loss",
    "concat_channels",
    "depthwise_conv2d",
    "describe",
    "dsc_forward",
    "elementwise",
    "enhance",
    "enhance_trace",
    "evaluate_pairs",
    "exposure_loss",
    "forward",
    "from_op",
    "from_unit",
    "grad_check",
    "load_checkpoint",
    "load_image",
    "mad",
    "pointwise_conv2d",
    "psnr",
    "reduce",
    "resize_bilinear",
    "restore",
    "save_checkpoint",
    "save_image",
    "scan_corpus",
    "slice_channels",
    "spatial_attention_forward",
    "spatial_consistency_loss",
    "ssim",
    "tensor_mean",
    "tensor_sum",
    "to_unit",
    "toy_quality_probe",
    "train",
    "tv_loss",
]
