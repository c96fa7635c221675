from .base import (
    OperatorConfig,
    StepOperator,
    IdentityOperator,
    build_operator,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .dpot import DPOT
from .fno import FNO
from .layers import (
    InternalNorm,
    OperatorConfigError,
    PatchEmbed,
    SpectralConv2d,
    clip_nonnegative,
    internal_normalize,
    retained_modes,
    spectral_conv,
)

__all__ = [
    "DPOT",
    "FNO",
    "IdentityOperator",
    "InternalNorm",
    "OperatorConfig",
    "OperatorConfigError",
    "PatchEmbed",
    "SpectralConv2d",
    "StepOperator",
    "build_operator",
    "clip_nonnegative",
    "count_parameters",
    "internal_normalize",
    "load_checkpoint",
    "retained_modes",
    "save_checkpoint",
    "spectral_conv",
]
