"""Residual finite scalar quantization: codec, baselines, and diagnostics."""

from .bitstream import (
    RateReport,
    decode_stream,
    encode_stream,
    rate_report,
    stream_length,
)
from .blocks import (
    FeatureBlock,
    MetricsReport,
    compute_metrics,
    gen_synthetic,
    load_block,
    save_block,
)
from .conditioning import (
    DEFAULT_LN_EPS,
    STRATEGIES,
    InverseState,
    LnState,
    ScaleParam,
    condition,
    decondition,
)
from .errors import FormatError, ParameterError, ShapeError
from .fsq import (
    FsqCode,
    LevelsSpec,
    bound,
    codebook_stats,
    fsq_dequantize,
    fsq_quantize,
    quantize_dim,
    ste_jvp,
)
from .lfq import LfqConfig, lfq_dequantize, lfq_quantize
from .pipeline import (
    DecayReport,
    RfsqConfig,
    RfsqOutput,
    StageDecayStats,
    decay_diagnostics,
    fit_scales,
    rfsq_dequantize,
    rfsq_quantize,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_LN_EPS",
    "DecayReport",
    "FeatureBlock",
    "FormatError",
    "FsqCode",
    "InverseState",
    "LevelsSpec",
    "LfqConfig",
    "LnState",
    "MetricsReport",
    "ParameterError",
    "RateReport",
    "RfsqConfig",
    "RfsqOutput",
    "STRATEGIES",
    "ScaleParam",
    "ShapeError",
    "StageDecayStats",
    "bound",
    "codebook_stats",
    "compute_metrics",
    "condition",
    "decay_diagnostics",
    "decode_stream",
    "decondition",
    "encode_stream",
    "fit_scales",
    "fsq_dequantize",
    "fsq_quantize",
    "gen_synthetic",
    "lfq_dequantize",
    "lfq_quantize",
    "load_block",
    "quantize_dim",
    "rate_report",
    "rfsq_dequantize",
    "rfsq_quantize",
    "save_block",
    "ste_jvp",
    "stream_length",
]
