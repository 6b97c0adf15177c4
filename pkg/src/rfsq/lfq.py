"""Lookup-free quantization: per-channel sign codes.

Each channel quantizes to +1 when the value is >= 0 (ties included) and -1
otherwise; the index is the little-endian bit pattern of the sign bits.
Codes depend only on signs, so they are invariant under any positive
rescaling of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import FeatureBlock
from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class LfqConfig:
    """Number of binary channels; the codebook holds 2**dim entries."""

    dim: int

    def __post_init__(self):
        dim = int(self.dim)
        if dim < 1 or dim > 63:
            raise ParameterError("dim must be in [1, 63]")
        object.__setattr__(self, "dim", dim)

    @property
    def codebook_size(self) -> int:
        return 1 << self.dim

    @property
    def rate_bits(self) -> float:
        return float(self.dim)


def lfq_quantize(z: FeatureBlock, cfg: LfqConfig,
                 ) -> tuple[FeatureBlock, np.ndarray]:
    """Sign-quantize a block; returns (+/-1 values, uint64 indices)."""
    if z.d != cfg.dim:
        raise ShapeError(f"block has {z.d} channels, config has {cfg.dim}")
    bits = z.data >= 0.0
    values = np.where(bits, 1.0, -1.0)
    weights = np.uint64(1) << np.arange(cfg.dim, dtype=np.uint64)
    indices = (bits.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
    return FeatureBlock._wrap(values, z.spatial), indices


def lfq_dequantize(index: int, cfg: LfqConfig) -> list[float]:
    """Map an index back to its +/-1 vector."""
    index = int(index)
    if index < 0 or index >= cfg.codebook_size:
        raise ParameterError(
            f"index {index} out of range for codebook size {cfg.codebook_size}"
        )
    return [1.0 if (index >> i) & 1 else -1.0 for i in range(cfg.dim)]
