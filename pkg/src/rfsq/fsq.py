"""Single-stage finite scalar quantization.

Each channel i is rounded independently onto a uniform grid of L_i points
spanning [-1, 1] with both endpoints included:

    code  = clamp(round((z + 1) / 2 * (L - 1)), 0, L - 1)
    value = code * 2 / (L - 1) - 1

Rounding ties go half away from zero (the argument is non-negative, so this
is plain round-half-up), which keeps codes reproducible across platforms.
The joint codebook is the Cartesian product of the per-channel grids; a
vector's index is the little-endian mixed-radix combination of its codes
(dimension 0 least significant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import FeatureBlock
from .errors import ParameterError, ShapeError

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class LevelsSpec:
    """Per-channel level counts for one quantizer stage."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if len(levels) == 0:
            raise ParameterError("levels must not be empty")
        for v in levels:
            if v < 2:
                raise ParameterError("level count must be >= 2")
        size = 1
        for v in levels:
            size *= v
        if size > _U64_MAX:
            raise ParameterError("codebook size overflows 64 bits")
        object.__setattr__(self, "levels", levels)

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def codebook_size(self) -> int:
        size = 1
        for v in self.levels:
            size *= v
        return size

    @property
    def rate_bits(self) -> float:
        return float(sum(math.log2(v) for v in self.levels))


@dataclass(frozen=True)
class FsqCode:
    """Per-channel codes of one vector plus their mixed-radix index."""

    codes: tuple[int, ...]
    index: int


def bound(z: FeatureBlock) -> FeatureBlock:
    """Clamp every scalar to [-1, 1]."""
    return FeatureBlock._wrap(np.clip(z.data, -1.0, 1.0), z.spatial)


def _grid_codes(arr: np.ndarray, levels_f: np.ndarray) -> np.ndarray:
    # arr must already be clamped to [-1, 1]; levels_f is float64 (D,).
    scaled = (arr + 1.0) * ((levels_f - 1.0) * 0.5)
    codes = np.floor(scaled + 0.5)  # round half up; scaled >= 0
    np.clip(codes, 0.0, levels_f - 1.0, out=codes)
    return codes.astype(np.int64)


def _grid_values(codes: np.ndarray, levels_f: np.ndarray) -> np.ndarray:
    return codes * (2.0 / (levels_f - 1.0)) - 1.0


def _codes_to_indices(codes: np.ndarray, levels: tuple[int, ...]) -> np.ndarray:
    idx = codes[:, -1].astype(np.uint64)
    for i in range(len(levels) - 2, -1, -1):
        idx = idx * np.uint64(levels[i]) + codes[:, i].astype(np.uint64)
    return idx


def _indices_to_codes(indices: np.ndarray, levels: tuple[int, ...]) -> np.ndarray:
    rem = indices.astype(np.uint64)
    out = np.empty((rem.shape[0], len(levels)), dtype=np.int64)
    for i, lv in enumerate(levels):
        lvu = np.uint64(lv)
        out[:, i] = (rem % lvu).astype(np.int64)
        rem = rem // lvu
    return out


def quantize_dim(z_i: float, level_count: int) -> tuple[int, float]:
    """Quantize one scalar onto the grid for a single channel.

    Returns (code, grid value). Out-of-range inputs are clamped.
    """
    if level_count < 2:
        raise ParameterError("level count must be >= 2")
    z_i = float(z_i)
    if not math.isfinite(z_i):
        raise ParameterError("input must be finite")
    z_i = min(max(z_i, -1.0), 1.0)
    scaled = (z_i + 1.0) * ((level_count - 1.0) * 0.5)
    code = int(math.floor(scaled + 0.5))
    code = min(max(code, 0), level_count - 1)
    value = code * (2.0 / (level_count - 1.0)) - 1.0
    return code, value


def fsq_quantize(z: FeatureBlock, spec: LevelsSpec,
                 ) -> tuple[FeatureBlock, list[FsqCode]]:
    """Quantize every vector of a block; returns grid values and codes.

    Inputs are clamped to [-1, 1] first, so the operation is total. The
    returned block has the same shape (and spatial tag) as the input.
    """
    if z.d != spec.d:
        raise ShapeError(f"block has {z.d} channels, spec has {spec.d}")
    levels_f = np.asarray(spec.levels, dtype=np.float64)
    arr = np.clip(z.data, -1.0, 1.0)
    codes = _grid_codes(arr, levels_f)
    values = _grid_values(codes, levels_f)
    indices = _codes_to_indices(codes, spec.levels)
    out = [FsqCode(codes=tuple(int(c) for c in row), index=int(ix))
           for row, ix in zip(codes, indices)]
    return FeatureBlock._wrap(values, z.spatial), out


def fsq_dequantize(index: int, spec: LevelsSpec) -> list[float]:
    """Map a codebook index back to its grid vector."""
    index = int(index)
    if index < 0 or index >= spec.codebook_size:
        raise ParameterError(
            f"index {index} out of range for codebook size {spec.codebook_size}"
        )
    values = []
    rem = index
    for lv in spec.levels:
        code = rem % lv
        rem //= lv
        values.append(code * (2.0 / (lv - 1.0)) - 1.0)
    return values


def codebook_stats(spec: LevelsSpec) -> tuple[int, float]:
    """Codebook size (product of levels) and nominal rate in bits per token."""
    return spec.codebook_size, spec.rate_bits


def ste_jvp(z: FeatureBlock, tangent: FeatureBlock, spec: LevelsSpec,
            ) -> FeatureBlock:
    """Straight-through Jacobian-vector product: the identity on the tangent.

    The quantizer's backward pass is defined as the identity map, so any
    training framework can propagate gradients through a stage by calling
    this with the upstream tangent.
    """
    if z.shape != tangent.shape:
        raise ShapeError(f"shape mismatch: {z.shape} vs {tangent.shape}")
    if z.d != spec.d:
        raise ShapeError(f"block has {z.d} channels, spec has {spec.d}")
    return tangent
