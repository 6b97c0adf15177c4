"""Feature-vector batches, synthetic data, reconstruction metrics, FTEN files.

The FTEN on-disk layout (all integers little-endian):

    magic "FTEN" (4 bytes) | version u8 = 1 | flags u8 (bit 0: spatial) |
    D u32 | M u32 | [H u32 | W u32, iff spatial] | M*D float32, row-major

Scalars are float32 on disk and float64 in memory: files stay portable and
half the size, while accumulation happens at double precision. Saving a
block whose values are not exactly representable in float32 rounds them.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

_FTEN_MAGIC = b"FTEN"
_FTEN_VERSION = 1
_FLAG_SPATIAL = 0x01
_HEADER = struct.Struct("<4sBBII")
_SPATIAL = struct.Struct("<II")


class FeatureBlock:
    """A batch of M feature vectors with D channels each.

    Values live in a read-only float64 array of shape (M, D). An optional
    spatial shape (H, W) with H*W == M records the grid the vectors were
    flattened from. Every entry must be finite. Instances are immutable and
    safe to share across threads.
    """

    __slots__ = ("_data", "_spatial")

    def __init__(self, data, spatial: tuple[int, int] | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-d (M, D) array, got {arr.ndim}-d")
        if arr.shape[1] < 1:
            raise ShapeError("channel count D must be >= 1")
        if not np.isfinite(arr).all():
            raise ParameterError("feature values must be finite")
        if spatial is not None:
            h, w = int(spatial[0]), int(spatial[1])
            if h < 0 or w < 0:
                raise ShapeError("spatial dimensions must be non-negative")
            if h * w != arr.shape[0]:
                raise ShapeError(
                    f"spatial shape {h}x{w} does not cover {arr.shape[0]} vectors"
                )
            spatial = (h, w)
        arr.setflags(write=False)
        self._data = arr
        self._spatial = spatial

    @classmethod
    def _wrap(cls, arr: np.ndarray, spatial: tuple[int, int] | None = None,
              ) -> "FeatureBlock":
        # Internal fast path: caller guarantees a fresh, finite float64 array.
        blk = object.__new__(cls)
        arr.setflags(write=False)
        blk._data = arr
        blk._spatial = spatial
        return blk

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def m(self) -> int:
        return self._data.shape[0]

    @property
    def d(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def spatial(self) -> tuple[int, int] | None:
        return self._spatial

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureBlock):
            return NotImplemented
        return (
            self.shape == other.shape
            and self._spatial == other._spatial
            and np.array_equal(self._data, other._data)
        )

    __hash__ = None  # mutable-looking container semantics

    def __repr__(self) -> str:
        extra = f", spatial={self._spatial}" if self._spatial else ""
        return f"FeatureBlock(m={self.m}, d={self.d}{extra})"


@dataclass(frozen=True)
class MetricsReport:
    """Reconstruction quality between two equally shaped blocks.

    psnr uses a fixed peak of 1.0 and is +inf when mse is exactly zero.
    """

    l1: float
    mse: float
    psnr: float


def gen_synthetic(
    dist: str,
    m: int,
    d: int,
    seed: int,
    *,
    lo: float = 0.0,
    hi: float = 1.0,
    mean: float = 0.0,
    std: float = 1.0,
    clip: float = 0.0,
) -> FeatureBlock:
    """Generate a deterministic random block.

    dist is "uniform" (values in [lo, hi]) or "gaussian" (mean/std, clamped
    to [mean-clip, mean+clip] when clip > 0; clip = 0 disables clamping).
    Randomness comes from numpy's PCG64 generator seeded with `seed`, so
    equal arguments produce bit-identical blocks. Values are drawn on the
    float32 lattice, which makes FTEN round-trips lossless for generated
    data.
    """
    if m < 0:
        raise ParameterError("vector count m must be >= 0")
    if d < 1:
        raise ParameterError("channel count d must be >= 1")
    rng = np.random.default_rng(seed)
    if dist == "uniform":
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ParameterError("uniform bounds must be finite")
        if lo > hi:
            raise ParameterError("uniform requires lo <= hi")
        r = rng.random((m, d), dtype=np.float32)
        vals = np.float32(lo) + r * np.float32(hi - lo)
    elif dist == "gaussian":
        if not (math.isfinite(mean) and math.isfinite(std)) or std <= 0:
            raise ParameterError("gaussian requires finite mean and std > 0")
        if not math.isfinite(clip) or clip < 0:
            raise ParameterError("gaussian clip must be >= 0")
        g = rng.standard_normal((m, d), dtype=np.float32)
        vals = g * np.float32(std) + np.float32(mean)
        if clip > 0:
            np.clip(vals, np.float32(mean - clip), np.float32(mean + clip),
                    out=vals)
    else:
        raise ParameterError(f"unknown distribution {dist!r}")
    return FeatureBlock(vals.astype(np.float64))


def compute_metrics(a: FeatureBlock, b: FeatureBlock) -> MetricsReport:
    """Mean absolute error, mean squared error, and PSNR between two blocks.

    Means run over all M*D entries. Empty blocks compare as identical.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.data.size == 0:
        return MetricsReport(l1=0.0, mse=0.0, psnr=math.inf)
    diff = a.data - b.data
    l1 = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return MetricsReport(l1=l1, mse=mse, psnr=psnr)


def save_block(block: FeatureBlock, path: str | os.PathLike) -> None:
    """Write a block as an FTEN file (scalars rounded to float32)."""
    flags = _FLAG_SPATIAL if block.spatial is not None else 0
    parts = [_HEADER.pack(_FTEN_MAGIC, _FTEN_VERSION, flags, block.d, block.m)]
    if block.spatial is not None:
        parts.append(_SPATIAL.pack(*block.spatial))
    parts.append(np.ascontiguousarray(block.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_block(path: str | os.PathLike) -> FeatureBlock:
    """Read an FTEN file back into a FeatureBlock."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _FTEN_MAGIC:
        raise FormatError("bad magic, expected 'FTEN'", 0)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", len(raw))
    _, version, flags, d, m = _HEADER.unpack_from(raw, 0)
    if version != _FTEN_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if flags & ~_FLAG_SPATIAL:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", 5)
    if d < 1:
        raise FormatError("channel count must be >= 1", 6)
    pos = _HEADER.size
    spatial = None
    if flags & _FLAG_SPATIAL:
        if len(raw) < pos + _SPATIAL.size:
            raise FormatError("truncated spatial header", len(raw))
        h, w = _SPATIAL.unpack_from(raw, pos)
        if h * w != m:
            raise FormatError(f"spatial shape {h}x{w} does not cover {m} vectors",
                              pos)
        spatial = (h, w)
        pos += _SPATIAL.size
    need = m * d * 4
    if len(raw) < pos + need:
        raise FormatError("truncated payload", len(raw))
    if len(raw) > pos + need:
        raise FormatError("trailing data after payload", pos + need)
    vals = np.frombuffer(raw, dtype="<f4", count=m * d, offset=pos)
    finite = np.isfinite(vals)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise FormatError("non-finite value in payload", pos + bad * 4)
    arr = vals.astype(np.float64).reshape(m, d)
    return FeatureBlock._wrap(arr, spatial)
