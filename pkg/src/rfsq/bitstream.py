"""Bit-exact stream serialization for residual-quantizer outputs.

Normative layout (integers and floats little-endian, floats IEEE-754
binary32):

    magic "RFSQ" (4 bytes)
    version   u8 = 1
    strategy  u8   (0 = none, 1 = scale, 2 = layernorm)
    K         u8   (stage count)
    D         u8   (channel count)
    levels    K*D bytes, stage-major, each level count as u8 (>= 2)
    M         u32  (vector count)
    ln_eps    f32            -- present iff strategy = 2
    alphas    K * f32        -- present iff strategy = 1
    stage payloads, one per stage:
        M indices, fixed width b_k = ceil(log2(codebook size)) bits each,
        MSB-first, zero-padded to a byte boundary per stage
    side info, present iff strategy = 2:
        K*M pairs (mu f32, sigma f32), stage-major

Indices use fixed-width packing (no entropy coding): the nominal rate is
the comparison currency, and rate_report states both the information
content and the packed width, plus the side-information overhead that
layernorm decoding honestly requires.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .conditioning import LnState, ScaleParam
from .errors import FormatError, ParameterError
from .fsq import LevelsSpec
from .pipeline import RfsqConfig, RfsqOutput

_MAGIC = b"RFSQ"
_VERSION = 1
_STRATEGY_CODE = {"none": 0, "scale": 1, "layernorm": 2}
_STRATEGY_NAME = {v: k for k, v in _STRATEGY_CODE.items()}


@dataclass(frozen=True)
class RateReport:
    """Bits per token by source.

    index_bits is the information-theoretic stage rate (sum of log2 level
    counts); packed_bits is what the fixed-width stream actually spends;
    side_bits covers per-token side information (64*K for layernorm's
    float32 mu/sigma pairs, 32*K/m amortized for scale's per-stage
    factors, 0 otherwise). total_bits = index_bits + side_bits.
    """

    index_bits_per_token: float
    packed_bits_per_token: float
    side_bits_per_token: float
    total_bits_per_token: float


def _packed_width(spec: LevelsSpec) -> int:
    # exact ceil(log2(size)) for any u64 size; float log2 is not
    return (spec.codebook_size - 1).bit_length()


def rate_report(cfg: RfsqConfig, m: int) -> RateReport:
    """Per-token rate accounting for a configuration at batch size m."""
    if m < 1:
        raise ParameterError("m must be >= 1")
    index_bits = sum(spec.rate_bits for spec in cfg.levels_per_stage)
    packed_bits = float(sum(_packed_width(spec) for spec in cfg.levels_per_stage))
    if cfg.strategy == "layernorm":
        side_bits = 64.0 * cfg.stages
    elif cfg.strategy == "scale":
        side_bits = 32.0 * cfg.stages / m
    else:
        side_bits = 0.0
    return RateReport(
        index_bits_per_token=index_bits,
        packed_bits_per_token=packed_bits,
        side_bits_per_token=side_bits,
        total_bits_per_token=index_bits + side_bits,
    )


def stream_length(cfg: RfsqConfig, m: int) -> int:
    """Exact byte length of an encoded stream, from the header alone."""
    n = 8 + cfg.stages * cfg.d + 4
    if cfg.strategy == "layernorm":
        n += 4
    elif cfg.strategy == "scale":
        n += 4 * cfg.stages
    for spec in cfg.levels_per_stage:
        n += (m * _packed_width(spec) + 7) // 8
    if cfg.strategy == "layernorm":
        n += 8 * cfg.stages * m
    return n


def _pack_indices(indices: np.ndarray, width: int) -> bytes:
    if indices.size == 0:
        return b""
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    bits = ((indices[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def _unpack_indices(buf: bytes, m: int, width: int) -> np.ndarray:
    if m == 0:
        return np.zeros(0, dtype=np.uint64)
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8))
    vals = np.zeros(m, dtype=np.uint64)
    used = bits[: m * width].reshape(m, width)
    for j in range(width):
        vals = (vals << np.uint64(1)) | used[:, j].astype(np.uint64)
    return vals


def encode_stream(out: RfsqOutput, cfg: RfsqConfig) -> bytes:
    """Serialize a quantizer output under its configuration.

    The result is a pure function of (out, cfg); mismatches between the two
    raise ParameterError.
    """
    k_stages = cfg.stages
    d = cfg.d
    m = out.q_total.m
    if len(out.indices) != k_stages or len(out.side_info) != k_stages:
        raise ParameterError("output stage count does not match configuration")
    if k_stages > 255 or d > 255:
        raise ParameterError("stage and channel counts must fit in a byte")
    if m > 0xFFFFFFFF:
        raise ParameterError("vector count must fit in 32 bits")
    for spec in cfg.levels_per_stage:
        if any(lv > 255 for lv in spec.levels):
            raise ParameterError("level counts must fit in a byte")

    parts = [
        _MAGIC,
        struct.pack("<BBBB", _VERSION, _STRATEGY_CODE[cfg.strategy], k_stages, d),
    ]
    for spec in cfg.levels_per_stage:
        parts.append(bytes(spec.levels))
    parts.append(struct.pack("<I", m))
    if cfg.strategy == "layernorm":
        parts.append(struct.pack("<f", cfg.ln_eps))
    elif cfg.strategy == "scale":
        for k, p in enumerate(cfg.scale_params):
            inv = out.side_info[k]
            if not isinstance(inv, ScaleParam) or inv.alpha != p.alpha:
                raise ParameterError(
                    f"stage {k} side info does not match configured scale"
                )
            parts.append(struct.pack("<f", p.alpha))

    for k, spec in enumerate(cfg.levels_per_stage):
        ix = np.asarray(out.indices[k], dtype=np.uint64)
        if ix.shape != (m,):
            raise ParameterError(f"stage {k} must carry one index per vector")
        if ix.size and int(ix.max()) >= spec.codebook_size:
            raise ParameterError(f"stage {k} index exceeds codebook size")
        parts.append(_pack_indices(ix, _packed_width(spec)))

    if cfg.strategy == "layernorm":
        for k in range(k_stages):
            inv = out.side_info[k]
            if not isinstance(inv, LnState) or inv.m != m:
                raise ParameterError(f"stage {k} side info is not a matching LnState")
            pair = np.empty((m, 2), dtype="<f4")
            pair[:, 0] = inv.mu
            pair[:, 1] = inv.sigma
            parts.append(pair.tobytes())
    else:
        for k in range(k_stages):
            inv = out.side_info[k]
            if cfg.strategy == "none" and inv is not None:
                raise ParameterError("strategy 'none' carries no side info")
    return b"".join(parts)


def decode_stream(data: bytes):
    """Parse a stream; returns (indices, side_info, cfg).

    Rejects bad magic or version, truncation, out-of-range indices,
    non-zero padding bits, and trailing bytes, always via FormatError with
    the offending byte offset.
    """
    if len(data) < 4 or data[:4] != _MAGIC:
        raise FormatError("bad magic, expected 'RFSQ'", 0)
    if len(data) < 8:
        raise FormatError("truncated header", len(data))
    version, strategy_code, k_stages, d = struct.unpack_from("<BBBB", data, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if strategy_code not in _STRATEGY_NAME:
        raise FormatError(f"unknown strategy code {strategy_code}", 5)
    if k_stages < 1:
        raise FormatError("stage count must be >= 1", 6)
    if d < 1:
        raise FormatError("channel count must be >= 1", 7)
    strategy = _STRATEGY_NAME[strategy_code]

    pos = 8
    if len(data) < pos + k_stages * d:
        raise FormatError("truncated level table", len(data))
    specs = []
    for k in range(k_stages):
        row = data[pos : pos + d]
        for i, lv in enumerate(row):
            if lv < 2:
                raise FormatError(f"level count {lv} must be >= 2", pos + i)
        specs.append(LevelsSpec(tuple(row)))
        pos += d

    if len(data) < pos + 4:
        raise FormatError("truncated vector count", len(data))
    (m,) = struct.unpack_from("<I", data, pos)
    pos += 4

    ln_eps = None
    alphas = None
    if strategy == "layernorm":
        if len(data) < pos + 4:
            raise FormatError("truncated ln_eps", len(data))
        (ln_eps,) = struct.unpack_from("<f", data, pos)
        if not math.isfinite(ln_eps) or ln_eps <= 0.0:
            raise FormatError("ln_eps must be finite and > 0", pos)
        pos += 4
    elif strategy == "scale":
        if len(data) < pos + 4 * k_stages:
            raise FormatError("truncated scale factors", len(data))
        alphas = []
        for k in range(k_stages):
            (a,) = struct.unpack_from("<f", data, pos)
            if not math.isfinite(a) or a <= 0.0:
                raise FormatError(f"stage {k} scale must be finite and > 0", pos)
            alphas.append(float(a))
            pos += 4

    indices = []
    for k, spec in enumerate(specs):
        width = _packed_width(spec)
        nbytes = (m * width + 7) // 8
        if len(data) < pos + nbytes:
            raise FormatError(f"truncated stage {k} indices", len(data))
        buf = data[pos : pos + nbytes]
        ix = _unpack_indices(buf, m, width)
        size = spec.codebook_size
        if ix.size and int(ix.max()) >= size:
            bad = int(np.argmax(ix >= size))
            raise FormatError(
                f"stage {k} index {int(ix[bad])} out of range for size {size}",
                pos + (bad * width) // 8,
            )
        pad_bits = nbytes * 8 - m * width
        if pad_bits and buf and buf[-1] & ((1 << pad_bits) - 1):
            raise FormatError(f"non-zero padding bits in stage {k}",
                              pos + nbytes - 1)
        indices.append(ix)
        pos += nbytes

    if strategy == "layernorm":
        side_info = []
        for k in range(k_stages):
            nbytes = 8 * m
            if len(data) < pos + nbytes:
                raise FormatError(f"truncated stage {k} side info", len(data))
            pair = np.frombuffer(data, dtype="<f4", count=2 * m, offset=pos)
            pair = pair.reshape(m, 2).astype(np.float64)
            finite = np.isfinite(pair)
            if not finite.all():
                bad = int(np.argmin(finite.ravel()))
                raise FormatError("non-finite side info value", pos + bad * 4)
            if m and not (pair[:, 1] > 0).all():
                bad = int(np.argmin(pair[:, 1] > 0))
                raise FormatError("sigma must be > 0", pos + bad * 8 + 4)
            side_info.append(LnState(pair[:, 0], pair[:, 1], float(ln_eps)))
            pos += nbytes
        cfg = RfsqConfig(levels_per_stage=tuple(specs), strategy="layernorm",
                         ln_eps=float(ln_eps))
    elif strategy == "scale":
        params = tuple(ScaleParam(a) for a in alphas)
        side_info = list(params)
        cfg = RfsqConfig(levels_per_stage=tuple(specs), strategy="scale",
                         scale_params=params)
    else:
        side_info = [None] * k_stages
        cfg = RfsqConfig(levels_per_stage=tuple(specs), strategy="none")

    if pos != len(data):
        raise FormatError("trailing data after stream", pos)
    return tuple(indices), tuple(side_info), cfg
