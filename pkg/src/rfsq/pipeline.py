"""Multi-stage residual quantization with per-stage conditioning.

Stage k conditions the running residual, clamps it to [-1, 1], quantizes it
on that stage's grid, maps the grid values back through the inverse
transform (the stage's contribution d_k), and subtracts d_k from the
residual:

    r_0 = z
    c_k, inv_k = condition(r_{k-1})
    v_k        = quantize(clamp(c_k))
    d_k        = decondition(v_k, inv_k)
    r_k        = r_{k-1} - d_k

The input decomposes exactly as z = sum_k d_k + r_K; contributions are
accumulated in stage order at double precision, so the identity holds to
floating-point roundoff regardless of strategy. With strategy "none" and a
single stage the pipeline reduces bit-exactly to plain FSQ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import FeatureBlock
from .conditioning import (
    DEFAULT_LN_EPS,
    STRATEGIES,
    InverseState,
    LnState,
    ScaleParam,
    _as_f32,
    condition,
    decondition,
)
from .errors import ParameterError, ShapeError
from .fsq import (
    LevelsSpec,
    _codes_to_indices,
    _grid_codes,
    _grid_values,
    _indices_to_codes,
)


@dataclass(frozen=True)
class RfsqConfig:
    """Stage layout and conditioning strategy for a residual pipeline.

    All stages must share the same channel count. scale_params is required
    (or defaulted to all-ones) exactly when strategy is "scale"; ln_eps is
    used only by "layernorm" and is rounded to float32 so encoded streams
    reproduce it exactly.
    """

    levels_per_stage: tuple[LevelsSpec, ...]
    strategy: str = "none"
    scale_params: tuple[ScaleParam, ...] | None = None
    ln_eps: float = DEFAULT_LN_EPS

    def __post_init__(self):
        specs = tuple(self.levels_per_stage)
        if len(specs) < 1:
            raise ParameterError("need at least one stage")
        for spec in specs:
            if not isinstance(spec, LevelsSpec):
                raise ParameterError("levels_per_stage must hold LevelsSpec items")
            if spec.d != specs[0].d:
                raise ShapeError("all stages must share the same channel count")
        if self.strategy not in STRATEGIES:
            raise ParameterError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )
        params = self.scale_params
        if self.strategy == "scale":
            if params is None:
                params = tuple(ScaleParam() for _ in specs)
            else:
                params = tuple(params)
                if len(params) != len(specs):
                    raise ParameterError("need one ScaleParam per stage")
                for p in params:
                    if not isinstance(p, ScaleParam):
                        raise ParameterError("scale_params must hold ScaleParam items")
        elif params is not None:
            raise ParameterError(
                f"scale_params only apply to strategy 'scale', not {self.strategy!r}"
            )
        eps = float(self.ln_eps)
        if not math.isfinite(eps) or eps <= 0.0:
            raise ParameterError("ln_eps must be finite and > 0")
        object.__setattr__(self, "levels_per_stage", specs)
        object.__setattr__(self, "scale_params", params)
        object.__setattr__(self, "ln_eps", _as_f32(eps))

    @property
    def stages(self) -> int:
        return len(self.levels_per_stage)

    @property
    def d(self) -> int:
        return self.levels_per_stage[0].d


@dataclass(frozen=True)
class RfsqOutput:
    """Everything a quantize call produced.

    q_total is the sum of the de-conditioned stage contributions in stage
    order; final_residual is what is left, so the input always equals
    q_total + final_residual up to roundoff. side_info holds, per stage,
    whatever a decoder needs beyond the indices: None for "none", the
    ScaleParam for "scale", an LnState for "layernorm".
    """

    q_total: FeatureBlock
    indices: tuple[np.ndarray, ...]
    contributions: tuple[FeatureBlock, ...]
    final_residual: FeatureBlock
    side_info: tuple[InverseState, ...]


@dataclass(frozen=True)
class StageDecayStats:
    """Per-stage health metrics of a pipeline run.

    mean_abs_residual: mean |r_k| after the stage, over all entries.
    input_std: per-vector population std of the conditioned signal entering
        the stage quantizer (measured before clamping), averaged over vectors.
    code_utilization: fraction of the stage codebook observed in the batch.
    code_entropy: empirical entropy of the stage index histogram, in bits.
    """

    mean_abs_residual: float
    input_std: float
    code_utilization: float
    code_entropy: float


@dataclass(frozen=True)
class DecayReport:
    stages: tuple[StageDecayStats, ...]


def _stage_param(cfg: RfsqConfig, k: int) -> ScaleParam | float | None:
    if cfg.strategy == "scale":
        return cfg.scale_params[k]
    if cfg.strategy == "layernorm":
        return cfg.ln_eps
    return None


def _run_stages(z: FeatureBlock, cfg: RfsqConfig, keep_conditioned: bool):
    """Shared pipeline core; returns (output, conditioned arrays or None)."""
    if z.d != cfg.d:
        raise ShapeError(f"block has {z.d} channels, config has {cfg.d}")
    r = z.data
    q_total = np.zeros_like(r)
    indices: list[np.ndarray] = []
    contributions: list[FeatureBlock] = []
    side_info: list[InverseState] = []
    conditioned_arrays: list[np.ndarray] | None = [] if keep_conditioned else None

    for k, spec in enumerate(cfg.levels_per_stage):
        cond, inv = condition(FeatureBlock._wrap(r), cfg.strategy,
                              _stage_param(cfg, k))
        if conditioned_arrays is not None:
            conditioned_arrays.append(cond.data)
        levels_f = np.asarray(spec.levels, dtype=np.float64)
        clamped = np.clip(cond.data, -1.0, 1.0)
        codes = _grid_codes(clamped, levels_f)
        values = _grid_values(codes, levels_f)
        d_k = decondition(FeatureBlock._wrap(values), cfg.strategy, inv).data
        indices.append(_codes_to_indices(codes, spec.levels))
        contributions.append(FeatureBlock._wrap(d_k))
        side_info.append(inv)
        r = r - d_k
        q_total = q_total + d_k

    out = RfsqOutput(
        q_total=FeatureBlock._wrap(q_total, z.spatial),
        indices=tuple(indices),
        contributions=tuple(contributions),
        final_residual=FeatureBlock._wrap(r, z.spatial),
        side_info=tuple(side_info),
    )
    return out, conditioned_arrays


def rfsq_quantize(z: FeatureBlock, cfg: RfsqConfig) -> RfsqOutput:
    """Run the full residual pipeline over a block."""
    out, _ = _run_stages(z, cfg, keep_conditioned=False)
    return out


def rfsq_dequantize(
    indices,
    side_info,
    cfg: RfsqConfig,
) -> FeatureBlock:
    """Rebuild q_total from per-stage indices plus side information.

    side_info may be None (or a sequence of Nones) for strategy "none";
    "scale" needs one ScaleParam per stage and "layernorm" one LnState per
    stage whose length matches the batch. Reconstruction replays the same
    grid math and summation order as rfsq_quantize, so it reproduces that
    call's q_total exactly.
    """
    k_stages = cfg.stages
    indices = [np.asarray(ix, dtype=np.uint64) for ix in indices]
    if len(indices) != k_stages:
        raise ParameterError(f"expected {k_stages} index lists, got {len(indices)}")
    if side_info is None:
        side_info = [None] * k_stages
    side_info = list(side_info)
    if len(side_info) != k_stages:
        raise ParameterError(
            f"expected {k_stages} side-info entries, got {len(side_info)}"
        )
    m = indices[0].shape[0]
    for ix in indices:
        if ix.ndim != 1 or ix.shape[0] != m:
            raise ParameterError("all stages must carry one index per vector")

    for k in range(k_stages):
        spec = cfg.levels_per_stage[k]
        size = spec.codebook_size
        ix = indices[k]
        if ix.size and int(ix.max()) >= size:
            raise ParameterError(
                f"stage {k} index {int(ix.max())} out of range for size {size}"
            )
        inv = side_info[k]
        if cfg.strategy == "none":
            if inv is not None:
                raise ParameterError("strategy 'none' takes no side info")
        elif cfg.strategy == "scale":
            if not isinstance(inv, ScaleParam):
                raise ParameterError("strategy 'scale' needs a ScaleParam per stage")
        else:
            if not isinstance(inv, LnState):
                raise ParameterError(
                    "strategy 'layernorm' needs an LnState per stage"
                )
            if inv.m != m:
                raise ParameterError(
                    f"stage {k} side info covers {inv.m} vectors, batch has {m}"
                )

    q_total = np.zeros((m, cfg.d), dtype=np.float64)
    for k in range(k_stages):
        spec = cfg.levels_per_stage[k]
        levels_f = np.asarray(spec.levels, dtype=np.float64)
        codes = _indices_to_codes(indices[k], spec.levels)
        values = _grid_values(codes, levels_f)
        d_k = decondition(FeatureBlock._wrap(values), cfg.strategy,
                          side_info[k]).data
        q_total = q_total + d_k
    return FeatureBlock._wrap(q_total)


def decay_diagnostics(z: FeatureBlock, cfg: RfsqConfig) -> DecayReport:
    """Run the pipeline and report per-stage signal-health statistics."""
    out, conditioned = _run_stages(z, cfg, keep_conditioned=True)
    stats = []
    residual = z.data
    for k in range(cfg.stages):
        residual = residual - out.contributions[k].data
        size = cfg.levels_per_stage[k].codebook_size
        if z.m == 0:
            stats.append(StageDecayStats(0.0, 0.0, 0.0, 0.0))
            continue
        mean_abs = float(np.mean(np.abs(residual)))
        input_std = float(np.mean(conditioned[k].std(axis=1)))
        _, counts = np.unique(out.indices[k], return_counts=True)
        utilization = counts.shape[0] / size
        p = counts / counts.sum()
        entropy = float(-(p * np.log2(p)).sum())
        stats.append(StageDecayStats(mean_abs, input_std, utilization, entropy))
    return DecayReport(stages=tuple(stats))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


def _golden_section(f, a: float, b: float, tol: float) -> tuple[float, float]:
    """Minimize f on [a, b]; returns the best (x, f(x)) evaluated.

    Deterministic iteration count from the bracket width, robust to the
    piecewise-constant objectives quantization produces.
    """
    best_x, best_f = a, f(a)
    fb = f(b)
    if fb < best_f:
        best_x, best_f = b, fb
    h = b - a
    if h <= tol:
        return best_x, best_f
    n = int(math.ceil(math.log(tol / h) / math.log(_INV_PHI)))
    c = a + _INV_PHI_SQ * h
    d = a + _INV_PHI * h
    yc = f(c)
    yd = f(d)
    for _ in range(n):
        if yc < best_f:
            best_x, best_f = c, yc
        if yd < best_f:
            best_x, best_f = d, yd
        if yc < yd:
            b, d, yd = d, c, yc
            h = _INV_PHI * h
            c = a + _INV_PHI_SQ * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h = _INV_PHI * h
            d = a + _INV_PHI * h
            yd = f(d)
    for x, y in ((c, yc), (d, yd)):
        if y < best_f:
            best_x, best_f = x, y
    return best_x, best_f


def _scale_stage(r: np.ndarray, alpha: float, levels_f: np.ndarray,
                 ) -> np.ndarray:
    scaled = np.clip(alpha * r, -1.0, 1.0)
    codes = _grid_codes(scaled, levels_f)
    return _grid_values(codes, levels_f) / alpha


_FIT_LOG_LO = math.log(0.25)
_FIT_LOG_HI = math.log(64.0)
_FIT_TOL = 1e-3


def fit_scales(train: FeatureBlock, cfg: RfsqConfig) -> list[float]:
    """Fit per-stage scale factors on a training block.

    Stages are fitted greedily: with earlier factors frozen, stage k's
    factor minimizes the stage reconstruction error mse(r_{k-1}, d_k) via
    golden-section search over log(alpha) in [log 0.25, log 64]. A stage
    falls back to 1.0 when the search does not improve on it, and the
    whole fit falls back to all-ones if it somehow ends up worse on the
    training block, so the fitted factors never lose to the default.
    """
    if cfg.strategy != "scale":
        raise ParameterError("fit_scales requires strategy 'scale'")
    if train.d != cfg.d:
        raise ShapeError(f"block has {train.d} channels, config has {cfg.d}")

    r = train.data
    alphas: list[float] = []
    for spec in cfg.levels_per_stage:
        levels_f = np.asarray(spec.levels, dtype=np.float64)

        def stage_mse(alpha: float) -> float:
            e = r - _scale_stage(r, alpha, levels_f)
            return float(np.mean(e * e))

        best_log, _ = _golden_section(
            lambda x: stage_mse(math.exp(x)), _FIT_LOG_LO, _FIT_LOG_HI, _FIT_TOL
        )
        alpha = _as_f32(math.exp(best_log))
        if stage_mse(alpha) >= stage_mse(1.0):
            alpha = 1.0
        alphas.append(alpha)
        r = r - _scale_stage(r, alpha, levels_f)

    fitted_mse = float(np.mean(r * r))
    ones_mse = _pipeline_mse(train, cfg, [1.0] * cfg.stages)
    if fitted_mse > ones_mse:
        return [1.0] * cfg.stages
    return alphas


def _pipeline_mse(z: FeatureBlock, cfg: RfsqConfig, alphas: list[float]) -> float:
    fitted = RfsqConfig(
        levels_per_stage=cfg.levels_per_stage,
        strategy="scale",
        scale_params=tuple(ScaleParam(a) for a in alphas),
    )
    out = rfsq_quantize(z, fitted)
    e = z.data - out.q_total.data
    return float(np.mean(e * e))
