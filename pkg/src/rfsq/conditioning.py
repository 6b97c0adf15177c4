"""Invertible per-stage conditioning: learnable scaling and LayerNorm.

Both transforms reshape a residual so it occupies the quantizer's [-1, 1]
working range, and both are exactly invertible given their stored state.
Parameters that end up in encoded streams (scale factors, LayerNorm
statistics, eps) are rounded to float32 at creation time so that a decoded
stream reproduces them bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import FeatureBlock
from .errors import ParameterError, ShapeError

STRATEGIES = ("none", "scale", "layernorm")
DEFAULT_LN_EPS = 1e-5


def _as_f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class ScaleParam:
    """Positive scaling factor for one stage, stored at float32 precision."""

    alpha: float = 1.0

    def __post_init__(self):
        a = float(self.alpha)
        if not math.isfinite(a) or a <= 0.0:
            raise ParameterError("alpha must be finite and > 0")
        object.__setattr__(self, "alpha", _as_f32(a))


@dataclass(frozen=True)
class LnState:
    """Per-vector LayerNorm statistics needed to undo the transform.

    mu and sigma (= sqrt(var + eps)) have one entry per vector and are
    stored at float32 precision; sigma is bounded below by ~sqrt(eps), so
    the inverse is always defined.
    """

    mu: np.ndarray
    sigma: np.ndarray
    eps: float

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.ndim != 1 or mu.shape != sigma.shape:
            raise ShapeError("mu and sigma must be 1-d arrays of equal length")
        if sigma.size and not (sigma > 0).all():
            raise ParameterError("sigma entries must be > 0")
        eps = float(self.eps)
        if not math.isfinite(eps) or eps <= 0.0:
            raise ParameterError("eps must be finite and > 0")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "eps", eps)

    @property
    def m(self) -> int:
        return self.mu.shape[0]


InverseState = ScaleParam | LnState | None


def _check_strategy(strategy: str) -> None:
    if strategy not in STRATEGIES:
        raise ParameterError(
            f"unknown strategy {strategy!r}, expected one of {STRATEGIES}"
        )


def _ln_stats(arr: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    # Population statistics over the channel axis, rounded to the float32
    # lattice so encoded side information decodes to identical values.
    mu = arr.mean(axis=1)
    sigma = np.sqrt(arr.var(axis=1) + eps)
    mu = mu.astype(np.float32).astype(np.float64)
    sigma = sigma.astype(np.float32).astype(np.float64)
    return mu, sigma


def condition(
    r: FeatureBlock,
    strategy: str,
    param: ScaleParam | float | None = None,
) -> tuple[FeatureBlock, InverseState]:
    """Apply a conditioning transform; returns (conditioned, inverse state).

    param is a ScaleParam for "scale" (default alpha 1.0), the LayerNorm
    eps for "layernorm" (default 1e-5), and ignored for "none".
    """
    _check_strategy(strategy)
    if strategy == "none":
        return r, None
    if strategy == "scale":
        if param is None:
            param = ScaleParam()
        if not isinstance(param, ScaleParam):
            raise ParameterError("scale strategy expects a ScaleParam")
        return FeatureBlock._wrap(param.alpha * r.data, r.spatial), param
    # layernorm
    if param is None:
        eps = DEFAULT_LN_EPS
    elif isinstance(param, (int, float)):
        eps = float(param)
    else:
        raise ParameterError("layernorm strategy expects a numeric eps")
    if not math.isfinite(eps) or eps <= 0.0:
        raise ParameterError("eps must be finite and > 0")
    eps = _as_f32(eps)
    mu, sigma = _ln_stats(r.data, eps)
    conditioned = (r.data - mu[:, None]) / sigma[:, None]
    return FeatureBlock._wrap(conditioned, r.spatial), LnState(mu, sigma, eps)


def decondition(q: FeatureBlock, strategy: str, inv: InverseState) -> FeatureBlock:
    """Undo a conditioning transform using the stored inverse state."""
    _check_strategy(strategy)
    if strategy == "none":
        if inv is not None:
            raise ParameterError("strategy 'none' carries no inverse state")
        return q
    if strategy == "scale":
        if not isinstance(inv, ScaleParam):
            raise ParameterError("scale strategy expects a ScaleParam state")
        return FeatureBlock._wrap(q.data / inv.alpha, q.spatial)
    if not isinstance(inv, LnState):
        raise ParameterError("layernorm strategy expects an LnState")
    if inv.m != q.m:
        raise ShapeError(
            f"state covers {inv.m} vectors, block has {q.m}"
        )
    restored = q.data * inv.sigma[:, None] + inv.mu[:, None]
    return FeatureBlock._wrap(restored, q.spatial)
