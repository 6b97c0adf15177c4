"""Command-line front end.

Methods are named with a compact colon-separated mini-language so sweep
configs and logs stay one-line greppable:

    fsq:levels=8,8,8,8
    lfq:dim=12
    rfsq:stages=2:levels=8,8,8,4:strategy=layernorm
    rfsq:stages=4:levels=4,4,4,4,4:strategy=scale:alpha=fit

Exit codes: 0 success, 1 I/O failure, 2 usage or parameter error,
3 malformed data file. All tabular output is CSV with a fixed header row.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from .bitstream import decode_stream, encode_stream, rate_report
from .blocks import FeatureBlock, compute_metrics, gen_synthetic, load_block, save_block
from .conditioning import STRATEGIES, ScaleParam
from .errors import FormatError, ParameterError, ShapeError
from .fsq import LevelsSpec
from .pipeline import RfsqConfig, decay_diagnostics, fit_scales, rfsq_quantize, rfsq_dequantize

QUANTIZE_COLUMNS = ("l1", "mse", "psnr", "index_bits", "packed_bits",
                    "side_bits", "total_bits")
DIAGNOSE_COLUMNS = ("stage", "mean_abs_residual", "input_std",
                    "code_utilization", "code_entropy")
BENCHMARK_COLUMNS = ("method", "seed", "l1", "mse", "psnr", "index_bits",
                     "side_bits", "utilization")
FIT_COLUMNS = ("stage", "alpha")


@dataclass
class MethodSpec:
    """Parsed form of a method string; format() is its exact inverse."""

    method: str
    levels: tuple[int, ...] | None = None
    stages: int = 1
    strategy: str = "none"
    alpha: tuple[float, ...] | str | None = None
    dim: int | None = None
    seed: int | None = None


_KEYS = {
    "fsq": ("levels", "seed"),
    "lfq": ("dim", "seed"),
    "rfsq": ("stages", "levels", "strategy", "alpha", "seed"),
}


def parse_method_spec(text: str) -> MethodSpec:
    parts = text.split(":")
    method = parts[0]
    if method not in _KEYS:
        raise ParameterError(f"unknown method '{method}'")
    allowed = _KEYS[method]
    spec = MethodSpec(method=method)
    seen = set()
    for token in parts[1:]:
        if "=" not in token:
            raise ParameterError(f"bad token '{token}', expected key=value")
        key, value = token.split("=", 1)
        if key not in allowed:
            raise ParameterError(f"bad token '{token}', key not valid for {method}")
        if key in seen:
            raise ParameterError(f"bad token '{token}', duplicate key")
        seen.add(key)
        try:
            if key == "levels":
                spec.levels = tuple(int(v) for v in value.split(","))
            elif key == "stages":
                spec.stages = int(value)
            elif key == "strategy":
                if value not in STRATEGIES:
                    raise ParameterError(
                        f"bad token '{token}', strategy must be one of {STRATEGIES}"
                    )
                spec.strategy = value
            elif key == "alpha":
                spec.alpha = "fit" if value == "fit" else tuple(
                    float(v) for v in value.split(","))
            elif key == "dim":
                spec.dim = int(value)
            elif key == "seed":
                spec.seed = int(value)
        except ParameterError:
            raise
        except ValueError as exc:
            raise ParameterError(f"bad token '{token}': {exc}") from None
    if method in ("fsq", "rfsq") and spec.levels is None:
        raise ParameterError(f"method '{method}' requires levels=")
    if method == "lfq" and spec.dim is None:
        raise ParameterError("method 'lfq' requires dim=")
    if method == "rfsq" and spec.stages < 1:
        raise ParameterError("stages must be >= 1")
    if spec.alpha is not None and spec.strategy != "scale":
        raise ParameterError("alpha= only applies to strategy=scale")
    if (isinstance(spec.alpha, tuple) and method == "rfsq"
            and len(spec.alpha) != spec.stages):
        raise ParameterError("alpha list must name one factor per stage")
    return spec


def format_method_spec(spec: MethodSpec) -> str:
    parts = [spec.method]
    if spec.method == "lfq":
        parts.append(f"dim={spec.dim}")
    else:
        if spec.method == "rfsq":
            parts.append(f"stages={spec.stages}")
        parts.append("levels=" + ",".join(str(v) for v in spec.levels))
        if spec.method == "rfsq":
            parts.append(f"strategy={spec.strategy}")
            if spec.alpha == "fit":
                parts.append("alpha=fit")
            elif isinstance(spec.alpha, tuple):
                parts.append("alpha=" + ",".join(repr(a) for a in spec.alpha))
    if spec.seed is not None:
        parts.append(f"seed={spec.seed}")
    return ":".join(parts)


def method_config(spec: MethodSpec) -> RfsqConfig:
    """Translate a method spec into a pipeline configuration.

    lfq maps onto a one-stage pipeline with two levels per channel, which
    realizes exactly the same sign codebook and lets LFQ share the stream
    format.
    """
    if spec.method == "lfq":
        return RfsqConfig(levels_per_stage=(LevelsSpec((2,) * spec.dim),))
    levels = LevelsSpec(spec.levels)
    if spec.method == "fsq":
        return RfsqConfig(levels_per_stage=(levels,))
    params = None
    if isinstance(spec.alpha, tuple):
        params = tuple(ScaleParam(a) for a in spec.alpha)
    elif spec.strategy == "scale":
        params = tuple(ScaleParam() for _ in range(spec.stages))
    return RfsqConfig(
        levels_per_stage=(levels,) * spec.stages,
        strategy=spec.strategy,
        scale_params=params,
    )


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(stream, header, rows) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def _emit_csv(args, header, rows) -> None:
    # --csv redirects a command's table into a file instead of stdout
    target = getattr(args, "csv", None)
    if target:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write_csv(fh, header, rows)
    else:
        _write_csv(sys.stdout, header, rows)


def _fit_if_requested(block: FeatureBlock, spec: MethodSpec,
                      cfg: RfsqConfig) -> RfsqConfig:
    if spec.alpha != "fit":
        return cfg
    alphas = fit_scales(block, cfg)
    return RfsqConfig(
        levels_per_stage=cfg.levels_per_stage,
        strategy="scale",
        scale_params=tuple(ScaleParam(a) for a in alphas),
    )


def cmd_quantize(args) -> int:
    block = load_block(args.input)
    spec = parse_method_spec(args.spec)
    cfg = _fit_if_requested(block, spec, method_config(spec))
    out = rfsq_quantize(block, cfg)
    with open(args.output, "wb") as fh:
        fh.write(encode_stream(out, cfg))
    metrics = compute_metrics(block, out.q_total)
    rates = rate_report(cfg, max(block.m, 1))
    _emit_csv(args, QUANTIZE_COLUMNS, [(
        metrics.l1, metrics.mse, metrics.psnr,
        rates.index_bits_per_token, rates.packed_bits_per_token,
        rates.side_bits_per_token, rates.total_bits_per_token,
    )])
    return 0


def cmd_dequantize(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    indices, side_info, cfg = decode_stream(data)
    block = rfsq_dequantize(indices, side_info, cfg)
    save_block(block, args.output)
    return 0


def cmd_diagnose(args) -> int:
    block = load_block(args.input)
    spec = parse_method_spec(args.spec)
    cfg = _fit_if_requested(block, spec, method_config(spec))
    report = decay_diagnostics(block, cfg)
    rows = [
        (k + 1, s.mean_abs_residual, s.input_std, s.code_utilization,
         s.code_entropy)
        for k, s in enumerate(report.stages)
    ]
    _emit_csv(args, DIAGNOSE_COLUMNS, rows)
    return 0


def cmd_fit_scales(args) -> int:
    block = load_block(args.input)
    spec = parse_method_spec(args.spec)
    cfg = method_config(spec)
    alphas = fit_scales(block, cfg)
    _emit_csv(args, FIT_COLUMNS, [(k + 1, a) for k, a in enumerate(alphas)])
    return 0


def cmd_info(args) -> int:
    spec = parse_method_spec(args.spec)
    cfg = method_config(spec)
    for k, levels in enumerate(cfg.levels_per_stage):
        print(f"stage {k + 1}: levels={list(levels.levels)} "
              f"size={levels.codebook_size} rate={levels.rate_bits} bits")
    rates = rate_report(cfg, 1)
    print(f"index bits/token: {rates.index_bits_per_token}")
    print(f"packed bits/token: {rates.packed_bits_per_token}")
    print(f"side bits/token (m=1): {rates.side_bits_per_token}")
    print(f"total bits/token (m=1): {rates.total_bits_per_token}")
    return 0


def _benchmark_row(method_text: str, seed: int, data_cfg: dict):
    spec = parse_method_spec(method_text)
    row_seed = spec.seed if spec.seed is not None else seed
    d = spec.dim if spec.method == "lfq" else len(spec.levels)
    dist = data_cfg.get("dist", "uniform")
    block = gen_synthetic(
        dist,
        int(data_cfg.get("m", 10000)),
        d,
        row_seed,
        lo=float(data_cfg.get("lo", 0.0)),
        hi=float(data_cfg.get("hi", 1.0)),
        mean=float(data_cfg.get("mean", 0.0)),
        std=float(data_cfg.get("std", 1.0)),
        clip=float(data_cfg.get("clip", 0.0)),
    )
    cfg = _fit_if_requested(block, spec, method_config(spec))
    out = rfsq_quantize(block, cfg)
    metrics = compute_metrics(block, out.q_total)
    rates = rate_report(cfg, max(block.m, 1))
    utils = []
    for k, stage_levels in enumerate(cfg.levels_per_stage):
        utils.append(np.unique(out.indices[k]).size / stage_levels.codebook_size)
    utilization = float(np.mean(utils))
    return (method_text, row_seed, metrics.l1, metrics.mse, metrics.psnr,
            rates.index_bits_per_token, rates.side_bits_per_token, utilization)


def cmd_benchmark(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config is not valid JSON: {exc}") from None
    methods = config.get("methods", [])
    seeds = [args.seed] if args.seed is not None else config.get("seeds", [0])
    data_cfg = config.get("data", {})
    rows = []
    for method_text in methods:
        for seed in seeds:
            try:
                rows.append(_benchmark_row(method_text, int(seed), data_cfg))
            except (ParameterError, ShapeError) as exc:
                raise type(exc)(
                    f"benchmark row method={method_text!r} seed={seed}: {exc}"
                ) from exc
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        _write_csv(fh, BENCHMARK_COLUMNS, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfsq",
        description="Residual finite-scalar-quantization codec and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    csv_help = "write the CSV table to this file instead of stdout"

    p = sub.add_parser("quantize", help="quantize an FTEN file into a stream")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--csv", help=csv_help)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct an FTEN file from a stream")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("diagnose", help="per-stage residual health report")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--csv", help=csv_help)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("fit-scales", help="fit per-stage scale factors")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--csv", help=csv_help)
    p.set_defaults(func=cmd_fit_scales)

    p = sub.add_parser("benchmark", help="run a method sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int,
                   help="run only this seed, overriding the config's list")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("info", help="codebook and rate summary for a method")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
