"""Command-line entry point.

Subcommands: ``metric`` (score two images), ``distort`` (apply a generator),
``benchmark`` (correlation report over a manifest), ``elo-sim`` (synthetic
rating convergence), ``counterexample`` (projected-gradient optimization),
``swdn`` (feature-space difference score), and ``serve`` (HTTP rating
service).

Machine-readable results go to stdout (plain value or JSON via ``--format``),
diagnostics to stderr.  Exit codes: 0 success, 1 domain error, 2 usage error.
Subcommands that use randomness require an explicit ``--seed`` so that
identical invocations produce byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import benchmark as benchmark_mod
from . import distortions, elo_sim, features, metrics
from .counterexample import PgdConfig, generate_counterexample
from .elo import EloConfig
from .imaging import load_image, save_image

__all__ = ["main", "build_parser"]


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _emit(args, plain: str, payload: dict) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    else:
        print(plain)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_metric(args) -> int:
    ref = load_image(args.ref)
    dist = load_image(args.dist)
    fn = metrics.METRICS[args.metric]
    score = fn(ref, dist, color_mode=args.color_mode)
    _emit(
        args,
        _fmt(score.value),
        {"metric": args.metric, "value": _json_safe(score.value)},
    )
    return 0


def _cmd_distort(args) -> int:
    img = load_image(args.input)
    if args.op == "noise":
        out = distortions.gaussian_noise(img, args.sigma, seed=args.seed)
    elif args.op == "blur":
        out = distortions.gaussian_blur(img, args.sigma)
    elif args.op == "motion-blur":
        out = distortions.motion_blur(img, args.length, args.angle)
    else:  # warp
        level = distortions.WarpLevel.preset(args.warp_level, seed=args.seed)
        out = distortions.spatial_warp(img, level)
    save_image(args.out, out)
    _emit(args, str(args.out), {"op": args.op, "out": str(args.out)})
    return 0


def _cmd_benchmark(args) -> int:
    manifest = benchmark_mod.BenchmarkManifest.load(args.manifest)
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = benchmark_mod.run_benchmark(manifest, names, group_by=args.group_by)
    rendered = report.to_json() if args.format == "json" else report.format_table()
    print(rendered)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    for error in report.errors:
        print(f"warning: {error}", file=sys.stderr)
    return 0


def _cmd_elo_sim(args) -> int:
    ks = [float(k) for k in str(args.k).split(",")]
    config_curves = []
    for k in ks:
        pop = elo_sim.make_population(
            args.populations, seed=args.seed, score_spread=args.spread, truth_m=args.truth_m
        )
        curve = elo_sim.run_simulation(
            pop,
            EloConfig(k=k, m=args.m),
            strategy=args.strategy,
            total_judgements=args.judgements,
            checkpoint_every=args.checkpoint_every,
            seed=args.seed,
        )
        config_curves.append((k, curve))
    out = Path(args.out)
    if len(config_curves) == 1:
        config_curves[0][1].write_csv(out)
        written = {str(ks[0]): str(out)}
    else:
        written = {}
        index_path = out.with_name(out.stem + "-index.json")
        for k, curve in config_curves:
            path = out.with_name(f"{out.stem}-k{k:g}{out.suffix or '.csv'}")
            curve.write_csv(path)
            written[f"{k:g}"] = str(path)
        index_path.write_text(
            json.dumps(
                {
                    "strategy": args.strategy,
                    "m": args.m,
                    "judgements": args.judgements,
                    "seed": args.seed,
                    "curves": written,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
    finals = {f"{k:g}": curve.final_srcc for k, curve in config_curves}
    plain = "\n".join(f"k={label} final_srcc={_fmt(v)}" for label, v in finals.items())
    _emit(args, plain, {"final_srcc": finals, "files": written})
    return 0


def _cmd_counterexample(args) -> int:
    ref = load_image(args.ref)
    init = load_image(args.init)
    config = PgdConfig(steps=args.steps, alpha=args.alpha, direction=args.direction)
    result = generate_counterexample(args.metric, ref, init, config)
    save_image(args.out, result.image)
    if args.trajectory:
        result.write_trajectory_csv(args.trajectory)
    _emit(
        args,
        f"{_fmt(result.initial_objective)} -> {_fmt(result.final_objective)}",
        {
            "metric": args.metric,
            "direction": args.direction,
            "initial_objective": _json_safe(result.initial_objective),
            "final_objective": _json_safe(result.final_objective),
            "out": str(args.out),
        },
    )
    return 0


def _cmd_swdn(args) -> int:
    ref = load_image(args.ref)
    dist = load_image(args.dist)
    if args.weights:
        bundle = features.WeightBundle.load(args.weights)
    else:
        bundle = features.default_weight_bundle(args.seed)
    score = features.swdn_score(ref, dist, bundle, d=args.d, pooling=args.pooling)
    _emit(args, _fmt(score), {"value": score, "d": args.d})
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceSettings, create_app

    settings = ServiceSettings.from_env(
        data_dir=args.data_dir,
        media_root=args.media_root,
        ui_root=args.ui_root,
        self_audit=args.self_audit or None,
    )
    app = create_app(settings)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", choices=("plain", "json"), default="plain")

    p = sub.add_parser("metric", help="score a distorted image against its reference")
    p.add_argument("--metric", required=True, choices=sorted(metrics.METRICS))
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--color-mode", choices=("luminance", "per_channel"), default="luminance")
    add_format(p)
    p.set_defaults(handler=_cmd_metric)

    p = sub.add_parser("distort", help="apply a distortion generator")
    p.add_argument("--op", required=True, choices=("noise", "blur", "motion-blur", "warp"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, help="noise level (0-255 scale) or blur sigma (pixels)")
    p.add_argument("--length", type=float, help="motion blur length in pixels")
    p.add_argument("--angle", type=float, default=0.0, help="motion blur angle in degrees")
    p.add_argument("--warp-level", type=int, choices=(1, 2, 3, 4), help="warp severity preset")
    p.add_argument("--seed", type=int, help="required for the seeded ops (noise, warp)")
    add_format(p)
    p.set_defaults(handler=_cmd_distort)

    p = sub.add_parser("benchmark", help="correlation report over a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metrics", required=True, help="comma-separated metric names")
    p.add_argument("--group-by", choices=("subtype", "distortion_type", "all"), default="subtype")
    p.add_argument("--out", help="also write the JSON report here")
    add_format(p)
    p.set_defaults(handler=_cmd_benchmark)

    p = sub.add_parser("elo-sim", help="synthetic rating convergence experiment")
    p.add_argument("--populations", type=int, required=True, help="number of rated items")
    p.add_argument("--k", default="16", help="step size; a comma list runs a sweep")
    p.add_argument("--m", type=float, default=400.0)
    p.add_argument("--strategy", choices=("similar", "random"), default="similar")
    p.add_argument("--judgements", type=int, required=True)
    p.add_argument("--checkpoint-every", type=int, default=2000)
    p.add_argument("--spread", type=float, default=400.0, help="ground-truth score spread")
    p.add_argument("--truth-m", type=float, default=400.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="convergence curve CSV path")
    add_format(p)
    p.set_defaults(handler=_cmd_elo_sim)

    p = sub.add_parser("counterexample", help="optimize an image for/against a metric")
    p.add_argument("--metric", required=True, choices=sorted(metrics.GRADIENT_METRICS))
    p.add_argument("--direction", choices=("maximize", "minimize"), default="maximize")
    p.add_argument("--ref", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--trajectory", help="per-step objective/residual CSV path")
    add_format(p)
    p.set_defaults(handler=_cmd_counterexample)

    p = sub.add_parser("swdn", help="feature-space difference score")
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--d", type=int, default=3, help="match window radius")
    p.add_argument("--pooling", choices=("l2", "max"), default="l2")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help="weight bundle directory")
    group.add_argument("--seed", type=int, help="seed for hermetic default weights")
    add_format(p)
    p.set_defaults(handler=_cmd_swdn)

    p = sub.add_parser("serve", help="run the HTTP rating service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("PQBENCH_PORT", 8000)))
    p.add_argument("--data-dir")
    p.add_argument("--media-root")
    p.add_argument("--ui-root")
    p.add_argument("--self-audit", action="store_true")
    p.set_defaults(handler=_cmd_serve)

    return parser


def _validate_usage(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "distort":
        if args.op in ("noise", "blur") and args.sigma is None:
            parser.error(f"--sigma is required for --op {args.op}")
        if args.op == "motion-blur" and args.length is None:
            parser.error("--length is required for --op motion-blur")
        if args.op == "warp" and args.warp_level is None:
            parser.error("--warp-level is required for --op warp")
        if args.op in ("noise", "warp") and args.seed is None:
            parser.error(f"--seed is required for the seeded --op {args.op}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate_usage(parser, args)
    try:
        return args.handler(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
