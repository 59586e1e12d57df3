"""Command-line entry point: attack / transfer / sweep / calibrate / serve-oracle."""

from __future__ import annotations

import argparse
import sys

from .attack import AttackConfig, PATCH_MODES
from .harness import (
    attack_batch,
    calibrate_from_csv,
    load_manifest,
    sweep_batch,
    transfer_batch,
)
from .loss import LossKind
from .oracle import BUILTIN_SCORERS, ScoreBounds
from .wire import serve_builtin


def _add_bounds_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta1", type=float, default=0.0, help="score range lower bound")
    parser.add_argument("--beta2", type=float, default=10.0, help="score range upper bound")


def _add_attack_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="CSV manifest (path,mos)")
    parser.add_argument(
        "--oracle", required=True, help="builtin:NAME | cmd:<command> | tcp:host:port"
    )
    parser.add_argument("--T", type=int, default=10000, help="iteration budget")
    parser.add_argument("--n", type=int, default=2, help="patches per iteration")
    parser.add_argument("--gamma0", type=float, default=0.04, help="initial square-size factor")
    parser.add_argument("--rho", type=float, default=3.0 / 255.0, help="l-inf budget")
    parser.add_argument("--loss", choices=["bidi", "mse"], default="bidi")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1, help="concurrent attacks")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--sample-k", type=int, default=50, help="images sampled per run (0 = all)")
    parser.add_argument("--no-init", action="store_true", help="skip random initialization")
    parser.add_argument("--patch-mode", choices=list(PATCH_MODES), default="per-pixel")
    parser.add_argument("--curve-every", type=int, default=100, help="curve sampling cadence")
    _add_bounds_args(parser)


def _config_from_args(args) -> AttackConfig:
    return AttackConfig(
        max_iterations=args.T,
        num_patches=args.n,
        gamma0=args.gamma0,
        rho=args.rho,
        bounds=ScoreBounds(args.beta1, args.beta2),
        loss=LossKind(args.loss),
        seed=args.seed,
        init_random=not args.no_init,
        patch_mode=args.patch_mode,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqattack",
        description="Black-box adversarial attacks on no-reference image quality scorers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_attack = sub.add_parser("attack", help="intra-model attack over a manifest")
    _add_attack_args(p_attack)

    p_transfer = sub.add_parser("transfer", help="re-score an attack directory under another oracle")
    p_transfer.add_argument("--adversarial-dir", required=True)
    p_transfer.add_argument("--oracle", required=True)
    p_transfer.add_argument("--out", required=True)
    p_transfer.add_argument("--jobs", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="attack batches across one swept parameter")
    _add_attack_args(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=["rho", "n", "gamma0", "seed"])
    p_sweep.add_argument("--values", required=True, help="comma-separated value list")

    p_cal = sub.add_parser("calibrate", help="fit the logistic score mapping from a CSV")
    p_cal.add_argument("--csv", required=True, help="calibration CSV (raw_score,mos)")
    p_cal.add_argument("--out", required=True, help="output JSON path")
    _add_bounds_args(p_cal)

    p_serve = sub.add_parser("serve-oracle", help="expose a built-in scorer over the wire protocol")
    p_serve.add_argument("--scorer", required=True, choices=sorted(BUILTIN_SCORERS))
    group = p_serve.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true")
    group.add_argument("--tcp", metavar="PORT", type=int)
    p_serve.add_argument("--host", default="127.0.0.1")
    _add_bounds_args(p_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    bounds = ScoreBounds(args.beta1, args.beta2) if hasattr(args, "beta1") else None
    try:
        if args.command == "attack":
            manifest = load_manifest(args.manifest, bounds)
            report = attack_batch(
                manifest,
                args.oracle,
                _config_from_args(args),
                args.out,
                sample_k=args.sample_k or None,
                jobs=args.jobs,
                curve_every=args.curve_every,
            )
            print(f"attacked {len(report.records)} images; RGO={report.aggregates['rgo']:.4f}")
        elif args.command == "transfer":
            report = transfer_batch(args.adversarial_dir, args.oracle, args.out, jobs=args.jobs)
            print(f"rescored {len(report.records)} pairs; RGO={report.aggregates['rgo']:.4f}")
        elif args.command == "sweep":
            manifest = load_manifest(args.manifest, bounds)
            values = [float(v) for v in args.values.split(",") if v.strip()]
            results = sweep_batch(
                manifest,
                args.oracle,
                _config_from_args(args),
                args.param,
                values,
                args.out,
                sample_k=args.sample_k or None,
                jobs=args.jobs,
                curve_every=args.curve_every,
            )
            for value, report in results:
                print(f"{args.param}={value:g}: RGO={report.aggregates['rgo']:.4f}")
        elif args.command == "calibrate":
            payload = calibrate_from_csv(args.csv, bounds, args.out)
            print(f"wrote logistic parameters to {args.out}: {payload}")
        elif args.command == "serve-oracle":
            scorer = BUILTIN_SCORERS[args.scorer](bounds)
            transport = "stdio" if args.stdio else f"tcp:{args.host}:{args.tcp}"
            serve_builtin(scorer, transport)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
