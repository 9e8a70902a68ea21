"""Command-line interface.

Subcommands: gen-suite, run, sweep, compare, oracle-check, record, replay.
Exit codes: 0 success, 1 run error, 2 configuration error. Failures print a
machine-readable JSON object on stderr. TREEVOS_OUT sets the default output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .backend import BackendError
from .bench import (
    ConfigurationError,
    RunConfig,
    RunError,
    SWEEP_AXES,
    compare,
    oracle_check,
    run,
    sweep,
)
from .core import Hyperparams
from .simworld import SCENARIO_FAMILIES, generate_scenario_suite, save_scenario

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _default_out() -> str:
    return os.environ.get("TREEVOS_OUT", "out")


def _add_hyperparam_args(p: argparse.ArgumentParser):
    p.add_argument("--p", type=int, default=None, help="pathway count P")
    p.add_argument("--n-mem", type=int, default=None, help="max non-prompt memory frames N")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--delta-conf", type=float, default=None)
    p.add_argument("--delta-iou", type=float, default=None)
    p.add_argument("--w-low", type=float, default=None)
    p.add_argument("--w-high", type=float, default=None)
    p.add_argument(
        "--rounding-decimals",
        default=None,
        help="IoU rounding places for diversity, or 'none' to disable",
    )


def _add_run_args(p: argparse.ArgumentParser):
    p.add_argument("--scenarios", nargs="+", default=None, help="scenario JSON files or directories")
    p.add_argument("--out", default=None, help="output dir (default $TREEVOS_OUT or 'out')")
    p.add_argument("--mode", choices=("tree", "greedy", "oracle"), default=None)
    p.add_argument("--backend", default=None, help="sim or external:<command line>")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--trace", action="store_true", help="emit step-trace NDJSON")
    p.add_argument("--svg", action="store_true", help="emit per-scenario J&F curves")
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--no-diversify", action="store_true", help="plain top-P even when uncertain")
    p.add_argument("--memory", choices=("gated", "recency"), default=None)
    p.add_argument("--no-modulation", action="store_true", help="force all memory weights to 1.0")
    p.add_argument("--config", default=None, help="JSON file with run settings; flags override")
    _add_hyperparam_args(p)


def _scenario_paths(items: list[str]) -> tuple[str, ...]:
    paths: list[str] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(str(q) for q in sorted(p.glob("*.json")))
        elif p.is_file():
            paths.append(str(p))
        else:
            raise ConfigurationError(f"scenario path {item!r} does not exist")
    if not paths:
        raise ConfigurationError(f"no scenario files found under {items}")
    return tuple(paths)


def _hyperparams_from(args, base: Hyperparams) -> Hyperparams:
    h = base
    if args.p is not None:
        h = h.with_(P=args.p)
    if args.n_mem is not None:
        h = h.with_(N=args.n_mem)
    if args.epsilon is not None:
        h = h.with_(epsilon=args.epsilon)
    if args.delta_conf is not None:
        h = h.with_(delta_conf=args.delta_conf)
    if args.delta_iou is not None:
        h = h.with_(delta_iou=args.delta_iou)
    if args.w_low is not None:
        h = h.with_(w_low=args.w_low)
    if args.w_high is not None:
        h = h.with_(w_high=args.w_high)
    if args.rounding_decimals is not None:
        value = args.rounding_decimals
        h = h.with_(iou_rounding_decimals=None if value == "none" else int(value))
    return h


def _config_from(args, record_dir=None, replay_dir=None) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    h = Hyperparams(**base.get("hyperparams", {}))
    h = _hyperparams_from(args, h)
    out = args.out or base.get("output_dir") or _default_out()
    scenarios = args.scenarios if args.scenarios else base.get("scenarios", [])
    return RunConfig(
        scenarios=_scenario_paths(list(scenarios)),
        output_dir=str(out),
        hyperparams=h,
        mode=args.mode or base.get("mode", "tree"),
        backend=args.backend or base.get("backend", "sim"),
        parallelism=args.parallelism or base.get("parallelism", 1),
        diversify=False if args.no_diversify else base.get("diversify"),
        memory=args.memory or base.get("memory"),
        modulation=False if args.no_modulation else base.get("modulation"),
        trace=bool(args.trace or base.get("trace", False)),
        svg=bool(args.svg or base.get("svg", False)),
        segments=args.segments if args.segments is not None else base.get("segments", 4),
        record_dir=record_dir,
        replay_dir=replay_dir,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treevos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-suite", help="write a deterministic scenario suite to disk")
    p.add_argument("--family", choices=SCENARIO_FAMILIES, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("run", help="run scenarios and emit CSV/JSON/SVG bundles")
    _add_run_args(p)

    p = sub.add_parser("sweep", help="run once per value along one hyperparameter axis")
    _add_run_args(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")

    p = sub.add_parser("compare", help="per-frame J&F gap between two finished runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", default=None)
    p.add_argument("--segments", type=int, default=4)

    p = sub.add_parser("oracle-check", help="verify the beam against exhaustive enumeration")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--tmin", type=int, default=3)
    p.add_argument("--tmax", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("record", help="run while recording decode traffic to NDJSON traces")
    _add_run_args(p)
    p.add_argument("--traces", required=True, help="directory for per-scenario trace files")

    p = sub.add_parser("replay", help="run answering every decode from recorded traces")
    _add_run_args(p)
    p.add_argument("--traces", required=True, help="directory holding per-scenario trace files")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-suite":
            out = Path(args.out or _default_out())
            out.mkdir(parents=True, exist_ok=True)
            for spec in generate_scenario_suite(args.family, args.count, args.seed):
                save_scenario(spec, out / f"{spec.name}.json")
            print(f"wrote {args.count} {args.family} scenarios to {out}")
        elif args.command == "run":
            result = run(_config_from(args))
            print(f"mean J&F {result.mean_jf:.4f} over {len(result.scenarios)} scenarios -> {result.output_dir}")
        elif args.command == "sweep":
            results = sweep(_config_from(args), args.axis, args.values.split(","))
            for value, result in results:
                print(f"{args.axis}={value}: mean J&F {result.mean_jf:.4f}")
        elif args.command == "compare":
            summary = compare(args.run_a, args.run_b, args.out or _default_out(), args.segments)
            print(
                f"mean gap {summary['mean_gap']:+.4f}; segment gaps "
                + ", ".join(f"{g:+.4f}" for g in summary["segment_gap"])
            )
        elif args.command == "oracle-check":
            report = oracle_check(args.count, args.tmin, args.tmax, args.seed)
            if args.out:
                Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
            exact = sum(1 for f in report["fixtures"] if f["exact"])
            print(f"{exact}/{len(report['fixtures'])} fixtures exact; ok={report['ok']}")
            if not report["ok"]:
                raise RunError("oracle check failed")
        elif args.command == "record":
            result = run(_config_from(args, record_dir=args.traces))
            print(f"recorded {len(result.scenarios)} scenarios -> {args.traces}")
        elif args.command == "replay":
            result = run(_config_from(args, replay_dir=args.traces))
            print(f"replayed {len(result.scenarios)} scenarios -> {result.output_dir}")
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command}")
    except (ConfigurationError, ValueError) as exc:
        json.dump({"error": "config", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG_ERROR
    except (RunError, BackendError, OSError) as exc:
        json.dump({"error": "run", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_RUN_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
