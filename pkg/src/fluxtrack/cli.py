"""Command line entry point: ``fluxtrack run | truth | validate | presets``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import PRESETS, ConfigError, parse_config
from .filter import EnsembleCollapse
from .harness import format_checks, generate_truth, run_experiment, validate_suite, write_truth


def _load(args) -> "ExperimentConfig":  # noqa: F821
    cfg = parse_config(args.config, preset=getattr(args, "preset", None))
    if getattr(args, "seed", None) is not None:
        data = cfg.to_dict()
        data["seed"] = args.seed
        cfg = parse_config(data)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg, out_dir=args.out, n_jobs=args.workers)
    sys.stdout.write(report.report_csv())
    print(f"wrote {args.out}/report.csv, ensemble.csv, report.json "
          f"({report.timings['total']:.1f} s)", file=sys.stderr)
    return 0


def cmd_truth(args) -> int:
    cfg = _load(args)
    truth = generate_truth(cfg)
    write_truth(truth, args.out)
    print(f"sigma = {truth.sigma!r}; wrote {args.out}/observations.csv, truth_flux.csv", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    checks = validate_suite(raster_path=args.raster)
    print(format_checks(checks))
    return 0 if all(c.status == "pass" for c in checks) else 1


def cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(name)
        if args.verbose:
            print(json.dumps(PRESETS[name], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluxtrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="generate synthetic data and run the particle filter")
    r.add_argument("--config", help="JSON config file (optional when --preset is given)")
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--workers", type=int, default=1, help="threads for the particle map")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("truth", help="write the synthetic flux records only")
    t.add_argument("--config")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_truth)

    v = sub.add_parser("validate", help="run the numerical self-checks")
    v.add_argument("--raster", help="permeability raster to check (default: bundled file)")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("presets", help="list the built-in experiment presets")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("run", "truth") and args.config is None and args.preset is None:
        print("error: give --config or --preset", file=sys.stderr)
        return 2
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EnsembleCollapse as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
