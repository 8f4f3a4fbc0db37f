"""Command-line entry point.

    cavitycool <kind> [--config FILE] [--seed N] [--out DIR] [--workers N] [--dt-ns DT]

Exit status: 0 on success, 2 for configuration errors, 3 for runtime failures.
"""

import argparse
import logging
import sys

from .config import KINDS, ConfigError, default_text, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavitycool",
                                 description="Cavity-cooling Monte-Carlo scenarios")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} scenario")
        sp.add_argument("--config", help="scenario file (key = value)")
        sp.add_argument("--seed", type=int, help="master seed (default from config, else 0)")
        sp.add_argument("--out", help="output directory (default runs/<kind>-seed<seed>)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("--dt-ns", type=float, help="integration step in ns")
        sp.add_argument("--n", type=int, dest="n_trajectories", help="ensemble size")
    v = sub.add_parser("validate", help="check a scenario file and print the resolved settings")
    v.add_argument("config")
    sub.add_parser("default-config", help="print the shipped default settings")
    return ap


def _load(path, overrides):
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return validate_config(text, overrides=overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "default-config":
        sys.stdout.write(default_text())
        return EXIT_OK

    from .config import dump

    try:
        if args.command == "validate":
            with open(args.config) as fh:
                scenario = validate_config(fh.read())
            sys.stdout.write(dump(scenario.values))
            return EXIT_OK
        overrides = {"kind": args.command}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError([(None, "seed", "must be non-negative")])
            overrides["seed"] = args.seed
        if args.dt_ns is not None:
            if not args.dt_ns > 0:
                raise ConfigError([(None, "dt_ns", "must be positive")])
            overrides["dt_ns"] = args.dt_ns
        if args.n_trajectories is not None:
            if args.n_trajectories < 1:
                raise ConfigError([(None, "n_trajectories", "must be at least 1")])
            overrides["n_trajectories"] = args.n_trajectories
        scenario = _load(args.config, overrides)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .harness import run_scenario

    out = args.out or f"runs/{scenario.kind}-seed{scenario.seed}"
    try:
        manifest = run_scenario(scenario, out, workers=args.workers)
    except ValueError as exc:
        # invalid combinations only detectable at run time (e.g. dt too large)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(manifest.out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
