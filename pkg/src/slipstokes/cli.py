"""Command line entry point: ``slipstokes <study> --config PATH [options]``.

Exit status is 0 on success, 2 when the study completed but recorded flags
(near-spectrum points, failed sweep points, out-of-regime solves) and 1 on
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .experiments import STUDIES, ConfigError, ExperimentConfig, run

log = logging.getLogger("slipstokes")


def build_parser():
    p = argparse.ArgumentParser(prog="slipstokes", description="Slip Stokes resolvent and evolution studies.")
    sub = p.add_subparsers(dest="study", required=True)
    for name in STUDIES:
        s = sub.add_parser(name, help=f"run the {name} study")
        s.add_argument("--config", required=True, help="YAML configuration file")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, help="global random seed (overrides the config)")
        s.add_argument("--threads", type=int, help="worker threads for sweeps")
        s.add_argument("--level-override", type=float, metavar="H",
                       help="run on the single mesh size H instead of the configured levels")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = args.threads
        if args.out is not None:
            raw["output"] = args.out
        if args.level_override is not None:
            raw["mesh"] = {"h": args.level_override}
        config = ExperimentConfig.from_dict(raw, study=args.study)
        manifest, flags = run(config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any study failure maps to exit status 1
        log.exception("study failed")
        print(f"study failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    if flags:
        print(f"completed with {len(flags)} flag(s):", file=sys.stderr)
        for f in flags:
            print(f"  {f}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
