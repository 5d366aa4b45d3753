"""``aggnash`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import _backend
from .errors import ConfigError
from .scenario import (
    EXIT_CONFIG,
    PRESETS,
    ScenarioConfig,
    _jsonable,
    check_scenario,
    delta_star_scenario,
    run_scenario,
    sweep,
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggnash", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--backend", choices=sorted(_backend.KERNELS),
                   help="RK4 kernel (default: %(default)s)", default=_backend.BACKEND)
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="check assumptions, integrate and verify convergence")
    run.add_argument("config", help="scenario JSON file or preset name")
    run.add_argument("--out", help="output directory")

    sw = sub.add_parser("sweep", help="one run per point of a parameter grid")
    sw.add_argument("config")
    sw.add_argument("--grid", required=True, help="JSON object of key -> list of values")
    sw.add_argument("--out")
    sw.add_argument("--jobs", type=int, default=1)

    chk = sub.add_parser("check", help="assumption checks only")
    chk.add_argument("config")
    chk.add_argument("--out")

    ds = sub.add_parser("delta-star", help="print the gain bound and its inputs")
    ds.add_argument("config")

    sub.add_parser("presets", help="list built-in scenarios")
    return p


def _load_grid(path) -> dict:
    try:
        with open(path) as fh:
            grid = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"grid {path}: {exc}") from None
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise ConfigError("grid must map parameter names to lists")
    return grid


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _backend.BACKEND = args.backend

    if args.verb == "presets":
        for name in sorted(PRESETS):
            print(name)
        return 0
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.verb == "run":
            res = run_scenario(cfg, args.out)
        elif args.verb == "check":
            res = check_scenario(cfg, args.out)
        elif args.verb == "delta-star":
            res = delta_star_scenario(cfg)
            if res.exit_code == 0:
                print(json.dumps(_jsonable(res.payload), indent=2, sort_keys=True))
        else:
            rows = sweep(cfg, _load_grid(args.grid), args.out, args.jobs)
            n_pass = sum(r["pass"] for r in rows)
            print(f"{n_pass}/{len(rows)} runs passed")
            return 0 if n_pass == len(rows) else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stream = sys.stdout if res.exit_code == 0 else sys.stderr
    print(f"{args.verb}: {res.message}", file=stream)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
