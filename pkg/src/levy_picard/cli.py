"""Command-line front end.

::

    levy-picard run CONFIG [--seed N] [--paths N] [--steps M] [--out DIR]
    levy-picard check-config CONFIG [overrides]
    levy-picard list-scenarios
    levy-picard list-moduli

The default output directory comes from ``$LEVY_PICARD_OUT`` when the config
does not name one.
"""

from __future__ import annotations

import argparse
import sys
import time

from .config import OUTPUT_ENV, load_raw, validate_config
from .errors import ConfigError
from .experiment import EXIT_CONFIG, run_experiment
from .moduli import MODULI, make_modulus
from .scenarios import SCENARIOS


def _load(args) -> dict:
    raw = load_raw(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.paths is not None:
        raw["paths"] = args.paths
    if args.steps is not None:
        raw["grid"] = {**(raw.get("grid") or {}), "M": args.steps}
    if args.out is not None:
        raw["output"] = args.out
    return raw


def _cmd_run(args) -> int:
    cfg = validate_config(_load(args))
    t0 = time.perf_counter()
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    res = run_experiment(cfg, log=log)
    for r in res.results:
        line = f"{'PASS' if r.passed else 'FAIL'}  {r.name}"
        print(line + (f": {r.message}" if r.message else ""))
    for w in res.warnings:
        print(f"warning: {w}")
    print(f"reports in {res.output} ({time.perf_counter() - t0:.1f} s), exit {res.exit_code}")
    return res.exit_code


def _cmd_check(args) -> int:
    cfg = validate_config(_load(args))
    print(f"ok: scenario {cfg.scenario!r}, T={cfg.horizon:g}, M={cfg.steps}, paths={cfg.paths}, "
          f"seed={cfg.seed}, diagnostics={cfg.diagnostics.enabled()}")
    return 0


def _cmd_scenarios(args) -> int:
    for name in sorted(SCENARIOS):
        sc = SCENARIOS[name]
        print(f"{name}\n    {sc.description}\n    defaults: {sc.defaults}")
    return 0


def _cmd_moduli(args) -> int:
    for name in sorted(MODULI):
        mod = make_modulus(name)
        kind = "Osgood" if mod.osgood else "not Osgood"
        print(f"{name}: {mod.describe()} ({kind})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levy-picard",
                                     description="Picard iteration experiments for non-Lipschitz Levy SDEs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in [("run", _cmd_run, "run the diagnostics of a config"),
                            ("check-config", _cmd_check, "validate a config without running it")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--paths", type=int, help="override the path count")
        p.add_argument("--steps", type=int, help="override grid.M (power of two)")
        p.add_argument("--out", help=f"output directory (default: config, then ${OUTPUT_ENV}, then ./results)")
        p.set_defaults(func=fn)
    sub.choices["run"].add_argument("-q", "--quiet", action="store_true", help="no progress messages")
    sub.add_parser("list-scenarios", help="list built-in scenarios").set_defaults(func=_cmd_scenarios)
    sub.add_parser("list-moduli", help="list built-in moduli").set_defaults(func=_cmd_moduli)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
