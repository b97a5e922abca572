"""Command-line front end.

Exit codes:
    0  success
    2  usage error (argparse)
    3  validation failure: bad config or plan, or a violated constraint
       such as mu c0 h^2 <= nu
    4  simulation failure: blow-up, CFL violation, non-finite state
    5  I/O failure
    6  missing inputs (e.g. plotting an empty directory)
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .assimilation import thresholds
from .config import ConfigError, load_config, reference
from .fields import GridSpec, ResolutionMismatch
from .harness import ENV_OUT, certify, load_plan, output_root, simulate, sweep
from .interpolants import InterpolantSpec, Kind, Order
from .plotting import MissingInputs, plot_directory
from .solver import ConstraintError, SolverError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_SIMULATION = 4
EXIT_IO = 5
EXIT_MISSING = 6

log = logging.getLogger("nudgeflow")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nudgeflow",
        description="2D Navier-Stokes data assimilation by nudging.",
        epilog=f"Default output root: ${ENV_OUT} or ./runs.  Exit codes: 0 ok, 2 usage, 3 validation, "
        "4 simulation failure, 5 I/O, 6 missing inputs.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one truth/assimilated pair")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--override-constraints", action="store_true")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("--plan", required=True, type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--override-constraints", action="store_true")
    s.add_argument("--seed", type=int, help="replaces the plan seed")

    s = sub.add_parser("certify", help="estimate the approximation constant c0 of an interpolant")
    s.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    s.add_argument("--h", required=True, type=float)
    s.add_argument("--order", choices=[o.value for o in Order])
    s.add_argument("--probes", type=int, default=200)
    s.add_argument("--validate", type=int, default=0, help="fresh probes checked against the certificate")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--box-side", type=float, default=2 * 3.141592653589793)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, help="certificate cache directory")

    s = sub.add_parser("plot", help="plot a run or sweep directory")
    s.add_argument("directory", type=Path)

    s = sub.add_parser("thresholds", help="print the synchronization thresholds")
    s.add_argument("--G", required=True, type=float)
    s.add_argument("--nu", type=float, default=1.0)
    s.add_argument("--lambda1", type=float, default=1.0)
    s.add_argument("--c0", type=float, default=1.0)
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--h", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--json", action="store_true")

    sub.add_parser("defaults", help="print the configuration reference with defaults")
    return p


def _simulate(a) -> int:
    cfg = load_config(a.config)
    if a.override_constraints:
        cfg = replace(cfg, override=True)
    if a.seed is not None:
        cfg = replace(cfg, seed=a.seed)
    out, res = simulate(cfg, a.out)
    s = res.series
    rate = "n/a" if s.fitted_rate is None else f"{s.fitted_rate:.4g}"
    print(f"{out}  samples={len(s.t)} rate={rate} decay_orders={s.decay_orders():.2f}")
    return EXIT_OK


def _sweep(a) -> int:
    plan = load_plan(a.plan)
    if a.override_constraints:
        plan = replace(plan, base=replace(plan.base, override=True))
    if a.seed is not None:
        plan = replace(plan, seed=a.seed)
    out = a.out or (Path(plan.output_dir) if plan.output_dir else output_root() / "sweep")
    res = sweep(plan, out, workers=max(1, a.workers))
    failed = sum(1 for r in res.summaries if r.status != "ok")
    print(f"{res.directory}  cells={len(res.summaries)} computed={res.computed} cached={res.cached} failed={failed}")
    return EXIT_OK


def _certify(a) -> int:
    kind = Kind(a.kind)
    order = Order(a.order) if a.order else (Order.H2 if kind is Kind.NODES else Order.H1)
    grid = GridSpec(a.box_side, a.n)
    if a.probes < 100:
        raise ConfigError("probes", f"at least 100 probes required, got {a.probes}")
    cache = a.out or output_root() / "certificates"
    doc, cached = certify(InterpolantSpec(kind, a.h), grid, order, a.probes, a.seed, cache, validate=a.validate)
    print(json.dumps({**doc, "cached": cached}, indent=2, sort_keys=True))
    if a.validate and not doc["validation"]["ok"]:
        return EXIT_VALIDATION
    return EXIT_OK


def _plot(a) -> int:
    for path in plot_directory(a.directory):
        print(path)
    return EXIT_OK


def _thresholds(a) -> int:
    rep = thresholds(a.G, a.nu, a.lambda1, a.c0, a.c, h=a.h, mu=a.mu)
    print(json.dumps(rep.to_dict(), indent=2) if a.json else rep.format())
    return EXIT_OK


def _defaults(a) -> int:
    print(reference(), end="")
    return EXIT_OK


_COMMANDS = {
    "simulate": _simulate,
    "sweep": _sweep,
    "certify": _certify,
    "plot": _plot,
    "thresholds": _thresholds,
    "defaults": _defaults,
}


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[a.command](a)
    except (ConfigError, ConstraintError, ResolutionMismatch) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MissingInputs as e:
        print(f"missing inputs: {e}", file=sys.stderr)
        return EXIT_MISSING
    except SolverError as e:
        print(f"simulation failed ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_SIMULATION
    except FileNotFoundError as e:
        print(f"missing inputs: {e}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
