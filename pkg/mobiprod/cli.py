"""Command-line entry point: ``python -m mobiprod.cli {gen,tables,simulate,report}``.

Exit codes: 0 on success, 2 on generation or validation failures, 3 on
solver failures (infeasible programs, exhausted budgets, non-convergence).
"""
import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from . import services
from .database import SessionLocal, init_db
from .instances import Instance, load_instance
from .shared.config import settings
from .shared.errors import InvalidModel, MobiprodError
from .shared.log import configure_logging
from .shared.models import BeliefMode, PolicyId, SetId

logger = logging.getLogger("mobiprod.cli")


def parse_grid(text: str) -> int:
    """'1/3' (or '3') -> grid denominator 3."""
    try:
        step = Fraction(text) if "/" in text else Fraction(1, int(text))
    except (ValueError, ZeroDivisionError) as e:
        raise InvalidModel(f"grid resolution {text!r} is not of the form 1/k") from e
    if step.numerator != 1 or step.denominator < 1:
        raise InvalidModel(f"grid resolution {text!r} is not of the form 1/k")
    return step.denominator


def _session():
    if not settings.table_cache:
        return None
    init_db()
    return SessionLocal()


def cmd_gen(args) -> int:
    instances = services.generate_instances(SetId(args.set), args.seed, args.beta, args.horizon)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = services.write_instances(instances, out_dir)
    print(f"wrote {len(paths)} instances to {out_dir}")
    return 0


def _with_beta(instance: Instance, beta: Optional[float]) -> Instance:
    if beta is None or beta == instance.beta:
        return instance
    return Instance.model_validate({**instance.model_dump(), "beta": beta})


def cmd_tables(args) -> int:
    instance = _with_beta(load_instance(args.instance), args.beta)
    db = _session()
    try:
        tables = services.build_tables(instance, parse_grid(args.grid), db)
    finally:
        if db is not None:
            db.close()
    for t in tables:
        print(f"location {t.location}: s in [{t.s_min}, {t.s_max}], {len(t.grid)} grid points, "
              f"{t.iterations} sweeps, residual {t.residual:.3e}")
    return 0


def cmd_simulate(args) -> int:
    instance = load_instance(args.instance)
    policy = PolicyId(args.policy)
    thetas = [args.theta] if args.theta is not None else None
    db = _session()
    try:
        report = services.experiment([instance], [policy], trajectories=args.reps, horizon=args.horizon,
                                     seed=args.seed, thetas=thetas, modes=[BeliefMode(args.mode)],
                                     undiscounted=args.undiscounted, db=db)
    finally:
        if db is not None:
            db.close()
    text = report.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    text = services.aggregate_reports(args.inputs)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobiprod", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write an instance set to disk")
    gen.add_argument("--set", choices=[s.value for s in SetId], required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--beta", type=float, default=None)
    gen.add_argument("--horizon", type=int, default=None)
    gen.set_defaults(func=cmd_gen)

    tables = sub.add_parser("tables", help="build and cache value tables for an instance")
    tables.add_argument("--instance", required=True)
    tables.add_argument("--beta", type=float, default=None)
    tables.add_argument("--grid", default=f"1/{settings.grid_denominator}")
    tables.set_defaults(func=cmd_tables)

    sim = sub.add_parser("simulate", help="roll out a policy and DNF; writes a report CSV")
    sim.add_argument("--instance", required=True)
    sim.add_argument("--policy", choices=[p.value for p in PolicyId], required=True)
    sim.add_argument("--theta", type=float, default=None)
    sim.add_argument("--mode", choices=[m.value for m in BeliefMode], default=BeliefMode.PO.value)
    sim.add_argument("--reps", type=int, default=settings.trajectories)
    sim.add_argument("--horizon", type=int, default=settings.horizon)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--undiscounted", action="store_true")
    sim.add_argument("--out", default=None)
    sim.set_defaults(func=cmd_simulate)

    report = sub.add_parser("report", help="merge report CSVs into one")
    report.add_argument("inputs", nargs="+")
    report.add_argument("--out", default=None)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except MobiprodError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
