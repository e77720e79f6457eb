import argparse
import logging
import sys
from typing import Sequence

from app import __version__
from app.core.config import settings
from app.core.errors import RNFError
from app.db.session import SessionLocal, engine, init_schema
from app.schemas.experiment import ExperimentConfig, RunRead
from app.schemas.params import IntegratorConfig, ModelParams
from app.services import experiment_service, plotdata, run_service

logger = logging.getLogger("app")

# fields taking several values on the command line
LIST_FIELDS = {"gammas", "eps_grid"}
NESTED = {"model": ModelParams, "integrator": IntegratorConfig}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One --<field> flag per ExperimentConfig key, --<table>.<key> for nested tables."""
    for name, info in ExperimentConfig.model_fields.items():
        if name in LIST_FIELDS:
            parser.add_argument(f"--{name.replace('_', '-')}", dest=name, nargs="+", type=float, default=None)
        elif name == "model":
            parser.add_argument("--model", dest="model", default=None, help="NLS or NLSP")
        elif name != "integrator":
            parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, help=info.description)
    for table, schema in NESTED.items():
        for name in schema.model_fields:
            if name in ("model", "higher"):
                continue
            parser.add_argument(f"--{table}.{name}", dest=f"{table}.{name}", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnf-lab", description="Rational normal form experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", help="TOML file; flags override its keys")
    run.add_argument("--no-registry", action="store_true", help="do not record the run in the database")
    _add_config_flags(run)

    plots = sub.add_parser("plotdata", help="tabular plot data from run directories")
    plots.add_argument("runs", nargs="*", help="run directories holding records.jsonl")
    plots.add_argument("--out", required=True)

    listing = sub.add_parser("list-runs", help="show the run registry")
    listing.add_argument("--experiment", default=None)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "no_registry"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def cmd_run(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.config:
        cfg = ExperimentConfig.from_toml(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_mapping({}, overrides)
    if args.no_registry:
        experiment_service.run(cfg)
        return 0
    init_schema(engine)
    with SessionLocal() as db:
        experiment_service.run(cfg, db)
    return 0


def cmd_plotdata(args: argparse.Namespace) -> int:
    records = [rec for d in args.runs for rec in experiment_service.load_records(d)]
    for path in plotdata.emit_plotdata(records, args.out):
        print(path)
    return 0


def cmd_list_runs(args: argparse.Namespace) -> int:
    init_schema(engine)
    with SessionLocal() as db:
        for run in run_service.list_runs(db, experiment=args.experiment):
            row = RunRead.model_validate(run)
            print(f"{row.created_at:%Y-%m-%d %H:%M:%S}  {row.experiment:<16} {row.config_hash[:12]}  {row.status:<9} {row.wall_time:8.2f}s  {row.output_dir or ''}")
    return 0


COMMANDS = {"run": cmd_run, "plotdata": cmd_plotdata, "list-runs": cmd_list_runs}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except RNFError as exc:
        logger.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
