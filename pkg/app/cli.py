"""
Batch front-end of the workbench.

    python -m app.cli normalize "z2*z1" --n 2
    python -m app.cli verify --config run.cfg --output report.jsonl
    python -m app.cli export z --M 2 --component 1 --out-dir export

Exit codes: 0 pass, 1 verification failure, 2 usage/parse error, 3 I/O error.
"""
import argparse
import sys
from typing import Any, Dict, List, Optional

import structlog
from pydantic import ValidationError

from app.config import get_settings
from app.models.config_models import RunConfig, load_run_config
from app.services import qcstar
from app.services.workbench_service import OPERATOR_NAMES, workbench_service
from app.utils.errors import ConfigError, WorkbenchError
from app.utils.formatters import format_summary, write_report
from app.utils.logging_config import configure_logging

logger = structlog.get_logger()
settings = get_settings()

EXIT_OK = 0
EXIT_FAILED = 1


def _csv(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--n", type=int, help="number of generators")
    parser.add_argument("--q", help="deformation parameter as a rational, e.g. 1/2")
    parser.add_argument("--N", dest="N", type=int, help="largest unilateral index")
    parser.add_argument("--M", dest="M", type=int, help="bilateral window |i| <= M")
    parser.add_argument("--d", type=int, help="interior margin")
    parser.add_argument("--samples", type=_csv, help="fiber samples, comma separated")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--tolerance", type=float)
    parser.add_argument("--sweep", type=_csv, help="sweep sizes, comma separated")
    parser.add_argument("--output", help="report file; stdout when absent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qplane", description="Verification workbench for the quantum complex plane.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    normalize = commands.add_parser("normalize", help="print the normal form of an expression")
    normalize.add_argument("expr")
    normalize.add_argument("--n", type=int, default=settings.default_n)

    verify = commands.add_parser("verify", help="run verification suites")
    _add_run_options(verify)
    verify.add_argument("--suites", type=_csv, help="comma separated suite names")

    build = commands.add_parser("rep-build", help="build truncated components and summarize them")
    _add_run_options(build)
    build.add_argument("--builder", choices=["abstract", "lattice"], default="abstract")

    export = commands.add_parser("export", help="write operators as Matrix Market files")
    _add_run_options(export)
    export.add_argument("what", help=f"one of {', '.join(OPERATOR_NAMES)} or a generator id")
    export.add_argument("--component", type=int, action="append", help="component index, repeatable")
    export.add_argument("--out-dir", help="target directory (default from config)")
    export.add_argument("--terms", help="generator-term file for generator ids")

    norm = commands.add_parser("norm", help="norm lower bounds along the sweep")
    _add_run_options(norm)
    norm.add_argument("--terms", help="generator-term file; random terms when absent")

    separate = commands.add_parser("separate", help="classical point-separation check")
    _add_run_options(separate)
    separate.add_argument("--family", help="generator-term file; built-in family when absent")
    separate.add_argument("--pairs", type=int, default=1000)

    confluence = commands.add_parser("confluence", help="local confluence check of the rewrite system")
    confluence.add_argument("--n", type=int, default=settings.default_n)
    confluence.add_argument("--max-len", type=int, default=4)
    confluence.add_argument("--seed", type=int)
    confluence.add_argument("--output")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {
        key: getattr(args, key, None)
        for key in ("n", "q", "N", "M", "d", "samples", "seed", "tolerance", "sweep", "output", "suites")
    }
    return load_run_config(args.config, overrides)


def cmd_normalize(args: argparse.Namespace) -> int:
    print(workbench_service.normalize(args.expr, args.n))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    config = _run_config(args)
    records = workbench_service.run_verification(config)
    write_report(records, config.output)
    print(format_summary(records), file=sys.stderr)
    return EXIT_OK if all(r.passed for r in records) else EXIT_FAILED


def cmd_rep_build(args: argparse.Namespace) -> int:
    config = _run_config(args)
    components = workbench_service.build_components(config, builder=args.builder)
    write_report(workbench_service.summarize(components), config.output)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    config = _run_config(args)
    terms = qcstar.load_generator_terms(args.terms, config.n) if args.terms else None
    paths = workbench_service.export(config, args.what, out_dir=args.out_dir,
                                     components=args.component, terms=terms)
    for path in paths:
        print(path)
    return EXIT_OK


def cmd_norm(args: argparse.Namespace) -> int:
    config = _run_config(args)
    terms = qcstar.load_generator_terms(args.terms, config.n) if args.terms else None
    write_report(workbench_service.norm_rows(config, terms), config.output)
    return EXIT_OK


def cmd_separate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    family = qcstar.load_generator_terms(args.family, config.n) if args.family else None
    report = workbench_service.separation(config, family, pair_count=args.pairs)
    write_report([report], config.output)
    return EXIT_OK if not report.unseparated else EXIT_FAILED


def cmd_confluence(args: argparse.Namespace) -> int:
    report = workbench_service.confluence(args.n, args.max_len, seed=args.seed)
    write_report([report], args.output)
    return EXIT_OK if report.confluent else EXIT_FAILED


COMMANDS = {
    "normalize": cmd_normalize,
    "verify": cmd_verify,
    "rep-build": cmd_rep_build,
    "export": cmd_export,
    "norm": cmd_norm,
    "separate": cmd_separate,
    "confluence": cmd_confluence,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else settings.log_level, settings.log_format)
    try:
        return COMMANDS[args.command](args)
    except WorkbenchError as e:
        logger.warning("Command failed", command=args.command, error_code=e.error_code, error=e.message)
        print(f"error: {e.error_code}: {e.message}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.warning("Command rejected", command=args.command, errors=e.error_count())
        print(f"error: {ConfigError.error_code}: {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
