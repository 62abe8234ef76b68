"""
Benchmark CLI

Entry point for running the method/case matrix, scoring a finished report,
validating case files and running the brute-force oracle.

Exit codes: 0 success, 1 configuration or IO error, 2 failed cells,
validation violations or an incomplete score matrix.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from src.ac_engine import solve_power_flow
from src.baseline_io import dump_baseline
from src.benchmark import RunConfig, radar_data, run_benchmark
from src.core_model import validate_network
from src.errors import (
    BaselineMismatch,
    IncompleteMatrix,
    NoFeasiblePoint,
    NonConvergence,
    PowerLinError,
    SingularJacobian,
)
from src.matpower_parser import load_case
from src.oracle import brute_force_opf_oracle
from src.report import load_report, radar_table, render_radar_svg, write_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2


def setup_logging():
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True)],
    )


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parse_methods(text: str) -> List[int]:
    try:
        return [int(token) for token in text.split(",") if token.strip()]
    except ValueError:
        raise ValueError(f"--methods expects a comma-separated list of integers, got '{text}'")


def cmd_run(args) -> int:
    try:
        config = RunConfig(
            cases=args.cases,
            methods=_parse_methods(args.methods),
            baselines=args.baselines or [],
            iters=args.iters,
            repeat=args.repeat,
            format=args.format,
            out=args.out,
            pf_vset=args.pf_vset,
            loss_split=args.loss_split,
            alpha=args.alpha,
            objective_source=args.objective,
            pf_tol=args.pf_tol,
            qp_tol=args.qp_tol,
            workers=args.workers,
        )
        report = run_benchmark(config)
    except (FileNotFoundError, ValidationError, ValueError, BaselineMismatch) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except PowerLinError as e:
        # a case file that does not parse or validate is a configuration problem
        logger.error(f"cannot load inputs: {e}")
        return EXIT_CONFIG

    write_report(report, config.format, config.out)
    failed = report.failed_cells
    if failed:
        logger.error(f"{len(failed)} of {len(report.cells)} cells failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_score(args) -> int:
    try:
        report = load_report(args.input)
    except (FileNotFoundError, ValidationError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    try:
        radar = radar_data(report.cells)
    except (IncompleteMatrix, PowerLinError) as e:
        logger.error(f"cannot score report: {e}")
        return EXIT_FAILED

    Console().print(radar_table(radar))
    payload = {str(m): poly.model_dump() for m, poly in radar.items()}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        logger.info(f"radar data written to {out}")
    if args.svg:
        render_radar_svg(radar, args.svg)
    return EXIT_OK


def cmd_validate(args) -> int:
    console = Console()
    try:
        net = load_case(args.case)
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except PowerLinError as e:
        console.print(f"{args.case}: {e}", markup=False, soft_wrap=True)
        return EXIT_FAILED

    violations = validate_network(net)
    if violations:
        for v in violations:
            console.print(f"{args.case}: {v}", markup=False, soft_wrap=True)
        return EXIT_FAILED

    dispatch = [g.p_gen for g in net.generators]
    try:
        state = solve_power_flow(net, dispatch)
    except (NonConvergence, SingularJacobian) as e:
        console.print(f"{args.case}: power flow failed: {e}", markup=False, soft_wrap=True)
        return EXIT_FAILED
    console.print(
        f"OK, NR converged in {state.iterations} iterations "
        f"({net.n_bus} buses, {net.n_branch} branches, {net.n_gen} generators)",
        soft_wrap=True,
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        net = load_case(args.case)
        result = brute_force_opf_oracle(net, args.step)
    except (FileNotFoundError, ValueError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except NoFeasiblePoint as e:
        logger.error(str(e))
        return EXIT_FAILED
    except PowerLinError as e:
        logger.error(f"cannot load case: {e}")
        return EXIT_CONFIG

    console = Console()
    for gen, p in zip(net.generators, result.dispatch):
        console.print(f"generator at bus {gen.bus}: {p * net.base_mva:.4f} MW")
    console.print(f"objective {result.objective:.6f} (cell variation {result.cell_variation:.3e})")
    if args.out:
        dump_baseline(net, result.baseline, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="powerlin",
        description="Benchmark linear AC power flow approximations in linearized OPF",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Methods 1-7 on case14 against a baseline
  powerlin run --cases cases/case14.m --baselines case14_baseline.json --methods 1,2,3,4,5,6,7

  # Score a structured report and render the radar chart
  powerlin score --in report.json --out radar.json --svg radar.svg

  # Check a case file
  powerlin validate cases/case14.m
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Run the method/case matrix")
    run.add_argument("--cases", nargs="+", type=Path, required=True, help="MATPOWER case files")
    run.add_argument("--methods", default="1,2,3,4,5,6,7", help="Comma-separated method ids (1-7)")
    run.add_argument("--baselines", nargs="*", type=Path, help="Baseline documents, one per case")
    run.add_argument("--iters", type=int, default=4, help="Iterations for methods 6-7")
    run.add_argument("--repeat", type=int, default=100, help="Timing repetitions (0 disables timing)")
    run.add_argument("--format", choices=["text", "csv", "report"], default="text")
    run.add_argument("--out", type=Path, help="Output file (stdout when omitted)")
    run.add_argument("--pf-vset", choices=["case", "baseline", "solution"], default="case",
                     help="Voltage setpoints for the validation power flow")
    run.add_argument("--loss-split", choices=["half", "from", "to"], default="half",
                     help="Where branch loss estimates are placed as fictitious load")
    run.add_argument("--alpha", type=Path, help="JSON map '<from>-<to>' -> alpha for method 7")
    run.add_argument("--objective", choices=["validated", "solution"], default="validated",
                     help="Price the validated dispatch or take the OPF objective")
    run.add_argument("--pf-tol", type=float, help="Power flow mismatch tolerance override")
    run.add_argument("--qp-tol", type=float, help="QP primal tolerance override")
    run.add_argument("--workers", type=int, help="Concurrent metric cells")
    run.set_defaults(handler=cmd_run)

    score = sub.add_parser("score", help="Radar scores from a structured report")
    score.add_argument("--in", dest="input", type=Path, required=True, help="Report written with --format report")
    score.add_argument("--out", type=Path, help="Radar data JSON")
    score.add_argument("--svg", type=Path, help="Radar chart SVG")
    score.set_defaults(handler=cmd_score)

    validate = sub.add_parser("validate", help="Parse, validate and solve a case from flat start")
    validate.add_argument("case", type=Path)
    validate.set_defaults(handler=cmd_validate)

    oracle = sub.add_parser("oracle", help="Brute-force OPF on a tiny case")
    oracle.add_argument("case", type=Path)
    oracle.add_argument("--step", type=float, default=1e-3, help="Grid step, per-unit")
    oracle.add_argument("--out", type=Path, help="Write the optimum as a baseline document")
    oracle.set_defaults(handler=cmd_oracle)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
