"""
Benchmark pipeline

Runs the (method, case) matrix: linearized OPF, AC validation with the
non-slack dispatch fixed, metrics against the baseline, then timing. Metric
cells fan out over a thread pool; timing always runs serially afterwards.
"""

import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.ac_engine import solve_power_flow
from src.baseline_io import load_baseline
from src.core_model import BaselineSolution, Network, validate_network
from src.errors import IncompleteMatrix, InvalidNetwork, PowerLinError
from src.evaluation import (
    AXES,
    MetricsReport,
    aggregate_axes,
    approx_error,
    feasibility_check,
    optimality_errors,
    polygon_area,
    price_dispatch,
    score_methods,
    time_method,
)
from src.linear_methods import build_method
from src.matpower_parser import load_case
from src.opf_engine import ALL_METHODS, LOSS_METHODS, resolve_alpha, solve_method
from src.settings import SolverSettings, get_settings

logger = logging.getLogger(__name__)

TOOLKIT_VERSION = "0.1.0"


class RunConfig(BaseModel):
    cases: List[Path] = Field(default_factory=list)
    methods: List[int] = Field(default_factory=list)
    baselines: List[Path] = Field(default_factory=list)
    iters: int = Field(4, ge=1)
    repeat: int = Field(100, ge=0)
    format: Literal["text", "csv", "report"] = "text"
    out: Optional[Path] = None
    pf_vset: Literal["case", "baseline", "solution"] = "case"
    loss_split: Literal["half", "from", "to"] = "half"
    alpha: Optional[Path] = None
    objective_source: Literal["validated", "solution"] = "validated"
    pf_tol: Optional[float] = Field(None, gt=0)
    qp_tol: Optional[float] = Field(None, gt=0)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, methods: List[int]) -> List[int]:
        unknown = sorted(set(methods) - set(ALL_METHODS))
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from 1-7")
        return sorted(set(methods))

    @model_validator(mode="after")
    def _baselines_align(self):
        if self.baselines and len(self.baselines) != len(self.cases):
            raise ValueError(f"{len(self.baselines)} baselines given for {len(self.cases)} cases")
        if self.pf_vset == "baseline" and not self.baselines:
            raise ValueError("--pf-vset baseline needs a baseline for every case")
        return self

    def solver_settings(self) -> SolverSettings:
        base = get_settings()
        overrides = {}
        if self.pf_tol is not None:
            overrides["pf_tolerance"] = self.pf_tol
        if self.qp_tol is not None:
            overrides["qp_tolerance"] = self.qp_tol
        if self.workers is not None:
            overrides["workers"] = self.workers
        overrides["loss_iterations"] = self.iters
        return base.model_copy(update=overrides)


class RadarPolygon(BaseModel):
    scores: Dict[str, float]
    area: float


class BenchmarkReport(BaseModel):
    version: str = TOOLKIT_VERSION
    created: str = ""
    platform: str = ""
    config: dict = Field(default_factory=dict)
    fixtures: Dict[str, str] = Field(default_factory=dict)
    cells: List[MetricsReport] = Field(default_factory=list)
    radar: Dict[int, RadarPolygon] = Field(default_factory=dict)

    @property
    def failed_cells(self) -> List[MetricsReport]:
        return [c for c in self.cells if c.failed]


@dataclass
class CaseContext:
    name: str
    net: Network
    baseline: Optional[BaselineSolution]
    alpha: Optional[np.ndarray]


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _setpoints(ctx: CaseContext, solution, choice: str) -> Optional[np.ndarray]:
    net = ctx.net
    if choice == "baseline":
        return ctx.baseline.v_mag[net.gen_bus]
    if choice == "solution":
        return solution.v_mag[net.gen_bus]
    return None


def run_cell(method: int, ctx: CaseContext, config: RunConfig, settings: SolverSettings) -> MetricsReport:
    """One (method, case) cell without timing. Domain errors mark the cell FAILED."""
    net = ctx.net
    try:
        options = {}
        if method in LOSS_METHODS:
            options = dict(iters=config.iters, split=config.loss_split, alpha=ctx.alpha)
        solution = solve_method(method, net, settings, **options)

        state = solve_power_flow(net, solution.pg, _setpoints(ctx, solution, config.pf_vset), settings)
        metrics = dict(method=method, case=ctx.name, n_bus=net.n_bus, pf_iterations=state.iterations)

        feasibility = None
        if ctx.baseline is not None:
            model = build_method(1 if method in LOSS_METHODS else method, net)
            metrics["approx_error"] = approx_error(model, ctx.baseline)
            objective = solution.objective if config.objective_source == "solution" else None
            eps_f, eps_pg, eps_v = optimality_errors(state, net, ctx.baseline, objective)
            metrics.update(eps_f=eps_f, eps_pg=eps_pg, eps_v=eps_v)
            feasibility = feasibility_check(state, net, ctx.baseline)
            metrics["eps_v_out"] = feasibility.eps_v_out
        else:
            v_max = np.array([b.v_max for b in net.buses])
            v_min = np.array([b.v_min for b in net.buses])
            above, below = int(np.sum(state.v_mag > v_max)), int(np.sum(state.v_mag < v_min))
            metrics.update(n_out=above + below, n_above=above, n_below=below)

        if feasibility is not None:
            metrics.update(n_out=feasibility.n_out, n_above=feasibility.n_above, n_below=feasibility.n_below)
        metrics["out_ratio"] = metrics["n_out"] / net.n_bus if net.n_bus else 0.0

        logger.info(
            f"method {method} on {ctx.name}: cost {price_dispatch(net, state.generator_output):.2f}, "
            f"{metrics['n_out']} voltage violations"
        )
        return MetricsReport(**metrics)
    except PowerLinError as e:
        logger.error(f"method {method} on {ctx.name} failed: {e}", exc_info=True)
        return MetricsReport(method=method, case=ctx.name, n_bus=net.n_bus, status="FAILED", error=str(e))


def load_contexts(config: RunConfig, settings: SolverSettings) -> List[CaseContext]:
    """Parses and validates cases, baselines and the α map. IO and config problems propagate."""
    alpha_map = None
    if config.alpha is not None:
        if not config.alpha.is_file():
            raise FileNotFoundError(f"alpha map not found: {config.alpha}")
        alpha_map = json.loads(config.alpha.read_text(encoding="utf-8"))

    contexts = []
    for k, case_path in enumerate(config.cases):
        net = load_case(case_path)
        violations = validate_network(net)
        if violations:
            raise InvalidNetwork(str(case_path), violations)
        baseline = None
        if config.baselines:
            baseline = load_baseline(config.baselines[k], net, settings.baseline_tolerance)
        alpha = resolve_alpha(net, alpha_map) if alpha_map else None
        contexts.append(CaseContext(name=net.name or Path(case_path).stem, net=net, baseline=baseline, alpha=alpha))
    return contexts


def radar_data(cells: List[MetricsReport]) -> Dict[int, RadarPolygon]:
    """Per-method axis scores and polygon areas. Raises IncompleteMatrix."""
    scores = score_methods(aggregate_axes(cells))
    return {
        m: RadarPolygon(scores=per_axis, area=polygon_area([per_axis[a] for a in AXES]))
        for m, per_axis in scores.items()
    }


def run_benchmark(config: RunConfig) -> BenchmarkReport:
    settings = config.solver_settings()
    contexts = load_contexts(config, settings)

    fixtures = {str(p): sha256_of(Path(p)) for p in list(config.cases) + list(config.baselines)}
    if config.alpha is not None:
        fixtures[str(config.alpha)] = sha256_of(config.alpha)

    jobs = [(m, ctx) for ctx in contexts for m in config.methods]
    logger.info(f"running {len(jobs)} cells on {settings.workers} workers")
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        cells = list(pool.map(lambda job: run_cell(job[0], job[1], config, settings), jobs))

    if config.repeat > 0:
        logger.info(f"timing {len(jobs)} cells, {config.repeat} repetitions each")
        for k, (m, ctx) in enumerate(jobs):
            if cells[k].failed:
                continue
            options = {}
            if m in LOSS_METHODS:
                options = dict(iters=config.iters, split=config.loss_split, alpha=ctx.alpha)
            try:
                seconds = time_method(m, ctx.net, config.repeat, settings, **options)
            except PowerLinError as e:
                logger.error(f"timing method {m} on {ctx.name} failed: {e}", exc_info=True)
                cells[k] = cells[k].model_copy(update={"status": "FAILED", "error": str(e)})
                continue
            cells[k] = cells[k].model_copy(update={"wall_time_s": seconds})

    report = BenchmarkReport(
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        platform=platform.platform(),
        config=config.model_dump(mode="json"),
        fixtures=fixtures,
        cells=cells,
    )
    if cells and config.baselines and not report.failed_cells:
        try:
            report.radar = radar_data(cells)
        except IncompleteMatrix as e:
            logger.warning(f"radar scores skipped: {e}")
    return report
