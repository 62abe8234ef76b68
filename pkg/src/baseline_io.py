"""
Baseline I/O

Reads and writes the reference-optimum document. Powers are MW and angles
degrees on disk, per-unit and radians in memory.

    {
      "version": 1,
      "case": "case14",
      "objective": 8081.52,
      "bus": [[id, vm, va_deg], ...],
      "gen": [[bus, pg_mw], ...],
      "branch": [[from, to, pij_mw], ...]
    }

Exporting one from a MATPOWER result struct `r`:
    bus = [r.bus(:,1) r.bus(:,8) r.bus(:,9)], gen = r.gen(:,1:2),
    branch = r.branch(:,[1 2 14]), objective = r.f.
"""

import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from src.ac_engine import SteadyState, build_admittance
from src.core_model import BaselineSolution, Network, to_per_unit
from src.errors import BaselineMismatch
from src.settings import get_settings

logger = logging.getLogger(__name__)


class BaselineDocument(BaseModel):
    version: int = 1
    case: str = ""
    objective: float
    bus: List[List[float]] = Field(default_factory=list)
    gen: List[List[float]] = Field(default_factory=list)
    branch: List[List[float]] = Field(default_factory=list)


def _rows(doc_rows: List[List[float]], width: int, block: str) -> np.ndarray:
    arr = np.array(doc_rows, dtype=float).reshape(-1, width) if doc_rows else np.zeros((0, width))
    if doc_rows and any(len(row) != width for row in doc_rows):
        raise BaselineMismatch(f"baseline '{block}' rows must have {width} entries")
    return arr


def balance_residual(net: Network, baseline: BaselineSolution) -> float:
    """Largest per-bus active power mismatch of the baseline state, per-unit."""
    net = to_per_unit(net)
    v = baseline.v_mag * np.exp(1j * baseline.v_ang)
    p_calc = (v * np.conj(build_admittance(net).ybus @ v)).real
    p_spec = -net.load_vector()
    np.add.at(p_spec, net.gen_bus, baseline.pg)
    return float(np.max(np.abs(p_calc - p_spec), initial=0.0))


def parse_baseline(doc: BaselineDocument, net: Network, tolerance: Optional[float] = None) -> BaselineSolution:
    """Aligns a document with `net` and checks the AC balance of the stored state."""
    net = to_per_unit(net)
    tolerance = get_settings().baseline_tolerance if tolerance is None else tolerance
    bus = _rows(doc.bus, 3, "bus")
    gen = _rows(doc.gen, 2, "gen")
    branch = _rows(doc.branch, 3, "branch")

    if (len(bus), len(gen), len(branch)) != (net.n_bus, net.n_gen, net.n_branch):
        raise BaselineMismatch(
            f"baseline sizes (bus {len(bus)}, gen {len(gen)}, branch {len(branch)}) do not match "
            f"'{net.name}' ({net.n_bus}, {net.n_gen}, {net.n_branch})"
        )

    by_id = {int(row[0]): row for row in bus}
    missing = [b.id for b in net.buses if b.id not in by_id]
    if missing:
        raise BaselineMismatch(f"baseline lacks buses {missing}")
    v_mag = np.array([by_id[b.id][1] for b in net.buses])
    v_ang = np.radians([by_id[b.id][2] for b in net.buses])

    for k, (g, row) in enumerate(zip(net.generators, gen)):
        if int(row[0]) != g.bus:
            raise BaselineMismatch(f"baseline generator {k + 1} sits at bus {int(row[0])}, case has {g.bus}")
    for k, (br, row) in enumerate(zip(net.branches, branch)):
        if (int(row[0]), int(row[1])) != (br.from_bus, br.to_bus):
            raise BaselineMismatch(
                f"baseline branch {k + 1} is {int(row[0])}-{int(row[1])}, case has {br.from_bus}-{br.to_bus}"
            )

    baseline = BaselineSolution(
        v_mag=v_mag,
        v_ang=v_ang,
        pg=gen[:, 1] / net.base_mva,
        objective=doc.objective,
        branch_flow=branch[:, 2] / net.base_mva,
        case=doc.case or net.name,
    )
    residual = balance_residual(net, baseline)
    if not residual <= tolerance:
        raise BaselineMismatch(
            f"baseline violates AC balance by {residual:.3e} p.u. (tolerance {tolerance:.1e})"
        )
    logger.debug(f"baseline for '{net.name}' balances to {residual:.2e} p.u.")
    return baseline


def load_baseline(path: Union[str, Path], net: Network, tolerance: Optional[float] = None) -> BaselineSolution:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"baseline not found: {path}")
    doc = BaselineDocument.model_validate_json(path.read_text(encoding="utf-8"))
    return parse_baseline(doc, net, tolerance)


def baseline_document(net: Network, baseline: BaselineSolution) -> BaselineDocument:
    net = to_per_unit(net)
    return BaselineDocument(
        case=baseline.case or net.name,
        objective=baseline.objective,
        bus=[[b.id, float(vm), math.degrees(va)] for b, vm, va in zip(net.buses, baseline.v_mag, baseline.v_ang)],
        gen=[[g.bus, float(p) * net.base_mva] for g, p in zip(net.generators, baseline.pg)],
        branch=[
            [br.from_bus, br.to_bus, float(p) * net.base_mva]
            for br, p in zip(net.branches, baseline.branch_flow)
        ],
    )


def dump_baseline(net: Network, baseline: BaselineSolution, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = baseline_document(net, baseline)
    path.write_text(json.dumps(doc.model_dump(), indent=2), encoding="utf-8")
    logger.info(f"baseline written to {path}")


def baseline_from_state(net: Network, state: SteadyState, objective: float, case: str = "") -> BaselineSolution:
    """Packs a converged AC state as a reference optimum."""
    return BaselineSolution(
        v_mag=state.v_mag,
        v_ang=state.v_ang,
        pg=state.generator_output,
        objective=objective,
        branch_flow=state.branch_flow_from,
        case=case or net.name,
    )
