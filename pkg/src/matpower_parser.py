"""
MATPOWER Case Parser

Reads the `mpc.*` assignments of a MATPOWER case file into a CaseFileAst,
lowers the AST into a per-unit Network, and writes a Network back out as
case-file text. Only baseMVA and the bus, gen, branch and gencost matrices
are interpreted; every other assignment is kept verbatim.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.core_model import (
    Branch, Bus, BusKind, CostCurve, Generator, Network, to_per_unit, to_physical,
)
from src.errors import CaseSyntaxError, InvalidBusType, MissingMatrix, UnsupportedCostModel

logger = logging.getLogger(__name__)

MATRIX_BLOCKS = ("bus", "gen", "branch", "gencost")
MIN_COLUMNS = {"bus": 13, "branch": 13, "gen": 10, "gencost": 4}

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eEdD][+-]?\d+)?$")
_SPECIAL = {"inf": math.inf, "+inf": math.inf, "-inf": -math.inf, "nan": math.nan}
_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*")
_FUNCTION = re.compile(r"^\s*function\s+(\w+)\s*=\s*(\w+)\s*;?\s*$")
_TOKEN = re.compile(r"\]|;|[^\s,;\]]+")

POLYNOMIAL_COST = 2
PIECEWISE_COST = 1


@dataclass
class MatrixBlock:
    name: str
    rows: List[List[float]]
    line_numbers: List[int] = field(default_factory=list, compare=False)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.rows[0]) if self.rows else 0


@dataclass
class CaseFileAst:
    """Raw numeric content of a case file, with source lines for diagnostics."""
    name: str
    base_mva: float
    matrices: Dict[str, MatrixBlock]
    extras: List[str] = field(default_factory=list)
    version: str = "2"


def _strip_comment(line: str) -> str:
    """Cuts a `%` comment, ignoring percent signs inside single-quoted strings."""
    in_string = False
    for k, ch in enumerate(line):
        if ch == "'":
            in_string = not in_string
        elif ch == "%" and not in_string:
            return line[:k]
    return line


def _to_float(token: str, line: int, column: int) -> float:
    special = _SPECIAL.get(token.lower())
    if special is not None:
        return special
    if not _NUMBER.match(token):
        raise CaseSyntaxError(f"invalid numeric entry '{token}'", line, column)
    return float(token.replace("d", "e").replace("D", "e"))


def _read_matrix(lines: List[str], start: int, offset: int, name: str) -> Tuple[MatrixBlock, int]:
    """
    Reads a bracketed matrix whose '[' sits just before `offset` on line
    `start`. Returns the block and the index of the line holding ']'.
    """
    rows: List[List[float]] = []
    row_lines: List[int] = []
    current: List[float] = []
    current_line = start + 1

    def close_row():
        nonlocal current
        if current:
            rows.append(current)
            row_lines.append(current_line)
            current = []

    idx = start
    while idx < len(lines):
        code = _strip_comment(lines[idx])
        begin = offset if idx == start else 0
        for match in _TOKEN.finditer(code, begin):
            token = match.group(0)
            if token == "]":
                close_row()
                tail = code[match.end():].strip()
                if tail not in ("", ";"):
                    raise CaseSyntaxError(f"unexpected text after matrix: '{tail}'", idx + 1, match.end() + 1)
                _check_rectangular(name, rows, row_lines)
                return MatrixBlock(name=name, rows=rows, line_numbers=row_lines), idx
            if token == ";":
                close_row()
                continue
            if not current:
                current_line = idx + 1
            current.append(_to_float(token, idx + 1, match.start() + 1))
        # a newline inside brackets ends the row as well
        close_row()
        idx += 1

    raise CaseSyntaxError(f"unterminated matrix mpc.{name}", start + 1, offset)


def _check_rectangular(name: str, rows: List[List[float]], row_lines: List[int]):
    if not rows:
        return
    width = len(rows[0])
    for row, line in zip(rows, row_lines):
        if len(row) != width:
            raise CaseSyntaxError(f"mpc.{name} row has {len(row)} columns, expected {width}", line, 1)


def _statement_end(lines: List[str], start: int, closer: str) -> int:
    idx = start
    while idx < len(lines):
        if closer in _strip_comment(lines[idx]):
            return idx
        idx += 1
    raise CaseSyntaxError(f"unterminated block, missing '{closer}'", start + 1, 1)


def parse_case(text: str) -> CaseFileAst:
    """
    Parses MATPOWER case-file text into a CaseFileAst.
    Raises CaseSyntaxError (with line and column) or MissingMatrix.
    """
    if not text or not text.strip():
        raise CaseSyntaxError("empty case file", 1, 1)

    lines = text.splitlines()
    name = "case"
    version = "2"
    base_mva: Optional[float] = None
    matrices: Dict[str, MatrixBlock] = {}
    extras: List[str] = []

    idx = 0
    while idx < len(lines):
        raw = lines[idx]
        code = _strip_comment(raw)
        if not code.strip():
            idx += 1
            continue

        func = _FUNCTION.match(code)
        if func:
            name = func.group(2)
            idx += 1
            continue

        assign = _ASSIGN.match(code)
        if not assign:
            column = len(code) - len(code.lstrip()) + 1
            raise CaseSyntaxError(f"unexpected statement '{code.strip()}'", idx + 1, column)

        key = assign.group(1)
        rhs_at = assign.end()
        rhs = code[rhs_at:].strip()

        if rhs.startswith("["):
            bracket = code.index("[", rhs_at)
            if key in MATRIX_BLOCKS:
                block, end = _read_matrix(lines, idx, bracket + 1, key)
                matrices[key] = block
            else:
                end = _statement_end(lines, idx, "]")
                extras.append("\n".join(lines[idx:end + 1]))
            idx = end + 1
            continue

        if rhs.startswith("{"):
            end = _statement_end(lines, idx, "}")
            extras.append("\n".join(lines[idx:end + 1]))
            idx = end + 1
            continue

        value = rhs.rstrip(";").strip()
        if key == "baseMVA":
            base_mva = _to_float(value, idx + 1, rhs_at + 1)
        elif key == "version":
            version = value.strip("'\"")
        else:
            extras.append(raw)
        idx += 1

    if base_mva is None:
        raise MissingMatrix("baseMVA")
    for block in MATRIX_BLOCKS:
        if block not in matrices:
            raise MissingMatrix(block)

    for block, minimum in MIN_COLUMNS.items():
        mat = matrices[block]
        if mat.rows and mat.n_cols < minimum:
            raise CaseSyntaxError(
                f"mpc.{block} has {mat.n_cols} columns, need at least {minimum}",
                mat.line_numbers[0], 1,
            )

    n_gen, n_cost = matrices["gen"].n_rows, matrices["gencost"].n_rows
    if n_cost not in (n_gen, 2 * n_gen):
        line = matrices["gencost"].line_numbers[0] if n_cost else 1
        raise CaseSyntaxError(f"mpc.gencost has {n_cost} rows for {n_gen} generators", line, 1)

    logger.debug(
        f"Parsed case '{name}': {matrices['bus'].n_rows} buses, "
        f"{matrices['branch'].n_rows} branches, {n_gen} generators"
    )
    return CaseFileAst(name=name, base_mva=base_mva, matrices=matrices, extras=extras, version=version)


def _lower_cost(row: List[float], line: int) -> CostCurve:
    model = int(row[0])
    if model == PIECEWISE_COST:
        raise UnsupportedCostModel(f"line {line}: piecewise-linear gencost (model 1) is not supported")
    if model != POLYNOMIAL_COST:
        raise UnsupportedCostModel(f"line {line}: unknown gencost model code {model}")
    n = int(row[3])
    if len(row) < 4 + n:
        raise CaseSyntaxError(f"gencost row declares {n} coefficients but has {len(row) - 4}", line, 1)
    # MATPOWER lists the highest degree first
    coefficients = tuple(reversed(row[4:4 + n])) if n > 0 else (0.0,)
    return CostCurve(coefficients=coefficients, startup=row[1], shutdown=row[2])


def lower_case(ast: CaseFileAst) -> Network:
    """
    Maps MATPOWER columns onto domain types, drops out-of-service branches and
    generators, converts degrees to radians and MW to per-unit.
    """
    buses = []
    bus_block = ast.matrices["bus"]
    for row, line in zip(bus_block.rows, bus_block.line_numbers or [0] * bus_block.n_rows):
        code = int(row[1])
        if code not in (1, 2, 3):
            raise InvalidBusType(f"line {line}: bus {int(row[0])} has type code {code}")
        buses.append(Bus(
            id=int(row[0]),
            kind=BusKind(code),
            p_load=row[2],
            q_load=row[3],
            shunt_g=row[4],
            shunt_b=row[5],
            v_mag=row[7],
            v_ang=math.radians(row[8]),
            base_kv=row[9],
            v_max=row[11],
            v_min=row[12],
        ))

    branches = []
    for row in ast.matrices["branch"].rows:
        if row[10] == 0:
            continue
        branches.append(Branch(
            from_bus=int(row[0]),
            to_bus=int(row[1]),
            r=row[2],
            x=row[3],
            b_charge=row[4],
            tap=row[8] if row[8] != 0 else 1.0,
            shift=math.radians(row[9]),
            status=True,
        ))

    generators = []
    gen_block, cost_block = ast.matrices["gen"], ast.matrices["gencost"]
    cost_lines = cost_block.line_numbers or [0] * cost_block.n_rows
    for k, row in enumerate(gen_block.rows):
        cost = _lower_cost(cost_block.rows[k], cost_lines[k])
        if row[7] <= 0:
            continue
        generators.append(Generator(
            bus=int(row[0]),
            p_gen=row[1],
            q_max=row[3],
            q_min=row[4],
            v_set=row[5],
            p_max=row[8],
            p_min=row[9],
            status=True,
            cost=cost,
        ))

    raw = Network(
        name=ast.name,
        base_mva=ast.base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        per_unit=False,
        extras=tuple(ast.extras),
    )
    return to_per_unit(raw)


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "Inf" if value > 0 else "-Inf"
    if math.isnan(value):
        return "NaN"
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    # repr is the shortest string that reads back to the same double
    return repr(float(value))


def _matrix_lines(name: str, header: str, rows: List[List[float]]) -> List[str]:
    out = [f"%\t{header}", f"mpc.{name} = ["]
    for row in rows:
        out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    out.append("];")
    return out


def case_identifier(name: str) -> str:
    """Turns a network name into a MATPOWER function name (`three-bus` -> `three_bus`)."""
    ident = re.sub(r"\W", "_", name.strip())
    if not ident or ident[0].isdigit():
        ident = f"case_{ident}"
    return ident


def serialize_case(net: Network) -> str:
    """Writes a Network as MATPOWER case text that parses back to the same Network."""
    phys = to_physical(net)
    lines = [
        f"function mpc = {case_identifier(phys.name)}",
        "%% written by powerlin; powers in MW, angles in degrees",
        "",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(phys.base_mva)};",
        "",
    ]

    bus_rows = [
        [bus.id, bus.kind.value, bus.p_load, bus.q_load, bus.shunt_g, bus.shunt_b, 1,
         bus.v_mag, math.degrees(bus.v_ang), bus.base_kv, 1, bus.v_max, bus.v_min]
        for bus in phys.buses
    ]
    lines += _matrix_lines("bus", "bus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin", bus_rows)
    lines.append("")

    gen_rows = [
        [g.bus, g.p_gen, 0, g.q_max, g.q_min, g.v_set, phys.base_mva, int(g.status), g.p_max, g.p_min]
        for g in phys.generators
    ]
    lines += _matrix_lines("gen", "bus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin", gen_rows)
    lines.append("")

    branch_rows = [
        [br.from_bus, br.to_bus, br.r, br.x, br.b_charge, 0, 0, 0, br.tap,
         math.degrees(br.shift), int(br.status), -360, 360]
        for br in phys.branches
    ]
    lines += _matrix_lines(
        "branch", "fbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax", branch_rows
    )
    lines.append("")

    cost_rows = [
        [POLYNOMIAL_COST, g.cost.startup, g.cost.shutdown, len(g.cost.coefficients)]
        + list(reversed(g.cost.coefficients))
        for g in phys.generators
    ]
    width = max((len(r) for r in cost_rows), default=0)
    # pad shorter curves with leading zero coefficients to keep the matrix rectangular
    cost_rows = [
        r[:3] + [width - 4] + [0.0] * (width - len(r)) + r[4:]
        for r in cost_rows
    ]
    lines += _matrix_lines("gencost", "model\tstartup\tshutdown\tn\tc(n-1)\t...\tc0", cost_rows)

    if phys.extras:
        lines.append("")
        lines.extend(phys.extras)
    lines.append("")
    return "\n".join(lines)


def load_case(path) -> Network:
    """Reads, parses and lowers a case file from disk."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"case not found: {path}")
    logger.debug(f"Loading case file {path}")
    return lower_case(parse_case(path.read_text()))
