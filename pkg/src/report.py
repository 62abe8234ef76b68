"""
Report emitters: rich text tables, comma-separated rows, the JSON report and
the radar chart.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from src.benchmark import BenchmarkReport, RadarPolygon  # noqa: E402
from src.evaluation import AXES, MetricsReport  # noqa: E402

logger = logging.getLogger(__name__)

CSV_FIELDS = [
    "method", "case", "status", "approx_error", "eps_f", "eps_pg", "eps_v",
    "n_bus", "n_out", "n_above", "n_below", "out_ratio", "eps_v_out", "wall_time_s",
    "pf_iterations", "error",
]


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _matrix_table(title: str, cells: List[MetricsReport], columns: Dict[str, str]) -> Table:
    table = Table(title=title)
    table.add_column("Method", justify="right")
    table.add_column("Case")
    for header in columns:
        table.add_column(header, justify="right")
    for cell in sorted(cells, key=lambda c: (c.case, c.method)):
        if cell.failed:
            table.add_row(str(cell.method), cell.case, *(["FAILED"] + ["-"] * (len(columns) - 1)))
            continue
        table.add_row(str(cell.method), cell.case, *(_fmt(getattr(cell, f)) for f in columns.values()))
    return table


def radar_table(radar: Dict[int, RadarPolygon]) -> Table:
    table = Table(title="Radar scores (1-100)")
    table.add_column("Method", justify="right")
    for axis in AXES:
        table.add_column(axis, justify="right")
    table.add_column("Area", justify="right")
    for method in sorted(radar):
        poly = radar[method]
        table.add_row(str(method), *(f"{poly.scores[a]:.1f}" for a in AXES), f"{poly.area:.0f}")
    return table


def render_text(report: BenchmarkReport, console: Console):
    console.print(f"powerlin {report.version} | {report.created} | {report.platform}")
    console.print(_matrix_table("Approximation error", report.cells, {"ε": "approx_error"}))
    console.print(_matrix_table("Optimality", report.cells, {"ε_f": "eps_f", "ε_Pg": "eps_pg", "ε_V": "eps_v"}))
    console.print(_matrix_table(
        "Feasibility", report.cells,
        {"N_out/N_b": "out_ratio", "N_above": "n_above", "N_below": "n_below", "ε_V^out": "eps_v_out"},
    ))
    console.print(_matrix_table("Execution time", report.cells, {"seconds": "wall_time_s"}))
    if report.radar:
        console.print(radar_table(report.radar))
    for cell in report.failed_cells:
        console.print(f"[red]FAILED[/red] method {cell.method} on {cell.case}: {cell.error}")


def to_csv(report: BenchmarkReport) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for cell in report.cells:
        row = cell.model_dump()
        writer.writerow({k: _csv_value(row.get(k)) for k in CSV_FIELDS})
    return buffer.getvalue()


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form
    return value


def cells_from_csv(text: str) -> List[MetricsReport]:
    """Inverse of to_csv for the per-cell rows."""
    cells = []
    for row in csv.DictReader(io.StringIO(text)):
        cells.append(MetricsReport(**{k: v for k, v in row.items() if v != ""}))
    return cells


def write_report(report: BenchmarkReport, fmt: str, out: Optional[Union[str, Path]] = None):
    if fmt == "report":
        payload = report.model_dump_json(indent=2)
    elif fmt == "csv":
        payload = to_csv(report)
    else:
        buffer = io.StringIO()
        render_text(report, Console(file=buffer, width=120, force_terminal=False))
        payload = buffer.getvalue()

    if out is None:
        Console().print(payload, markup=False, highlight=False)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(payload, encoding="utf-8")
    logger.info(f"{fmt} report written to {out}")


def load_report(path: Union[str, Path]) -> BenchmarkReport:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"report not found: {path}")
    return BenchmarkReport.model_validate_json(path.read_text(encoding="utf-8"))


def render_radar_svg(radar: Dict[int, RadarPolygon], path: Union[str, Path]):
    """Polar plot of every method's polygon, saved as SVG."""
    angles = np.linspace(0, 2 * np.pi, len(AXES), endpoint=False).tolist()
    angles += angles[:1]

    fig, ax = plt.subplots(figsize=(8, 8), subplot_kw=dict(polar=True))
    for method in sorted(radar):
        values = [radar[method].scores[a] for a in AXES]
        values += values[:1]
        ax.plot(angles, values, linewidth=2, label=f"Method {method}")
        ax.fill(angles, values, alpha=0.15)
    ax.set_ylim(0, 100)
    ax.set_thetagrids(np.degrees(angles[:-1]), AXES)
    ax.legend(loc="upper right", bbox_to_anchor=(1.3, 1.1))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    logger.info(f"radar chart saved to {path}")
