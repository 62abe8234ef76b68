import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json

import pytest

from src.ac_engine import solve_power_flow
from src.baseline_io import baseline_from_state, dump_baseline, load_baseline
from src.bench_cli import main
from src.benchmark import BenchmarkReport, RunConfig, run_benchmark
from src.errors import InvalidNetwork
from src.evaluation import MetricsReport, price_dispatch
from src.matpower_parser import load_case
from src.report import CSV_FIELDS, cells_from_csv, load_report, to_csv
from toy_networks import CASE14, ISLANDED_CASE, THREE_BUS_CASE, TWO_BUS_CASE, write_case


@pytest.fixture
def case14_baseline_file(tmp_path):
    """A balanced case14 operating point standing in for an AC-OPF optimum."""
    net = load_case(CASE14)
    state = solve_power_flow(net, [g.p_gen for g in net.generators])
    path = tmp_path / "case14_baseline.json"
    dump_baseline(net, baseline_from_state(net, state, price_dispatch(net, state.generator_output)), path)
    return path


def scored_cell(method, **overrides):
    values = dict(
        method=method, case="case14", approx_error=0.01, eps_f=0.01, eps_pg=0.1, eps_v=0.01,
        n_bus=14, n_out=0, n_above=0, n_below=0, out_ratio=0.0, eps_v_out=0.0, wall_time_s=0.5,
    )
    values.update(overrides)
    return MetricsReport(**values)


def test_validate_case14(capsys):
    assert main(["validate", str(CASE14)]) == 0
    out = capsys.readouterr().out
    assert "OK, NR converged in" in out
    assert "14 buses" in out


def test_validate_missing_file():
    assert main(["validate", "no/such/case.m"]) == 1


def test_validate_reports_syntax_position(tmp_path, capsys):
    path = write_case(tmp_path, TWO_BUS_CASE.replace("\t2\t1\t50\t10", "\t2\t1\t5x0\t10"))
    assert main(["validate", str(path)]) == 2
    assert "line 8, column 6" in capsys.readouterr().out


def test_validate_reports_islands(tmp_path, capsys):
    path = write_case(tmp_path, ISLANDED_CASE)
    assert main(["validate", str(path)]) == 2
    assert "connectivity violation" in capsys.readouterr().out


def test_run_writes_csv(tmp_path):
    out = tmp_path / "matrix.csv"
    code = main([
        "run", "--cases", str(CASE14), "--methods", "1,6",
        "--repeat", "0", "--format", "csv", "--out", str(out),
    ])
    assert code == 0
    text = out.read_text()
    assert text.splitlines()[0] == ",".join(CSV_FIELDS)
    cells = cells_from_csv(text)
    assert [c.method for c in cells] == [1, 6]
    assert all(not c.failed for c in cells)
    # without a baseline only the limit checks are filled in
    assert cells[0].approx_error is None
    assert cells[0].n_out is not None


def test_run_with_missing_baseline_is_a_config_error(tmp_path):
    code = main(["run", "--cases", str(CASE14), "--baselines", str(tmp_path / "nope.json"), "--repeat", "0"])
    assert code == 1


@pytest.mark.parametrize("methods", ["1,x", "8", "0,1"])
def test_run_rejects_bad_method_lists(methods):
    assert main(["run", "--cases", str(CASE14), "--methods", methods, "--repeat", "0"]) == 1


def test_run_rejects_unknown_flag():
    with pytest.raises(SystemExit) as info:
        main(["run", "--cases", str(CASE14), "--no-such-flag"])
    assert info.value.code == 1


def test_run_with_empty_method_list(tmp_path):
    out = tmp_path / "empty.json"
    code = main(["run", "--cases", str(CASE14), "--methods", "", "--format", "report", "--out", str(out)])
    assert code == 0
    assert load_report(out).cells == []


def test_score_without_baselines_is_incomplete(tmp_path):
    report_path = tmp_path / "report.json"
    assert main([
        "run", "--cases", str(CASE14), "--methods", "1", "--repeat", "0",
        "--format", "report", "--out", str(report_path),
    ]) == 0
    assert main(["score", "--in", str(report_path)]) == 2


def test_score_writes_radar(tmp_path):
    report = BenchmarkReport(cells=[
        scored_cell(1, approx_error=0.06, wall_time_s=0.1),
        scored_cell(2, approx_error=0.005, wall_time_s=1.0),
        scored_cell(6, approx_error=None, eps_f=0.005, wall_time_s=0.4),
    ])
    report_path = tmp_path / "report.json"
    report_path.write_text(report.model_dump_json())
    radar_path, svg_path = tmp_path / "radar.json", tmp_path / "radar.svg"

    assert main(["score", "--in", str(report_path), "--out", str(radar_path), "--svg", str(svg_path)]) == 0
    radar = json.loads(radar_path.read_text())
    assert set(radar) == {"1", "2", "6"}
    assert radar["2"]["scores"]["Accuracy"] == pytest.approx(100.0)
    assert radar["1"]["scores"]["Speed"] == pytest.approx(100.0)
    assert radar["2"]["scores"]["Speed"] == pytest.approx(1.0)
    assert svg_path.read_text().lstrip().startswith("<?xml")


def test_score_missing_report():
    assert main(["score", "--in", "no/such/report.json"]) == 1


def test_oracle_command_writes_baseline(tmp_path, capsys):
    case = write_case(tmp_path, THREE_BUS_CASE, "three_bus.m")
    out = tmp_path / "three_bus_baseline.json"
    assert main(["oracle", str(case), "--step", "0.1", "--out", str(out)]) == 0
    assert "objective" in capsys.readouterr().out
    baseline = load_baseline(out, load_case(case))
    assert baseline.pg[1] == pytest.approx(0.4, abs=1e-9)


def test_oracle_rejects_large_cases():
    assert main(["oracle", str(CASE14)]) == 1


def test_benchmark_with_baseline_produces_radar(case14_baseline_file):
    config = RunConfig(cases=[CASE14], methods=[1, 2, 6], baselines=[case14_baseline_file], repeat=1)
    report = run_benchmark(config)

    assert [c.method for c in report.cells] == [1, 2, 6]
    assert report.failed_cells == []
    by_method = {c.method: c for c in report.cells}
    assert by_method[6].approx_error == pytest.approx(by_method[1].approx_error)
    assert by_method[2].approx_error < by_method[1].approx_error
    assert all(c.wall_time_s > 0 for c in report.cells)
    assert set(report.radar) == {1, 2, 6}
    assert str(CASE14) in report.fixtures and len(report.fixtures) == 2

    rows = cells_from_csv(to_csv(report))
    assert rows == report.cells
    # the CSV carries the cell rows only, radar data stays in the JSON report
    assert set(CSV_FIELDS) == set(MetricsReport.model_fields)
    assert "radar" not in to_csv(report)


def test_text_report_lists_every_block(tmp_path, case14_baseline_file):
    out = tmp_path / "matrix.txt"
    code = main([
        "run", "--cases", str(CASE14), "--baselines", str(case14_baseline_file),
        "--methods", "1,4", "--repeat", "0", "--out", str(out),
    ])
    assert code == 0
    text = out.read_text()
    for title in ("Approximation error", "Optimality", "Feasibility", "Execution time"):
        assert title in text


def test_benchmark_rejects_a_case_that_fails_validation(tmp_path):
    path = write_case(tmp_path, THREE_BUS_CASE.replace("\t2\t2\t0\t0", "\t2\t3\t0\t0", 1), "two_slacks.m")
    with pytest.raises(InvalidNetwork) as info:
        run_benchmark(RunConfig(cases=[path], methods=[1], repeat=0))
    assert "network: multiple slack buses [1, 2]" in info.value.violations


def test_run_on_an_islanded_case_is_a_config_error(tmp_path):
    path = write_case(tmp_path, ISLANDED_CASE)
    assert main(["run", "--cases", str(path), "--methods", "1", "--repeat", "0"]) == 1
