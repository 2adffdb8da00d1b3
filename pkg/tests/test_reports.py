import csv
from pathlib import Path

import numpy as np
import orjson
import pytest

from convex_cam.batch import (
    SCHEMA_VERSION,
    EncounterMetrics,
    ImpulseRow,
    KeepOutRow,
    RunEntry,
    RunReport,
    TraceRow,
    compute_aggregates,
)
from convex_cam.reports import contour_points, emit_reports, histogram_rows, write_study, write_sweep
from convex_cam.scvx import SweepPoint
from convex_cam.socp import SolverStatus
from convex_cam.studies import StudyPoint


def _impulse(node: int, time_to_ca: float) -> ImpulseRow:
    return ImpulseRow(
        node=node, time_to_ca_s=time_to_ca, rtn_mps=(0.0, 0.1, 0.0), eci_mps=(0.1, 0.0, 0.0), magnitude_mps=0.1
    )


def _report() -> RunReport:
    metrics = EncounterMetrics(d2=2.5, d2_bar=2.4, pc_approx=1e-5, pc_max=9e-5, miss_distance_km=0.8, tca_shift_s=0.01)
    converged = RunEntry(
        id="evt/1",
        status="Converged",
        constraint="pcmax=0.0001",
        branch="PlusStart",
        total_dv_mps=0.2,
        active_impulses=2,
        major_iterations=2,
        minor_iterations=[3, 1],
        predicted=metrics,
        achieved=metrics,
        verified=True,
        impulses=[_impulse(0, 120.0), _impulse(1, 60.0)],
        trace=[
            TraceRow(
                major=1, minor=1, xi_km=0.5, zeta_km=0.1, z_xi_km=0.6, z_zeta_km=0.1, total_dv_mps=0.2, tca_shift_s=0.0
            )
        ],
        keep_out=[KeepOutRow(major=1, d2_bar=2.4, C_eff=((0.04, 0.01), (0.01, 0.09)))],
    )
    failed = RunEntry(id="evt2", status="Failed", constraint="pcmax=0.0001", error="NoConvergenceError: stuck")
    entries = [converged, failed]
    return RunReport(settings={"lead_time": 600.0}, entries=entries, aggregates=compute_aggregates(entries))


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as stream:
        return list(csv.DictReader(stream))


def test_all_report_files_are_written(tmp_path: Path) -> None:
    written = emit_reports(_report(), tmp_path)
    names = sorted(path.name for path in written)
    assert names == [
        "aggregates.json",
        "histograms.csv",
        "impulses_evt_1.csv",
        "keep_out_evt_1.csv",
        "report.json",
        "summary.csv",
        "trace_evt_1.csv",
    ]
    aggregates = orjson.loads((tmp_path / "aggregates.json").read_bytes())
    assert aggregates["schema_version"] == SCHEMA_VERSION
    assert "elapsed_s" not in aggregates
    report = orjson.loads((tmp_path / "report.json").read_bytes())
    assert report["entries"][1]["error"] == "NoConvergenceError: stuck"
    summary = _rows(tmp_path / "summary.csv")
    assert [row["id"] for row in summary] == ["evt/1", "evt2"]
    assert summary[1]["achieved_d2"] == ""
    assert b"\r\n" not in (tmp_path / "summary.csv").read_bytes()


def test_keep_out_contour_is_on_the_ellipse(tmp_path: Path) -> None:
    emit_reports(_report(), tmp_path, ["csv"])
    rows = _rows(tmp_path / "keep_out_evt_1.csv")
    C_eff = np.array([[0.04, 0.01], [0.01, 0.09]])
    points = np.array([[float(row["xi_km"]), float(row["zeta_km"])] for row in rows])
    levels = np.einsum("ij,jk,ik->i", points, np.linalg.inv(C_eff), points)
    assert np.allclose(levels, 2.4, rtol=1e-12)
    assert np.allclose(points[0], points[-1])


def test_json_only(tmp_path: Path) -> None:
    written = emit_reports(_report(), tmp_path, ["json"])
    assert sorted(path.name for path in written) == ["aggregates.json", "report.json"]


def test_unknown_format_is_rejected(tmp_path: Path) -> None:
    with pytest.raises(ValueError):
        emit_reports(_report(), tmp_path, ["xml"])


def test_contour_of_circle() -> None:
    points = contour_points(np.eye(2), 4.0, count=5)
    assert np.allclose(points, [[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0], [2.0, 0.0]], atol=1e-12)


def test_histogram_rows() -> None:
    values = list(np.linspace(0.0, 1.0, 101))
    rows = histogram_rows("dv", values, bins=10)
    assert len(rows) == 10
    assert rows[0][1] == pytest.approx(0.05) and rows[-1][2] == pytest.approx(0.95)
    assert sum(row[3] for row in rows) == 91
    assert histogram_rows("dv", []) == []
    assert histogram_rows("dv", [3.0, 3.0]) == [["dv", 3.0, 3.0, 2]]


def test_study_and_sweep_files(tmp_path: Path) -> None:
    study = [
        StudyPoint(label="pcmax=0.0001", value=1e-4, status="Converged", total_dv_mps=0.2, active_impulses=3),
        StudyPoint(label="pcmax=1e-05", value=1e-5, status="Failed", error="x"),
    ]
    json_path, csv_path = write_study(study, tmp_path, "sweep_threshold")
    assert orjson.loads(json_path.read_bytes())["study"] == "sweep_threshold"
    assert [row["status"] for row in _rows(csv_path)] == ["Converged", "Failed"]

    points = [
        SweepPoint(0, 0.0, np.array([1.0, 0.0]), SolverStatus.OPTIMAL, 2e-4, 4),
        SweepPoint(1, np.pi, np.array([-1.0, 0.0]), SolverStatus.PRIMAL_INFEASIBLE, float("nan"), 0),
    ]
    csv_path, json_path = write_sweep(points, [0], tmp_path)
    rows = _rows(csv_path)
    assert float(rows[0]["total_dv_mps"]) == pytest.approx(0.2)
    assert rows[0]["local_minimum"] == "True"
    assert rows[1]["total_dv_mps"] == ""
    assert rows[1]["status"] == "PrimalInfeasible"
    assert orjson.loads(json_path.read_bytes())["local_minima"][0]["index"] == 0
