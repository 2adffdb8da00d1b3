import csv
from pathlib import Path

import pytest
from typer.testing import CliRunner

from convex_cam.cli import app
from convex_cam.conjunction import ConjunctionEvent
from convex_cam.events import from_event, parse_event_file, write_event_file
from convex_cam.exceptions import EXIT_PARSE_ERROR
from convex_cam.utils.import_tools import reference_event_path
from tests.conftest import REFERENCE_D2, REFERENCE_PC_MAX

runner = CliRunner()


def test_synth_then_stats(tmp_path: Path) -> None:
    events = tmp_path / "synthetic.txt"
    result = runner.invoke(app, ["synth", "--out", str(events), "--count", "3", "--seed", "11"])
    assert result.exit_code == 0, result.output
    assert [record.id for record in parse_event_file(events)] == ["syn-001", "syn-002", "syn-003"]

    table = tmp_path / "stats.csv"
    result = runner.invoke(app, ["stats", "--event", str(events), "--csv", str(table)])
    assert result.exit_code == 0, result.output
    with table.open(encoding="utf-8", newline="") as stream:
        rows = list(csv.DictReader(stream))
    assert len(rows) == 3
    assert rows[0]["pc_max"] == "inf"


def test_stats_of_reference_event(tmp_path: Path) -> None:
    table = tmp_path / "stats.csv"
    result = runner.invoke(app, ["stats", "--event", str(reference_event_path()), "--csv", str(table)])
    assert result.exit_code == 0, result.output
    with table.open(encoding="utf-8", newline="") as stream:
        [row] = list(csv.DictReader(stream))
    assert float(row["d2"]) == pytest.approx(REFERENCE_D2, rel=1e-6)
    assert float(row["pc_max"]) == pytest.approx(REFERENCE_PC_MAX, rel=1e-6)


def test_bad_constraint_is_a_parse_error(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["solve", "--event", str(reference_event_path()), "--constraint", "pcmax", "--out", str(tmp_path)]
    )
    assert result.exit_code == EXIT_PARSE_ERROR
    assert "ParseError" in result.output


def test_event_selection(tmp_path: Path, isotropic_event: ConjunctionEvent) -> None:
    record = from_event(isotropic_event)
    events = write_event_file([record, record.copy(update={"id": "other"})], tmp_path / "two.txt")
    missing = runner.invoke(app, ["solve", "--event", str(events), "--id", "nope", "--out", str(tmp_path)])
    assert missing.exit_code == EXIT_PARSE_ERROR
    ambiguous = runner.invoke(app, ["solve", "--event", str(events), "--out", str(tmp_path)])
    assert ambiguous.exit_code == EXIT_PARSE_ERROR


def test_solve_safe_event_writes_reports(tmp_path: Path, isotropic_event: ConjunctionEvent) -> None:
    events = write_event_file([from_event(isotropic_event)], tmp_path / "iso.txt")
    out = tmp_path / "out"
    result = runner.invoke(
        app,
        ["solve", "--event", str(events), "--lead-orbits", "0.2", "--window-orbits", "0.1", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert (out / "report.json").is_file()
    with (out / "summary.csv").open(encoding="utf-8", newline="") as stream:
        [row] = list(csv.DictReader(stream))
    assert row["status"] == "Converged"
    assert float(row["total_dv_mps"]) == 0.0


@pytest.mark.parametrize(
    "args",
    [
        ["solve", "--event"],
        ["stats", "--event"],
        ["boundary-sweep", "--event"],
        ["batch", "--dataset"],
    ],
)
def test_missing_event_file_is_a_parse_error(tmp_path: Path, args: list[str]) -> None:
    result = runner.invoke(app, [*args, str(tmp_path / "absent.txt")])
    assert result.exit_code == EXIT_PARSE_ERROR, result.output
    assert "ParseError" in result.output


def test_invalid_counts_are_parse_errors(tmp_path: Path) -> None:
    event = str(reference_event_path())
    few_points = runner.invoke(app, ["boundary-sweep", "--event", event, "--points", "3", "--out", str(tmp_path)])
    assert few_points.exit_code == EXIT_PARSE_ERROR, few_points.output
    assert "ParseError" in few_points.output

    no_workers = runner.invoke(app, ["batch", "--dataset", event, "--parallelism", "0", "--out", str(tmp_path)])
    assert no_workers.exit_code == EXIT_PARSE_ERROR, no_workers.output

    no_events = runner.invoke(app, ["synth", "--out", str(tmp_path / "none.txt"), "--count", "0"])
    assert no_events.exit_code == EXIT_PARSE_ERROR, no_events.output


def test_malformed_option_value_is_a_parse_error() -> None:
    result = runner.invoke(app, ["boundary-sweep", "--event", str(reference_event_path()), "--points", "many"])
    assert result.exit_code == EXIT_PARSE_ERROR
