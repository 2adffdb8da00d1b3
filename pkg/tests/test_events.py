from pathlib import Path

import numpy as np
import pytest

from convex_cam.conjunction import ConjunctionEvent
from convex_cam.events import (
    EventFormat,
    EventRecord,
    ReferenceValues,
    from_event,
    parse_event_file,
    parse_event_text,
    to_event,
    write_event_file,
)
from convex_cam.exceptions import EventValidationError, ParseError
from tests.conftest import REFERENCE_D2, REFERENCE_PC, REFERENCE_PC_MAX, REFERENCE_PC_QUADRATURE

TYPESET = r"""
\begin{tabular}{ll}
\multicolumn{2}{l}{\# Primary} \\
\multicolumn{2}{l}{\# ECI Position [km] \& Velocity [km/s]} \\
$2.33052185175137E+00$ & $-7.44286282871773E+00$ \\
$-1.10370451050201E+03$ & $-6.13734743652660E-04$ \\
$7.10588764299718E+03$ & $3.95136139293349E-03$ \\
\multicolumn{2}{l}{\# Covariance RTN [km$^2$]} \\
$9.31700905887535E-05$ & $-2.623398113500550E-04$ & $2.360382173935300E-05$ \\
$-2.623398113500550E-04$ & $1.77796454279511E-02$ & $-9.331225387386501E-05$ \\
$2.360382173935300E-05$ & $-9.331225387386501E-05$ & $1.917372231880040E-05$ \\
\multicolumn{2}{l}{\# Secondary} \\
\multicolumn{2}{l}{\# ECI Position [km] \& Velocity [km/s]} \\
$2.333465506263321E+00$ & $7.353740487126315E+00$ \\
$-1.103671212478364E+03$ & $-1.142814049765362E+00$ \\
$7.105914958099038E+03$ & $-1.982472259113771E-01$ \\
\multicolumn{2}{l}{\# Covariance RTN [km$^2$]} \\
$6.346570910720371E-04$ & $-1.962292216245289E-03$ & $7.077413655227660E-05$ \\
$-1.962292216245289E-03$ & $8.199899363150306E-01$ & $1.139823810584350E-03$ \\
$7.077413655227660E-05$ & $1.139823810584350E-03$ & $2.510340829074070E-04$ \\
\multicolumn{2}{l}{\# Conjunction details} \\
$R = 29.71$ & m \\
$d_{CA}^2 = 8.71655401455392E-01$ & km$^2$ \\
$P_C = 1.36040828266536E-01$ & integral reference \\
$P_C = 1.47559666159940E-01$ & approximate \\
$P_{C,\max} = 1.92590968666693E-01$ & maximum \\
\end{tabular}
"""


def test_reference_file_is_read(reference_record: EventRecord) -> None:
    assert reference_record.radius_km == pytest.approx(0.02971)
    assert reference_record.secondary_velocity[0] == pytest.approx(7.353740487126315)
    assert reference_record.cov_secondary_rtn[1][1] == pytest.approx(8.199899363150306e-01)
    assert reference_record.reference == ReferenceValues(
        d2=REFERENCE_D2, pc=REFERENCE_PC, pc_max=REFERENCE_PC_MAX, pc_quadrature=REFERENCE_PC_QUADRATURE
    )


def test_typeset_table_matches_plain_file(reference_record: EventRecord) -> None:
    [record] = parse_event_text(TYPESET, EventFormat.APPENDIX, event_id=reference_record.id)
    assert record == reference_record


def test_canonical_round_trip(tmp_path: Path, reference_record: EventRecord, isotropic_event: ConjunctionEvent) -> None:
    records = [reference_record, from_event(isotropic_event)]
    path = write_event_file(records, tmp_path / "events.txt")
    assert parse_event_file(path) == records


def test_record_builds_the_event(reference_record: EventRecord) -> None:
    event = to_event(reference_record)
    assert event.event_id == reference_record.id
    assert event.radius == reference_record.radius_km
    assert np.array_equal(event.primary.position, reference_record.primary_position)


def test_empty_file_has_no_events(tmp_path: Path) -> None:
    path = tmp_path / "empty.txt"
    path.write_text("# nothing to see\n\n", encoding="utf-8")
    assert parse_event_file(path) == []


def _canonical(primary_cov: str = "1e-4 0 0 0 1e-2 0 0 0 1e-5") -> str:
    return "\n".join(
        [
            "event crossing  # two objects",
            "primary.state      7000 0 0 0 7.5 0",
            "secondary.state    6998 0 0 0 0 7.5",
            f"primary.cov_rtn    {primary_cov}",
            "secondary.cov_rtn  1e-4 0 0 0 1e-2 0 0 0 1e-5",
            "radius_km          0.02",
            "end",
        ]
    )


def test_canonical_text_without_reference() -> None:
    [record] = parse_event_text(_canonical())
    assert record.id == "crossing"
    assert record.reference is None
    assert record.primary_velocity == (0.0, 7.5, 0.0)


def test_asymmetric_covariance_is_rejected() -> None:
    with pytest.raises(EventValidationError):
        parse_event_text(_canonical("1e-4 1e-6 0 0 1e-2 0 0 0 1e-5"))


def test_indefinite_covariance_is_rejected() -> None:
    with pytest.raises(EventValidationError):
        parse_event_text(_canonical("1e-4 0 0 0 -1e-2 0 0 0 1e-5"))


@pytest.mark.parametrize(
    ("text", "line", "field"),
    [
        (_canonical().replace("7000 0 0 0 7.5 0", "7000 0 0 0 7.5"), 2, "primary.state"),
        (_canonical().replace("radius_km          0.02", "radius_km          big"), 6, "radius_km"),
        (_canonical().replace("radius_km", "radius"), 6, "radius"),
        (_canonical().replace("end", ""), 1, "end"),
    ],
)
def test_parse_errors_name_line_and_field(text: str, line: int, field: str) -> None:
    with pytest.raises(ParseError) as error:
        parse_event_text(text)
    assert error.value.line == line
    assert error.value.field == field
    assert f"line {line}" in str(error.value)


def test_missing_radius_in_appendix_layout(reference_event_text: str) -> None:
    text = "\n".join(line for line in reference_event_text.splitlines() if not line.startswith("R ="))
    with pytest.raises(ParseError) as error:
        parse_event_text(text, EventFormat.APPENDIX)
    assert error.value.field == "radius"


def test_csv_dataset(tmp_path: Path) -> None:
    axes = ["x", "y", "z", "vx", "vy", "vz"]
    entries = ["rr", "rt", "rn", "tt", "tn", "nn"]
    header = ["id"]
    for obj in ("primary", "secondary"):
        header += [f"{obj}_{axis}" for axis in axes] + [f"{obj}_cov_{entry}" for entry in entries]
    header.append("radius_m")
    covariance = ["1e-4", "0", "0", "1e-2", "0", "1e-5"]
    row = ["a1", "7000", "0", "0", "0", "7.5", "0", *covariance, "6998", "0", "0", "0", "0", "7.5", *covariance, "20"]
    path = tmp_path / "events.csv"
    path.write_text(",".join(header) + "\n" + ",".join(row) + "\n", encoding="utf-8")
    [record] = parse_event_file(path)
    assert record.id == "a1"
    assert record.radius_km == pytest.approx(0.02)
    assert record.cov_primary_rtn[1][1] == 1e-2

    path.write_text(",".join(header[:-2]) + "\n" + ",".join(row[:-2]) + "\n", encoding="utf-8")
    with pytest.raises(ParseError) as error:
        parse_event_file(path)
    assert error.value.line == 2


def test_unreadable_file(tmp_path: Path) -> None:
    with pytest.raises(ParseError):
        parse_event_file(tmp_path / "missing.txt")


@pytest.fixture()
def reference_event_text() -> str:
    from convex_cam.utils.import_tools import reference_event_path

    return reference_event_path().read_text(encoding="utf-8")
