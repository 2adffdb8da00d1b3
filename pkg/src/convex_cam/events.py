"""
Conjunction event files.

The canonical format holds one block per event::

    event <id>
    primary.state      x y z vx vy vz
    secondary.state    x y z vx vy vz
    primary.cov_rtn    c11 c12 c13 c21 c22 c23 c31 c32 c33
    secondary.cov_rtn  c11 c12 c13 c21 c22 c23 c31 c32 c33
    radius_km          R
    reference          d2=... pc=... pc_max=... pc_quadrature=...
    end

Units are km, km/s and km²; ``reference`` is optional and ``#`` starts a comment. Single
events in the two-column appendix layout (plain or typeset) and header-named CSV datasets are
read as well.
"""
import csv
import io
import re
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import Field, ValidationError, validator

from convex_cam.conjunction import ConjunctionEvent
from convex_cam.dynamics import StateVector
from convex_cam.exceptions import DynamicsError, EventValidationError, ParseError, catch_io_error
from convex_cam.logging import get_logger
from convex_cam.schema import BaseSchema

__all__ = [
    "EventFormat",
    "EventRecord",
    "ReferenceValues",
    "from_event",
    "parse_event_file",
    "parse_event_text",
    "to_event",
    "write_event_file",
]

logger = get_logger(__name__)

Vector3 = tuple[float, float, float]
Matrix3 = tuple[Vector3, Vector3, Vector3]

_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_LATEX_COMMANDS = re.compile(r"\\multicolumn\{[^}]*\}\{[^}]*\}|\\(?:hspace|begin|end|label|cite|eqref)\{[^}]*\}")
_REFERENCE_KEYS = ("d2", "pc", "pc_max", "pc_quadrature")


class EventFormat(str, Enum):
    AUTO = "auto"
    CANONICAL = "canonical"
    APPENDIX = "appendix"
    CSV = "csv"


class ReferenceValues(BaseSchema):
    """Published values to compare against, when a file provides them."""

    d2: Optional[float] = None
    pc: Optional[float] = None
    pc_max: Optional[float] = None
    pc_quadrature: Optional[float] = None


class EventRecord(BaseSchema):
    id: str = Field(..., min_length=1, regex=r"^\S+$")
    primary_position: Vector3
    primary_velocity: Vector3
    secondary_position: Vector3
    secondary_velocity: Vector3
    cov_primary_rtn: Matrix3
    cov_secondary_rtn: Matrix3
    radius_km: float = Field(..., gt=0.0)
    reference: Optional[ReferenceValues] = None

    @validator("cov_primary_rtn", "cov_secondary_rtn")
    def _symmetric(cls, value: Matrix3) -> Matrix3:  # pylint: disable=no-self-argument
        matrix = np.array(value, dtype=float)
        scale = max(float(np.max(np.abs(matrix))), 1e-300)
        if np.max(np.abs(matrix - matrix.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        return value


def to_event(record: EventRecord) -> ConjunctionEvent:
    """
    Builds the validated event.

    Raises
    ------
    EventValidationError
        The record violates an event invariant (subsurface or non-finite state, covariance not
        positive semi-definite, states not at closest approach).
    """
    try:
        primary = StateVector(np.array(record.primary_position), np.array(record.primary_velocity))
        secondary = StateVector(np.array(record.secondary_position), np.array(record.secondary_velocity))
    except DynamicsError as e:
        raise EventValidationError(record.id, str(e)) from e
    return ConjunctionEvent(
        primary,
        secondary,
        np.array(record.cov_primary_rtn),
        np.array(record.cov_secondary_rtn),
        record.radius_km,
        record.id,
    )


def from_event(event: ConjunctionEvent, reference: Optional[ReferenceValues] = None) -> EventRecord:
    return EventRecord(
        id=event.event_id,
        primary_position=tuple(event.primary.position),
        primary_velocity=tuple(event.primary.velocity),
        secondary_position=tuple(event.secondary.position),
        secondary_velocity=tuple(event.secondary.velocity),
        cov_primary_rtn=tuple(map(tuple, event.cov_primary_rtn)),
        cov_secondary_rtn=tuple(map(tuple, event.cov_secondary_rtn)),
        radius_km=event.radius,
        reference=reference,
    )


def _record(values: dict[str, Any], path: Any, line: Optional[int]) -> EventRecord:
    try:
        record = EventRecord(**values)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        if field.startswith("cov_") and "symmetric" in error["msg"]:
            raise EventValidationError(str(values.get("id")), f"{field}: {error['msg']}", line) from e
        raise ParseError(error["msg"], path=path, line=line, field=field) from e
    try:
        to_event(record)
    except EventValidationError as e:
        raise EventValidationError(record.id, str(e).split(": ", 1)[-1], line) from e
    return record


def _floats(tokens: Sequence[str], count: int, path: Any, line: int, field: str) -> list[float]:
    if len(tokens) != count:
        raise ParseError(f"expected {count} values, got {len(tokens)}", path=path, line=line, field=field)
    try:
        return [float(token) for token in tokens]
    except ValueError as e:
        raise ParseError(f"not a number: {e}", path=path, line=line, field=field) from e


def _strip_comment(text: str) -> str:
    return text.split("#", 1)[0].strip()


_CANONICAL_FIELDS = {
    "primary.state": 6,
    "secondary.state": 6,
    "primary.cov_rtn": 9,
    "secondary.cov_rtn": 9,
    "radius_km": 1,
}


def _canonical_values(fields: dict[str, list[float]], reference: Optional[dict[str, float]], event_id: str) -> dict:
    def matrix(values: list[float]) -> list[list[float]]:
        return [values[0:3], values[3:6], values[6:9]]

    return {
        "id": event_id,
        "primary_position": fields["primary.state"][:3],
        "primary_velocity": fields["primary.state"][3:],
        "secondary_position": fields["secondary.state"][:3],
        "secondary_velocity": fields["secondary.state"][3:],
        "cov_primary_rtn": matrix(fields["primary.cov_rtn"]),
        "cov_secondary_rtn": matrix(fields["secondary.cov_rtn"]),
        "radius_km": fields["radius_km"][0],
        "reference": reference,
    }


def _parse_canonical(lines: Sequence[str], path: Any) -> list[EventRecord]:
    records: list[EventRecord] = []
    event_id: Optional[str] = None
    start = 0
    fields: dict[str, list[float]] = {}
    reference: Optional[dict[str, float]] = None
    for number, raw in enumerate(lines, start=1):
        text = _strip_comment(raw)
        if not text:
            continue
        key, *tokens = text.split()
        if key == "event":
            if event_id is not None:
                raise ParseError("missing 'end' before next event", path=path, line=number, field="event")
            if len(tokens) != 1:
                raise ParseError("event id must be a single token", path=path, line=number, field="event")
            event_id, start, fields, reference = tokens[0], number, {}, None
            continue
        if event_id is None:
            raise ParseError(f"'{key}' outside an event block", path=path, line=number, field=key)
        if key == "end":
            missing = [name for name in _CANONICAL_FIELDS if name not in fields]
            if missing:
                raise ParseError("incomplete event block", path=path, line=number, field=missing[0])
            records.append(_record(_canonical_values(fields, reference, event_id), path, start))
            event_id = None
        elif key in _CANONICAL_FIELDS:
            if key in fields:
                raise ParseError("duplicate field", path=path, line=number, field=key)
            fields[key] = _floats(tokens, _CANONICAL_FIELDS[key], path, number, key)
        elif key == "reference":
            reference = {}
            for token in tokens:
                name, _, value = token.partition("=")
                if name not in _REFERENCE_KEYS:
                    raise ParseError(f"unknown reference value '{name}'", path=path, line=number, field=key)
                reference[name] = _floats([value], 1, path, number, f"reference.{name}")[0]
        else:
            raise ParseError(f"unknown field '{key}'", path=path, line=number, field=key)
    if event_id is not None:
        raise ParseError("file ends inside an event block", path=path, line=start, field="end")
    return records


def _untypeset(line: str) -> str:
    """Reduces a typeset table row to plain text."""
    text = _LATEX_COMMANDS.sub(" ", line)
    text = text.replace("\\#", "#").replace("\\\\", " ").replace("&", " ")
    text = re.sub(r"\\([A-Za-z]+)", r"\1", text)
    return re.sub(r"[${}]", "", text)


def _parse_appendix(lines: Sequence[str], path: Any, event_id: str) -> list[EventRecord]:
    objects: dict[str, dict[str, list[list[float]]]] = {"primary": {}, "secondary": {}}
    current: Optional[str] = None
    block: Optional[str] = None
    rows: list[list[float]] = []
    expected = 0
    details = False
    radius: Optional[float] = None
    reference: dict[str, float] = {}
    start = 0
    for number, raw in enumerate(lines, start=1):
        text = _untypeset(raw).strip()
        if not text:
            continue
        lowered = text.lower()
        if text.startswith("#"):
            if expected:
                raise ParseError(f"{block} block has {len(rows)} of 3 rows", path=path, line=number, field=block)
            if "primary" in lowered or "secondary" in lowered:
                current = "primary" if "primary" in lowered else "secondary"
                start = start or number
                details = False
            elif "position" in lowered:
                block, rows, expected = "state", [], 2
            elif "covariance" in lowered:
                block, rows, expected = "cov_rtn", [], 3
            elif "conjunction" in lowered:
                details, current = True, None
            continue
        if expected:
            if current is None:
                raise ParseError("values before a 'Primary' or 'Secondary' heading", path=path, line=number)
            field = f"{current}.{block}"
            rows.append(_floats(_NUMBER.findall(text), expected, path, number, field))
            if len(rows) == 3:
                objects[current][str(block)] = rows
                expected = 0
            continue
        if details and "=" in text:
            label, _, rest = text.partition("=")
            values = _NUMBER.findall(rest)
            label = label.strip().replace(" ", "").lower()
            if not values:
                raise ParseError("missing value", path=path, line=number, field=label)
            value = float(values[0])
            note = rest.split(values[0], 1)[-1].strip().lower()
            if label == "r":
                unit = note.split()[0] if note else ""
                if unit not in ("m", "km"):
                    raise ParseError("radius unit must be 'm' or 'km'", path=path, line=number, field="radius")
                radius = value / 1000.0 if unit == "m" else value
            elif label.startswith("d"):
                reference["d2"] = value
            elif "max" in label:
                reference["pc_max"] = value
            elif "approx" in note or "pc_quadrature" in reference:
                reference["pc"] = value
            else:
                reference["pc_quadrature"] = value
    for name, blocks in objects.items():
        for block_name in ("state", "cov_rtn"):
            if block_name not in blocks:
                raise ParseError("missing block", path=path, field=f"{name}.{block_name}")
    if radius is None:
        raise ParseError("missing combined radius", path=path, field="radius")
    values = {
        "id": event_id,
        "primary_position": [row[0] for row in objects["primary"]["state"]],
        "primary_velocity": [row[1] for row in objects["primary"]["state"]],
        "secondary_position": [row[0] for row in objects["secondary"]["state"]],
        "secondary_velocity": [row[1] for row in objects["secondary"]["state"]],
        "cov_primary_rtn": objects["primary"]["cov_rtn"],
        "cov_secondary_rtn": objects["secondary"]["cov_rtn"],
        "radius_km": radius,
        "reference": reference or None,
    }
    return [_record(values, path, start or None)]


_CSV_AXES = ("x", "y", "z", "vx", "vy", "vz")
_CSV_COVARIANCE = ("rr", "rt", "rn", "tt", "tn", "nn")


def _parse_csv(text: str, path: Any) -> list[EventRecord]:
    """Header-named columns; covariances as upper triangles ``<object>_cov_rr .. <object>_cov_nn``."""
    reader = csv.DictReader(io.StringIO(text))
    records = []
    for number, row in enumerate(reader, start=2):
        try:

            def column(name: str) -> float:
                return float(row[name])

            values: dict[str, Any] = {"id": row.get("id") or f"row{number - 1}"}
            for obj in ("primary", "secondary"):
                state = [column(f"{obj}_{axis}") for axis in _CSV_AXES]
                rr, rt, rn, tt, tn, nn = (column(f"{obj}_cov_{entry}") for entry in _CSV_COVARIANCE)
                values[f"{obj}_position"] = state[:3]
                values[f"{obj}_velocity"] = state[3:]
                values[f"cov_{obj}_rtn"] = [[rr, rt, rn], [rt, tt, tn], [rn, tn, nn]]
            if row.get("radius_km"):
                values["radius_km"] = column("radius_km")
            else:
                values["radius_km"] = column("radius_m") / 1000.0
        except KeyError as e:
            raise ParseError("missing column", path=path, line=number, field=str(e.args[0])) from e
        except (TypeError, ValueError) as e:
            raise ParseError(f"not a number: {e}", path=path, line=number) from e
        records.append(_record(values, path, number))
    return records


def _detect(lines: Sequence[str]) -> Optional[EventFormat]:
    for raw in lines:
        text = _strip_comment(raw)
        if text:
            return EventFormat.CANONICAL if text.split()[0] == "event" else EventFormat.APPENDIX
    if any("position" in raw.lower() for raw in lines):
        return EventFormat.APPENDIX
    return None


def parse_event_text(
    text: str, fmt: Union[EventFormat, str] = EventFormat.AUTO, *, path: Any = None, event_id: str = "event"
) -> list[EventRecord]:
    """
    Parses event records from text.

    ``event_id`` names the record of an appendix-layout text, which carries no identifier.

    Raises
    ------
    ParseError
        The text does not follow the grammar; the message names line and field.
    EventValidationError
        A record violates an event invariant.
    """
    fmt = EventFormat(fmt)
    if fmt == EventFormat.CSV:
        return _parse_csv(text, path)
    lines = text.splitlines()
    if fmt == EventFormat.AUTO:
        detected = _detect(lines)
        if detected is None:
            return []
        fmt = detected
    if fmt == EventFormat.CANONICAL:
        return _parse_canonical(lines, path)
    return _parse_appendix(lines, path, event_id)


def parse_event_file(path: Union[str, Path], fmt: Union[EventFormat, str] = EventFormat.AUTO) -> list[EventRecord]:
    """
    Reads every event of a file.

    >>> from convex_cam.utils.import_tools import reference_event_path
    >>> [record] = parse_event_file(reference_event_path())
    >>> round(record.radius_km * 1000.0, 9), record.primary_velocity[0]
    (29.71, -7.44286282871773)
    """
    path = Path(path)
    fmt = EventFormat(fmt)
    if fmt == EventFormat.AUTO and path.suffix.lower() == ".csv":
        fmt = EventFormat.CSV
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("file is not UTF-8", path=path) from e
    except OSError as e:
        raise ParseError(f"cannot read file: {e.strerror}", path=path) from e
    records = parse_event_text(text, fmt, path=path, event_id=path.stem)
    logger.debug("read %d events from %s", len(records), path)
    return records


def _line(key: str, values: Iterable[float]) -> str:
    return f"{key:<18} " + " ".join(repr(float(value)) for value in values)


def write_event_file(records: Iterable[EventRecord], path: Union[str, Path]) -> Path:
    """Writes records in the canonical format; floats are written in their shortest exact form."""
    blocks = ["# convex-cam events, units km, km/s, km^2"]
    for record in records:
        blocks.append(f"event {record.id}")
        blocks.append(_line("primary.state", [*record.primary_position, *record.primary_velocity]))
        blocks.append(_line("secondary.state", [*record.secondary_position, *record.secondary_velocity]))
        blocks.append(_line("primary.cov_rtn", np.ravel(record.cov_primary_rtn)))
        blocks.append(_line("secondary.cov_rtn", np.ravel(record.cov_secondary_rtn)))
        blocks.append(_line("radius_km", [record.radius_km]))
        if record.reference is not None:
            pairs = [
                f"{key}={value!r}" for key, value in record.reference.dict().items() if value is not None
            ]
            if pairs:
                blocks.append(f"{'reference':<18} " + " ".join(pairs))
        blocks.append("end")
    path = Path(path)
    with catch_io_error(f"cannot write event file {path}"):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(blocks) + "\n", encoding="utf-8", newline="\n")
    return path
