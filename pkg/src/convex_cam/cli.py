"""
Command line interface.

Exit codes: 0 success, 2 infeasible design, 3 parse or validation error, 4 numerical failure.
"""
import functools
from pathlib import Path
from typing import Any, Callable, Optional, TypeVar

import typer

try:  # newer typer bundles its own click; its exceptions are the ones raised
    from typer._click.core import Context as _ClickContext
    from typer._click.exceptions import UsageError as _UsageError
except ImportError:  # pragma: no cover
    from click import Context as _ClickContext
    from click import UsageError as _UsageError
from rich.console import Console
from rich.table import Table
from typer.core import TyperGroup

from convex_cam.batch import OrbitWindow, RunEntry, RunReport, compute_aggregates, run_batch, run_single
from convex_cam.conjunction import ConjunctionEvent, encounter_geometry, parse_constraint, pc_quadrature
from convex_cam.events import EventFormat, EventRecord, from_event, parse_event_file, to_event, write_event_file
from convex_cam.exceptions import (
    EXIT_PARSE_ERROR,
    CamException,
    ParseError,
    QuadratureNonConvergenceError,
    exit_code_for,
)
from convex_cam.logging import configure_logging, get_logger
from convex_cam.reports import emit_reports, write_csv, write_study, write_sweep
from convex_cam.scvx import boundary_sweep, sweep_local_minima
from convex_cam.settings import CovarianceFrame, get_settings
from convex_cam.studies import StudyPoint, sweep_dv_max, sweep_lead_time, sweep_threshold
from convex_cam.synthetic import DEFAULT_SEED, synthetic_events

__all__ = ["app", "console"]

console = Console(markup=True)


class _CamGroup(TyperGroup):
    """Reports malformed command lines with the parse-error exit code."""

    def make_context(self, *args: Any, **kwargs: Any) -> _ClickContext:
        try:
            return super().make_context(*args, **kwargs)
        except _UsageError as e:
            e.exit_code = EXIT_PARSE_ERROR
            raise

    def invoke(self, ctx: _ClickContext) -> Any:
        try:
            return super().invoke(ctx)
        except _UsageError as e:
            e.exit_code = EXIT_PARSE_ERROR
            raise


app = typer.Typer(cls=_CamGroup, no_args_is_help=True, help="Fuel-optimal collision avoidance maneuver design.")

logger = get_logger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

M_PER_KM = 1000.0

EventOption = typer.Option(..., "--event", "-e", help="Event file.")
FormatOption = typer.Option(EventFormat.AUTO, "--format", help="Event file format.")
IdOption = typer.Option(None, "--id", help="Event to use when the file holds several.")
ConstraintOption = typer.Option("pcmax=1e-4", "--constraint", "-c", help="pc=P, pcmax=P or miss=KM.")
LeadOption = typer.Option(2.0, "--lead-orbits", help="Window start before the encounter [orbits].")
WindowOption = typer.Option(2.0, "--window-orbits", help="Window length [orbits].")
DtOption = typer.Option(60.0, "--dt", help="Impulse spacing [s].")
NMaxOption = typer.Option(200, "--n-max", help="Maximum number of impulses.")
DvMaxOption = typer.Option(6e-3, "--dvmax", help="Per-impulse cap [m/s].")
TolMajorOption = typer.Option(1e-3, "--tol-major", help="Major-loop tolerance on impulse change [m/s].")
TolMinorOption = typer.Option(1.0, "--tol-minor", help="Minor-loop tolerance on b-plane motion [m].")
MaxMajorOption = typer.Option(15, "--max-major")
MaxMinorOption = typer.Option(30, "--max-minor")
CapOption = typer.Option(20.0, "--cap", help="Bound on b-plane displacement per subproblem [km].")
SingleStartOption = typer.Option(False, "--single-start", help="Skip the opposite-side start.")
FrameOption = typer.Option(None, "--frame", help="RTN frame used for the secondary covariance.")
OutOption = typer.Option(None, "--out", "-o", file_okay=False, help="Output directory.")
ReportFormatOption = typer.Option("json,csv", "--report-format", help="Comma separated: json, csv.")
ParallelismOption = typer.Option(None, "--parallelism", "-j", help="Worker threads.")


def _handle_errors(function: F) -> F:
    """Reports package errors and exits with their code."""

    @functools.wraps(function)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return function(*args, **kwargs)
        except CamException as e:
            logger.debug("command failed", exc_info=e)
            console.print(f"[bold red]{type(e).__name__}[/]: {e}")
            raise typer.Exit(code=exit_code_for(e)) from e

    return wrapper  # type: ignore[return-value]


@app.callback()
def _main(log_level: Optional[str] = typer.Option(None, "--log-level", help="Defaults to CAM_LOG_LEVEL.")) -> None:
    configure_logging(log_level or get_settings().LOG_LEVEL)


def _floats(text: str, option: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ParseError(f"expected comma separated numbers: {e}", field=option) from e


def _window(
    constraint: str,
    lead_orbits: float,
    window_orbits: float,
    dt: float,
    dvmax: float,
    *,
    n_max: int = 200,
    tol_major: float = 1e-3,
    tol_minor: float = 1.0,
    max_major: int = 15,
    max_minor: int = 30,
    cap: float = 20.0,
    single_start: bool = False,
    frame: Optional[CovarianceFrame] = None,
) -> OrbitWindow:
    options: dict[str, Any] = {
        "constraint": parse_constraint(constraint),
        "delta_t": dt,
        "n_max": n_max,
        "dv_max": dvmax / M_PER_KM,
        "tol_major": tol_major / M_PER_KM,
        "tol_minor": tol_minor / M_PER_KM,
        "max_major": max_major,
        "max_minor": max_minor,
        "bplane_deviation_cap": cap,
        "dual_start": not single_start,
    }
    if frame is not None:
        options["frame_mode"] = frame
    return OrbitWindow(lead_orbits=lead_orbits, window_orbits=window_orbits, options=options)


def _select(records: list[EventRecord], event_id: Optional[str], path: Path) -> ConjunctionEvent:
    if event_id is not None:
        records = [record for record in records if record.id == event_id]
        if not records:
            raise ParseError(f"no event '{event_id}'", path=path, field="id")
    if len(records) != 1:
        raise ParseError(f"file holds {len(records)} events, select one with --id", path=path)
    return to_event(records[0])


def _out_dir(out: Optional[Path]) -> Path:
    return out if out is not None else get_settings().OUTPUT_DIR


def _workers(parallelism: Optional[int]) -> int:
    if parallelism is None:
        return get_settings().PARALLELISM
    if parallelism < 1:
        raise ParseError(f"expected at least one worker, got {parallelism}", field="parallelism")
    return parallelism


def _report_formats(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _print_entries(entries: list[RunEntry]) -> None:
    table = Table(title="Maneuver design")
    for column in ("event", "status", "branch", "ΔV [m/s]", "impulses", "major", "achieved d²", "verified"):
        table.add_column(column)
    for entry in entries:
        table.add_row(
            entry.id,
            entry.status,
            entry.branch or "",
            f"{entry.total_dv_mps:.6f}" if entry.total_dv_mps is not None else "",
            str(entry.active_impulses),
            str(entry.major_iterations),
            f"{entry.achieved.d2:.6g}" if entry.achieved else "",
            "yes" if entry.verified else "no",
        )
    console.print(table)


def _print_study(points: list[StudyPoint], title: str) -> None:
    table = Table(title=title)
    for column in ("case", "status", "ΔV [m/s]", "impulses", "major"):
        table.add_column(column)
    for point in points:
        dv = f"{point.total_dv_mps:.6f}" if point.total_dv_mps is not None else ""
        table.add_row(point.label, point.status, dv, str(point.active_impulses), str(point.major_iterations))
    console.print(table)


@app.command()
@_handle_errors
def solve(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    event_id: Optional[str] = IdOption,
    constraint: str = ConstraintOption,
    lead_orbits: float = LeadOption,
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    n_max: int = NMaxOption,
    dvmax: float = DvMaxOption,
    tol_major: float = TolMajorOption,
    tol_minor: float = TolMinorOption,
    max_major: int = MaxMajorOption,
    max_minor: int = MaxMinorOption,
    cap: float = CapOption,
    single_start: bool = SingleStartOption,
    frame: Optional[CovarianceFrame] = FrameOption,
    out: Optional[Path] = OutOption,
    report_format: str = ReportFormatOption,
) -> None:
    """Designs the maneuver for one event."""
    window = _window(
        constraint,
        lead_orbits,
        window_orbits,
        dt,
        dvmax,
        n_max=n_max,
        tol_major=tol_major,
        tol_minor=tol_minor,
        max_major=max_major,
        max_minor=max_minor,
        cap=cap,
        single_start=single_start,
        frame=frame,
    )
    conjunction = _select(parse_event_file(event, fmt), event_id, event)
    entry = run_single(conjunction, window.config_for(conjunction))
    report = RunReport(settings=window.dict(), entries=[entry], aggregates=compute_aggregates([entry]))
    emit_reports(report, _out_dir(out), _report_formats(report_format))
    _print_entries([entry])
    if entry.exit_code:
        raise typer.Exit(code=entry.exit_code)


@app.command()
@_handle_errors
def batch(
    dataset: Path = typer.Option(..., "--dataset", "-d", help="Event file."),
    fmt: EventFormat = FormatOption,
    constraint: str = ConstraintOption,
    lead_orbits: float = LeadOption,
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    n_max: int = NMaxOption,
    dvmax: float = DvMaxOption,
    tol_major: float = TolMajorOption,
    tol_minor: float = TolMinorOption,
    max_major: int = MaxMajorOption,
    max_minor: int = MaxMinorOption,
    cap: float = CapOption,
    single_start: bool = SingleStartOption,
    frame: Optional[CovarianceFrame] = FrameOption,
    parallelism: Optional[int] = ParallelismOption,
    out: Optional[Path] = OutOption,
    report_format: str = ReportFormatOption,
) -> None:
    """Designs maneuvers for every event of a dataset; single-event failures are recorded."""
    window = _window(
        constraint,
        lead_orbits,
        window_orbits,
        dt,
        dvmax,
        n_max=n_max,
        tol_major=tol_major,
        tol_minor=tol_minor,
        max_major=max_major,
        max_minor=max_minor,
        cap=cap,
        single_start=single_start,
        frame=frame,
    )
    report = run_batch(dataset, window, _workers(parallelism), fmt=fmt)
    emit_reports(report, _out_dir(out), _report_formats(report_format))
    _print_entries(report.entries)
    console.print(report.aggregates.dict())


@app.command("sweep-threshold")
@_handle_errors
def sweep_threshold_command(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    event_id: Optional[str] = IdOption,
    kind: str = typer.Option("pcmax", "--kind", help="pc, pcmax or miss."),
    values: str = typer.Option("1e-5,1e-4,1e-3", "--values", help="Comma separated thresholds."),
    lead_orbits: float = LeadOption,
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    dvmax: float = DvMaxOption,
    parallelism: Optional[int] = ParallelismOption,
    out: Optional[Path] = OutOption,
) -> None:
    """Solves one event for a list of thresholds."""
    conjunction = _select(parse_event_file(event, fmt), event_id, event)
    thresholds = _floats(values, "values")
    if not thresholds:
        raise ParseError("no thresholds given", field="values")
    window = _window(f"{kind}={thresholds[0]!r}", lead_orbits, window_orbits, dt, dvmax)
    workers = _workers(parallelism)
    points = sweep_threshold(conjunction, window, kind, thresholds, parallelism=workers)
    write_study(points, _out_dir(out), "sweep_threshold")
    _print_study(points, f"Threshold sweep ({kind})")


@app.command("sweep-leadtime")
@_handle_errors
def sweep_leadtime_command(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    event_id: Optional[str] = IdOption,
    constraint: str = ConstraintOption,
    leads: str = typer.Option("16,12,8,4", "--leads", help="Window starts before the encounter [orbits]."),
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    dvmax: float = DvMaxOption,
    parallelism: Optional[int] = ParallelismOption,
    out: Optional[Path] = OutOption,
) -> None:
    """Solves one event for maneuver windows opening at several lead times."""
    conjunction = _select(parse_event_file(event, fmt), event_id, event)
    window = _window(constraint, 2.0, window_orbits, dt, dvmax)
    points = sweep_lead_time(
        conjunction,
        window,
        _floats(leads, "leads"),
        window_orbits,
        parallelism=_workers(parallelism),
    )
    write_study(points, _out_dir(out), "sweep_leadtime")
    _print_study(points, "Lead time sweep")


@app.command("sweep-dvmax")
@_handle_errors
def sweep_dvmax_command(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    event_id: Optional[str] = IdOption,
    constraint: str = ConstraintOption,
    values: str = typer.Option("0.6,0.06,0.006,0.003", "--values", help="Per-impulse caps [m/s]."),
    lead_orbits: float = LeadOption,
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    parallelism: Optional[int] = ParallelismOption,
    out: Optional[Path] = OutOption,
) -> None:
    """Solves one event for several per-impulse caps."""
    conjunction = _select(parse_event_file(event, fmt), event_id, event)
    window = _window(constraint, lead_orbits, window_orbits, dt, 6e-3)
    caps = [value / M_PER_KM for value in _floats(values, "values")]
    points = sweep_dv_max(conjunction, window, caps, parallelism=_workers(parallelism))
    write_study(points, _out_dir(out), "sweep_dvmax")
    _print_study(points, "Impulse cap sweep")


@app.command("boundary-sweep")
@_handle_errors
def boundary_sweep_command(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    event_id: Optional[str] = IdOption,
    constraint: str = ConstraintOption,
    points: int = typer.Option(300, "--points", "-m", help="Boundary samples, at least 8."),
    lead_orbits: float = LeadOption,
    window_orbits: float = WindowOption,
    dt: float = DtOption,
    dvmax: float = DvMaxOption,
    parallelism: Optional[int] = ParallelismOption,
    out: Optional[Path] = OutOption,
) -> None:
    """ΔV needed to reach each point of the keep-out ellipse boundary."""
    if points < 8:
        raise ParseError(f"the boundary sweep needs at least 8 points, got {points}", field="points")
    conjunction = _select(parse_event_file(event, fmt), event_id, event)
    config = _window(constraint, lead_orbits, window_orbits, dt, dvmax).config_for(conjunction)
    results = boundary_sweep(conjunction, config, points, parallelism=_workers(parallelism))
    minima = sweep_local_minima(results)
    write_sweep(results, minima, _out_dir(out))
    table = Table(title="Boundary sweep local minima")
    for column in ("index", "angle [rad]", "ΔV [m/s]", "impulses"):
        table.add_column(column)
    for i in minima:
        point = results[i]
        dv = f"{point.total_dv * M_PER_KM:.6f}"
        table.add_row(str(point.index), f"{point.angle:.4f}", dv, str(point.active_count))
    console.print(table)


@app.command()
@_handle_errors
def stats(
    event: Path = EventOption,
    fmt: EventFormat = FormatOption,
    frame: Optional[CovarianceFrame] = FrameOption,
    csv_path: Optional[Path] = typer.Option(None, "--csv", dir_okay=False, help="Also write the table as CSV."),
) -> None:
    """Conjunction metrics of every event of a file."""
    header = ["event", "d2", "pc_quadrature", "pc_approx", "pc_max", "miss_distance_km", "relative_speed_kms"]
    rows = []
    for record in parse_event_file(event, fmt):
        conjunction = to_event(record)
        geometry = encounter_geometry(conjunction, frame)
        try:
            quadrature: Any = pc_quadrature(geometry.dr_b, geometry.C_b, conjunction.radius)
        except QuadratureNonConvergenceError:
            quadrature = ""
        rows.append(
            [
                record.id,
                geometry.d2,
                quadrature,
                geometry.pc_approx,
                geometry.pc_max,
                conjunction.miss_distance,
                conjunction.relative_speed,
            ]
        )
    table = Table(title="Conjunction metrics")
    for column in header:
        table.add_column(column)
    for row in rows:
        table.add_row(row[0], *(f"{value:.12g}" if value != "" else "" for value in row[1:]))
    console.print(table)
    if csv_path is not None:
        write_csv(csv_path, header, rows)


@app.command()
@_handle_errors
def synth(
    out: Path = typer.Option(Path("synthetic_events.txt"), "--out", "-o", dir_okay=False, help="Event file to write."),
    count: int = typer.Option(20, "--count", "-n"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed"),
) -> None:
    """Writes the synthetic dataset in the canonical event format."""
    if count < 1:
        raise ParseError(f"expected at least one event, got {count}", field="count")
    path = write_event_file([from_event(event) for event in synthetic_events(count, seed)], out)
    console.print(f"wrote {count} events to {path}")

