"""
Per-event runs and dataset statistics.

Achieved metrics always come from propagating the designed plan through the full dynamics;
the linearized prediction is reported next to them.
"""
import math
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import Field

from convex_cam.conjunction import ConjunctionEvent, describe_constraint, rtn_to_eci
from convex_cam.dynamics import GravityModel, IntegratorSettings
from convex_cam.events import EventFormat, EventRecord, parse_event_file, to_event
from convex_cam.exceptions import EXIT_INFEASIBLE, EXIT_NUMERICAL_FAILURE, EXIT_OK, CamException, exit_code_for
from convex_cam.logging import get_logger
from convex_cam.schema import BaseSchema
from convex_cam.scvx import (
    KM_PER_M,
    FinalMetrics,
    PlanVerification,
    ScvxConfig,
    ScvxReport,
    ScvxStatus,
    solve_cam,
    verify_plan,
)
from convex_cam.socp import ConeSolver, SolverSettings, solve
from convex_cam.utils.async_tools import map_in_threads

__all__ = [
    "SCHEMA_VERSION",
    "Aggregates",
    "ConfigSource",
    "EncounterMetrics",
    "ImpulseRow",
    "KeepOutRow",
    "OrbitWindow",
    "RunEntry",
    "RunReport",
    "TraceRow",
    "compute_aggregates",
    "exit_code_for_status",
    "run_batch",
    "run_single",
]

logger = get_logger(__name__)

SCHEMA_VERSION = "1.0"
FAILED = "Failed"


class OrbitWindow(BaseSchema):
    """
    Maneuver window in primary orbital periods, resolved into a [`ScvxConfig`][convex_cam.scvx.ScvxConfig]
    for each event.

    ``options`` holds any other ``ScvxConfig`` field.
    """

    lead_orbits: float = Field(2.0, gt=0.0)
    window_orbits: Optional[float] = Field(2.0, gt=0.0)
    options: dict[str, Any] = Field(default_factory=dict)

    def config_for(self, event: ConjunctionEvent) -> ScvxConfig:
        return ScvxConfig.from_orbits(event, self.lead_orbits, self.window_orbits, **self.options)

    def with_options(self, **updates: Any) -> "OrbitWindow":
        return self.copy(update={"options": {**self.options, **updates}})


ConfigSource = Union[ScvxConfig, OrbitWindow]


def _resolve(source: ConfigSource, event: ConjunctionEvent) -> ScvxConfig:
    return source if isinstance(source, ScvxConfig) else source.config_for(event)


def _finite(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


class EncounterMetrics(BaseSchema):
    d2: float
    d2_bar: Optional[float] = None
    pc_approx: float
    pc_max: Optional[float] = None
    pc_quadrature: Optional[float] = None
    miss_distance_km: float
    tca_shift_s: float

    @classmethod
    def predicted(cls, final: FinalMetrics, d2_bar: float) -> "EncounterMetrics":
        return cls(
            d2=final.d2,
            d2_bar=d2_bar,
            pc_approx=final.pc_approx,
            pc_max=_finite(final.pc_max),
            miss_distance_km=final.miss_distance,
            tca_shift_s=final.tca_shift,
        )

    @classmethod
    def achieved(cls, verification: PlanVerification) -> "EncounterMetrics":
        return cls(
            d2=verification.d2,
            d2_bar=verification.d2_bar,
            pc_approx=verification.pc_approx,
            pc_max=_finite(verification.pc_max),
            pc_quadrature=verification.pc_quadrature,
            miss_distance_km=verification.miss_distance,
            tca_shift_s=verification.tca_shift,
        )


class ImpulseRow(BaseSchema):
    node: int
    time_to_ca_s: float
    rtn_mps: tuple[float, float, float]
    eci_mps: tuple[float, float, float]
    magnitude_mps: float


class TraceRow(BaseSchema):
    major: int
    minor: int
    xi_km: float
    zeta_km: float
    z_xi_km: float
    z_zeta_km: float
    total_dv_mps: float
    tca_shift_s: float


class KeepOutRow(BaseSchema):
    major: int
    d2_bar: float
    C_eff: tuple[tuple[float, float], tuple[float, float]]


class RunEntry(BaseSchema):
    id: str
    status: str
    constraint: str
    already_safe: bool = False
    branch: Optional[str] = None
    alternate_status: Optional[str] = None
    alternate_total_dv_mps: Optional[float] = None
    total_dv_mps: Optional[float] = None
    active_impulses: int = 0
    major_iterations: int = 0
    minor_iterations: list[int] = Field(default_factory=list)
    predicted: Optional[EncounterMetrics] = None
    achieved: Optional[EncounterMetrics] = None
    verified: bool = False
    elapsed_s: float = 0.0
    error: Optional[str] = None
    exit_code: int = 0
    impulses: list[ImpulseRow] = Field(default_factory=list)
    trace: list[TraceRow] = Field(default_factory=list)
    keep_out: list[KeepOutRow] = Field(default_factory=list)

    @classmethod
    def failed(cls, record_id: str, constraint: str, exc: BaseException, elapsed: float = 0.0) -> "RunEntry":
        return cls(
            id=record_id,
            status=FAILED,
            constraint=constraint,
            error=f"{type(exc).__name__}: {exc}",
            exit_code=exit_code_for(exc),
            elapsed_s=elapsed,
        )


class Aggregates(BaseSchema):
    events: int
    counts: dict[str, int]
    failures: int
    total_dv_median_mps: Optional[float] = None
    total_dv_p05_mps: Optional[float] = None
    total_dv_p95_mps: Optional[float] = None
    active_impulses_median: Optional[float] = None
    major_iterations_median: Optional[float] = None
    major_iterations_max: Optional[int] = None
    minor_iterations_median: Optional[float] = None
    max_abs_tca_shift_s: Optional[float] = None


class RunReport(BaseSchema):
    schema_version: str = SCHEMA_VERSION
    settings: dict[str, Any] = Field(default_factory=dict)
    entries: list[RunEntry]
    aggregates: Aggregates


def _impulse_rows(report: ScvxReport, verification: Optional[PlanVerification]) -> list[ImpulseRow]:
    rows = []
    plan = report.plan
    for i, time_i in enumerate(report.grid.impulse_times):
        eci = plan.impulses[i] / KM_PER_M
        if verification is not None:
            state = verification.node_states[i]
            rtn = rtn_to_eci(state.position, state.velocity).T @ eci
        else:
            rtn = np.zeros(3)
        rows.append(
            ImpulseRow(
                node=i,
                time_to_ca_s=float(report.grid.node_times[-1] - time_i),
                rtn_mps=tuple(rtn),
                eci_mps=tuple(eci),
                magnitude_mps=float(plan.magnitudes[i] / KM_PER_M),
            )
        )
    return rows


def run_single(
    event: ConjunctionEvent,
    config: ScvxConfig,
    model: Optional[GravityModel] = None,
    *,
    solver: ConeSolver = solve,
    solver_settings: Optional[SolverSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
) -> RunEntry:
    """
    Designs the maneuver for one event and re-verifies it on the full dynamics.

    Errors raised by the design are not caught; an ``Infeasible`` design is an ordinary entry.
    """
    started = time.perf_counter()
    model = model or GravityModel()
    report = solve_cam(event, config, model, solver=solver, solver_settings=solver_settings, integrator=integrator)
    verification = report.verification
    if verification is None and report.status != ScvxStatus.INFEASIBLE:
        verification = verify_plan(event, report.grid, report.plan, config, model, integrator)
    alternate = report.alternate
    entry = RunEntry(
        id=event.event_id,
        status=report.status.value,
        constraint=describe_constraint(config.constraint),
        already_safe=report.already_safe,
        branch=report.branch.value,
        alternate_status=alternate.status.value if alternate else None,
        alternate_total_dv_mps=alternate.total_dv / KM_PER_M if alternate else None,
        total_dv_mps=report.plan.total_dv / KM_PER_M,
        active_impulses=report.plan.active_count,
        major_iterations=report.major_iterations,
        minor_iterations=report.minor_iterations_per_major,
        predicted=EncounterMetrics.predicted(report.final, report.d2_bar),
        achieved=EncounterMetrics.achieved(verification) if verification else None,
        verified=bool(verification and verification.satisfied),
        elapsed_s=time.perf_counter() - started,
        exit_code=exit_code_for_status(report.status),
        impulses=_impulse_rows(report, verification),
        trace=[
            TraceRow(
                major=record.major,
                minor=record.minor,
                xi_km=record.dr_b[0],
                zeta_km=record.dr_b[1],
                z_xi_km=record.z_point[0],
                z_zeta_km=record.z_point[1],
                total_dv_mps=record.total_dv / KM_PER_M,
                tca_shift_s=record.tca_shift,
            )
            for record in report.trace
        ],
        keep_out=[
            KeepOutRow(major=zone.major, d2_bar=zone.d2_bar, C_eff=tuple(map(tuple, zone.C_eff)))
            for zone in report.keep_out
        ],
    )
    if verification is not None and not verification.satisfied:
        logger.warning(
            "'%s': verified d² %.6g below %.0f%% of %.6g", event.event_id, verification.d2, 98, verification.d2_bar
        )
    return entry


def exit_code_for_status(status: ScvxStatus) -> int:
    return {
        ScvxStatus.CONVERGED: EXIT_OK,
        ScvxStatus.INFEASIBLE: EXIT_INFEASIBLE,
        ScvxStatus.MAX_ITERATIONS: EXIT_NUMERICAL_FAILURE,
    }[status]


def _percentiles(values: Sequence[float]) -> tuple[Optional[float], Optional[float], Optional[float]]:
    if not values:
        return None, None, None
    p05, p50, p95 = np.percentile(np.asarray(values, dtype=float), [5.0, 50.0, 95.0])
    return float(p05), float(p50), float(p95)


def _median(values: Sequence[float]) -> Optional[float]:
    return float(np.median(values)) if len(values) else None


def compute_aggregates(entries: Iterable[RunEntry]) -> Aggregates:
    """
    Dataset statistics over the full range of values.

    ΔV, impulse and iteration statistics use the Converged entries; every statistic is
    independent of the order of ``entries``.
    """
    entries = list(entries)
    counts: dict[str, int] = {}
    for entry in entries:
        counts[entry.status] = counts.get(entry.status, 0) + 1
    converged = [entry for entry in entries if entry.status == ScvxStatus.CONVERGED.value]
    p05, p50, p95 = _percentiles([float(entry.total_dv_mps or 0.0) for entry in converged])
    minors = [minor for entry in converged for minor in entry.minor_iterations]
    shifts = [abs(entry.achieved.tca_shift_s) for entry in converged if entry.achieved is not None]
    majors = [entry.major_iterations for entry in converged]
    return Aggregates(
        events=len(entries),
        counts=dict(sorted(counts.items())),
        failures=counts.get(FAILED, 0),
        total_dv_median_mps=p50,
        total_dv_p05_mps=p05,
        total_dv_p95_mps=p95,
        active_impulses_median=_median([entry.active_impulses for entry in converged]),
        major_iterations_median=_median(majors),
        major_iterations_max=max(majors) if majors else None,
        minor_iterations_median=_median(minors),
        max_abs_tca_shift_s=max(shifts) if shifts else None,
    )


def run_batch(
    dataset: Union[str, Path, Sequence[EventRecord]],
    config: ConfigSource,
    parallelism: int = 1,
    model: Optional[GravityModel] = None,
    *,
    fmt: Union[EventFormat, str] = EventFormat.AUTO,
    solver: ConeSolver = solve,
    solver_settings: Optional[SolverSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
    progress: Optional[Callable[[RunEntry], None]] = None,
) -> RunReport:
    """
    Runs every event of a dataset, up to ``parallelism`` at a time.

    Failures of single events are recorded as ``Failed`` entries. Entries keep the order of
    the dataset whatever the completion order.
    """
    records = parse_event_file(dataset, fmt) if isinstance(dataset, (str, Path)) else list(dataset)
    model = model or GravityModel()

    def job(record: EventRecord) -> RunEntry:
        started = time.perf_counter()
        label = "unresolved"
        try:
            event = to_event(record)
            event_config = _resolve(config, event)
            label = describe_constraint(event_config.constraint)
            entry = run_single(
                event, event_config, model, solver=solver, solver_settings=solver_settings, integrator=integrator
            )
        except CamException as e:
            logger.warning("event '%s' failed", record.id, exc_info=e)
            entry = RunEntry.failed(record.id, label, e, time.perf_counter() - started)
        if progress is not None:
            progress(entry)
        return entry

    entries = map_in_threads(job, records, limit=parallelism)
    aggregates = compute_aggregates(entries)
    logger.info("batch of %d events: %s", len(entries), aggregates.counts)
    return RunReport(settings=config.dict(), entries=entries, aggregates=aggregates)
