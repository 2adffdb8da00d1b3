"""
Parametric studies on a single event: threshold, maneuver window, impulse cap and constraint type.
"""
from typing import Optional, Sequence, Union

from convex_cam.batch import EncounterMetrics, OrbitWindow, RunEntry, run_single
from convex_cam.conjunction import (
    ConjunctionEvent,
    MissDistance,
    PcApprox,
    PcMax,
    describe_constraint,
    parse_constraint,
)
from convex_cam.dynamics import GravityModel
from convex_cam.exceptions import CamException
from convex_cam.logging import get_logger
from convex_cam.schema import BaseSchema
from convex_cam.utils.async_tools import map_in_threads

__all__ = [
    "StudyPoint",
    "compare_constraints",
    "sweep_dv_max",
    "sweep_lead_time",
    "sweep_threshold",
]

logger = get_logger(__name__)

AnyConstraint = Union[PcApprox, PcMax, MissDistance]


class StudyPoint(BaseSchema):
    label: str
    value: float
    status: str
    total_dv_mps: Optional[float] = None
    active_impulses: int = 0
    major_iterations: int = 0
    achieved: Optional[EncounterMetrics] = None
    verified: bool = False
    error: Optional[str] = None

    @classmethod
    def from_entry(cls, label: str, value: float, entry: RunEntry) -> "StudyPoint":
        return cls(
            label=label,
            value=value,
            status=entry.status,
            total_dv_mps=entry.total_dv_mps,
            active_impulses=entry.active_impulses,
            major_iterations=entry.major_iterations,
            achieved=entry.achieved,
            verified=entry.verified,
            error=entry.error,
        )


def _run(
    event: ConjunctionEvent,
    cases: Sequence[tuple[str, float, OrbitWindow]],
    model: Optional[GravityModel],
    parallelism: int,
) -> list[StudyPoint]:
    model = model or GravityModel()

    def job(case: tuple[str, float, OrbitWindow]) -> StudyPoint:
        label, value, window = case
        try:
            entry = run_single(event, window.config_for(event), model)
        except CamException as e:
            logger.warning("study point %s failed for '%s'", label, event.event_id, exc_info=e)
            entry = RunEntry.failed(event.event_id, label, e)
        logger.info("%s: %s, ΔV %s m/s", label, entry.status, entry.total_dv_mps)
        return StudyPoint.from_entry(label, value, entry)

    return map_in_threads(job, list(cases), limit=parallelism)


def sweep_threshold(
    event: ConjunctionEvent,
    window: OrbitWindow,
    kind: str,
    values: Sequence[float],
    model: Optional[GravityModel] = None,
    parallelism: int = 1,
) -> list[StudyPoint]:
    """
    Solves the event for each threshold of one constraint ``kind`` (``pc``, ``pcmax`` or ``miss``).

    Probability thresholds are probabilities and ``miss`` values are distances [km].
    """
    cases = []
    for value in values:
        constraint = parse_constraint(f"{kind}={value!r}")
        cases.append((describe_constraint(constraint), float(value), window.with_options(constraint=constraint)))
    return _run(event, cases, model, parallelism)


def sweep_lead_time(
    event: ConjunctionEvent,
    window: OrbitWindow,
    lead_orbits: Sequence[float],
    window_orbits: Optional[float] = 2.0,
    model: Optional[GravityModel] = None,
    parallelism: int = 1,
) -> list[StudyPoint]:
    """Solves the event for maneuver windows opening ``lead_orbits`` before the encounter."""
    cases = [
        (f"lead={lead:g}", float(lead), window.copy(update={"lead_orbits": lead, "window_orbits": window_orbits}))
        for lead in lead_orbits
    ]
    return _run(event, cases, model, parallelism)


def sweep_dv_max(
    event: ConjunctionEvent,
    window: OrbitWindow,
    values: Sequence[float],
    model: Optional[GravityModel] = None,
    parallelism: int = 1,
) -> list[StudyPoint]:
    """Solves the event for each per-impulse cap [km/s]."""
    cases = [(f"dvmax={value:g}", float(value), window.with_options(dv_max=value)) for value in values]
    return _run(event, cases, model, parallelism)


def compare_constraints(
    event: ConjunctionEvent,
    window: OrbitWindow,
    constraints: Sequence[AnyConstraint],
    model: Optional[GravityModel] = None,
    parallelism: int = 1,
) -> list[StudyPoint]:
    """Solves the event under several constraint definitions."""
    cases = [
        (describe_constraint(constraint), constraint.value, window.with_options(constraint=constraint))
        for constraint in constraints
    ]
    return _run(event, cases, model, parallelism)
