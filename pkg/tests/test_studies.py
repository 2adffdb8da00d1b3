from typing import Any

from pytest_mock import MockerFixture

from convex_cam.batch import OrbitWindow, RunEntry
from convex_cam.conjunction import ConjunctionEvent, MissDistance, PcApprox, PcMax
from convex_cam.exceptions import NoConvergenceError
from convex_cam.scvx import ScvxConfig
from convex_cam.studies import compare_constraints, sweep_dv_max, sweep_lead_time, sweep_threshold


def _echo(event: ConjunctionEvent, config: ScvxConfig, model: Any) -> RunEntry:
    """Reports the resolved config back through the entry fields."""
    return RunEntry(
        id=event.event_id,
        status="Converged",
        constraint=config.constraint.kind,
        total_dv_mps=config.lead_time,
        active_impulses=round(config.dv_max * 1e6),
    )


def test_sweep_threshold(mocker: MockerFixture, isotropic_event: ConjunctionEvent) -> None:
    run = mocker.patch("convex_cam.studies.run_single", side_effect=_echo)
    points = sweep_threshold(isotropic_event, OrbitWindow(lead_orbits=0.5), "pcmax", [1e-3, 1e-5])
    assert [point.label for point in points] == ["pcmax=0.001", "pcmax=1e-05"]
    assert [point.value for point in points] == [1e-3, 1e-5]
    assert [call.args[1].constraint for call in run.call_args_list] == [
        PcMax(threshold=1e-3),
        PcMax(threshold=1e-5),
    ]


def test_sweep_lead_time_orders_windows(mocker: MockerFixture, isotropic_event: ConjunctionEvent) -> None:
    mocker.patch("convex_cam.studies.run_single", side_effect=_echo)
    points = sweep_lead_time(isotropic_event, OrbitWindow(), [1.0, 0.5], window_orbits=0.25)
    assert [point.label for point in points] == ["lead=1", "lead=0.5"]
    assert points[0].total_dv_mps is not None and points[1].total_dv_mps is not None
    assert points[0].total_dv_mps == 2.0 * points[1].total_dv_mps


def test_sweep_dv_max_and_constraints(mocker: MockerFixture, isotropic_event: ConjunctionEvent) -> None:
    mocker.patch("convex_cam.studies.run_single", side_effect=_echo)
    caps = sweep_dv_max(isotropic_event, OrbitWindow(lead_orbits=0.5), [6e-4, 3e-6], parallelism=2)
    assert [point.active_impulses for point in caps] == [600, 3]

    constraints = [PcApprox(threshold=1e-6), PcMax(threshold=1e-4), MissDistance(distance_km=2.0)]
    compared = compare_constraints(isotropic_event, OrbitWindow(lead_orbits=0.5), constraints)
    assert [point.label for point in compared] == ["pc=1e-06", "pcmax=0.0001", "miss=2"]
    assert [point.value for point in compared] == [1e-6, 1e-4, 2.0]


def test_failed_point_is_recorded(mocker: MockerFixture, isotropic_event: ConjunctionEvent) -> None:
    mocker.patch("convex_cam.studies.run_single", side_effect=NoConvergenceError("stuck"))
    [point] = sweep_dv_max(isotropic_event, OrbitWindow(lead_orbits=0.5), [6e-6])
    assert point.status == "Failed"
    assert point.error == "NoConvergenceError: stuck"
    assert point.total_dv_mps is None
