"""
End-to-end checks against the bundled encounter with the full gravity model.

These solve dozens of cone programs each and are marked ``slow``.
"""
import numpy as np
import pytest

from convex_cam.batch import OrbitWindow, RunEntry, run_batch, run_single
from convex_cam.conjunction import ConjunctionEvent, MissDistance, PcApprox, PcMax
from convex_cam.events import from_event
from convex_cam.scvx import ScvxConfig, ScvxStatus, boundary_sweep, solve_cam, sweep_local_minima
from convex_cam.studies import compare_constraints, sweep_dv_max, sweep_lead_time
from convex_cam.synthetic import synthetic_events

pytestmark = pytest.mark.slow

DV_MAX = 6e-6  # km/s


@pytest.fixture(scope="module")
def eight_orbit_window() -> OrbitWindow:
    return OrbitWindow(lead_orbits=8, window_orbits=2, options={"constraint": PcMax(threshold=1e-4), "dv_max": DV_MAX})


@pytest.fixture(scope="module")
def reference_entry(reference_event: ConjunctionEvent, eight_orbit_window: OrbitWindow) -> RunEntry:
    return run_single(reference_event, eight_orbit_window.config_for(reference_event))


def test_reference_maneuver(reference_entry: RunEntry) -> None:
    entry = reference_entry
    assert entry.status == ScvxStatus.CONVERGED.value
    assert entry.total_dv_mps == pytest.approx(0.2042, rel=0.03)
    assert abs(entry.active_impulses - 34) <= 5
    assert entry.major_iterations <= 3
    assert entry.verified
    assert entry.alternate_total_dv_mps == pytest.approx(0.2139, rel=0.03)
    assert entry.achieved is not None and entry.achieved.pc_max <= 1e-4 * 1.05


def test_reference_maneuver_runs_within_budget(
    reference_event: ConjunctionEvent, eight_orbit_window: OrbitWindow
) -> None:
    report = solve_cam(reference_event, eight_orbit_window.config_for(reference_event))
    assert report.status == ScvxStatus.CONVERGED
    assert report.elapsed < 5.0


def test_constraint_definitions_are_ordered(reference_event: ConjunctionEvent) -> None:
    window = OrbitWindow(options={"dv_max": DV_MAX})
    points = compare_constraints(
        reference_event, window, [PcApprox(threshold=1e-6), PcMax(threshold=1e-4), MissDistance(distance_km=2.0)]
    )
    costs = [point.total_dv_mps for point in points]
    assert all(point.status == ScvxStatus.CONVERGED.value for point in points)
    assert costs == pytest.approx([0.0281, 0.2881, 0.5274], rel=0.05)
    assert costs[0] < costs[1] < costs[2]


def test_earlier_maneuvers_are_cheaper(reference_event: ConjunctionEvent) -> None:
    window = OrbitWindow(options={"constraint": PcMax(threshold=1e-4), "dv_max": DV_MAX})
    points = sweep_lead_time(reference_event, window, [16, 12, 8, 4], window_orbits=2)
    costs = [point.total_dv_mps for point in points]
    assert costs == pytest.approx([0.1281, 0.1534, 0.2042, 0.2681], rel=0.05)
    assert all(np.diff(costs) > 0)


def test_impulse_cap(reference_event: ConjunctionEvent) -> None:
    window = OrbitWindow(lead_orbits=2, window_orbits=2, options={"constraint": PcMax(threshold=1e-4)})
    loose, nominal, tight = sweep_dv_max(reference_event, window, [6e-4, DV_MAX, 3e-6])
    assert all(point.status == ScvxStatus.CONVERGED.value for point in (loose, nominal, tight))
    assert loose.active_impulses == 1
    assert loose.total_dv_mps == pytest.approx(0.2749, rel=0.03)
    assert tight.total_dv_mps == pytest.approx(0.3451, rel=0.05)
    assert tight.active_impulses >= 100

    # a looser cap never costs more
    assert loose.total_dv_mps <= nominal.total_dv_mps <= tight.total_dv_mps


def test_boundary_sweep_has_two_valleys(
    reference_event: ConjunctionEvent, eight_orbit_window: OrbitWindow, reference_entry: RunEntry
) -> None:
    config: ScvxConfig = eight_orbit_window.config_for(reference_event)
    points = boundary_sweep(reference_event, config, 300)
    minima = sorted(points[index].total_dv * 1e3 for index in sweep_local_minima(points))
    assert len(minima) == 2
    assert reference_entry.total_dv_mps is not None
    assert abs(minima[0] - reference_entry.total_dv_mps) / reference_entry.total_dv_mps <= 1e-2
    assert minima[0] == pytest.approx(0.2042, rel=0.03)
    assert minima[1] == pytest.approx(0.2139, rel=0.03)

    lowest = sorted(sweep_local_minima(points), key=lambda index: points[index].total_dv)
    separation = abs(points[lowest[0]].angle - points[lowest[1]].angle)
    assert min(separation, 2 * np.pi - separation) > np.pi / 2


def test_synthetic_dataset() -> None:
    records = [from_event(event) for event in synthetic_events(20)]
    window = OrbitWindow(options={"constraint": PcMax(threshold=1e-4), "dv_max": DV_MAX})
    report = run_batch(records, window, parallelism=1)
    assert report.aggregates.events == 20
    assert all(entry.error is None for entry in report.entries)
    assert report.aggregates.counts.get(ScvxStatus.INFEASIBLE.value, 0) <= 1
    assert report.aggregates.major_iterations_median is not None
    assert report.aggregates.major_iterations_median <= 3
    assert max(entry.elapsed_s for entry in report.entries) < 2.0
