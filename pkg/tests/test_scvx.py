import math
from typing import Callable

import numpy as np
import pytest
from pydantic import ValidationError

from convex_cam.batch import OrbitWindow
from convex_cam.conjunction import ConjunctionEvent, MissDistance, PcApprox, PcMax, encounter_geometry, refine_tca
from convex_cam.dynamics import GravityModel, orbital_period
from convex_cam.exceptions import DimensionMismatchError, GridTooShortError, InvalidThresholdError
from convex_cam.scvx import (
    KM_PER_M,
    VERIFICATION_MARGIN,
    Linearization,
    ManeuverPlan,
    ScvxConfig,
    ScvxReport,
    ScvxStatus,
    SweepPoint,
    assemble_subproblem,
    assemble_terminal_subproblem,
    build_grid,
    ellipse_projection_program,
    linearize_reference,
    project_to_ellipse,
    solve_cam,
    sweep_local_minima,
    verify_plan,
)
from convex_cam.socp import ConeKind, SolverSettings, SolverStatus, solve

ToyFactory = Callable[..., Linearization]


def test_grid_covers_the_lead_time(isotropic_event: ConjunctionEvent) -> None:
    grid = build_grid(isotropic_event, ScvxConfig(lead_time=600.0))
    assert grid.n == 10
    assert grid.node_times.size == 11
    assert grid.node_times[0] == -600.0 and grid.node_times[-1] == 0.0
    assert np.allclose(np.diff(grid.node_times), 60.0)


def test_grid_drops_partial_steps(isotropic_event: ConjunctionEvent) -> None:
    grid = build_grid(isotropic_event, ScvxConfig(lead_time=630.0))
    assert grid.n == 10
    assert grid.node_times[0] == -600.0


def test_grid_caps_the_impulse_count(isotropic_event: ConjunctionEvent) -> None:
    grid = build_grid(isotropic_event, ScvxConfig(lead_time=60000.0, n_max=170))
    assert grid.n == 170
    assert grid.node_times[0] == -60000.0
    assert grid.impulse_times[-1] == -60000.0 + 169 * 60.0
    assert grid.node_times[-1] == 0.0


def test_grid_needs_one_step(isotropic_event: ConjunctionEvent) -> None:
    with pytest.raises(ValidationError):
        ScvxConfig(lead_time=30.0)
    with pytest.raises(GridTooShortError):
        build_grid(isotropic_event, ScvxConfig.construct(lead_time=30.0, delta_t=60.0, n_max=200))


def test_config_from_orbits(isotropic_event: ConjunctionEvent) -> None:
    period = orbital_period(isotropic_event.primary)
    config = ScvxConfig.from_orbits(isotropic_event, 2.0, 1.0, dv_max=1e-3)
    assert config.lead_time == pytest.approx(2.0 * period)
    assert config.n_max == math.floor(period / 60.0)
    assert config.dv_max == 1e-3


@pytest.mark.parametrize(
    ("point", "C_eff", "expected"),
    [
        ([2.0, 0.0], np.eye(2), [1.0, 0.0]),
        ([0.5, 0.0], np.eye(2), [1.0, 0.0]),
        ([0.0, 0.0], np.diag([1.0, 4.0]), [1.0, 0.0]),
        ([0.0, 0.0], np.diag([4.0, 1.0]), [0.0, 1.0]),
        ([0.6, 0.8], np.eye(2), [0.6, 0.8]),
    ],
)
def test_ellipse_projection_cases(point: list[float], C_eff: np.ndarray, expected: list[float]) -> None:
    assert np.allclose(project_to_ellipse(point, C_eff, 1.0), expected, atol=1e-10)


def _sampled_distance(point: np.ndarray, C_eff: np.ndarray, d2_bar: float, samples: int = 100_000) -> float:
    angles = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    lower = np.linalg.cholesky(C_eff)
    boundary = math.sqrt(d2_bar) * lower @ np.vstack([np.cos(angles), np.sin(angles)])
    return float(np.min(np.linalg.norm(boundary - point[:, None], axis=0)))


@pytest.mark.parametrize("seed", range(12))
def test_ellipse_projection_beats_dense_sampling(seed: int) -> None:
    rng = np.random.default_rng(seed)
    factor = rng.normal(size=(2, 2))
    C_eff = factor @ factor.T + 0.05 * np.eye(2)
    d2_bar = rng.uniform(0.5, 4.0)
    point = rng.normal(size=2) * rng.choice([0.1, 1.0, 5.0])
    z = project_to_ellipse(point, C_eff, d2_bar)
    assert float(z @ np.linalg.solve(C_eff, z)) == pytest.approx(d2_bar, rel=1e-9)
    assert np.linalg.norm(z - point) <= _sampled_distance(point, C_eff, d2_bar) + 1e-9


def test_interior_point_on_major_axis() -> None:
    C_eff = np.diag([1.0, 4.0])
    point = np.array([0.0, 0.5])
    z = project_to_ellipse(point, C_eff, 1.0)
    assert z[0] > 0.0
    assert z @ np.linalg.solve(C_eff, z) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(z - point) <= _sampled_distance(point, C_eff, 1.0) + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_ellipse_projection_program_agrees_for_exterior_points(seed: int) -> None:
    rng = np.random.default_rng(100 + seed)
    factor = rng.normal(size=(2, 2))
    C_eff = factor @ factor.T + 0.1 * np.eye(2)
    d2_bar = rng.uniform(0.5, 2.0)
    direction = rng.normal(size=2)
    point = 3.0 * math.sqrt(d2_bar * np.linalg.eigvalsh(C_eff)[-1]) * direction / np.linalg.norm(direction)
    solution = solve(ellipse_projection_program(point, C_eff, d2_bar), SolverSettings(tol=1e-9))
    assert solution.is_optimal
    z = project_to_ellipse(point, C_eff, d2_bar)
    assert np.allclose(solution.x[1:], z, atol=1e-6)
    assert solution.obj_primal == pytest.approx(np.linalg.norm(point - z), abs=1e-6)


def test_single_impulse_subproblem_closed_form(toy_linearization: ToyFactory, toy_config: ScvxConfig) -> None:
    lin = toy_linearization(1)
    z = project_to_ellipse(lin.dr_b_ref, np.eye(2), 1.0)
    program = assemble_subproblem(lin, ManeuverPlan.zeros(1), z, np.eye(2), toy_config)
    solution = solve(program, SolverSettings(tol=1e-9))
    assert solution.is_optimal
    assert np.allclose(solution.x, [0.5, 0.0, 0.0, 0.5], atol=1e-6)
    plan = ManeuverPlan.from_vector(solution.x, 1)
    assert plan.total_dv == pytest.approx(0.5 * KM_PER_M, rel=1e-5)
    assert plan.active_count == 1


def test_subproblem_structure(toy_linearization: ToyFactory, toy_config: ScvxConfig) -> None:
    n = 4
    program = assemble_subproblem(toy_linearization(n), ManeuverPlan.zeros(n), [1.0, 0.0], np.eye(2), toy_config)
    assert program.n == 4 * n
    assert program.cones.count(ConeKind.SECOND_ORDER) == n + 1
    first = program.cones.blocks[0]
    assert first.kind == ConeKind.NONNEGATIVE and first.dim == 2 * n + 1
    assert [block.dim for block in program.cones.blocks[1:]] == [4] * n + [3]
    assert np.array_equal(program.c, np.concatenate([np.zeros(3 * n), np.ones(n)]))
    assert np.all(program.h[n : 2 * n] == toy_config.dv_max / KM_PER_M)


def test_half_plane_slack_at_the_reference_plan(toy_linearization: ToyFactory, toy_config: ScvxConfig) -> None:
    n = 3
    lin = toy_linearization(n, dr_b_ref=(0.3, -0.2))
    rng = np.random.default_rng(7)
    impulses = rng.normal(size=(n, 3)) * 1e-4
    plan_prev = ManeuverPlan(impulses, np.linalg.norm(impulses, axis=1))
    C_eff = np.array([[2.0, 0.4], [0.4, 0.5]])
    z = project_to_ellipse(lin.dr_b_ref, C_eff, 1.5)
    program = assemble_subproblem(lin, plan_prev, z, C_eff, toy_config)
    gradient = np.linalg.solve(C_eff, z)
    unit = gradient / np.linalg.norm(gradient)
    row = 2 * n
    slack = program.h[row] - program.G[row] @ plan_prev.as_vector()
    assert float(np.squeeze(slack)) == pytest.approx(float(unit @ (lin.dr_b_ref - z)), abs=1e-12)


def test_terminal_subproblem_structure(toy_linearization: ToyFactory, toy_config: ScvxConfig) -> None:
    n = 2
    program = assemble_terminal_subproblem(toy_linearization(n), ManeuverPlan.zeros(n), [1.0, 0.0], toy_config)
    assert program.cones.blocks[0].dim == 2 * n + 4
    assert program.cones.count(ConeKind.SECOND_ORDER) == n + 1


def test_subproblem_rejects_mismatched_plan(toy_linearization: ToyFactory, toy_config: ScvxConfig) -> None:
    with pytest.raises(DimensionMismatchError):
        assemble_subproblem(toy_linearization(3), ManeuverPlan.zeros(2), [1.0, 0.0], np.eye(2), toy_config)


@pytest.mark.parametrize("angle", np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False))
def test_isotropic_terminal_cost_is_constant(
    angle: float, toy_linearization: ToyFactory, toy_config: ScvxConfig
) -> None:
    lin = toy_linearization(1, dr_b_ref=(0.0, 0.0))
    target = np.array([math.cos(angle), math.sin(angle)])
    program = assemble_terminal_subproblem(lin, ManeuverPlan.zeros(1), target, toy_config)
    solution = solve(program, SolverSettings(tol=1e-9))
    assert solution.is_optimal
    assert solution.obj_primal == pytest.approx(1.0, abs=1e-5)
    assert np.allclose(solution.x[[0, 2]], target, atol=1e-5)


def _profile(values: list[float]) -> list[SweepPoint]:
    count = len(values)
    return [
        SweepPoint(i, 2.0 * math.pi * i / count, np.zeros(2), SolverStatus.OPTIMAL, value, 1)
        for i, value in enumerate(values)
    ]


def test_sweep_local_minima_finds_both_valleys() -> None:
    values = [2.0 + math.cos(4.0 * math.pi * i / 40) + 0.1 * math.sin(2.0 * math.pi * i / 40) for i in range(40)]
    minima = sweep_local_minima(_profile(values))
    assert len(minima) == 2
    assert {round(values[i], 6) for i in minima} == {round(min(values[:20]), 6), round(min(values[20:]), 6)}


def test_sweep_local_minima_skips_failures_and_plateaus() -> None:
    values = [3.0 - math.sin(2.0 * math.pi * i / 40) for i in range(40)]
    values[10] = values[11] = 1.0
    values[12] = math.nan
    assert sweep_local_minima(_profile(values)) == [10]
    assert sweep_local_minima([]) == []


def test_maneuver_plan_round_trip() -> None:
    vector = np.array([1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 2.0])
    plan = ManeuverPlan.from_vector(vector, 2)
    assert plan.n == 2
    assert np.allclose(plan.impulses, [[1e-3, 0.0, 0.0], [0.0, 2e-3, 0.0]])
    assert np.allclose(plan.as_vector(), vector)
    assert np.allclose(plan.impulse_norms, plan.magnitudes)
    assert plan.total_dv == pytest.approx(3e-3)


def test_maneuver_plan_clamps_negative_magnitudes() -> None:
    plan = ManeuverPlan.from_vector([0.0, 0.0, 0.0, -1e-12], 1)
    assert plan.magnitudes[0] == 0.0
    assert plan.active_count == 0


def test_maneuver_plan_validates_shapes() -> None:
    with pytest.raises(DimensionMismatchError):
        ManeuverPlan(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        ManeuverPlan.from_vector(np.zeros(7), 2)


def test_safe_event_needs_no_maneuver(isotropic_event: ConjunctionEvent) -> None:
    report = solve_cam(isotropic_event, ScvxConfig(lead_time=600.0))
    assert report.already_safe
    assert report.status == ScvxStatus.CONVERGED
    assert report.plan.total_dv == 0.0
    assert report.major_iterations == 0
    assert report.verification is None


def test_unreachable_threshold_is_reported(reference_event: ConjunctionEvent) -> None:
    with pytest.raises(InvalidThresholdError):
        solve_cam(reference_event, ScvxConfig(lead_time=600.0, constraint=PcApprox(threshold=0.5)))


def test_ballistic_linearization_predicts_small_maneuvers(
    isotropic_event: ConjunctionEvent, two_body: GravityModel
) -> None:
    config = ScvxConfig(lead_time=600.0, constraint=MissDistance(distance_km=3.0))
    grid = build_grid(isotropic_event, config)
    lin = linearize_reference(isotropic_event, grid, ManeuverPlan.zeros(grid.n), two_body)
    assert lin.A_big.shape == (6, 4 * grid.n)
    assert not np.any(lin.A_big[:, 3 * grid.n :])
    assert np.allclose(lin.dr_b_ref, encounter_geometry(isotropic_event).dr_b, atol=1e-5)
    assert lin.tca_ref == pytest.approx(0.0, abs=1e-6)

    impulses = np.zeros((grid.n, 3))
    impulses[0] = [0.0, 1e-5, 0.0]
    plan = ManeuverPlan(impulses, np.linalg.norm(impulses, axis=1))
    verification = verify_plan(isotropic_event, grid, plan, config, two_body)
    predicted = lin.dr_b_ref + lin.bplane_map @ plan.as_vector()
    moved = np.linalg.norm(verification.encounter.dr_b - lin.dr_b_ref)
    assert moved > 1e-4
    assert np.linalg.norm(verification.encounter.dr_b - predicted) < 1e-3 * moved

    predicted_tca = lin.tca_ref + float(lin.tca_map @ plan.as_vector())
    assert abs(predicted_tca - verification.encounter.t_ca) < 1e-3
    t_ca, _, _ = refine_tca(verification.node_states[-1], isotropic_event.secondary, predicted_tca, two_body)
    assert abs(predicted_tca - t_ca) < 1e-3


@pytest.mark.slow
def test_crossing_encounter_reaches_the_miss_distance(
    isotropic_event: ConjunctionEvent, two_body: GravityModel
) -> None:
    config = ScvxConfig(lead_time=1200.0, dv_max=1e-2, constraint=MissDistance(distance_km=3.0))
    report = solve_cam(isotropic_event, config, two_body)
    assert report.status == ScvxStatus.CONVERGED
    assert report.d2_bar == 9.0
    assert report.final.d2 >= report.d2_bar * (1.0 - 1e-6)
    assert report.verification is not None and report.verification.satisfied
    assert report.plan.total_dv > 0.0
    assert np.all(report.plan.magnitudes <= config.dv_max * (1.0 + 1e-6))
    verification = report.verification
    assert verification.d2 >= VERIFICATION_MARGIN * verification.d2_bar
    assert verification.miss_distance >= 3.0 * math.sqrt(VERIFICATION_MARGIN)


@pytest.fixture(scope="module")
def reference_report(reference_event: ConjunctionEvent) -> ScvxReport:
    window = OrbitWindow(lead_orbits=8, window_orbits=2, options={"constraint": PcMax(threshold=1e-4), "dv_max": 6e-6})
    return solve_cam(reference_event, window.config_for(reference_event))


@pytest.mark.slow
def test_impulse_norms_match_their_magnitudes(reference_report: ScvxReport) -> None:
    plan = reference_report.plan
    assert reference_report.status == ScvxStatus.CONVERGED
    assert plan.active_count > 0
    assert np.max(np.abs(np.linalg.norm(plan.impulses, axis=1) - plan.magnitudes)) <= 1e-7 * KM_PER_M


@pytest.mark.slow
def test_cheaper_start_is_returned(reference_report: ScvxReport) -> None:
    alternate = reference_report.alternate
    assert alternate is not None
    assert alternate.status == ScvxStatus.CONVERGED
    assert alternate.branch != reference_report.branch
    assert reference_report.plan.total_dv <= alternate.total_dv
    assert alternate.total_dv / KM_PER_M == pytest.approx(0.2111, rel=0.03)
