"""
Fuel-optimal multi-impulse collision avoidance by successive convexification.

The impulse magnitudes are slack variables bounded by second-order cones, so the objective is
linear. Dynamics are linearized about the previous plan (major iterations) and the keep-out
ellipse on the b-plane is replaced by the half-plane tangent at the closest boundary point
(minor iterations). Inside the conic subproblem impulses are expressed in m/s; plans carry
km/s.
"""
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import Field, root_validator
from scipy import linalg, sparse

from convex_cam.conjunction import (
    ConjunctionEvent,
    Encounter,
    MissDistance,
    PcApprox,
    PcMax,
    ThresholdTarget,
    analyze_encounter,
    combined_bplane_covariance,
    encounter_geometry,
    encounter_sensitivities,
    mahalanobis_sq,
    pc_approx,
    pc_max,
    pc_quadrature,
    threshold_to_mahalanobis,
)
from convex_cam.dynamics import (
    GravityModel,
    IntegratorSettings,
    SegmentMap,
    StateVector,
    orbital_period,
    propagate,
    propagate_through,
    propagate_with_stm,
)
from convex_cam.exceptions import (
    ConeSolverError,
    DegenerateGeometryError,
    DimensionMismatchError,
    DirectImpactError,
    GridTooShortError,
    NoConvergenceError,
    QuadratureNonConvergenceError,
)
from convex_cam.logging import get_logger
from convex_cam.schema import BaseSchema
from convex_cam.settings import CovarianceFrame
from convex_cam.socp import (
    ConeBlock,
    ConeProgram,
    ConeSolver,
    ConeSpec,
    SolverSettings,
    SolverStatus,
    solve,
)
from convex_cam.utils.async_tools import map_in_threads

__all__ = [
    "ACTIVE_IMPULSE",
    "Branch",
    "BranchSummary",
    "FinalMetrics",
    "IterationRecord",
    "KeepOutZone",
    "Linearization",
    "ManeuverPlan",
    "PlanVerification",
    "ScvxConfig",
    "ScvxReport",
    "ScvxStatus",
    "SweepPoint",
    "TimeGrid",
    "assemble_subproblem",
    "assemble_terminal_subproblem",
    "boundary_sweep",
    "build_grid",
    "ellipse_projection_program",
    "linearize_reference",
    "project_to_ellipse",
    "solve_cam",
    "sweep_local_minima",
    "verify_plan",
]

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
AnyConstraint = Union[PcApprox, PcMax, MissDistance]

ACTIVE_IMPULSE = 1e-9
KM_PER_M = 1e-3
VERIFICATION_MARGIN = 0.98


class ScvxStatus(str, Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


class Branch(str, Enum):
    PLUS = "PlusStart"
    MINUS = "MinusStart"


class ScvxConfig(BaseSchema):
    """
    Parameters of one maneuver design run.

    Times are seconds, velocities km/s and b-plane distances km.
    """

    delta_t: float = Field(60.0, gt=0.0)
    n_max: int = Field(200, ge=1)
    lead_time: float = Field(..., gt=0.0)
    dv_max: float = Field(6e-6, gt=0.0)
    constraint: AnyConstraint = Field(PcMax(threshold=1e-4), discriminator="kind")
    tol_major: float = Field(1e-6, gt=0.0)
    tol_minor: float = Field(1e-3, gt=0.0)
    max_major: int = Field(15, ge=1)
    max_minor: int = Field(30, ge=1)
    bplane_deviation_cap: float = Field(20.0, gt=0.0)
    dual_start: bool = True
    frame_mode: Optional[CovarianceFrame] = None

    @root_validator(skip_on_failure=True)
    def _lead_time_covers_a_step(cls, values: dict) -> dict:  # pylint: disable=no-self-argument
        if values["lead_time"] <= values["delta_t"]:
            raise ValueError("lead_time must exceed delta_t")
        return values

    @classmethod
    def from_orbits(
        cls, event: ConjunctionEvent, lead_orbits: float, window_orbits: Optional[float] = None, **kwargs: object
    ) -> "ScvxConfig":
        """
        Builds a config whose maneuver window opens ``lead_orbits`` primary periods before the
        encounter and lasts ``window_orbits`` periods.
        """
        period = orbital_period(event.primary)
        config = cls(lead_time=lead_orbits * period, **kwargs)
        if window_orbits is not None:
            window_nodes = max(1, math.floor(window_orbits * period / config.delta_t + 1e-9))
            config = config.copy(update={"n_max": min(config.n_max, window_nodes)})
        return config


@dataclass(frozen=True)
class TimeGrid:
    """
    Impulse nodes ``0..N−1`` and the encounter node ``N`` [s relative to nominal closest approach].
    """

    node_times: FloatArray
    delta_t: float

    @property
    def n(self) -> int:
        return int(self.node_times.size - 1)

    @property
    def impulse_times(self) -> FloatArray:
        return self.node_times[:-1]  # type: ignore[no-any-return]


@dataclass(frozen=True)
class ManeuverPlan:
    """Impulse vectors and their magnitude slacks [km/s], one row per impulse node."""

    impulses: FloatArray
    magnitudes: FloatArray

    def __post_init__(self) -> None:
        impulses = np.array(self.impulses, dtype=float).reshape(-1, 3)
        magnitudes = np.array(self.magnitudes, dtype=float).reshape(-1)
        if impulses.shape[0] != magnitudes.size:
            raise DimensionMismatchError("one magnitude per impulse is required")
        impulses.setflags(write=False)
        magnitudes.setflags(write=False)
        object.__setattr__(self, "impulses", impulses)
        object.__setattr__(self, "magnitudes", magnitudes)

    @classmethod
    def zeros(cls, n: int) -> "ManeuverPlan":
        return cls(np.zeros((n, 3)), np.zeros(n))

    @classmethod
    def from_vector(cls, x: ArrayLike, n: int) -> "ManeuverPlan":
        """From a subproblem solution ``[Δv_0..Δv_{N−1}, σ_0..σ_{N−1}]`` in m/s."""
        vector = np.asarray(x, dtype=float) * KM_PER_M
        if vector.size != 4 * n:
            raise DimensionMismatchError(f"expected {4 * n} entries, got {vector.size}")
        return cls(vector[: 3 * n].reshape(n, 3), np.maximum(vector[3 * n :], 0.0))

    def as_vector(self) -> FloatArray:
        """Subproblem variable vector in m/s."""
        return np.concatenate([self.impulses.reshape(-1), self.magnitudes]) / KM_PER_M  # type: ignore[no-any-return]

    @property
    def n(self) -> int:
        return int(self.magnitudes.size)

    @property
    def total_dv(self) -> float:
        return float(np.sum(self.magnitudes))

    @property
    def active_mask(self) -> NDArray[np.bool_]:
        return self.magnitudes > ACTIVE_IMPULSE  # type: ignore[no-any-return]

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.active_mask))

    @property
    def impulse_norms(self) -> FloatArray:
        return np.linalg.norm(self.impulses, axis=1)  # type: ignore[no-any-return]


@dataclass(frozen=True)
class Linearization:
    """
    First-order model of the encounter about a reference plan.

    ``A_big`` (6×4N) maps absolute impulse changes [km/s] to the primary state deviation at the
    encounter node; ``B_row`` and ``C_mat`` map that deviation to the closest-approach time shift
    and the b-plane position shift.
    """

    A_big: FloatArray
    B_row: FloatArray
    C_mat: FloatArray
    dr_b_ref: FloatArray
    tca_ref: float
    segment_maps: tuple[SegmentMap, ...] = ()
    node_states: tuple[StateVector, ...] = ()
    encounter: Optional[Encounter] = None

    @property
    def n(self) -> int:
        return int(self.A_big.shape[1] // 4)

    @property
    def bplane_map(self) -> FloatArray:
        """``C_mat A_big`` with impulses in m/s."""
        return self.C_mat @ self.A_big * KM_PER_M  # type: ignore[no-any-return]

    @property
    def tca_map(self) -> FloatArray:
        """``B_row A_big`` with impulses in m/s."""
        return self.B_row @ self.A_big * KM_PER_M  # type: ignore[no-any-return]


@dataclass(frozen=True)
class IterationRecord:
    major: int
    minor: int
    dr_b: FloatArray
    z_point: FloatArray
    total_dv: float
    tca_shift: float
    solver_iterations: int


@dataclass(frozen=True)
class KeepOutZone:
    """Keep-out ellipse ``zᵀ C_eff⁻¹ z = d2_bar`` used during one major iteration."""

    major: int
    C_eff: FloatArray
    d2_bar: float


@dataclass(frozen=True)
class FinalMetrics:
    """Encounter predicted by the last linearization for the returned plan."""

    dr_b: FloatArray
    d2: float
    pc_approx: float
    pc_max: float
    miss_distance: float
    tca_shift: float


@dataclass(frozen=True)
class PlanVerification:
    """Encounter obtained by propagating the plan through the full dynamics."""

    encounter: Encounter
    node_states: tuple[StateVector, ...]
    C_b: FloatArray
    d2: float
    d2_bar: float
    d2_covariance: float
    pc_approx: float
    pc_max: float
    pc_quadrature: Optional[float]
    miss_distance: float
    tca_shift: float
    satisfied: bool


@dataclass(frozen=True)
class BranchSummary:
    branch: Branch
    status: ScvxStatus
    total_dv: float
    major_iterations: int


@dataclass(frozen=True)
class ScvxReport:
    status: ScvxStatus
    plan: ManeuverPlan
    grid: TimeGrid
    constraint: AnyConstraint
    branch: Branch
    major_iterations: int
    minor_iterations_per_major: list[int]
    trace: list[IterationRecord]
    keep_out: list[KeepOutZone]
    d2_bar: float
    final: FinalMetrics
    already_safe: bool = False
    alternate: Optional[BranchSummary] = None
    verification: Optional[PlanVerification] = None
    elapsed: float = 0.0


@dataclass(frozen=True)
class SweepPoint:
    index: int
    angle: float
    boundary_point: FloatArray
    status: SolverStatus
    total_dv: float
    active_count: int
    plan: Optional[ManeuverPlan] = field(default=None, repr=False)


def build_grid(event: ConjunctionEvent, config: ScvxConfig) -> TimeGrid:
    """
    Uniform grid anchored on the encounter.

    With ``K = floor(lead_time/Δt)`` and ``N = min(K, n_max)`` the impulse nodes are
    ``t_CA − (K − i)Δt`` for ``i < N``; node ``N`` is ``t_CA``. When ``N < K`` the last segment
    is a coast to the encounter.
    """
    steps = math.floor(config.lead_time / config.delta_t + 1e-9)
    n = min(steps, config.n_max)
    if n < 1:
        raise GridTooShortError(f"lead time {config.lead_time} s holds no {config.delta_t} s step")
    t_ca = event.primary.epoch
    times = [t_ca - (steps - i) * config.delta_t for i in range(n)]
    times.append(t_ca)
    return TimeGrid(np.array(times), config.delta_t)


def _forward(
    initial_state: StateVector,
    grid: TimeGrid,
    plan: ManeuverPlan,
    model: GravityModel,
    settings: Optional[IntegratorSettings],
    with_stm: bool,
) -> tuple[list[StateVector], list[SegmentMap]]:
    """States at every node before its impulse (the last one is the encounter anchor)."""
    if plan.n != grid.n:
        raise DimensionMismatchError(f"plan has {plan.n} impulses for a {grid.n}-node grid")
    if not with_stm:
        legs = propagate_through(initial_state, grid.node_times[1:], model, settings, impulses=plan.impulses)
        return [initial_state, *legs], []
    states = [initial_state]
    maps: list[SegmentMap] = []
    state = initial_state
    for i in range(grid.n):
        kicked = state.with_impulse(plan.impulses[i])
        state, segment = propagate_with_stm(kicked, grid.node_times[i + 1], model, settings)
        maps.append(segment)
        states.append(state)
    return states, maps


def _initial_state(
    event: ConjunctionEvent, grid: TimeGrid, model: GravityModel, settings: Optional[IntegratorSettings]
) -> StateVector:
    return propagate(event.primary, float(grid.node_times[0]), model, settings)


def linearize_reference(
    event: ConjunctionEvent,
    grid: TimeGrid,
    plan_prev: ManeuverPlan,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
    *,
    initial_state: Optional[StateVector] = None,
    t_guess: Optional[float] = None,
) -> Linearization:
    """
    Linearizes the encounter about the trajectory flown with ``plan_prev``.

    The primary is propagated back to the first node (unless ``initial_state`` is given), then
    forward through every segment with its state transition matrix, applying the reference
    impulses. The segment maps are composed into ``A_big`` and the maneuvered encounter is
    refined and differentiated for ``B_row`` and ``C_mat``. The secondary is unaffected by the
    maneuver and stays anchored at the nominal encounter.
    """
    start = initial_state or _initial_state(event, grid, model, settings)
    states, maps = _forward(start, grid, plan_prev, model, settings, with_stm=True)
    n = grid.n
    A_big = np.zeros((6, 4 * n))
    psi = np.eye(6)
    for i in range(n - 1, -1, -1):
        psi = psi @ maps[i].stm
        A_big[:, 3 * i : 3 * i + 3] = psi[:, 3:]
    guess = event.primary.epoch if t_guess is None else t_guess
    encounter = analyze_encounter(states[-1], event.secondary, model, guess, settings)
    sensitivities = encounter_sensitivities(encounter, model, settings)
    logger.debug(
        "linearized %d segments, tca %+.4f s, dr_b (%.6f, %.6f) km",
        n,
        encounter.t_ca,
        encounter.dr_b[0],
        encounter.dr_b[1],
    )
    return Linearization(
        A_big,
        sensitivities.B_row,
        sensitivities.C_mat,
        encounter.dr_b,
        encounter.t_ca,
        tuple(maps),
        tuple(states),
        encounter,
    )


def ellipse_projection_program(p: ArrayLike, C_eff: ArrayLike, d2_bar: float) -> ConeProgram:
    """
    ``min ‖p − z‖ subject to zᵀ C_eff⁻¹ z ≤ d2_bar`` over ``(t, z)`` as a cone program.
    """
    point = np.asarray(p, dtype=float)
    lower = linalg.cholesky(np.asarray(C_eff, dtype=float), lower=True)
    whitening = linalg.solve_triangular(lower, np.eye(2), lower=True)
    G = np.zeros((6, 3))
    G[0, 0] = -1.0
    G[1:3, 1:] = np.eye(2)
    G[4:6, 1:] = -whitening
    h = np.concatenate([[0.0], point, [math.sqrt(d2_bar)], [0.0, 0.0]])
    cones = ConeSpec.of(ConeBlock.second_order(3), ConeBlock.second_order(3))
    return ConeProgram(np.array([1.0, 0.0, 0.0]), G, h, cones)


def _tie_break(direction: FloatArray) -> FloatArray:
    if direction[0] < 0.0 or (direction[0] == 0.0 and direction[1] < 0.0):
        return -direction  # type: ignore[no-any-return]
    return direction


def project_to_ellipse(
    p: ArrayLike,
    C_eff: ArrayLike,
    d2_bar: float,
    *,
    solver: ConeSolver = solve,
    max_iterations: int = 100,
) -> FloatArray:
    """
    Closest point to ``p`` on the ellipse ``zᵀ C_eff⁻¹ z = d2_bar``.

    The Lagrange condition ``z = (I + ν C_eff⁻¹)⁻¹ p`` is solved for ``ν`` by safeguarded Newton
    iterations in the eigenbasis of ``C_eff``. For ``p = 0`` the result is the minor-axis end
    point on the ``+ξ`` side (``+ζ`` when the axis is along ``ζ``). If the iteration fails for an
    exterior point the projection is solved as a cone program.

    Raises
    ------
    NoConvergenceError
        The multiplier iteration failed for an interior point.
    """
    point = np.asarray(p, dtype=float)
    eigenvalues, vectors = np.linalg.eigh(np.asarray(C_eff, dtype=float))
    if not eigenvalues[0] > 0.0:
        raise DegenerateGeometryError("keep-out covariance is not positive definite")
    q = vectors.T @ point
    level = float(np.sum(q**2 / eigenvalues))
    if math.isclose(level, d2_bar, rel_tol=1e-14):
        return point
    scale = math.sqrt(float(point @ point)) + math.sqrt(d2_bar * eigenvalues[-1])
    if math.sqrt(float(q @ q)) <= 1e-15 * scale:
        return _tie_break(vectors[:, 0]) * math.sqrt(d2_bar * eigenvalues[0])

    def residual(nu: float) -> tuple[float, float]:
        ratio = eigenvalues / (eigenvalues + nu)
        terms = q**2 * ratio**2 / eigenvalues
        return float(np.sum(terms)) - d2_bar, float(-2.0 * np.sum(terms / (eigenvalues + nu)))

    exterior = level > d2_bar
    if exterior:
        low, high = 0.0, float(eigenvalues[-1])
        while residual(high)[0] > 0.0:
            high *= 2.0
    else:
        low, high = -float(eigenvalues[0]), 0.0
        axis_term = q[0] ** 2
        if axis_term <= (1e-15 * scale) ** 2 and eigenvalues[1] > eigenvalues[0]:
            z_major = q[1] * eigenvalues[1] / (eigenvalues[1] - eigenvalues[0])
            remainder = eigenvalues[0] * (d2_bar - z_major**2 / eigenvalues[1])
            if remainder >= 0.0:
                # p on the major axis, closer to the minor-axis side of the boundary
                minor = _tie_break(vectors[:, 0]) * math.sqrt(remainder)
                return minor + vectors[:, 1] * z_major  # type: ignore[no-any-return]

    nu = 0.5 * (low + high)
    for _ in range(max_iterations):
        value, slope = residual(nu)
        if abs(value) <= 1e-13 * d2_bar:
            break
        if value > 0.0:
            low = nu
        else:
            high = nu
        candidate = nu - value / slope if slope != 0.0 else math.nan
        nu = candidate if low < candidate < high else 0.5 * (low + high)
    else:
        if exterior:
            logger.debug("ellipse projection falls back to the cone program")
            solution = solver(ellipse_projection_program(point, C_eff, d2_bar))
            if solution.is_optimal:
                return solution.x[1:]  # type: ignore[no-any-return]
        raise NoConvergenceError("ellipse projection multiplier did not converge")
    z = vectors @ (q * eigenvalues / (eigenvalues + nu))
    return z  # type: ignore[no-any-return]


def _check_shapes(lin: Linearization, plan_prev: ManeuverPlan) -> None:
    n = lin.n
    if plan_prev.n != n or lin.C_mat.shape != (2, 6) or lin.A_big.shape != (6, 4 * n):
        raise DimensionMismatchError(
            f"linearization shapes A {lin.A_big.shape}, C {lin.C_mat.shape} do not match a {plan_prev.n}-impulse plan"
        )


def _base_program(
    lin: Linearization, plan_prev: ManeuverPlan, config: ScvxConfig, keep_out_G: FloatArray, keep_out_h: FloatArray
) -> ConeProgram:
    n = lin.n
    bplane = lin.bplane_map
    x_prev = plan_prev.as_vector()
    dv_bar = config.dv_max / KM_PER_M
    identity = sparse.identity(n, format="csr")
    impulse_zeros = sparse.csr_matrix((n, 3 * n))
    nonnegative = sparse.vstack(
        [
            sparse.hstack([impulse_zeros, -identity]),
            sparse.hstack([impulse_zeros, identity]),
            sparse.csr_matrix(keep_out_G),
        ]
    )
    # (σ_i, Δv_i) ∈ SOC(4)
    rows = np.arange(4 * n)
    cols = np.empty(4 * n, dtype=int)
    cols[0::4] = 3 * n + np.arange(n)
    for k in range(3):
        cols[k + 1 :: 4] = 3 * np.arange(n) + k
    magnitude_cones = sparse.csr_matrix((-np.ones(4 * n), (rows, cols)), shape=(4 * n, 4 * n))
    deviation = sparse.vstack([sparse.csr_matrix((1, 4 * n)), sparse.csr_matrix(-bplane)])
    G = sparse.vstack([nonnegative, magnitude_cones, deviation]).tocsr()
    h = np.concatenate(
        [
            np.zeros(n),
            np.full(n, dv_bar),
            keep_out_h,
            np.zeros(4 * n),
            [config.bplane_deviation_cap],
            -bplane @ x_prev,
        ]
    )
    c = np.concatenate([np.zeros(3 * n), np.ones(n)])
    cones = ConeSpec.of(
        ConeBlock.nonnegative(2 * n + keep_out_h.size),
        *[ConeBlock.second_order(4)] * n,
        ConeBlock.second_order(3),
    )
    return ConeProgram(c, G, h, cones)


def assemble_subproblem(
    linearization: Linearization,
    plan_prev: ManeuverPlan,
    z: ArrayLike,
    C_eff: ArrayLike,
    config: ScvxConfig,
) -> ConeProgram:
    """
    Convex subproblem of one minor iteration.

    Variables are ``[Δv_0..Δv_{N−1}; σ_0..σ_{N−1}]`` in m/s, the objective is ``Σσ_i``. The
    nonnegative block holds ``σ_i ≥ 0``, ``σ_i ≤ Δv̄`` and the tangent half-plane
    ``∇d²(z)·(dr_b_ref + CA(x − x_prev) − z) ≥ 0`` (row normalized); then one ``(σ_i, Δv_i)``
    cone per impulse and the b-plane deviation cap ``‖CA(x − x_prev)‖ ≤ cap``.
    """
    _check_shapes(linearization, plan_prev)
    point = np.asarray(z, dtype=float)
    gradient = 2.0 * linalg.cho_solve(linalg.cho_factor(np.asarray(C_eff, dtype=float)), point)
    norm = float(np.linalg.norm(gradient))
    if norm == 0.0:
        raise DegenerateGeometryError("tangent half-plane undefined at the ellipse centre")
    unit = gradient / norm
    bplane = linearization.bplane_map
    row = -(unit @ bplane)
    offset = float(unit @ (linearization.dr_b_ref - point - bplane @ plan_prev.as_vector()))
    return _base_program(linearization, plan_prev, config, row[None, :], np.array([offset]))


def assemble_terminal_subproblem(
    linearization: Linearization, plan_prev: ManeuverPlan, target: ArrayLike, config: ScvxConfig
) -> ConeProgram:
    """
    Subproblem with the keep-out half-plane replaced by the terminal equality
    ``dr_b_ref + CA(x − x_prev) = target`` (two pairs of opposite nonnegative rows).
    """
    _check_shapes(linearization, plan_prev)
    bplane = linearization.bplane_map
    goal = np.asarray(target, dtype=float) - linearization.dr_b_ref + bplane @ plan_prev.as_vector()
    rows = np.vstack([-bplane, bplane])
    return _base_program(linearization, plan_prev, config, rows, np.concatenate([-goal, goal]))


def _keep_out(
    event: ConjunctionEvent, encounter: Optional[Encounter], config: ScvxConfig
) -> tuple[FloatArray, ThresholdTarget]:
    if encounter is None:
        raise DimensionMismatchError("linearization carries no encounter")
    C_b = combined_bplane_covariance(event, encounter.frame, config.frame_mode)
    return C_b, threshold_to_mahalanobis(config.constraint, C_b, event.radius)


def _pc_max_or_inf(d2: float, C_b: FloatArray, radius: float) -> float:
    try:
        return pc_max(d2, C_b, radius)
    except DirectImpactError:
        return math.inf


def verify_plan(
    event: ConjunctionEvent,
    grid: TimeGrid,
    plan: ManeuverPlan,
    config: ScvxConfig,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
    *,
    initial_state: Optional[StateVector] = None,
) -> PlanVerification:
    """
    Propagates the plan through the full dynamics and re-evaluates the encounter.

    The constraint is considered met when the achieved Mahalanobis distance reaches 98 % of the
    threshold recomputed in the maneuvered b-plane.
    """
    start = initial_state or _initial_state(event, grid, model, settings)
    states, _ = _forward(start, grid, plan, model, settings, with_stm=False)
    encounter = analyze_encounter(states[-1], event.secondary, model, event.primary.epoch, settings)
    C_b, target = _keep_out(event, encounter, config)
    d2 = mahalanobis_sq(encounter.dr_b, target.C_eff)
    d2_covariance = mahalanobis_sq(encounter.dr_b, C_b)
    try:
        quadrature: Optional[float] = pc_quadrature(encounter.dr_b, C_b, event.radius)
    except QuadratureNonConvergenceError as e:
        logger.warning("quadrature probability unavailable for '%s': %s", event.event_id, e)
        quadrature = None
    return PlanVerification(
        encounter=encounter,
        node_states=tuple(states),
        C_b=C_b,
        d2=d2,
        d2_bar=target.d2_bar,
        d2_covariance=d2_covariance,
        pc_approx=pc_approx(d2_covariance, C_b, event.radius),
        pc_max=_pc_max_or_inf(d2_covariance, C_b, event.radius),
        pc_quadrature=quadrature,
        miss_distance=float(np.linalg.norm(encounter.dr_b)),
        tca_shift=encounter.tca_shift,
        satisfied=d2 >= VERIFICATION_MARGIN * target.d2_bar,
    )


@dataclass
class _Context:
    event: ConjunctionEvent
    grid: TimeGrid
    config: ScvxConfig
    model: GravityModel
    solver: ConeSolver
    solver_settings: Optional[SolverSettings]
    integrator: Optional[IntegratorSettings]
    initial_state: StateVector
    ballistic: Linearization


@dataclass
class _BranchOutcome:
    branch: Branch
    status: ScvxStatus
    plan: ManeuverPlan
    minor_iterations: list[int]
    trace: list[IterationRecord]
    keep_out: list[KeepOutZone]
    d2_bar: float
    final: FinalMetrics

    @property
    def major_iterations(self) -> int:
        return len(self.minor_iterations)

    def summary(self) -> BranchSummary:
        return BranchSummary(self.branch, self.status, self.plan.total_dv, self.major_iterations)


def _final_metrics(
    dr_b: FloatArray, tca: float, C_b: FloatArray, target: ThresholdTarget, event: ConjunctionEvent
) -> FinalMetrics:
    d2_covariance = mahalanobis_sq(dr_b, C_b)
    return FinalMetrics(
        dr_b=dr_b,
        d2=mahalanobis_sq(dr_b, target.C_eff),
        pc_approx=pc_approx(d2_covariance, C_b, event.radius),
        pc_max=_pc_max_or_inf(d2_covariance, C_b, event.radius),
        miss_distance=float(np.linalg.norm(dr_b)),
        tca_shift=tca - event.primary.epoch,
    )


def _run_branch(
    ctx: _Context, branch: Branch, seed: FloatArray, first_projection: Optional[FloatArray] = None
) -> _BranchOutcome:
    event, grid, config = ctx.event, ctx.grid, ctx.config
    plan = ManeuverPlan.zeros(grid.n)
    x_prev = plan.as_vector()
    lin = ctx.ballistic
    minor_counts: list[int] = []
    trace: list[IterationRecord] = []
    zones: list[KeepOutZone] = []
    status = ScvxStatus.MAX_ITERATIONS
    dr_b, tca = lin.dr_b_ref, lin.tca_ref
    C_b, target = _keep_out(event, lin.encounter, config)

    for major in range(1, config.max_major + 1):
        if major > 1:
            lin = linearize_reference(
                event, grid, plan, ctx.model, ctx.integrator, initial_state=ctx.initial_state, t_guess=tca
            )
            C_b, target = _keep_out(event, lin.encounter, config)
        zones.append(KeepOutZone(major, target.C_eff, target.d2_bar))
        bplane, tca_map = lin.bplane_map, lin.tca_map
        dr_current = seed if major == 1 else lin.dr_b_ref
        x = x_prev
        minor = 0
        for minor in range(1, config.max_minor + 1):
            if major == 1 and minor == 1 and first_projection is not None:
                z = first_projection
            else:
                z = project_to_ellipse(dr_current, target.C_eff, target.d2_bar, solver=ctx.solver)
            program = assemble_subproblem(lin, plan, z, target.C_eff, config)
            solution = ctx.solver(program, ctx.solver_settings)
            if solution.status == SolverStatus.PRIMAL_INFEASIBLE:
                logger.info("%s Infeasible at major %d, minor %d", branch.value, major, minor)
                minor_counts.append(minor)
                final = _final_metrics(dr_b, tca, C_b, target, event)
                zero = ManeuverPlan.zeros(grid.n)
                return _BranchOutcome(
                    branch, ScvxStatus.INFEASIBLE, zero, minor_counts, trace, zones, target.d2_bar, final
                )
            if not solution.is_optimal:
                raise ConeSolverError(
                    f"subproblem of '{event.event_id}' stopped with {solution.status.value}", solution.status.value
                )
            x = solution.x
            step = x - x_prev
            dr_new = lin.dr_b_ref + bplane @ step
            tca = lin.tca_ref + float(tca_map @ step)
            candidate = ManeuverPlan.from_vector(x, grid.n)
            shift = tca - event.primary.epoch
            trace.append(
                IterationRecord(major, minor, dr_new, np.asarray(z), candidate.total_dv, shift, solution.iterations)
            )
            logger.debug(
                "%s major %d minor %d: ΔV %.6f m/s, dr_b (%.6f, %.6f) km",
                branch.value,
                major,
                minor,
                candidate.total_dv / KM_PER_M,
                dr_new[0],
                dr_new[1],
            )
            moved = float(np.linalg.norm(dr_new - dr_current))
            dr_current = dr_new
            if moved <= config.tol_minor:
                break
        minor_counts.append(minor)
        dr_b = dr_current
        change = float(np.max(np.abs(x - x_prev))) * KM_PER_M
        plan = ManeuverPlan.from_vector(x, grid.n)
        x_prev = x
        logger.info(
            "%s major %d: %d minor iterations, ΔV %.6f m/s, change %.3e km/s",
            branch.value,
            major,
            minor,
            plan.total_dv / KM_PER_M,
            change,
        )
        if change <= config.tol_major:
            status = ScvxStatus.CONVERGED
            break
    final = _final_metrics(dr_b, tca, C_b, target, event)
    logger.info("%s %s with ΔV %.6f m/s", branch.value, status.value, plan.total_dv / KM_PER_M)
    return _BranchOutcome(branch, status, plan, minor_counts, trace, zones, target.d2_bar, final)


_STATUS_RANK = {ScvxStatus.CONVERGED: 0, ScvxStatus.MAX_ITERATIONS: 1, ScvxStatus.INFEASIBLE: 2}


def _prepare(
    event: ConjunctionEvent,
    config: ScvxConfig,
    model: GravityModel,
    solver: ConeSolver,
    solver_settings: Optional[SolverSettings],
    integrator: Optional[IntegratorSettings],
) -> _Context:
    grid = build_grid(event, config)
    initial_state = _initial_state(event, grid, model, integrator)
    ballistic = linearize_reference(
        event, grid, ManeuverPlan.zeros(grid.n), model, integrator, initial_state=initial_state
    )
    return _Context(event, grid, config, model, solver, solver_settings, integrator, initial_state, ballistic)


def solve_cam(
    event: ConjunctionEvent,
    config: ScvxConfig,
    model: Optional[GravityModel] = None,
    *,
    solver: ConeSolver = solve,
    solver_settings: Optional[SolverSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
) -> ScvxReport:
    """
    Designs the minimum-ΔV impulse sequence that moves the encounter out of the keep-out ellipse.

    Parameters
    ----------
    event : ConjunctionEvent
    config : ScvxConfig
    model : GravityModel, optional
        Defaults to the Earth J2-J4 model.
    solver : ConeSolver
        Conic backend, the embedded interior-point solver by default.
    solver_settings, integrator : optional
        Overrides of the process-wide solver and integrator settings.

    Returns
    -------
    ScvxReport
        ``Infeasible`` when the conic solver certifies that the impulse bounds cannot move the
        encounter far enough; raises ``ConeSolverError`` for other solver failures.
    """
    started = time.perf_counter()
    model = model or GravityModel()
    grid = build_grid(event, config)
    nominal = encounter_geometry(event, config.frame_mode)
    target = threshold_to_mahalanobis(config.constraint, nominal.C_b, event.radius, nominal.dr_b)
    if target.already_safe:
        logger.info("'%s' AlreadySafe (d² = %.6g ≥ %.6g)", event.event_id, nominal.d2, target.d2_bar)
        final = _final_metrics(nominal.dr_b, event.primary.epoch, nominal.C_b, target, event)
        return ScvxReport(
            status=ScvxStatus.CONVERGED,
            plan=ManeuverPlan.zeros(grid.n),
            grid=grid,
            constraint=config.constraint,
            branch=Branch.PLUS,
            major_iterations=0,
            minor_iterations_per_major=[],
            trace=[],
            keep_out=[KeepOutZone(0, target.C_eff, target.d2_bar)],
            d2_bar=target.d2_bar,
            final=final,
            already_safe=True,
            elapsed=time.perf_counter() - started,
        )

    ctx = _prepare(event, config, model, solver, solver_settings, integrator)
    outcomes: list[_BranchOutcome] = []
    failures: list[ConeSolverError] = []
    starts = [(Branch.PLUS, nominal.dr_b, None)]
    if config.dual_start:
        direct_hit = float(np.linalg.norm(nominal.dr_b)) <= 1e-12
        first = None
        if direct_hit:
            _, zone = _keep_out(event, ctx.ballistic.encounter, config)
            first = -project_to_ellipse(nominal.dr_b, zone.C_eff, zone.d2_bar, solver=solver)
        starts.append((Branch.MINUS, -nominal.dr_b, first))
    for branch, seed, first_projection in starts:
        try:
            outcomes.append(_run_branch(ctx, branch, seed, first_projection))
        except ConeSolverError as e:
            logger.warning("%s failed for '%s'", branch.value, event.event_id, exc_info=e)
            failures.append(e)
    if not outcomes:
        raise failures[0]

    ranked = sorted(outcomes, key=lambda outcome: (_STATUS_RANK[outcome.status], outcome.plan.total_dv))
    chosen = ranked[0]
    alternate = ranked[1].summary() if len(ranked) > 1 else None
    verification = None
    if chosen.status != ScvxStatus.INFEASIBLE:
        verification = verify_plan(
            event, ctx.grid, chosen.plan, config, model, integrator, initial_state=ctx.initial_state
        )
        logger.info(
            "'%s' %s: ΔV %.6f m/s, %d impulses, verified d² %.6g (threshold %.6g)",
            event.event_id,
            chosen.status.value,
            chosen.plan.total_dv / KM_PER_M,
            chosen.plan.active_count,
            verification.d2,
            verification.d2_bar,
        )
    return ScvxReport(
        status=chosen.status,
        plan=chosen.plan,
        grid=ctx.grid,
        constraint=config.constraint,
        branch=chosen.branch,
        major_iterations=chosen.major_iterations,
        minor_iterations_per_major=chosen.minor_iterations,
        trace=chosen.trace,
        keep_out=chosen.keep_out,
        d2_bar=chosen.d2_bar,
        final=chosen.final,
        alternate=alternate,
        verification=verification,
        elapsed=time.perf_counter() - started,
    )


def _sweep_pass(
    ctx: _Context,
    lin: Linearization,
    plan_prev: ManeuverPlan,
    points: int,
    indices: Sequence[int],
    parallelism: int,
) -> list[SweepPoint]:
    _, target = _keep_out(ctx.event, lin.encounter, ctx.config)
    lower = linalg.cholesky(target.C_eff, lower=True)
    radius = math.sqrt(target.d2_bar)

    def evaluate(index: int) -> SweepPoint:
        angle = 2.0 * math.pi * index / points
        boundary = radius * lower @ np.array([math.cos(angle), math.sin(angle)])
        program = assemble_terminal_subproblem(lin, plan_prev, boundary, ctx.config)
        solution = ctx.solver(program, ctx.solver_settings)
        if not solution.is_optimal:
            return SweepPoint(index, angle, boundary, solution.status, math.nan, 0)
        plan = ManeuverPlan.from_vector(solution.x, lin.n)
        return SweepPoint(index, angle, boundary, solution.status, plan.total_dv, plan.active_count, plan)

    return map_in_threads(evaluate, list(indices), limit=parallelism)


def _cheapest(results: Sequence[SweepPoint], indices: Sequence[int]) -> Optional[SweepPoint]:
    solved = [results[i] for i in indices if results[i].plan is not None]
    return min(solved, key=lambda point: point.total_dv, default=None)


def _valleys(results: Sequence[SweepPoint]) -> list[list[int]]:
    """Indices grouped by their cyclically nearest local minimum."""
    count = len(results)
    minima = sweep_local_minima(results)
    if not minima:
        return [list(range(count))] if _cheapest(results, range(count)) is not None else []
    groups: dict[int, list[int]] = {minimum: [] for minimum in minima}
    for i in range(count):
        nearest = min(minima, key=lambda m: min((i - m) % count, (m - i) % count))
        groups[nearest].append(i)
    return list(groups.values())


def _refine_valley(ctx: _Context, results: list[SweepPoint], indices: list[int], parallelism: int) -> None:
    best = _cheapest(results, indices)
    passes = 0
    while best is not None and best.plan is not None and passes < ctx.config.max_major:
        passes += 1
        lin = linearize_reference(
            ctx.event, ctx.grid, best.plan, ctx.model, ctx.integrator, initial_state=ctx.initial_state
        )
        for point in _sweep_pass(ctx, lin, best.plan, len(results), indices, parallelism):
            results[point.index] = point
        candidate = _cheapest(results, indices)
        if candidate is None:
            break
        change = abs(candidate.total_dv - best.total_dv)
        best = candidate
        if change <= ctx.config.tol_major:
            break
    if best is not None:
        logger.info(
            "boundary sweep valley at %.1f°: ΔV %.6f m/s after %d relinearizations",
            math.degrees(best.angle),
            best.total_dv / KM_PER_M,
            passes,
        )


def boundary_sweep(
    event: ConjunctionEvent,
    config: ScvxConfig,
    points: int,
    model: Optional[GravityModel] = None,
    *,
    solver: ConeSolver = solve,
    solver_settings: Optional[SolverSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
    parallelism: int = 1,
    relinearize: bool = True,
) -> list[SweepPoint]:
    """
    ΔV needed to place the encounter at each of ``points`` equally spaced angles on the keep-out
    ellipse boundary.

    The first pass is linearized about the ballistic trajectory. With ``relinearize`` every
    point is assigned to its cyclically nearest local minimum, and each of these valleys is
    solved again about its own cheapest plan, with the keep-out ellipse refreshed in that plan's
    b-plane. A valley is relinearized until its minimum ΔV moves by no more than ``tol_major``,
    or for at most ``max_major`` passes. Failed points carry their solver status and a NaN ΔV.
    """
    if points < 8:
        raise ValueError("the boundary sweep needs at least 8 points")
    model = model or GravityModel()
    ctx = _prepare(event, config, model, solver, solver_settings, integrator)
    zero = ManeuverPlan.zeros(ctx.grid.n)
    results = _sweep_pass(ctx, ctx.ballistic, zero, points, range(points), parallelism)
    if relinearize:
        for indices in _valleys(results):
            _refine_valley(ctx, results, indices, parallelism)
    failed = sum(1 for point in results if point.plan is None)
    if failed:
        logger.warning("boundary sweep: %d of %d points without an Optimal solution", failed, points)
    return results


def sweep_local_minima(points: Sequence[SweepPoint], window: Optional[int] = None) -> list[int]:
    """
    Indices of cyclic local minima of the ΔV profile.

    A point is a minimum when no solved point within ``window`` neighbours on either side is
    lower (default: a tenth of a half turn).
    """
    values = np.array([point.total_dv for point in points], dtype=float)
    count = values.size
    if count == 0:
        return []
    span = window if window is not None else max(1, count // 20)
    minima = []
    for i in range(count):
        if not math.isfinite(values[i]):
            continue
        neighbours = values[[(i + k) % count for k in range(-span, span + 1) if k != 0]]
        neighbours = neighbours[np.isfinite(neighbours)]
        earlier = values[[(i - k) % count for k in range(1, span + 1)]]
        if np.all(values[i] <= neighbours) and not np.any(values[i] == earlier):
            minima.append(i)
    return minima
