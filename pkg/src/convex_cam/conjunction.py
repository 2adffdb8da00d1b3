"""
Short-term encounter geometry on the b-plane.

The b-plane passes through the secondary at closest approach and is perpendicular to the
relative velocity ``v_p − v_s``. Positions on it are ``(ξ, ζ)`` coordinates of the primary
relative to the secondary. Collision probability metrics are computed from the combined
positional covariance projected on this plane.
"""
import math
from dataclasses import dataclass
from typing import Annotated, Literal, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import Field, ValidationError
from scipy import linalg

from convex_cam.dynamics import (
    GravityModel,
    IntegratorSettings,
    StateVector,
    acceleration,
    propagate,
)
from convex_cam.exceptions import (
    DegenerateGeometryError,
    DirectImpactError,
    EventValidationError,
    InvalidThresholdError,
    NoConvergenceError,
    ParseError,
    QuadratureNonConvergenceError,
    SaddlePointError,
    catch_numerical_error,
)
from convex_cam.logging import get_logger
from convex_cam.schema import BaseSchema
from convex_cam.settings import CovarianceFrame, get_settings

__all__ = [
    "BPlaneFrame",
    "Constraint",
    "ConjunctionEvent",
    "Encounter",
    "EncounterGeometry",
    "MissDistance",
    "PcApprox",
    "PcMax",
    "Sensitivities",
    "ThresholdTarget",
    "analyze_encounter",
    "build_bplane_frame",
    "combined_bplane_covariance",
    "describe_constraint",
    "encounter_geometry",
    "encounter_sensitivities",
    "mahalanobis_sq",
    "parse_constraint",
    "pc_approx",
    "pc_max",
    "pc_quadrature",
    "refine_tca",
    "rtn_to_eci",
    "threshold_to_mahalanobis",
]

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

CA_TOLERANCE = 1e-6
POSITION_STEP = 1e-6
VELOCITY_STEP = 1e-9


def _symmetric_psd(matrix: ArrayLike, name: str, record_id: str) -> FloatArray:
    array = np.array(matrix, dtype=float).reshape(3, 3)
    scale = max(float(np.max(np.abs(array))), 1e-300)
    if np.max(np.abs(array - array.T)) > 1e-12 * scale:
        raise EventValidationError(record_id, f"{name} is not symmetric")
    array = 0.5 * (array + array.T)
    if np.min(np.linalg.eigvalsh(array)) < -1e-12 * scale:
        raise EventValidationError(record_id, f"{name} is not positive semi-definite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ConjunctionEvent:
    """
    Both objects at the nominal time of closest approach (epoch 0).

    Parameters
    ----------
    primary, secondary : StateVector
        States at nominal closest approach [km, km/s].
    cov_primary_rtn, cov_secondary_rtn : numpy.ndarray
        3×3 positional covariances [km²], each in its own object's RTN frame.
    radius : float
        Combined hard-body radius [km].
    event_id : str
    """

    primary: StateVector
    secondary: StateVector
    cov_primary_rtn: FloatArray
    cov_secondary_rtn: FloatArray
    radius: float
    event_id: str = "event"

    def __post_init__(self) -> None:
        primary_cov = _symmetric_psd(self.cov_primary_rtn, "primary covariance", self.event_id)
        secondary_cov = _symmetric_psd(self.cov_secondary_rtn, "secondary covariance", self.event_id)
        object.__setattr__(self, "cov_primary_rtn", primary_cov)
        object.__setattr__(self, "cov_secondary_rtn", secondary_cov)
        if not self.radius > 0.0:
            raise EventValidationError(self.event_id, "combined radius must be positive")
        dr, dv = self.relative_position, self.relative_velocity
        if np.any(dr) and abs(float(dr @ dv)) >= CA_TOLERANCE * float(np.linalg.norm(dr) * np.linalg.norm(dv)):
            raise EventValidationError(self.event_id, "states are not at closest approach (Δr·Δv ≠ 0)")

    @property
    def relative_position(self) -> FloatArray:
        return self.primary.position - self.secondary.position  # type: ignore[no-any-return]

    @property
    def relative_velocity(self) -> FloatArray:
        return self.primary.velocity - self.secondary.velocity  # type: ignore[no-any-return]

    @property
    def miss_distance(self) -> float:
        return float(np.linalg.norm(self.relative_position))

    @property
    def relative_speed(self) -> float:
        return float(np.linalg.norm(self.relative_velocity))


@dataclass(frozen=True)
class BPlaneFrame:
    u_xi: FloatArray
    u_eta: FloatArray
    u_zeta: FloatArray

    @property
    def R3D(self) -> FloatArray:  # pylint: disable=invalid-name
        """Rows ``u_xi``, ``u_eta``, ``u_zeta``."""
        return np.vstack([self.u_xi, self.u_eta, self.u_zeta])

    @property
    def R2D(self) -> FloatArray:  # pylint: disable=invalid-name
        """Rows ``u_xi``, ``u_zeta``: projection on the b-plane."""
        return np.vstack([self.u_xi, self.u_zeta])

    def project(self, vector: ArrayLike) -> FloatArray:
        return self.R2D @ np.asarray(vector, dtype=float)  # type: ignore[no-any-return]


@dataclass(frozen=True)
class EncounterGeometry:
    dr_b: FloatArray
    C_b: FloatArray
    d2: float
    pc_approx: float
    pc_max: float

    @property
    def miss_distance(self) -> float:
        return float(np.linalg.norm(self.dr_b))


@dataclass(frozen=True)
class Sensitivities:
    """
    First-order response of the encounter to a primary state perturbation at the anchor epoch.

    ``B_row`` [s per km, s per km/s] maps to the closest-approach time shift, ``C_mat`` to the
    b-plane position shift [km].
    """

    B_row: FloatArray
    C_mat: FloatArray


@dataclass(frozen=True)
class Encounter:
    """
    A refined closest approach of two trajectories given by their states at a common anchor
    epoch.
    """

    primary_anchor: StateVector
    secondary_anchor: StateVector
    t_ca: float
    primary: StateVector
    secondary: StateVector
    frame: BPlaneFrame
    dr_b: FloatArray

    @property
    def tca_shift(self) -> float:
        return self.t_ca - self.primary_anchor.epoch


class PcApprox(BaseSchema):
    """Bound on the small-object approximation of the collision probability."""

    kind: Literal["pc"] = "pc"
    threshold: float = Field(..., gt=0.0, lt=1.0)

    @property
    def value(self) -> float:
        return self.threshold


class PcMax(BaseSchema):
    """Bound on the maximum collision probability over covariance scalings."""

    kind: Literal["pcmax"] = "pcmax"
    threshold: float = Field(..., gt=0.0, lt=1.0)

    @property
    def value(self) -> float:
        return self.threshold


class MissDistance(BaseSchema):
    """Minimum b-plane miss distance [km]."""

    kind: Literal["miss"] = "miss"
    distance_km: float = Field(..., gt=0.0)

    @property
    def value(self) -> float:
        return self.distance_km


Constraint = Annotated[Union[PcApprox, PcMax, MissDistance], Field(discriminator="kind")]


class _ConstraintHolder(BaseSchema):
    constraint: Constraint


def parse_constraint(text: str) -> Union[PcApprox, PcMax, MissDistance]:
    """
    Parses ``pc=1e-6``, ``pcmax=1e-4`` or ``miss=2`` (kilometres).

    >>> parse_constraint("pcmax=1e-4")
    PcMax(kind='pcmax', threshold=0.0001)
    """
    kind, sep, raw = text.strip().partition("=")
    kind = kind.strip().lower()
    if not sep:
        raise ParseError(f"constraint '{text}' is not of the form kind=value", field="constraint")
    key = "distance_km" if kind == "miss" else "threshold"
    try:
        holder = _ConstraintHolder.parse_obj({"constraint": {"kind": kind, key: raw.strip()}})
    except ValidationError as e:
        raise ParseError(f"invalid constraint '{text}': {e.errors()[0]['msg']}", field="constraint") from e
    return holder.constraint


def describe_constraint(constraint: Union[PcApprox, PcMax, MissDistance]) -> str:
    """Compact text form, the inverse of [`parse_constraint`][convex_cam.conjunction.parse_constraint]."""
    return f"{constraint.kind}={constraint.value:g}"


@dataclass(frozen=True)
class ThresholdTarget:
    """Keep-out ellipse ``zᵀ C_eff⁻¹ z ≥ d2_bar`` for one constraint."""

    d2_bar: float
    C_eff: FloatArray
    already_safe: bool = False


def _unit(vector: FloatArray) -> FloatArray:
    return vector / np.linalg.norm(vector)  # type: ignore[no-any-return]


def build_bplane_frame(v_primary: ArrayLike, v_secondary: ArrayLike, *, strict: bool = False) -> BPlaneFrame:
    """
    Builds the b-plane frame from the two velocities at closest approach.

    ``u_eta`` follows the relative velocity, ``u_xi`` the normal ``v_s × v_p`` and
    ``u_zeta = u_xi × u_eta``.

    When the velocities are collinear (head-on or overtaking) ``u_xi`` is the unit vector
    perpendicular to ``u_eta`` closest to the coordinate axis least aligned with it, unless
    ``strict`` is set, in which case a ``DegenerateGeometryError`` is raised.
    """
    v_p = np.asarray(v_primary, dtype=float)
    v_s = np.asarray(v_secondary, dtype=float)
    relative = v_p - v_s
    relative_norm = float(np.linalg.norm(relative))
    if relative_norm <= 1e-14 * max(1.0, float(np.linalg.norm(v_p))):
        raise DegenerateGeometryError("relative velocity vanishes")
    u_eta = relative / relative_norm
    normal = np.cross(v_s, v_p)
    if float(np.linalg.norm(normal)) <= 1e-12 * float(np.linalg.norm(v_s)) * float(np.linalg.norm(v_p)):
        if strict:
            raise DegenerateGeometryError("velocities are parallel, the b-plane orientation is undefined")
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(u_eta)))] = 1.0
        normal = axis - (axis @ u_eta) * u_eta
    u_xi = _unit(normal)
    u_zeta = np.cross(u_xi, u_eta)
    return BPlaneFrame(u_xi, u_eta, u_zeta)


def rtn_to_eci(r: ArrayLike, v: ArrayLike) -> FloatArray:
    """
    Rotation whose columns are the radial, transverse and normal unit vectors.

    >>> rtn_to_eci([7000.0, 0.0, 0.0], [0.0, 7.5, 0.0]).round(12).tolist()
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    """
    position = np.asarray(r, dtype=float)
    velocity = np.asarray(v, dtype=float)
    angular = np.cross(position, velocity)
    scale = float(np.linalg.norm(position) * np.linalg.norm(velocity))
    if not scale > 0.0 or np.linalg.norm(angular) <= 1e-14 * scale:
        raise DegenerateGeometryError("RTN frame undefined for zero or parallel position and velocity")
    radial = _unit(position)
    normal = _unit(angular)
    transverse = np.cross(normal, radial)
    return np.column_stack([radial, transverse, normal])


def _frame_mode(frame_mode: Optional[Union[CovarianceFrame, str]]) -> CovarianceFrame:
    if frame_mode is None:
        return CovarianceFrame(get_settings().COVARIANCE_FRAME)
    return CovarianceFrame(frame_mode)


def combined_bplane_covariance(
    event: ConjunctionEvent,
    frame: BPlaneFrame,
    frame_mode: Optional[Union[CovarianceFrame, str]] = None,
) -> FloatArray:
    """
    Projects the sum of both positional covariances on the b-plane.

    Parameters
    ----------
    event : ConjunctionEvent
        Supplies the RTN covariances and the nominal states that orient them.
    frame : BPlaneFrame
    frame_mode : CovarianceFrame, optional
        ``per_object`` rotates each covariance with its own RTN triad, ``primary`` rotates both
        with the primary's. Defaults to ``CAM_COVARIANCE_FRAME``.

    Returns
    -------
    numpy.ndarray
        2×2 combined covariance [km²].
    """
    mode = _frame_mode(frame_mode)
    m_primary = rtn_to_eci(event.primary.position, event.primary.velocity)
    m_secondary = m_primary
    if mode == CovarianceFrame.PER_OBJECT:
        m_secondary = rtn_to_eci(event.secondary.position, event.secondary.velocity)
    combined = m_primary @ event.cov_primary_rtn @ m_primary.T + m_secondary @ event.cov_secondary_rtn @ m_secondary.T
    C_b = frame.R2D @ combined @ frame.R2D.T
    C_b = 0.5 * (C_b + C_b.T)
    with catch_numerical_error(f"combined b-plane covariance of '{event.event_id}'"):
        linalg.cho_factor(C_b)
    return C_b  # type: ignore[no-any-return]


def mahalanobis_sq(dr_b: ArrayLike, C_b: ArrayLike) -> float:
    """
    Squared Mahalanobis distance ``dr_bᵀ C_b⁻¹ dr_b``.

    >>> mahalanobis_sq([3.0, 4.0], [[1.0, 0.0], [0.0, 1.0]])
    25.0
    """
    offset = np.asarray(dr_b, dtype=float)
    with catch_numerical_error("b-plane covariance"):
        factor = linalg.cho_factor(np.asarray(C_b, dtype=float))
    return float(offset @ linalg.cho_solve(factor, offset))


def _sqrt_det(C_b: ArrayLike) -> float:
    det = float(np.linalg.det(np.asarray(C_b, dtype=float)))
    if not det > 0.0:
        raise DegenerateGeometryError("b-plane covariance determinant is not positive")
    return math.sqrt(det)


def pc_approx(d2: float, C_b: ArrayLike, R: float) -> float:
    """Collision probability assuming a constant density over the collision disc."""
    return R**2 / (2.0 * _sqrt_det(C_b)) * math.exp(-0.5 * d2)


def pc_max(d2: float, C_b: ArrayLike, R: float) -> float:
    """Maximum collision probability over all scalings of ``C_b``."""
    if d2 <= np.finfo(float).eps:
        raise DirectImpactError("maximum probability is unbounded for a direct impact")
    return R**2 / (d2 * _sqrt_det(C_b) * math.e)


def pc_quadrature(
    dr_b: ArrayLike, C_b: ArrayLike, R: float, *, tol: float = 1e-10, max_nodes: int = 512
) -> float:
    """
    Integrates the b-plane Gaussian centred at ``dr_b`` over the disc of radius ``R`` around the
    origin.

    Tensor Gauss-Legendre rules in polar coordinates are doubled from 16 nodes per axis until two
    successive estimates agree to ``tol``.
    """
    offset = np.asarray(dr_b, dtype=float)
    covariance = np.asarray(C_b, dtype=float)
    with catch_numerical_error("b-plane covariance"):
        lower = linalg.cholesky(covariance, lower=True)
    normalization = 1.0 / (2.0 * math.pi * float(np.prod(np.diag(lower))))

    def estimate(nodes: int) -> float:
        x, w = np.polynomial.legendre.leggauss(nodes)
        rho = 0.5 * R * (x + 1.0)
        theta = math.pi * (x + 1.0)
        rr, tt = np.meshgrid(rho, theta, indexing="ij")
        points = np.stack([rr * np.cos(tt), rr * np.sin(tt)]) - offset[:, None, None]
        whitened = linalg.solve_triangular(lower, points.reshape(2, -1), lower=True)
        density = np.exp(-0.5 * np.sum(whitened**2, axis=0)).reshape(rr.shape) * rr
        weights = np.outer(0.5 * R * w, math.pi * w)
        return float(normalization * np.sum(weights * density))

    nodes = 16
    previous = estimate(nodes)
    while nodes < max_nodes:
        nodes *= 2
        current = estimate(nodes)
        if abs(current - previous) < tol:
            return min(current, 1.0)
        previous = current
    raise QuadratureNonConvergenceError(f"probability integral did not converge with {max_nodes} nodes per axis")


def encounter_geometry(
    event: ConjunctionEvent, frame_mode: Optional[Union[CovarianceFrame, str]] = None
) -> EncounterGeometry:
    """
    B-plane offset, covariance, Mahalanobis distance and probabilities of the nominal encounter.

    ``pc_max`` is infinite for a direct impact.
    """
    frame = build_bplane_frame(event.primary.velocity, event.secondary.velocity)
    dr_b = frame.project(event.relative_position)
    C_b = combined_bplane_covariance(event, frame, frame_mode)
    d2 = mahalanobis_sq(dr_b, C_b)
    try:
        maximum = pc_max(d2, C_b, event.radius)
    except DirectImpactError:
        maximum = math.inf
    return EncounterGeometry(dr_b, C_b, d2, pc_approx(d2, C_b, event.radius), maximum)


def refine_tca(
    primary: StateVector,
    secondary: StateVector,
    t_guess: float,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
    *,
    max_iterations: int = 50,
) -> tuple[float, StateVector, StateVector]:
    """
    Newton iteration on ``g(t) = Δr·Δv`` for the time of closest approach.

    Both objects are propagated from their given states at every iterate. Convergence is declared
    when ``|g| < 1e-9 km²/s`` or the time step falls below ``1e-6 s``; one further Newton step
    polishes the root.

    Returns
    -------
    tuple
        ``(t_ca, primary_at_ca, secondary_at_ca)``
    """
    t = float(t_guess)

    def evaluate(epoch: float) -> tuple[float, float, StateVector, StateVector]:
        p = propagate(primary, epoch, model, settings)
        s = propagate(secondary, epoch, model, settings)
        dr = p.position - s.position
        dv = p.velocity - s.velocity
        da = acceleration(p, model) - acceleration(s, model)
        return float(dr @ dv), float(dv @ dv + dr @ da), p, s

    for iteration in range(max_iterations):
        g, dg, p, s = evaluate(t)
        if dg <= 0.0:
            raise SaddlePointError(f"separation is not at a minimum near t = {t:.6f} s (g' = {dg:.3e})")
        step = g / dg
        converged = abs(g) < 1e-9 or abs(step) < 1e-6
        t -= step
        if converged:
            if step != 0.0:
                p = propagate(primary, t, model, settings)
                s = propagate(secondary, t, model, settings)
            logger.debug("closest approach at %.9f s after %d iterations", t, iteration + 1)
            return t, p, s
    raise NoConvergenceError(f"closest approach search did not converge in {max_iterations} iterations")


def analyze_encounter(
    primary: StateVector,
    secondary: StateVector,
    model: GravityModel,
    t_guess: Optional[float] = None,
    settings: Optional[IntegratorSettings] = None,
) -> Encounter:
    """
    Refines the closest approach of two trajectories and projects it on its b-plane.

    ``primary`` and ``secondary`` are the anchors: states at a common epoch, usually the nominal
    closest approach.
    """
    guess = primary.epoch if t_guess is None else t_guess
    t_ca, p_ca, s_ca = refine_tca(primary, secondary, guess, model, settings)
    frame = build_bplane_frame(p_ca.velocity, s_ca.velocity)
    dr_b = frame.project(p_ca.position - s_ca.position)
    return Encounter(primary, secondary, t_ca, p_ca, s_ca, frame, dr_b)


def encounter_sensitivities(
    encounter: Encounter,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
) -> Sensitivities:
    """
    Central differences of the closest-approach time and b-plane position with respect to the
    primary's anchor state.

    Each perturbed primary is re-refined and projected on the b-plane built from its own
    perturbed velocities, so the time shift and the frame rotation are both captured.
    """
    steps = [POSITION_STEP] * 3 + [VELOCITY_STEP] * 3
    B_row = np.empty(6)
    C_mat = np.empty((2, 6))
    for k, step in enumerate(steps):
        delta = np.zeros(6)
        delta[k] = step
        results = []
        for sign in (1.0, -1.0):
            perturbed = encounter.primary_anchor.perturbed(sign * delta)
            shifted = analyze_encounter(perturbed, encounter.secondary_anchor, model, encounter.t_ca, settings)
            results.append((shifted.t_ca, shifted.dr_b))
        (t_plus, dr_plus), (t_minus, dr_minus) = results
        B_row[k] = (t_plus - t_minus) / (2.0 * step)
        C_mat[:, k] = (dr_plus - dr_minus) / (2.0 * step)
    if not (np.all(np.isfinite(B_row)) and np.all(np.isfinite(C_mat))):
        raise DegenerateGeometryError("non-finite encounter sensitivities")
    return Sensitivities(B_row, C_mat)


def threshold_to_mahalanobis(
    constraint: Union[PcApprox, PcMax, MissDistance],
    C_b: ArrayLike,
    R: float,
    dr_b: Optional[ArrayLike] = None,
) -> ThresholdTarget:
    """
    Converts a constraint into the keep-out ellipse ``zᵀ C_eff⁻¹ z ≥ d2_bar``.

    When ``dr_b`` is given, ``already_safe`` reports whether it satisfies the constraint.

    >>> target = threshold_to_mahalanobis(MissDistance(distance_km=2.0), np.eye(2), 0.01)
    >>> target.d2_bar, target.C_eff.tolist()
    (4.0, [[1.0, 0.0], [0.0, 1.0]])
    """
    covariance = np.asarray(C_b, dtype=float)
    if isinstance(constraint, MissDistance):
        d2_bar, C_eff = constraint.distance_km**2, np.eye(2)
    elif isinstance(constraint, PcApprox):
        argument = R**2 / (2.0 * constraint.threshold * _sqrt_det(covariance))
        if argument <= 1.0:
            raise InvalidThresholdError(
                f"Pc threshold {constraint.threshold:g} exceeds the largest attainable approximate probability"
            )
        d2_bar, C_eff = 2.0 * math.log(argument), covariance
    else:
        d2_bar, C_eff = R**2 / (constraint.threshold * _sqrt_det(covariance) * math.e), covariance
    already_safe = False
    if dr_b is not None:
        already_safe = mahalanobis_sq(dr_b, C_eff) >= d2_bar
    return ThresholdTarget(d2_bar, C_eff, already_safe)
