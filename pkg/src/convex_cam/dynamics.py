"""
Cartesian propagation under central gravity plus the J2, J3 and J4 zonal harmonics.

The zonal acceleration is written as ``a = F(r, z) * position + G(r, z) * e_z`` where ``F`` and
``G`` are sums of monomials ``c * z**a * r**-b``. The same tables give the acceleration, its
Jacobian (chain rule on the monomials) and the potential, so the variational equations use an
exact analytic Jacobian.

All epochs are seconds relative to the nominal time of closest approach.
"""
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import solve_ivp

from convex_cam.exceptions import DynamicsError, NonFiniteError, StepSizeUnderflowError
from convex_cam.logging import get_logger
from convex_cam.settings import get_settings

__all__ = [
    "EARTH_J2",
    "EARTH_J3",
    "EARTH_J4",
    "EARTH_MU",
    "EARTH_RADIUS",
    "GravityModel",
    "IntegratorSettings",
    "SegmentMap",
    "StateVector",
    "acceleration",
    "acceleration_jacobian",
    "orbital_period",
    "potential",
    "propagate",
    "propagate_through",
    "propagate_with_stm",
    "specific_energy",
]

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
Monomials = tuple[tuple[float, int, int], ...]

EARTH_MU = 398600.4418
EARTH_RADIUS = 6378.137
EARTH_J2 = 1.08262668e-3
EARTH_J3 = -2.53265649e-6
EARTH_J4 = -1.61962159e-6

_E_Z = np.array([0.0, 0.0, 1.0])


def _frozen_vector(values: ArrayLike, size: int, name: str) -> FloatArray:
    array = np.array(values, dtype=float).reshape(-1)
    if array.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got {array.size}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class StateVector:
    """
    Position [km] and velocity [km/s] in an Earth-centred inertial frame at ``epoch`` [s].
    """

    position: FloatArray
    velocity: FloatArray
    epoch: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _frozen_vector(self.position, 3, "position"))
        object.__setattr__(self, "velocity", _frozen_vector(self.velocity, 3, "velocity"))
        object.__setattr__(self, "epoch", float(self.epoch))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity)) and np.isfinite(self.epoch)):
            raise NonFiniteError("state has non-finite components")
        if float(np.linalg.norm(self.position)) <= EARTH_RADIUS:
            raise DynamicsError(f"state is below the Earth's surface (|r| = {np.linalg.norm(self.position):.3f} km)")

    @classmethod
    def from_array(cls, values: ArrayLike, epoch: float = 0.0) -> "StateVector":
        array = np.asarray(values, dtype=float).reshape(6)
        return cls(array[:3], array[3:], epoch)

    def as_array(self) -> FloatArray:
        """The 6-vector ``[position, velocity]``."""
        return np.concatenate([self.position, self.velocity])

    def with_impulse(self, delta_v: ArrayLike) -> "StateVector":
        """Instantaneous velocity change at the same epoch."""
        return StateVector(self.position, self.velocity + np.asarray(delta_v, dtype=float), self.epoch)

    def perturbed(self, delta: ArrayLike) -> "StateVector":
        """State displaced by a 6-vector ``(δr, δv)``."""
        return StateVector.from_array(self.as_array() + np.asarray(delta, dtype=float), self.epoch)


@dataclass(frozen=True)
class GravityModel:
    """
    Central body with zonal harmonics up to degree four.

    Setting ``j2 = j3 = j4 = 0`` gives exact two-body dynamics.
    """

    mu: float = EARTH_MU
    re: float = EARTH_RADIUS
    j2: float = EARTH_J2
    j3: float = EARTH_J3
    j4: float = EARTH_J4

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.re > 0:
            raise ValueError("re must be positive")

    @classmethod
    def two_body(cls, mu: float = EARTH_MU, re: float = EARTH_RADIUS) -> "GravityModel":
        return cls(mu=mu, re=re, j2=0.0, j3=0.0, j4=0.0)

    @cached_property
    def radial_terms(self) -> Monomials:
        """Monomials of ``F``, the coefficient of the position vector."""
        k2, k3, k4 = self._coefficients
        terms = [
            (-self.mu, 0, 3),
            (5.0 * k2, 2, 7),
            (-k2, 0, 5),
            (7.0 * k3, 3, 9),
            (-3.0 * k3, 1, 7),
            (k4, 0, 7),
            (-14.0 * k4, 2, 9),
            (21.0 * k4, 4, 11),
        ]
        return tuple(term for term in terms if term[0] != 0.0)

    @cached_property
    def axial_terms(self) -> Monomials:
        """Monomials of ``G``, the extra acceleration along the polar axis."""
        k2, k3, k4 = self._coefficients
        terms = [
            (-2.0 * k2, 1, 5),
            (0.6 * k3, 0, 5),
            (-3.0 * k3, 2, 7),
            (4.0 * k4, 1, 7),
            (-28.0 / 3.0 * k4, 3, 9),
        ]
        return tuple(term for term in terms if term[0] != 0.0)

    @cached_property
    def potential_terms(self) -> Monomials:
        """Monomials of the potential ``U`` with ``a = ∇U``."""
        mu, re = self.mu, self.re
        c2 = mu * self.j2 * re**2
        c3 = mu * self.j3 * re**3
        c4 = mu * self.j4 * re**4
        terms = [
            (mu, 0, 1),
            (-1.5 * c2, 2, 5),
            (0.5 * c2, 0, 3),
            (-2.5 * c3, 3, 7),
            (1.5 * c3, 1, 5),
            (-35.0 / 8.0 * c4, 4, 9),
            (30.0 / 8.0 * c4, 2, 7),
            (-3.0 / 8.0 * c4, 0, 5),
        ]
        return tuple(term for term in terms if term[0] != 0.0)

    @property
    def _coefficients(self) -> tuple[float, float, float]:
        mu, re = self.mu, self.re
        return (
            1.5 * mu * self.j2 * re**2,
            2.5 * mu * self.j3 * re**3,
            15.0 / 8.0 * mu * self.j4 * re**4,
        )


@dataclass(frozen=True)
class IntegratorSettings:
    """
    Adaptive embedded Runge-Kutta settings handed to ``scipy.integrate.solve_ivp``.
    """

    method: str = "DOP853"
    rtol: float = 1e-12
    atol: float = 1e-12
    max_step: float = math.inf

    @classmethod
    def from_settings(cls) -> "IntegratorSettings":
        settings = get_settings()
        return cls(rtol=settings.RTOL, atol=settings.ATOL)


@dataclass(frozen=True)
class SegmentMap:
    """
    First-order map of ``(δr, δv)`` from ``t_start`` to ``t_end`` about a reference arc.
    """

    stm: FloatArray
    t_start: float
    t_end: float
    reference_end_state: StateVector

    def __post_init__(self) -> None:
        stm = np.array(self.stm, dtype=float)
        if stm.shape != (6, 6):
            raise ValueError("stm must be 6x6")
        stm.setflags(write=False)
        object.__setattr__(self, "stm", stm)

    def compose(self, earlier: "SegmentMap") -> "SegmentMap":
        """Map from ``earlier.t_start`` to ``self.t_end``."""
        return SegmentMap(self.stm @ earlier.stm, earlier.t_start, self.t_end, self.reference_end_state)


def _sum_monomials(terms: Monomials, z: float, r: float) -> float:
    return sum(c * z**a * r**-b for c, a, b in terms)


def _monomial_gradient(terms: Monomials, z: float, r: float) -> tuple[float, float, float]:
    """Value and partial derivatives with respect to ``r`` and ``z``."""
    value = d_r = d_z = 0.0
    for c, a, b in terms:
        term = c * z**a * r**-b
        value += term
        d_r -= b * term / r
        if a:
            d_z += a * c * z ** (a - 1) * r**-b
    return value, d_r, d_z


def _radius(position: FloatArray) -> float:
    r = math.sqrt(float(position[0]) ** 2 + float(position[1]) ** 2 + float(position[2]) ** 2)
    if not r > 0.0 or not math.isfinite(r):
        raise NonFiniteError("position magnitude vanished or overflowed")
    return r


def _acceleration(position: FloatArray, model: GravityModel) -> FloatArray:
    r = _radius(position)
    z = float(position[2])
    radial = _sum_monomials(model.radial_terms, z, r)
    axial = _sum_monomials(model.axial_terms, z, r)
    accel = radial * position
    accel[2] += axial
    return accel  # type: ignore[no-any-return]


def _acceleration_and_jacobian(position: FloatArray, model: GravityModel) -> tuple[FloatArray, FloatArray]:
    r = _radius(position)
    z = float(position[2])
    f, f_r, f_z = _monomial_gradient(model.radial_terms, z, r)
    g, g_r, g_z = _monomial_gradient(model.axial_terms, z, r)
    accel = f * position
    accel[2] += g
    grad_f = (f_r / r) * position + f_z * _E_Z
    grad_g = (g_r / r) * position + g_z * _E_Z
    jacobian = f * np.eye(3) + np.outer(position, grad_f) + np.outer(_E_Z, grad_g)
    return accel, jacobian  # type: ignore[return-value]


def _jacobian(position: FloatArray, model: GravityModel) -> FloatArray:
    return _acceleration_and_jacobian(position, model)[1]


def _as_position(state: Union[StateVector, ArrayLike]) -> FloatArray:
    if isinstance(state, StateVector):
        return np.array(state.position)
    return np.asarray(state, dtype=float).reshape(-1)[:3].copy()


def acceleration(state: Union[StateVector, ArrayLike], model: GravityModel) -> FloatArray:
    """
    Gravitational acceleration [km/s²] at the state's position.

    Parameters
    ----------
    state : StateVector or array_like
        A state, or a position/state array whose first three entries are the position [km].
    model : GravityModel

    Returns
    -------
    numpy.ndarray
        Central plus J2, J3 and J4 acceleration.
    """
    return _acceleration(_as_position(state), model)


def acceleration_jacobian(state: Union[StateVector, ArrayLike], model: GravityModel) -> FloatArray:
    """Jacobian ∂a/∂r [1/s²] of [`acceleration`][convex_cam.dynamics.acceleration]."""
    return _jacobian(_as_position(state), model)


def potential(state: Union[StateVector, ArrayLike], model: GravityModel) -> float:
    """Gravitational potential ``U`` [km²/s²] with ``a = ∇U``."""
    position = _as_position(state)
    return _sum_monomials(model.potential_terms, float(position[2]), _radius(position))


def specific_energy(state: StateVector, model: GravityModel) -> float:
    """``v²/2 − U(r)``, conserved along ballistic arcs of the static zonal field."""
    return 0.5 * float(state.velocity @ state.velocity) - potential(state, model)


def orbital_period(state: StateVector, mu: float = EARTH_MU) -> float:
    """Osculating two-body period [s]."""
    r = float(np.linalg.norm(state.position))
    v2 = float(state.velocity @ state.velocity)
    inverse_sma = 2.0 / r - v2 / mu
    if inverse_sma <= 0.0:
        raise DynamicsError("state is not on a bound orbit")
    return 2.0 * math.pi * math.sqrt(inverse_sma**-3 / mu)


def _state_derivative(model: GravityModel) -> Callable[[float, FloatArray], FloatArray]:
    def rhs(_: float, y: FloatArray) -> FloatArray:
        derivative = np.empty(6)
        derivative[:3] = y[3:6]
        derivative[3:] = _acceleration(y[:3], model)
        return derivative

    return rhs


def _variational_derivative(model: GravityModel) -> Callable[[float, FloatArray], FloatArray]:
    def rhs(_: float, y: FloatArray) -> FloatArray:
        phi = y[6:].reshape(6, 6)
        accel, jacobian = _acceleration_and_jacobian(y[:3], model)
        derivative = np.empty(42)
        derivative[:3] = y[3:6]
        derivative[3:6] = accel
        derivative[6:24] = y[24:]
        derivative[24:] = (jacobian @ phi[:3]).reshape(-1)
        return derivative

    return rhs


def _integrate(
    rhs: Callable[[float, FloatArray], FloatArray],
    t_start: float,
    t_end: float,
    y0: FloatArray,
    settings: IntegratorSettings,
) -> FloatArray:
    try:
        solution = solve_ivp(
            rhs,
            (t_start, t_end),
            y0,
            method=settings.method,
            rtol=settings.rtol,
            atol=settings.atol,
            max_step=settings.max_step,
        )
    except (ZeroDivisionError, OverflowError, ValueError) as e:
        raise NonFiniteError(f"integration from {t_start} s to {t_end} s failed: {e}") from e
    if solution.status < 0:
        if "step size" in solution.message.lower():
            raise StepSizeUnderflowError(f"{solution.message} (t = {solution.t[-1]:.6f} s)")
        raise DynamicsError(solution.message)
    y_end = solution.y[:, -1]
    if not np.all(np.isfinite(y_end)):
        raise NonFiniteError(f"non-finite state at t = {t_end} s")
    logger.debug("integrated %.3f s -> %.3f s in %d steps", t_start, t_end, solution.t.size - 1)
    return y_end  # type: ignore[no-any-return]


def propagate(
    state: StateVector,
    t_target: float,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
) -> StateVector:
    """
    Propagates a state to ``t_target``, forwards or backwards in time.

    Parameters
    ----------
    state : StateVector
        Initial state; its epoch is the integration start.
    t_target : float
        Final epoch [s].
    model : GravityModel
    settings : IntegratorSettings, optional
        Defaults to the process settings (DOP853, tolerances 1e-12).

    Returns
    -------
    StateVector
    """
    if t_target == state.epoch:
        return state
    settings = settings or IntegratorSettings.from_settings()
    y_end = _integrate(_state_derivative(model), state.epoch, t_target, state.as_array(), settings)
    return StateVector.from_array(y_end, t_target)


def propagate_with_stm(
    state: StateVector,
    t_target: float,
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
) -> tuple[StateVector, SegmentMap]:
    """
    Propagates a state together with its 6×6 state transition matrix.
    """
    if t_target == state.epoch:
        return state, SegmentMap(np.eye(6), state.epoch, t_target, state)
    settings = settings or IntegratorSettings.from_settings()
    y0 = np.concatenate([state.as_array(), np.eye(6).reshape(-1)])
    y_end = _integrate(_variational_derivative(model), state.epoch, t_target, y0, settings)
    end_state = StateVector.from_array(y_end[:6], t_target)
    return end_state, SegmentMap(y_end[6:].reshape(6, 6), state.epoch, t_target, end_state)


def propagate_through(
    state: StateVector,
    times: Sequence[float],
    model: GravityModel,
    settings: Optional[IntegratorSettings] = None,
    impulses: Optional[ArrayLike] = None,
) -> list[StateVector]:
    """
    States at each epoch of ``times``, propagated leg by leg.

    With ``impulses`` (one row per leg, km/s) row ``k`` is applied at the start of leg ``k``;
    the returned states are those reached before the next impulse.
    """
    kicks = None if impulses is None else np.asarray(impulses, dtype=float).reshape(-1, 3)
    if kicks is not None and kicks.shape[0] != len(times):
        raise ValueError(f"{kicks.shape[0]} impulses for {len(times)} legs")
    states = []
    current = state
    for k, t in enumerate(times):
        if kicks is not None:
            current = current.with_impulse(kicks[k])
        current = propagate(current, t, model, settings)
        states.append(current)
    return states
