from typing import Callable

import numpy as np
import pytest

from convex_cam.conjunction import ConjunctionEvent
from convex_cam.dynamics import GravityModel, StateVector
from convex_cam.events import EventRecord, parse_event_file, to_event
from convex_cam.scvx import Linearization, ScvxConfig
from convex_cam.utils.import_tools import reference_event_path

# published values of the bundled encounter
REFERENCE_D2 = 8.71655401455392e-01
REFERENCE_PC = 1.47559666159940e-01
REFERENCE_PC_MAX = 1.92590968666693e-01
REFERENCE_PC_QUADRATURE = 1.36040828266536e-01  # series approximation of the integral
# the integral itself, by adaptive two-dimensional quadrature
EXACT_PC_QUADRATURE = 1.361876065e-01


@pytest.fixture(scope="session")
def reference_record() -> EventRecord:
    [record] = parse_event_file(reference_event_path())
    return record


@pytest.fixture(scope="session")
def reference_event(reference_record: EventRecord) -> ConjunctionEvent:
    return to_event(reference_record)


@pytest.fixture(scope="session")
def earth() -> GravityModel:
    return GravityModel()


@pytest.fixture(scope="session")
def two_body() -> GravityModel:
    return GravityModel.two_body()


@pytest.fixture()
def leo_state() -> StateVector:
    """Inclined, slightly eccentric low orbit."""
    return StateVector(np.array([6800.0, 120.0, 900.0]), np.array([-0.2, 6.6, 3.9]))


@pytest.fixture()
def isotropic_event() -> ConjunctionEvent:
    """Crossing encounter at closest approach with a 2 km radial miss and isotropic 100 m sigmas."""
    primary = StateVector(np.array([7000.0, 0.0, 0.0]), np.array([0.0, 7.5, 0.0]))
    secondary = StateVector(np.array([6998.0, 0.0, 0.0]), np.array([0.0, 0.0, 7.5]))
    covariance = np.eye(3) * 0.1**2
    return ConjunctionEvent(primary, secondary, covariance, covariance, 0.02, "iso")


def _toy_linearization(n: int, gain: float = 1000.0, dr_b_ref: tuple[float, float] = (0.5, 0.0)) -> Linearization:
    """
    Every impulse moves the encounter by ``gain`` seconds times its velocity change, so 1 m/s
    along x or z shifts the b-plane point by ``gain/1000`` km along ξ or ζ.
    """
    A_big = np.zeros((6, 4 * n))
    for i in range(n):
        A_big[:3, 3 * i : 3 * i + 3] = gain * np.eye(3)
        A_big[3:, 3 * i : 3 * i + 3] = np.eye(3)
    C_mat = np.zeros((2, 6))
    C_mat[0, 0] = 1.0
    C_mat[1, 2] = 1.0
    B_row = np.zeros(6)
    B_row[1] = -1.0 / 7.5
    return Linearization(A_big, B_row, C_mat, np.array(dr_b_ref), 0.0)


@pytest.fixture()
def toy_linearization() -> Callable[..., Linearization]:
    return _toy_linearization


@pytest.fixture()
def toy_config() -> ScvxConfig:
    return ScvxConfig(lead_time=600.0, dv_max=1e-2, bplane_deviation_cap=50.0)
