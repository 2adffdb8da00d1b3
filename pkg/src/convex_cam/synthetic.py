"""
Deterministic synthetic encounters spanning typical low-Earth-orbit conjunction geometry.
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation

from convex_cam.conjunction import ConjunctionEvent
from convex_cam.dynamics import EARTH_MU, EARTH_RADIUS, StateVector
from convex_cam.logging import get_logger

__all__ = ["DEFAULT_SEED", "synthetic_events"]

logger = get_logger(__name__)

DEFAULT_SEED = 1978

ALTITUDE_RANGE = (500.0, 900.0)
RELATIVE_SPEED_RANGE = (1.8, 14.9)
MISS_DISTANCE_RANGE = (0.0, 2.0)
RADIAL_SIGMA_RANGE = (0.005, 0.05)
ALONG_TRACK_SIGMA_RANGE = (0.05, 0.5)
SECONDARY_SCALE_RANGE = (1.0, 5.0)
RADIUS_RANGE = (0.010, 0.030)


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)  # type: ignore[no-any-return]


def _rtn_covariance(rng: np.random.Generator, scale: float) -> np.ndarray:
    sigma_r, sigma_n = rng.uniform(*RADIAL_SIGMA_RANGE, size=2) * scale
    sigma_t = rng.uniform(*ALONG_TRACK_SIGMA_RANGE) * scale
    rho = rng.uniform(-0.3, 0.3)
    covariance = np.diag([sigma_r**2, sigma_t**2, sigma_n**2])
    covariance[0, 1] = covariance[1, 0] = rho * sigma_r * sigma_t
    return covariance


def synthetic_events(count: int = 20, seed: int = DEFAULT_SEED) -> list[ConjunctionEvent]:
    """
    Builds ``count`` encounters at exact closest approach.

    The primary is on a circular orbit with random orientation; the secondary velocity is the
    primary velocity rotated about the local vertical, which sets the relative speed; the miss
    vector is perpendicular to the relative velocity. The first event is a direct impact and
    the relative speeds cover both ends of their range.
    """
    if count < 1:
        return []
    rng = np.random.default_rng(seed)
    speeds = rng.uniform(*RELATIVE_SPEED_RANGE, size=count)
    speeds[np.argmin(speeds)] = RELATIVE_SPEED_RANGE[0]
    if count > 1:
        speeds[np.argmax(speeds)] = RELATIVE_SPEED_RANGE[1]
    misses = rng.uniform(*MISS_DISTANCE_RANGE, size=count)
    misses[0] = 0.0

    events = []
    for index in range(count):
        radius = EARTH_RADIUS + rng.uniform(*ALTITUDE_RANGE)
        speed = math.sqrt(EARTH_MU / radius)
        orientation = Rotation.random(random_state=rng)
        position = orientation.apply([radius, 0.0, 0.0])
        velocity = orientation.apply([0.0, speed, 0.0])
        radial = _unit(position)

        relative_speed = min(speeds[index], 1.98 * speed)
        angle = 2.0 * math.asin(relative_speed / (2.0 * speed))
        if rng.random() < 0.5:
            angle = -angle
        secondary_velocity = Rotation.from_rotvec(angle * radial).apply(velocity)
        relative_velocity = velocity - secondary_velocity

        # any direction in the plane normal to the relative velocity
        normal = _unit(np.cross(relative_velocity, radial))
        in_plane = _unit(np.cross(relative_velocity, normal))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        miss_vector = misses[index] * (math.cos(phase) * normal + math.sin(phase) * in_plane)

        events.append(
            ConjunctionEvent(
                StateVector(position, velocity),
                StateVector(position - miss_vector, secondary_velocity),
                _rtn_covariance(rng, 1.0),
                _rtn_covariance(rng, rng.uniform(*SECONDARY_SCALE_RANGE)),
                rng.uniform(*RADIUS_RANGE),
                f"syn-{index + 1:03d}",
            )
        )
    logger.debug("built %d synthetic events (seed %d)", count, seed)
    return events
