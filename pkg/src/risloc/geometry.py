"""Array layouts, local angle extraction, and steering vectors.

Everything downstream (channel synthesis, Fisher information, RIS phase
optimization) is built on the three primitives here: a centered uniform
rectangular array, a rigid pose, and the plane-wave steering vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-12


class DegenerateGeometryError(ValueError):
    """Raised when a direction is requested between coincident points."""


def _frozen_array(obj, name: str, value, shape, dtype=float) -> None:
    arr = np.array(value, dtype=dtype)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class ArrayLayout:
    """Uniform rectangular array in its local x-y plane.

    Element (n_x, n_y) sits on a grid centered on the origin with the given
    spacing; the flattened element index is (n_x - 1) * N_y + n_y, i.e. the
    x index varies slowest.
    """

    n_x: int
    n_y: int
    spacing: float

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("array dimensions must be positive")
        if self.spacing <= 0.0:
            raise ValueError("element spacing must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_x * self.n_y

    def element_positions(self) -> np.ndarray:
        """N x 3 matrix of element positions on the centered grid."""
        ix = np.arange(self.n_x) * self.spacing - (self.n_x - 1) * self.spacing / 2.0
        iy = np.arange(self.n_y) * self.spacing - (self.n_y - 1) * self.spacing / 2.0
        qx, qy = np.meshgrid(ix, iy, indexing="ij")
        positions = np.zeros((self.n_elements, 3))
        positions[:, 0] = qx.ravel()
        positions[:, 1] = qy.ravel()
        return positions


@dataclass(frozen=True)
class Pose:
    """Position plus orientation of an array.

    The orientation matrix maps global coordinates into the local frame:
    a target at t is seen along O @ (t - position). It must be a proper
    rotation (orthonormal, determinant +1).
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        _frozen_array(self, "position", self.position, (3,))
        _frozen_array(self, "orientation", self.orientation, (3, 3))
        o = self.orientation
        if not np.allclose(o.T @ o, np.eye(3), atol=ORTHONORMALITY_TOL):
            raise ValueError("orientation is not orthonormal")
        if abs(np.linalg.det(o) - 1.0) > 1e-9:
            raise ValueError("orientation must have determinant +1")


@dataclass(frozen=True)
class AnglePair:
    """Elevation in [0, pi] and azimuth in (-pi, pi]."""

    elevation: float
    azimuth: float

    def __post_init__(self):
        if not 0.0 <= self.elevation <= np.pi:
            raise ValueError(f"elevation {self.elevation} outside [0, pi]")
        if not -np.pi < self.azimuth <= np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside (-pi, pi]")


def direction_unit_vector(angles: AnglePair) -> np.ndarray:
    """Unit vector [sin(el)cos(az), sin(el)sin(az), cos(el)]."""
    se = np.sin(angles.elevation)
    return np.array(
        [
            se * np.cos(angles.azimuth),
            se * np.sin(angles.azimuth),
            np.cos(angles.elevation),
        ]
    )


def local_direction(observer: Pose, target_position) -> tuple[AnglePair, float]:
    """Angles and range of a target in the observer's local frame.

    Azimuth at exact boresight is ill-defined and returned as 0 by
    convention (the direction vector is unique regardless).
    """
    target_position = np.asarray(target_position, dtype=float)
    v = observer.orientation @ (target_position - observer.position)
    rng = float(np.linalg.norm(v))
    if rng < 1e-12:
        raise DegenerateGeometryError(
            "observer and target positions coincide; no direction defined"
        )
    elevation = float(np.arccos(np.clip(v[2] / rng, -1.0, 1.0)))
    azimuth = float(np.arctan2(v[1], v[0]))
    if azimuth == -np.pi:
        azimuth = np.pi
    return AnglePair(elevation, azimuth), rng


def local_direction_jacobian(observer: Pose, target_position) -> np.ndarray:
    """2 x 3 Jacobian of (elevation, azimuth) w.r.t. the target position.

    Undefined (raises) at boresight where the azimuth is degenerate.
    """
    target_position = np.asarray(target_position, dtype=float)
    v = observer.orientation @ (target_position - observer.position)
    rng = float(np.linalg.norm(v))
    if rng < 1e-12:
        raise DegenerateGeometryError("coincident positions")
    rho_sq = v[0] ** 2 + v[1] ** 2
    if rho_sq < 1e-24:
        raise DegenerateGeometryError("angle Jacobian is singular at boresight")
    # d el / d v = -(e3/r - v3 v / r^3) / sin(el),  sin(el) = sqrt(v1^2+v2^2)/r
    sin_el = np.sqrt(rho_sq) / rng
    d_el_dv = -(np.array([0.0, 0.0, 1.0]) / rng - v[2] * v / rng**3) / sin_el
    d_az_dv = np.array([-v[1], v[0], 0.0]) / rho_sq
    return np.vstack([d_el_dv, d_az_dv]) @ observer.orientation


def steering_vector(layout: ArrayLayout, angles: AnglePair, wavelength: float) -> np.ndarray:
    """Plane-wave steering vector a(Q, theta) for the layout.

    Entry (n_x - 1) * N_y + n_y equals exp(j 2 pi / lambda * q^T u) with u
    the unit direction built from the angles. All entries have unit modulus.
    """
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    u = direction_unit_vector(angles)
    phases = (2.0 * np.pi / wavelength) * (layout.element_positions() @ u)
    return np.exp(1j * phases)


def steering_vector_angle_gradient(
    layout: ArrayLayout, angles: AnglePair, wavelength: float
) -> np.ndarray:
    """2 x N gradient of the steering vector w.r.t. (elevation, azimuth)."""
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    q = layout.element_positions()
    el, az = angles.elevation, angles.azimuth
    u = direction_unit_vector(angles)
    du_del = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), -np.sin(el)])
    du_daz = np.array([-np.sin(el) * np.sin(az), np.sin(el) * np.cos(az), 0.0])
    k = 2.0 * np.pi / wavelength
    a = np.exp(1j * k * (q @ u))
    return np.vstack([1j * k * (q @ du_del) * a, 1j * k * (q @ du_daz) * a])


def unit_cell_pattern(angles: AnglePair, q_exponent: float) -> float:
    """Normalized power pattern cos^q(elevation) on the front half-space."""
    if q_exponent <= 0.0:
        raise ValueError("pattern exponent must be positive")
    if angles.elevation >= np.pi / 2.0:
        return 0.0
    return float(np.cos(angles.elevation) ** q_exponent)


# Batch variants used by the Monte Carlo paths. Same conventions as the
# scalar functions, arrays in and arrays out.

def local_direction_batch(observer: Pose, targets: np.ndarray):
    """Elevations, azimuths and ranges of many targets; shape (n, 3) in."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    v = (targets - observer.position) @ observer.orientation.T
    rng = np.linalg.norm(v, axis=1)
    if np.any(rng < 1e-12):
        raise DegenerateGeometryError("a target coincides with the observer")
    elevation = np.arccos(np.clip(v[:, 2] / rng, -1.0, 1.0))
    azimuth = np.arctan2(v[:, 1], v[:, 0])
    return elevation, azimuth, rng


def steering_vector_batch(
    layout: ArrayLayout, elevation: np.ndarray, azimuth: np.ndarray, wavelength: float
) -> np.ndarray:
    """(n, N) matrix of steering vectors for per-row angles."""
    se = np.sin(elevation)
    u = np.stack([se * np.cos(azimuth), se * np.sin(azimuth), np.cos(elevation)], axis=1)
    phases = (2.0 * np.pi / wavelength) * (u @ layout.element_positions().T)
    return np.exp(1j * phases)


def unit_cell_pattern_batch(elevation: np.ndarray, q_exponent: float) -> np.ndarray:
    front = elevation < np.pi / 2.0
    return np.where(front, np.cos(np.minimum(elevation, np.pi / 2.0)) ** q_exponent, 0.0)
