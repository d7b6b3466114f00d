"""Link-level channel construction and exact first/second moments.

The indirect link is a cascade BS -> RIS -> UE: a deterministic rank-one
BS-RIS leg, a Rician RIS-UE leg, and the programmable reflection profile in
between. The vectorized cascade is complex Gaussian with a closed-form mean
and covariance, which this module also marginalizes over an uncertain UE
position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .geometry import ArrayLayout, Pose, local_direction, steering_vector, unit_cell_pattern
from .linalg import crandn, hermitize, psd_clip, sample_gaussian, vec

if TYPE_CHECKING:  # pragma: no cover
    from .config import ScenarioConfig


class InvalidUncertaintyError(ValueError):
    """Raised when a position covariance is not positive semidefinite."""


@dataclass(frozen=True)
class RfParams:
    """Carrier, gains, pattern and noise description shared by all links."""

    carrier_hz: float
    bandwidth_hz: float
    noise_figure: float          # linear
    noise_density: float         # W/Hz
    tx_gain: float
    rx_gain: float
    cell_boresight_gain: float
    pattern_exponent: float
    pathloss_exponent: float

    def __post_init__(self):
        for name in ("carrier_hz", "bandwidth_hz", "noise_figure", "noise_density",
                     "tx_gain", "rx_gain", "cell_boresight_gain", "pattern_exponent"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.pathloss_exponent < 2.0:
            raise ValueError("pathloss exponent must be at least 2")

    @property
    def wavelength_m(self) -> float:
        return 299792458.0 / self.carrier_hz

    @property
    def noise_variance(self) -> float:
        """Thermal noise power n_f * N_0 * B in watts."""
        return self.noise_figure * self.noise_density * self.bandwidth_hz


@dataclass(frozen=True)
class PlacedArray:
    """A rectangular array with a pose in the global frame."""

    pose: Pose
    layout: ArrayLayout

    @property
    def n_elements(self) -> int:
        return self.layout.n_elements


@dataclass(frozen=True)
class RisProfile:
    """Unit-modulus reflection coefficients of one surface."""

    coefficients: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coefficients, dtype=complex)
        if arr.ndim != 1:
            raise ValueError("profile must be a vector")
        if not np.allclose(np.abs(arr), 1.0, atol=1e-9):
            raise ValueError("reflection coefficients must have unit modulus")
        arr.flags.writeable = False
        object.__setattr__(self, "coefficients", arr)

    def __len__(self) -> int:
        return self.coefficients.size


@dataclass(frozen=True)
class LinkFading:
    """Rician description of one RIS-UE link at a given geometry.

    nlos_variance is rho / (kappa + 1) and |los_gain|^2 is
    kappa * rho / (kappa + 1); los_gain carries the LOS phase.
    """

    rician_factor: float
    los_gain: complex
    nlos_variance: float
    direct_nlos_variance: float = 0.0

    @property
    def path_power(self) -> float:
        """Total link power rho."""
        return self.nlos_variance * (self.rician_factor + 1.0)


@dataclass(frozen=True)
class ChannelStats:
    """Mean and covariance of a vectorized cascaded channel."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=complex)
        cov = np.array(self.covariance, dtype=complex)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean length")
        if not np.allclose(cov, cov.conj().T, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not Hermitian")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def second_moment(self) -> np.ndarray:
        return self.covariance + np.outer(self.mean, self.mean.conj())


def bs_ris_link_gain(bs: PlacedArray, ris: PlacedArray, rf: RfParams) -> complex:
    """Complex LOS gain alpha of the BS to RIS leg, incidence pattern included."""
    aoa_at_ris, dist = local_direction(ris.pose, bs.pose.position)
    pattern = unit_cell_pattern(aoa_at_ris, rf.pattern_exponent)
    magnitude = (
        np.sqrt(pattern * rf.tx_gain * rf.cell_boresight_gain)
        * rf.wavelength_m
        / (4.0 * np.pi * dist)
    )
    return magnitude * np.exp(-2j * np.pi * dist / rf.wavelength_m)


def bs_ris_channel(bs: PlacedArray, ris: PlacedArray, rf: RfParams) -> np.ndarray:
    """Rank-one LOS channel matrix (P x N_B) from the BS to one RIS."""
    aod_at_bs, _ = local_direction(bs.pose, ris.pose.position)
    aoa_at_ris, _ = local_direction(ris.pose, bs.pose.position)
    gain = bs_ris_link_gain(bs, ris, rf)
    a_ris = steering_vector(ris.layout, aoa_at_ris, rf.wavelength_m)
    a_bs = steering_vector(bs.layout, aod_at_bs, rf.wavelength_m)
    return gain * np.outer(a_ris, a_bs)


def link_fading(
    ris: PlacedArray,
    ue: PlacedArray,
    rician_factor: float,
    rf: RfParams,
    direct_nlos_variance: float = 0.0,
) -> LinkFading:
    """Evaluate the Rician fading parameters of one RIS-UE link."""
    if rician_factor < 0.0:
        raise ValueError("Rician factor must be nonnegative")
    aod_at_ris, dist = local_direction(ris.pose, ue.pose.position)
    pattern = unit_cell_pattern(aod_at_ris, rf.pattern_exponent)
    path_power = (
        pattern
        * rf.rx_gain
        * rf.cell_boresight_gain
        * rf.wavelength_m**2
        / (16.0 * np.pi**2 * dist**rf.pathloss_exponent)
    )
    los_magnitude = np.sqrt(rician_factor * path_power / (rician_factor + 1.0))
    los_gain = los_magnitude * np.exp(-2j * np.pi * dist / rf.wavelength_m)
    return LinkFading(
        rician_factor=rician_factor,
        los_gain=complex(los_gain),
        nlos_variance=path_power / (rician_factor + 1.0),
        direct_nlos_variance=direct_nlos_variance,
    )


def ris_ue_los(ris: PlacedArray, ue: PlacedArray, fading: LinkFading, rf: RfParams) -> np.ndarray:
    """Rank-one LOS component (N_U x P) of the RIS to UE channel."""
    aod_at_ris, _ = local_direction(ris.pose, ue.pose.position)
    aoa_at_ue, _ = local_direction(ue.pose, ris.pose.position)
    a_ue = steering_vector(ue.layout, aoa_at_ue, rf.wavelength_m)
    a_ris = steering_vector(ris.layout, aod_at_ris, rf.wavelength_m)
    return fading.los_gain * np.outer(a_ue, a_ris)


def sample_nlos(shape: tuple[int, ...], variance: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. CN(0, variance) matrix; real/imag parts each N(0, variance/2)."""
    if variance < 0.0:
        raise ValueError("variance must be nonnegative")
    if variance == 0.0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(variance) * crandn(rng, *shape)


def cascaded_channel(bs_ris: np.ndarray, ris_ue: np.ndarray, profile: RisProfile) -> np.ndarray:
    """Composite N_U x N_B channel ris_ue @ Diag(b) @ bs_ris."""
    return (ris_ue * profile.coefficients[np.newaxis, :]) @ bs_ris


def cascaded_stats(
    bs_ris: np.ndarray,
    ris_ue_los_matrix: np.ndarray,
    profile: RisProfile,
    nlos_variance: float,
) -> ChannelStats:
    """Exact moments of vec(cascade) under the i.i.d. Rician NLOS model."""
    mean = vec(cascaded_channel(bs_ris, ris_ue_los_matrix, profile))
    n_ue = ris_ue_los_matrix.shape[0]
    weights = np.abs(profile.coefficients) ** 2
    core = bs_ris.T @ (weights[:, np.newaxis] * bs_ris.conj())
    covariance = nlos_variance * np.kron(hermitize(core), np.eye(n_ue))
    return ChannelStats(mean=mean, covariance=covariance)


def _ue_at(ue: PlacedArray, position: np.ndarray) -> PlacedArray:
    return PlacedArray(pose=Pose(position, ue.pose.orientation), layout=ue.layout)


def composed_stats_at_position(
    scenario: "ScenarioConfig",
    profiles: Sequence[RisProfile],
    ue_index: int,
    position=None,
) -> ChannelStats:
    """Moments of the full BS-to-UE channel at a known UE position.

    Mean is the sum of the per-RIS cascade means; covariance adds the
    blocked-direct-link white term sigma_B^2 I.
    """
    ue_cfg = scenario.ues[ue_index]
    if position is None:
        position = ue_cfg.array.pose.position
    ue = _ue_at(ue_cfg.array, np.asarray(position, dtype=float))
    dim = scenario.bs.n_elements * ue.n_elements
    mean = np.zeros(dim, dtype=complex)
    covariance = ue_cfg.direct_nlos_variance * np.eye(dim, dtype=complex)
    for ris, profile in zip(scenario.ris, profiles):
        fading = link_fading(ris, ue, ue_cfg.rician_factor, scenario.rf)
        h_bs_ris = bs_ris_channel(scenario.bs, ris, scenario.rf)
        los = ris_ue_los(ris, ue, fading, scenario.rf)
        stats = cascaded_stats(h_bs_ris, los, profile, fading.nlos_variance)
        mean += stats.mean
        covariance += stats.covariance
    return ChannelStats(mean=mean, covariance=covariance)


def marginal_stats(
    scenario: "ScenarioConfig",
    profiles: Sequence[RisProfile],
    ue_index: int,
    position_mean,
    position_cov,
    n_samples: int,
    rng: np.random.Generator,
) -> ChannelStats:
    """Channel moments marginalized over a Gaussian position posterior.

    Monte Carlo over p ~ N(position_mean, position_cov): the mean averages
    h_bar(p); the covariance is E_p{h_bar h_bar^H + R(p)} - h_bar_m h_bar_m^H,
    symmetrized and eigenvalue-clipped to PSD.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    position_mean = np.asarray(position_mean, dtype=float)
    position_cov = np.asarray(position_cov, dtype=float)
    eigvals = np.linalg.eigvalsh(hermitize(position_cov))
    if eigvals.min() < -1e-10 * max(1.0, eigvals.max()):
        raise InvalidUncertaintyError("position covariance is not PSD")

    if np.allclose(position_cov, 0.0):
        return composed_stats_at_position(scenario, profiles, ue_index, position_mean)

    draws = sample_gaussian(position_mean, position_cov, rng, size=n_samples)
    means = cascade_means_at_positions(scenario, profiles, ue_index, draws)
    mean = means.mean(axis=0)
    second = (means.conj().T @ means) / n_samples

    # Position-independent NLOS covariance factors, weighted by E_p[sigma^2(p)].
    ue_cfg = scenario.ues[ue_index]
    ue_orient = ue_cfg.array.pose.orientation
    dim = scenario.bs.n_elements * ue_cfg.array.n_elements
    covariance = second - np.outer(mean, mean.conj())
    covariance += ue_cfg.direct_nlos_variance * np.eye(dim)
    for k, (ris, profile) in enumerate(zip(scenario.ris, profiles)):
        h_bs_ris = bs_ris_channel(scenario.bs, ris, scenario.rf)
        weights = np.abs(profile.coefficients) ** 2
        core = hermitize(h_bs_ris.T @ (weights[:, np.newaxis] * h_bs_ris.conj()))
        sigma_sq = _nlos_variances_at_positions(ris, ue_orient, ue_cfg.rician_factor,
                                                scenario.rf, draws)
        covariance += sigma_sq.mean() * np.kron(core, np.eye(ue_cfg.array.n_elements))
    return ChannelStats(mean=mean, covariance=psd_clip(covariance))


def _nlos_variances_at_positions(ris, ue_orientation, rician_factor, rf, positions):
    """sigma_{k,i}^2(p) for a batch of UE positions."""
    from .geometry import local_direction_batch, unit_cell_pattern_batch

    ris_observer = ris.pose
    elevation, _, dist = local_direction_batch(ris_observer, positions)
    pattern = unit_cell_pattern_batch(elevation, rf.pattern_exponent)
    path_power = (
        pattern * rf.rx_gain * rf.cell_boresight_gain * rf.wavelength_m**2
        / (16.0 * np.pi**2 * dist**rf.pathloss_exponent)
    )
    return path_power / (rician_factor + 1.0)


def cascade_means_at_positions(
    scenario: "ScenarioConfig",
    profiles: Sequence[RisProfile],
    ue_index: int,
    positions: np.ndarray,
    chunk: int = 512,
) -> np.ndarray:
    """vec of the composed LOS cascade mean for a batch of UE positions.

    Returns an (n, N_B * N_U) array. Exploits the rank-one legs: each RIS
    contributes a scalar coefficient times a_B kron a_U.
    """
    from .geometry import local_direction_batch, steering_vector_batch, unit_cell_pattern_batch

    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    ue_cfg = scenario.ues[ue_index]
    ue_pose_orientation = ue_cfg.array.pose.orientation
    n_bs = scenario.bs.n_elements
    n_ue = ue_cfg.array.n_elements
    out = np.zeros((positions.shape[0], n_bs * n_ue), dtype=complex)
    rf = scenario.rf

    for ris, profile in zip(scenario.ris, profiles):
        gain = bs_ris_link_gain(scenario.bs, ris, rf)
        aod_at_bs, _ = local_direction(scenario.bs.pose, ris.pose.position)
        aoa_at_ris, _ = local_direction(ris.pose, scenario.bs.pose.position)
        a_bs = steering_vector(scenario.bs.layout, aod_at_bs, rf.wavelength_m)
        a_ris_bs = steering_vector(ris.layout, aoa_at_ris, rf.wavelength_m)
        weighted = profile.coefficients * a_ris_bs

        for start in range(0, positions.shape[0], chunk):
            block = positions[start:start + chunk]
            el_dep, az_dep, dist = local_direction_batch(ris.pose, block)
            pattern = unit_cell_pattern_batch(el_dep, rf.pattern_exponent)
            path_power = (
                pattern * rf.rx_gain * rf.cell_boresight_gain * rf.wavelength_m**2
                / (16.0 * np.pi**2 * dist**rf.pathloss_exponent)
            )
            los_gain = np.sqrt(ue_cfg.rician_factor * path_power / (ue_cfg.rician_factor + 1.0))
            los_gain = los_gain * np.exp(-2j * np.pi * dist / rf.wavelength_m)
            a_ris_ue = steering_vector_batch(ris.layout, el_dep, az_dep, rf.wavelength_m)
            coeff = gain * los_gain * (a_ris_ue @ weighted)

            ue_observer = Pose(np.zeros(3), ue_pose_orientation)
            rel = ris.pose.position[np.newaxis, :] - block
            el_ue, az_ue, _ = local_direction_batch(ue_observer, rel)
            a_ue = steering_vector_batch(ue_cfg.array.layout, el_ue, az_ue, rf.wavelength_m)
            # vec(a_ue a_bs^T) = a_bs kron a_ue, entry m*N_U+u = a_bs[m] a_ue[u]
            out[start:start + chunk] += (
                coeff[:, np.newaxis, np.newaxis]
                * a_bs[np.newaxis, :, np.newaxis]
                * a_ue[:, np.newaxis, :]
            ).reshape(block.shape[0], n_bs * n_ue)
    return out
