"""Phase I: differenced pilot model, Fisher information, position error bound.

The BS repeats one pilot vector while each RIS alternates the sign of its
profile between paired slots, which cancels the direct link in the slot
difference. The Fisher information over the channel parameters (per-RIS
departure angles, arrival angles, complex gains) maps through a geometric
Jacobian to position parameters; the 3x3 position block of the inverse
gives the error covariance that everything downstream consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .channel import bs_ris_channel, link_fading
from .geometry import (
    AnglePair,
    Pose,
    local_direction,
    local_direction_jacobian,
    steering_vector,
    steering_vector_angle_gradient,
)
from .linalg import hermitize, sample_gaussian

if TYPE_CHECKING:  # pragma: no cover
    from .config import ScenarioConfig


class UnidentifiableError(ValueError):
    """Raised when the position parameters are not identifiable."""


@dataclass(frozen=True)
class Phase1Pilots:
    """Constant pilot symbol plus sign-alternating RIS profile sequences.

    ris_sequences[k] has shape (T, P_k) with b[2t] = -b[2t + 1]; the slot
    count T must be even.
    """

    symbol: np.ndarray
    ris_sequences: tuple[np.ndarray, ...]

    def __post_init__(self):
        symbol = np.array(self.symbol, dtype=complex)
        symbol.flags.writeable = False
        object.__setattr__(self, "symbol", symbol)
        seqs = []
        n_slots = None
        for k, seq in enumerate(self.ris_sequences):
            seq = np.array(seq, dtype=complex)
            if seq.ndim != 2:
                raise ValueError(f"RIS sequence {k} must be (slots, cells)")
            if n_slots is None:
                n_slots = seq.shape[0]
            elif seq.shape[0] != n_slots:
                raise ValueError("all RIS sequences must share the slot count")
            if n_slots % 2 != 0:
                raise ValueError("the Phase-I slot count must be even")
            if not np.allclose(np.abs(seq), 1.0, atol=1e-9):
                raise ValueError(f"RIS sequence {k} is not unit modulus")
            if not np.allclose(seq[0::2], -seq[1::2], atol=1e-12):
                raise ValueError(f"RIS sequence {k} violates the sign alternation")
            seq.flags.writeable = False
            seqs.append(seq)
        object.__setattr__(self, "ris_sequences", tuple(seqs))

    @property
    def n_symbols(self) -> int:
        return self.ris_sequences[0].shape[0]

    @property
    def n_pairs(self) -> int:
        return self.n_symbols // 2

    def pair_profiles(self, ris_index: int) -> np.ndarray:
        """(n_pairs, P) profiles effective in the differenced observations."""
        return self.ris_sequences[ris_index][0::2]


@dataclass(frozen=True)
class FimReport:
    """Channel-parameter FIM, position-parameter FIM, and the PEB."""

    j_eta: np.ndarray
    j_zeta: np.ndarray
    sigma_pos: np.ndarray
    peb: float


def phase1_pilots(
    scenario: "ScenarioConfig", n_symbols: int, rng: np.random.Generator
) -> Phase1Pilots:
    """Draw random-phase pair profiles and the uniform-power pilot symbol.

    Pair profiles are i.i.d. uniform phases, negated in the partner slot;
    sequences drawn from a common seed are nested as n_symbols grows.
    """
    if n_symbols % 2 != 0 or n_symbols < 2:
        raise ValueError("the Phase-I symbol count must be a positive even number")
    n_bs = scenario.bs.n_elements
    symbol = np.sqrt(scenario.total_power / n_bs) * np.ones(n_bs, dtype=complex)
    sequences = []
    # One child stream per RIS keeps sequences nested in n_symbols.
    for ris, stream in zip(scenario.ris, rng.spawn(len(scenario.ris))):
        pairs = np.exp(2j * np.pi * stream.random((n_symbols // 2, ris.n_elements)))
        seq = np.empty((n_symbols, ris.n_elements), dtype=complex)
        seq[0::2] = pairs
        seq[1::2] = -pairs
        sequences.append(seq)
    return Phase1Pilots(symbol=symbol, ris_sequences=tuple(sequences))


def difference_observations(observations: np.ndarray) -> np.ndarray:
    """Halved difference of paired slots, (y[2t] - y[2t+1]) / 2."""
    observations = np.asarray(observations)
    if observations.shape[0] % 2 != 0:
        raise ValueError("observation count must be even")
    return 0.5 * (observations[0::2] - observations[1::2])


def effective_noise_variance(
    scenario: "ScenarioConfig", symbol: np.ndarray, ue_index: int, ue_position=None
) -> float:
    """Noise-plus-multipath variance of the differenced observations.

    (sigma_n^2 + sigma_i^2) / 2 with sigma_i^2 the RIS-UE NLOS power
    collected through each BS-RIS leg.
    """
    ue_cfg = scenario.ues[ue_index]
    ue = _ue_at(ue_cfg.array, ue_position)
    sigma_i_sq = 0.0
    for ris in scenario.ris:
        fading = link_fading(ris, ue, ue_cfg.rician_factor, scenario.rf)
        h = bs_ris_channel(scenario.bs, ris, scenario.rf)
        sigma_i_sq += np.linalg.norm(h @ symbol) ** 2 * fading.nlos_variance
    return float((scenario.rf.noise_variance + sigma_i_sq) / 2.0)


def _ue_at(ue_array, position):
    from .channel import PlacedArray

    if position is None:
        return ue_array
    return PlacedArray(
        pose=Pose(np.asarray(position, dtype=float), ue_array.pose.orientation),
        layout=ue_array.layout,
    )


def _mu_gradients(scenario, pilots, ue_index, ue_position):
    """Stack of noise-free pair observations' gradients, (n_pairs, 6K, N_U)."""
    ue_cfg = scenario.ues[ue_index]
    ue = _ue_at(ue_cfg.array, ue_position)
    rf = scenario.rf
    n_ris = len(scenario.ris)
    n_ue = ue.n_elements
    n_pairs = pilots.n_pairs
    grads = np.zeros((n_pairs, 6 * n_ris, n_ue), dtype=complex)

    for k, ris in enumerate(scenario.ris):
        fading = link_fading(ris, ue, ue_cfg.rician_factor, rf)
        aod, _ = local_direction(ris.pose, ue.pose.position)
        aoa, _ = local_direction(ue.pose, ris.pose.position)
        a_ris = steering_vector(ris.layout, aod, rf.wavelength_m)
        da_ris = steering_vector_angle_gradient(ris.layout, aod, rf.wavelength_m)
        a_ue = steering_vector(ue.layout, aoa, rf.wavelength_m)
        da_ue = steering_vector_angle_gradient(ue.layout, aoa, rf.wavelength_m)
        g = bs_ris_channel(scenario.bs, ris, rf) @ pilots.symbol
        gain = fading.los_gain

        profiles = pilots.pair_profiles(k)          # (n_pairs, P)
        weighted = profiles * g[np.newaxis, :]
        s = weighted @ a_ris                        # (n_pairs,)
        ds = weighted @ da_ris.T                    # (n_pairs, 2)

        rows = slice(2 * k, 2 * k + 2)
        grads[:, rows, :] = gain * ds[:, :, np.newaxis] * a_ue[np.newaxis, np.newaxis, :]
        rows = slice(2 * n_ris + 2 * k, 2 * n_ris + 2 * k + 2)
        grads[:, rows, :] = gain * s[:, np.newaxis, np.newaxis] * da_ue[np.newaxis, :, :]
        base = 4 * n_ris + 2 * k
        grads[:, base, :] = s[:, np.newaxis] * a_ue[np.newaxis, :]
        grads[:, base + 1, :] = 1j * s[:, np.newaxis] * a_ue[np.newaxis, :]
    return grads


def noise_free_pair_observations(scenario, pilots, ue_index, ue_position=None) -> np.ndarray:
    """(n_pairs, N_U) noise-free differenced observations."""
    ue_cfg = scenario.ues[ue_index]
    ue = _ue_at(ue_cfg.array, ue_position)
    rf = scenario.rf
    mu = np.zeros((pilots.n_pairs, ue.n_elements), dtype=complex)
    for k, ris in enumerate(scenario.ris):
        fading = link_fading(ris, ue, ue_cfg.rician_factor, rf)
        aod, _ = local_direction(ris.pose, ue.pose.position)
        aoa, _ = local_direction(ue.pose, ris.pose.position)
        a_ris = steering_vector(ris.layout, aod, rf.wavelength_m)
        a_ue = steering_vector(ue.layout, aoa, rf.wavelength_m)
        g = bs_ris_channel(scenario.bs, ris, rf) @ pilots.symbol
        s = (pilots.pair_profiles(k) * g[np.newaxis, :]) @ a_ris
        mu += fading.los_gain * s[:, np.newaxis] * a_ue[np.newaxis, :]
    return mu


def fim_channel_params(
    scenario: "ScenarioConfig",
    pilots: Phase1Pilots,
    ue_index: int,
    ue_position=None,
    noise_variance: float | None = None,
) -> np.ndarray:
    """6K x 6K Fisher information over [departure angles, arrival angles, gains].

    J = (2 / sigma_check^2) * sum_t Re{grad mu grad mu^H} with analytic
    gradients of the noise-free differenced observations.
    """
    if noise_variance is None:
        noise_variance = effective_noise_variance(
            scenario, pilots.symbol, ue_index, ue_position
        )
    grads = _mu_gradients(scenario, pilots, ue_index, ue_position)
    outer = np.einsum("tru,tsu->rs", grads, grads.conj())
    return (2.0 / noise_variance) * np.real(outer)


def position_jacobian(scenario: "ScenarioConfig", ue_index: int, ue_position=None) -> np.ndarray:
    """Jacobian of the channel parameters w.r.t. [position, AOAs, gains].

    Only the per-RIS departure angles depend on the UE position; the AOA
    and gain blocks pass through as identities. Shape 6K x (4K + 3).
    """
    ue_cfg = scenario.ues[ue_index]
    position = (
        ue_cfg.array.pose.position if ue_position is None else np.asarray(ue_position, float)
    )
    n_ris = len(scenario.ris)
    jac = np.zeros((6 * n_ris, 4 * n_ris + 3))
    for k, ris in enumerate(scenario.ris):
        jac[2 * k: 2 * k + 2, 0:3] = local_direction_jacobian(ris.pose, position)
    jac[2 * n_ris:, 3:] = np.eye(4 * n_ris)
    return jac


def fim_position_params(
    j_eta: np.ndarray, scenario: "ScenarioConfig", ue_index: int, ue_position=None
) -> np.ndarray:
    """Congruence J(zeta) = Upsilon^T J(eta) Upsilon."""
    jac = position_jacobian(scenario, ue_index, ue_position)
    return jac.T @ j_eta @ jac


def position_error_covariance(
    j_zeta: np.ndarray, planar: bool = False
) -> tuple[np.ndarray, float]:
    """3x3 position error covariance and the PEB sqrt(trace).

    With planar=True the z coordinate is treated as known: the z row and
    column are removed before inversion and re-embedded as zeros.
    """
    j_zeta = np.asarray(j_zeta, dtype=float)
    if planar:
        keep = np.ones(j_zeta.shape[0], dtype=bool)
        keep[2] = False
        reduced = j_zeta[np.ix_(keep, keep)]
        inv = _robust_inverse(reduced, n_position=2)
        sigma = np.zeros((3, 3))
        sigma[:2, :2] = inv[:2, :2]
    else:
        inv = _robust_inverse(j_zeta, n_position=3)
        sigma = inv[:3, :3]
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, float(np.sqrt(np.trace(sigma)))


def _robust_inverse(j: np.ndarray, n_position: int) -> np.ndarray:
    """Inverse with a pseudo-inverse fallback for ill-conditioned FIMs.

    The matrix is diagonally equilibrated first; angle and gain parameters
    live on wildly different scales and the raw condition number is mostly
    that artifact. Null directions (relative eigenvalue below 1e-12 after
    equilibration) are dropped when they live entirely in the nuisance
    block; overlap with the leading n_position coordinates makes the
    position unidentifiable and raises, reporting the null-space dimension.
    """
    diag = np.sqrt(np.abs(np.diag(j)))
    scale = np.where(diag > 0.0, diag, 1.0)
    balanced = j / np.outer(scale, scale)
    eigval, eigvec = np.linalg.eigh(hermitize(balanced))
    top = eigval.max() if eigval.size else 0.0
    if top <= 0.0:
        raise UnidentifiableError(
            f"FIM has no information (null-space dimension {j.shape[0]})"
        )
    null = eigval < 1e-12 * top
    if null.any() and np.linalg.norm(eigvec[:n_position, null]) > 1e-6:
        raise UnidentifiableError(
            "position parameters unidentifiable; FIM null-space dimension "
            f"{int(null.sum())}"
        )
    inv_eig = np.where(null, 0.0, 1.0 / np.where(null, 1.0, eigval))
    inv_balanced = eigvec @ np.diag(inv_eig) @ eigvec.T
    return inv_balanced / np.outer(scale, scale)


def peb_report(
    scenario: "ScenarioConfig",
    pilots: Phase1Pilots,
    ue_index: int,
    ue_position=None,
    planar: bool | None = None,
) -> FimReport:
    """Convenience bundle: both FIMs, the error covariance and the PEB."""
    if planar is None:
        planar = scenario.planar_localization
    j_eta = fim_channel_params(scenario, pilots, ue_index, ue_position)
    j_zeta = fim_position_params(j_eta, scenario, ue_index, ue_position)
    sigma, peb = position_error_covariance(j_zeta, planar=planar)
    return FimReport(j_eta=j_eta, j_zeta=j_zeta, sigma_pos=sigma, peb=peb)


def sample_position_estimate(
    true_position, sigma_pos: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Bound-achieving estimate: the true position plus N(0, sigma_pos) noise."""
    return sample_gaussian(np.asarray(true_position, dtype=float), sigma_pos, rng)
