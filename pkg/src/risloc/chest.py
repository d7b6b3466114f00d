"""Phase II: pilot design, ML and LMMSE cascaded-channel estimators.

Estimation works on the vectorized composed channel through the lifted
pilot matrix X = X_p2^T kron I. The LMMSE path consumes the
position-marginalized channel statistics and reports the exact error
covariance, which the robust precoder reuses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelStats
from .linalg import hermitize


class UnderdeterminedPilotsError(ValueError):
    """ML estimation needs at least as many pilot symbols as BS antennas."""


@dataclass(frozen=True)
class Phase2Pilots:
    """Pilot matrix (N_B x T) and its lifted form for a given UE size."""

    pilot_matrix: np.ndarray
    n_ue_antennas: int

    def __post_init__(self):
        pm = np.array(self.pilot_matrix, dtype=complex)
        if pm.ndim != 2:
            raise ValueError("pilot matrix must be N_B x T")
        pm.flags.writeable = False
        object.__setattr__(self, "pilot_matrix", pm)
        if self.n_ue_antennas < 1:
            raise ValueError("n_ue_antennas must be positive")

    @property
    def n_bs_antennas(self) -> int:
        return self.pilot_matrix.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.pilot_matrix.shape[1]

    @property
    def lifted(self) -> np.ndarray:
        """X = X_p2^T kron I, shape (T * N_U) x (N_B * N_U)."""
        return np.kron(self.pilot_matrix.T, np.eye(self.n_ue_antennas))

    def received(self, channel_matrix: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        """Vectorized pilot observation X h (+ noise)."""
        y = (channel_matrix @ self.pilot_matrix).ravel(order="F")
        if noise is not None:
            y = y + noise
        return y


@dataclass(frozen=True)
class EstimationResult:
    estimate: np.ndarray
    error_cov: np.ndarray
    estimator_tag: str

    def channel_matrix(self, n_ue: int, n_bs: int) -> np.ndarray:
        return self.estimate.reshape((n_ue, n_bs), order="F")


def design_pilots(n_bs: int, n_symbols: int, power: float, n_ue_antennas: int) -> Phase2Pilots:
    """DFT-family pilots at full power per symbol.

    For n_symbols >= n_bs the rows are orthogonal (X_p2 X_p2^H
    proportional to I); for fewer symbols the columns stay orthogonal and
    the lifted Gram is rank n_symbols * n_ue.
    """
    if n_bs < 1 or n_symbols < 1:
        raise ValueError("pilot dimensions must be positive")
    if power <= 0.0:
        raise ValueError("pilot power must be positive")
    order = max(n_bs, n_symbols)
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n_bs), np.arange(n_symbols)) / order)
    return Phase2Pilots(
        pilot_matrix=np.sqrt(power / n_bs) * dft, n_ue_antennas=n_ue_antennas
    )


def ml_estimate(pilots: Phase2Pilots, observation: np.ndarray, noise_variance: float) -> EstimationResult:
    """Least-squares / ML estimate, valid when the lifted Gram is invertible."""
    if pilots.n_symbols < pilots.n_bs_antennas:
        raise UnderdeterminedPilotsError(
            f"{pilots.n_symbols} pilot symbols < {pilots.n_bs_antennas} BS antennas; "
            "use the LMMSE estimator instead"
        )
    x = pilots.lifted
    gram = hermitize(x.conj().T @ x)
    estimate = np.linalg.solve(gram, x.conj().T @ observation)
    return EstimationResult(
        estimate=estimate,
        error_cov=noise_variance * np.linalg.inv(gram),
        estimator_tag="ml",
    )


def lmmse_estimate(
    pilots: Phase2Pilots,
    observation: np.ndarray,
    stats: ChannelStats,
    noise_variance: float,
    check_simplified: bool = False,
) -> EstimationResult:
    """LMMSE estimate h_bar + Lambda (y - X h_bar) with its error covariance.

    With check_simplified the covariance is also verified against the
    equivalent form sigma_n^2 R (X^H X R + sigma_n^2 I)^(-1).
    """
    if noise_variance <= 0.0:
        raise ValueError("noise variance must be positive")
    x = pilots.lifted
    r = stats.covariance
    innovation_cov = x @ r @ x.conj().T + noise_variance * np.eye(x.shape[0])
    gain = np.linalg.solve(innovation_cov.conj().T, (x @ r.conj().T)).conj().T
    estimate = stats.mean + gain @ (observation - x @ stats.mean)
    error_cov = hermitize(r - gain @ x @ r)
    if check_simplified:
        gram = x.conj().T @ x
        simplified = noise_variance * np.linalg.solve(
            (gram @ r + noise_variance * np.eye(r.shape[0])).conj().T, r.conj().T
        ).conj().T
        scale = max(np.linalg.norm(error_cov), 1e-300)
        if np.linalg.norm(error_cov - simplified) > 1e-8 * scale:
            raise AssertionError("LMMSE covariance disagrees with the simplified form")
    return EstimationResult(estimate=estimate, error_cov=error_cov, estimator_tag="lmmse")


def lmmse_error_cov_simplified(
    pilots: Phase2Pilots, stats: ChannelStats, noise_variance: float
) -> np.ndarray:
    """sigma_n^2 R (X^H X R + sigma_n^2 I)^(-1), the closed error covariance."""
    x = pilots.lifted
    r = stats.covariance
    gram = x.conj().T @ x
    rhs = gram @ r + noise_variance * np.eye(r.shape[0])
    return noise_variance * np.linalg.solve(rhs.conj().T, r.conj().T).conj().T


def error_gap(e_ml: np.ndarray, e_mmse: np.ndarray) -> tuple[np.ndarray, float]:
    """Difference of the two error covariances and its minimum eigenvalue.

    Positive definiteness certifies that exploiting the channel statistics
    strictly improves on the ML estimator.
    """
    delta = hermitize(e_ml - e_mmse)
    min_eig = float(np.linalg.eigvalsh(delta).min())
    if min_eig <= 0.0:
        raise AssertionError(
            f"estimator error gap is not positive definite (min eig {min_eig:.3e})"
        )
    return delta, min_eig


def error_gap_closed_form(
    pilots: Phase2Pilots, stats: ChannelStats, noise_variance: float
) -> np.ndarray:
    """sigma_n^4 (X^H X R X^H X + sigma_n^2 X^H X)^(-1)."""
    x = pilots.lifted
    gram = x.conj().T @ x
    core = gram @ stats.covariance @ gram + noise_variance * gram
    return noise_variance**2 * np.linalg.inv(core)


def nmse_analytic(error_cov: np.ndarray, channel_vector: np.ndarray) -> float:
    """trace(E) / ||h||^2, the predicted normalized MSE."""
    return float(np.real(np.trace(error_cov)) / np.linalg.norm(channel_vector) ** 2)


def nmse_empirical(estimate: np.ndarray, channel_vector: np.ndarray) -> float:
    return float(
        np.linalg.norm(estimate - channel_vector) ** 2 / np.linalg.norm(channel_vector) ** 2
    )
