"""Achievable rates and estimation-error-robust WMMSE precoding.

Rates are log-det expressions in bits/s/Hz. The robust design charges the
receive covariance with two statistical terms assembled from N_U x N_U
blocks of the estimation error covariance and of the channel second
moment, indexed by BS antenna pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import hermitize


@dataclass(frozen=True)
class PrecoderSet:
    """Precoders, receive filters and weights of one WMMSE solution."""

    precoders: tuple[np.ndarray, ...]
    receive_filters: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    mse_matrices: tuple[np.ndarray, ...]
    power_budgets: tuple[float, ...]
    multipliers: tuple[float, ...]


@dataclass(frozen=True)
class WmmseResult:
    precoder_set: PrecoderSet
    objective_trace: np.ndarray
    sum_rate_trace: np.ndarray
    converged: bool


def block_grid(matrix: np.ndarray, n_bs: int, n_ue: int) -> np.ndarray:
    """Reshape an (N_B N_U)^2 matrix into its (m, u, n, v) block view.

    Entry [m, u, n, v] is element (u, v) of block (m, n); vec ordering
    stacks the N_U-sized per-antenna columns.
    """
    return np.asarray(matrix).reshape(n_bs, n_ue, n_bs, n_ue)


def error_weighted_sum(blocks: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """sum_{m,n} coeffs[m, n] * block(m, n), an N_U x N_U matrix."""
    return np.einsum("mn,munv->uv", coeffs, blocks)


def quadratic_error_sum(blocks: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """E{DeltaH^H Q DeltaH} from error blocks, an N_B x N_B matrix.

    Entry (a, b) equals trace(Q E^(b, a)).
    """
    return np.einsum("uv,bvau->ab", inner, blocks.conj())


def rate_perfect_csi(
    channels: list[np.ndarray], precoders: list[np.ndarray], noise_variance: float
) -> np.ndarray:
    """Per-UE log-det rates with exact CSI, interference via each UE's channel."""
    n_users = len(channels)
    rates = np.zeros(n_users)
    for i, h in enumerate(channels):
        n_rx = h.shape[0]
        interference = noise_variance * np.eye(n_rx, dtype=complex)
        for j in range(n_users):
            if j == i:
                continue
            hv = h @ precoders[j]
            interference += hv @ hv.conj().T
        hv = h @ precoders[i]
        core = hv.conj().T @ np.linalg.solve(hermitize(interference), hv)
        rates[i] = _logdet_rate(core)
    return rates


def interference_covariance(
    precoders: list[np.ndarray],
    ue_index: int,
    error_blocks: np.ndarray,
    second_moment_blocks: np.ndarray,
    noise_variance: float,
    symbol_energy: float = 1.0,
) -> np.ndarray:
    """Receive covariance J_tilde under LMMSE estimates.

    sigma_n^2 I plus the own-stream error term through the estimation error
    blocks plus the other-stream term through the channel second-moment
    blocks.
    """
    n_rx = error_blocks.shape[1]
    own = precoders[ue_index] @ precoders[ue_index].conj().T
    others = sum(
        (v @ v.conj().T for j, v in enumerate(precoders) if j != ue_index),
        start=np.zeros_like(own),
    )
    j_tilde = noise_variance * np.eye(n_rx, dtype=complex)
    j_tilde += symbol_energy * error_weighted_sum(error_blocks, own)
    j_tilde += symbol_energy * error_weighted_sum(second_moment_blocks, others)
    return hermitize(j_tilde)


def rate_estimated_csi(
    channel_estimate: np.ndarray, j_tilde: np.ndarray, precoder: np.ndarray
) -> float:
    """log2 det(I + V^H H_hat^H Jt^(-1) H_hat V)."""
    hv = channel_estimate @ precoder
    core = hv.conj().T @ np.linalg.solve(hermitize(j_tilde), hv)
    return _logdet_rate(core)


def _logdet_rate(core: np.ndarray) -> float:
    n = core.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(n) + hermitize(core))
    return float(logdet / np.log(2.0))


def _solve_power_constrained(k_matrix, target, budget):
    """V = (K + mu I)^(-1) target with the smallest mu >= 0 meeting the budget."""
    eigval, eigvec = np.linalg.eigh(hermitize(k_matrix))
    eigval = np.clip(eigval, 0.0, None)
    proj = eigvec.conj().T @ target
    coeff = np.sum(np.abs(proj) ** 2, axis=1)

    def power(mu):
        return float(np.sum(coeff / (eigval + mu) ** 2))

    floor = 1e-14 * max(eigval.max(), 1.0)
    if eigval.min() > floor and power(0.0) <= budget * (1.0 + 1e-12):
        mu = 0.0
    else:
        hi = max(np.sqrt(coeff.sum() / budget) - eigval.min(), 1e-30)
        while power(hi) > budget:
            hi *= 2.0
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if power(mid) > budget:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(hi, 1e-30):
                break
        mu = hi
    v = eigvec @ (proj / (eigval + mu)[:, np.newaxis])
    return v, mu


def wmmse_optimize(
    channel_estimates: list[np.ndarray],
    error_covs: list[np.ndarray] | None,
    power_budgets: list[float],
    noise_variance: float,
    max_iterations: int = 100,
    rel_tol: float = 1e-5,
    second_moments: list[np.ndarray] | None = None,
    symbol_energy: float = 1.0,
) -> WmmseResult:
    """Block-coordinate WMMSE over receive filters, weights and precoders.

    error_covs of None (or per-UE None entries) recovers the perfect-CSI
    design. The recorded sum-rate trace uses the statistical receive
    covariance when error statistics are present, the exact one otherwise.
    """
    n_users = len(channel_estimates)
    n_bs = channel_estimates[0].shape[1]
    if error_covs is None:
        error_covs = [None] * n_users
    e_blocks = [
        None if e is None else block_grid(e, n_bs, h.shape[0])
        for e, h in zip(error_covs, channel_estimates)
    ]
    s_blocks = None
    if second_moments is not None:
        s_blocks = [
            None if s is None else block_grid(s, n_bs, h.shape[0])
            for s, h in zip(second_moments, channel_estimates)
        ]

    # Matched-filter initialization scaled to the power budget.
    precoders = []
    for h, budget in zip(channel_estimates, power_budgets):
        v0 = h.conj().T
        v0 = v0 * np.sqrt(budget / max(np.real(np.trace(v0 @ v0.conj().T)), 1e-300))
        precoders.append(v0)

    filters = [np.zeros((h.shape[0], h.shape[0]), dtype=complex) for h in channel_estimates]
    weights = [np.eye(v.shape[1], dtype=complex) for v in precoders]
    mses = [np.eye(v.shape[1], dtype=complex) for v in precoders]
    multipliers = [0.0] * n_users
    objective_trace = []
    rate_trace = []
    converged = False

    def own_error_cov(i, gram_sum):
        if e_blocks[i] is None:
            return 0.0
        return symbol_energy * error_weighted_sum(e_blocks[i], gram_sum)

    for iteration in range(max_iterations):
        grams = [v @ v.conj().T for v in precoders]
        gram_sum = sum(grams)

        # Receive filters and weights.
        for i, h in enumerate(channel_estimates):
            n_rx = h.shape[0]
            j_i = noise_variance * np.eye(n_rx, dtype=complex)
            for j in range(n_users):
                hv = h @ precoders[j]
                j_i += hv @ hv.conj().T
            c_i = own_error_cov(i, gram_sum)
            j_i = hermitize(j_i + c_i)
            hv = h @ precoders[i]
            filters[i] = np.linalg.solve(j_i, hv)
            mse = np.eye(hv.shape[1], dtype=complex) - hv.conj().T @ filters[i]
            mses[i] = hermitize(mse)
            weights[i] = hermitize(np.linalg.inv(mses[i]))

        # Precoders, coupled through the shared quadratic kernel.
        k_matrix = np.zeros((n_bs, n_bs), dtype=complex)
        for j, h in enumerate(channel_estimates):
            t_j = filters[j] @ weights[j] @ filters[j].conj().T
            k_matrix += h.conj().T @ t_j @ h
            if e_blocks[j] is not None:
                k_matrix += symbol_energy * quadratic_error_sum(e_blocks[j], t_j)
        k_matrix = hermitize(k_matrix)
        for i, h in enumerate(channel_estimates):
            target = h.conj().T @ filters[i] @ weights[i]
            precoders[i], multipliers[i] = _solve_power_constrained(
                k_matrix, target, power_budgets[i]
            )

        objective_trace.append(
            _surrogate_objective(
                channel_estimates, precoders, filters, weights, e_blocks,
                noise_variance, symbol_energy,
            )
        )
        rate_trace.append(
            _sum_rate(channel_estimates, precoders, e_blocks, s_blocks,
                      noise_variance, symbol_energy)
        )
        if iteration > 0:
            prev, curr = objective_trace[-2], objective_trace[-1]
            if abs(prev - curr) <= rel_tol * max(abs(prev), 1e-12):
                converged = True
                break

    # Final consistency pass so the reported filters/weights match the
    # returned precoders.
    grams = [v @ v.conj().T for v in precoders]
    gram_sum = sum(grams)
    for i, h in enumerate(channel_estimates):
        n_rx = h.shape[0]
        j_i = noise_variance * np.eye(n_rx, dtype=complex)
        for j in range(n_users):
            hv = h @ precoders[j]
            j_i += hv @ hv.conj().T
        j_i = hermitize(j_i + own_error_cov(i, gram_sum))
        hv = h @ precoders[i]
        filters[i] = np.linalg.solve(j_i, hv)
        mses[i] = hermitize(np.eye(hv.shape[1], dtype=complex) - hv.conj().T @ filters[i])

    result = PrecoderSet(
        precoders=tuple(precoders),
        receive_filters=tuple(filters),
        weights=tuple(weights),
        mse_matrices=tuple(mses),
        power_budgets=tuple(power_budgets),
        multipliers=tuple(multipliers),
    )
    return WmmseResult(
        precoder_set=result,
        objective_trace=np.asarray(objective_trace),
        sum_rate_trace=np.asarray(rate_trace),
        converged=converged,
    )


def _surrogate_objective(
    channels, precoders, filters, weights, e_blocks, noise_variance, symbol_energy
):
    """sum_i Tr(W_i E_i(V, G_i)) - log det W_i, in nats."""
    n_users = len(channels)
    gram_sum = sum(v @ v.conj().T for v in precoders)
    total = 0.0
    for i, h in enumerate(channels):
        g, w = filters[i], weights[i]
        hv = h @ precoders[i]
        resid = np.eye(hv.shape[1], dtype=complex) - g.conj().T @ hv
        e = resid @ resid.conj().T
        for j in range(n_users):
            if j == i:
                continue
            ghv = g.conj().T @ (h @ precoders[j])
            e += ghv @ ghv.conj().T
        c_i = np.zeros((h.shape[0], h.shape[0]), dtype=complex)
        if e_blocks[i] is not None:
            c_i = symbol_energy * error_weighted_sum(e_blocks[i], gram_sum)
        e += g.conj().T @ (c_i + noise_variance * np.eye(h.shape[0])) @ g
        sign, logdet = np.linalg.slogdet(w)
        total += float(np.real(np.trace(w @ e))) - float(logdet)
    return total


def _sum_rate(channels, precoders, e_blocks, s_blocks, noise_variance, symbol_energy):
    if s_blocks is None or all(e is None for e in e_blocks):
        return float(np.sum(rate_perfect_csi(channels, precoders, noise_variance)))
    total = 0.0
    for i, h in enumerate(channels):
        eb = e_blocks[i] if e_blocks[i] is not None else np.zeros_like(s_blocks[i])
        j_t = interference_covariance(
            precoders, i, eb, s_blocks[i], noise_variance, symbol_energy
        )
        total += rate_estimated_csi(h, j_t, precoders[i])
    return float(total)
