"""Location-uncertainty-aware RIS phase optimization.

The average sum rate over an ensemble of position and NLOS realizations is
maximized through its weighted-MSE surrogate: per-realization receive
filters, weights and precoders alternate with a shared per-element phase
sweep of each surface. The rank-one BS-RIS legs reduce each cell update to
a handful of length-N_U dot products per realization; a compiled kernel
makes the sweep cheap even for thousands of cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .channel import RisProfile, bs_ris_link_gain
from .geometry import (
    Pose,
    local_direction,
    local_direction_batch,
    steering_vector,
    steering_vector_batch,
    unit_cell_pattern_batch,
)
from .linalg import crandn, hermitize, sample_gaussian

if TYPE_CHECKING:  # pragma: no cover
    from .config import ScenarioConfig

try:  # compiled sweep; the numpy path below is the reference fallback
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

SCHEME_TAGS = ("random", "prior", "phase1", "oracle", "punctual_phase1", "punctual_prior")


@dataclass(frozen=True)
class RisScheme:
    """Which location information feeds the RIS optimizer.

    phase1_symbols only applies to the phase1-based tags; punctual tags
    draw the position estimate from their covariance but optimize as if it
    were exact.
    """

    tag: str
    phase1_symbols: int | None = None

    def __post_init__(self):
        if self.tag not in SCHEME_TAGS:
            raise ValueError(f"unknown scheme tag {self.tag!r}; expected one of {SCHEME_TAGS}")

    @property
    def uses_phase1(self) -> bool:
        return self.tag in ("phase1", "punctual_phase1")

    @property
    def punctual(self) -> bool:
        return self.tag in ("oracle", "punctual_phase1", "punctual_prior")


@dataclass(frozen=True)
class UncertaintyEnsemble:
    """Factored position x NLOS sample grid with rank-one channel pieces.

    Realization omega = (position sample a, NLOS sample b); the channel of
    UE i is direct[i][b] + sum_k alpha_bs[k] * (M (b_k o a_ris_bs[k])) *
    a_bs[k]^T with M = los_gain * a_ue a_ris_ue^T + nlos_sigma * Z.
    """

    positions: np.ndarray                       # (n_pos, I, 3)
    alpha_bs: np.ndarray                        # (K,)
    a_bs: np.ndarray                            # (K, N_B)
    a_ris_bs: tuple[np.ndarray, ...]            # per RIS (P_k,)
    los_gain: tuple[np.ndarray, ...]            # per UE (n_pos, K)
    a_ue: tuple[np.ndarray, ...]                # per UE (n_pos, K, N_U)
    a_ris_ue: tuple[tuple[np.ndarray, ...], ...]  # [i][k] -> (n_pos, P_k)
    nlos_sigma: tuple[np.ndarray, ...]          # per UE (n_pos, K)
    nlos_base: tuple[tuple[np.ndarray, ...], ...]  # [i][k] -> (n_nlos, N_U, P_k)
    direct: tuple[np.ndarray, ...]              # per UE (n_nlos, N_U, N_B)

    @property
    def n_pos(self) -> int:
        return self.positions.shape[0]

    @property
    def n_nlos(self) -> int:
        return self.direct[0].shape[0]

    @property
    def n_samples(self) -> int:
        return self.n_pos * self.n_nlos

    @property
    def n_users(self) -> int:
        return self.positions.shape[1]

    @property
    def n_ris(self) -> int:
        return self.alpha_bs.size

    def channel_matrix(
        self, ue_index: int, profiles: Sequence[RisProfile], pos_index: int, nlos_index: int
    ) -> np.ndarray:
        """Materialize the channel of one realization (mainly for tests)."""
        h = np.array(self.direct[ue_index][nlos_index], dtype=complex)
        for k in range(self.n_ris):
            weighted = profiles[k].coefficients * self.a_ris_bs[k]
            m = (
                self.los_gain[ue_index][pos_index, k]
                * np.outer(self.a_ue[ue_index][pos_index, k], self.a_ris_ue[ue_index][k][pos_index])
                + self.nlos_sigma[ue_index][pos_index, k] * self.nlos_base[ue_index][k][nlos_index]
            )
            h += self.alpha_bs[k] * np.outer(m @ weighted, self.a_bs[k])
        return h


@dataclass(frozen=True)
class OptimizerSettings:
    position_samples: int = 64
    nlos_samples: int = 8
    max_outer: int = 50
    rel_tol: float = 1e-4
    restarts: int = 1

    def __post_init__(self):
        if min(self.position_samples, self.nlos_samples, self.max_outer, self.restarts) < 1:
            raise ValueError("optimizer settings must be positive")


@dataclass(frozen=True)
class RisOptResult:
    profiles: tuple[RisProfile, ...]
    objective_trace: np.ndarray
    mean_rate_trace: np.ndarray
    converged: bool

    @property
    def mean_sum_rate(self) -> float:
        return float(self.mean_rate_trace[-1])


def random_profiles(scenario: "ScenarioConfig", rng: np.random.Generator) -> tuple[RisProfile, ...]:
    """Independent uniform phases on every cell of every surface."""
    return tuple(
        RisProfile(np.exp(2j * np.pi * rng.random(ris.n_elements))) for ris in scenario.ris
    )


def build_ensemble(
    scenario: "ScenarioConfig",
    estimates: Sequence[tuple[np.ndarray, np.ndarray]],
    n_pos: int,
    n_nlos: int,
    rng: np.random.Generator,
) -> UncertaintyEnsemble:
    """Sample the position x NLOS grid the optimizer averages over.

    estimates holds one (mean, covariance) pair per UE. All-zero
    covariances collapse the position axis to the single estimated point;
    NLOS standard draws are scaled per position sample so the Rician
    variance tracks the sampled geometry.
    """
    if n_pos < 1 or n_nlos < 1:
        raise ValueError("sample counts must be positive")
    rf = scenario.rf
    n_users = len(scenario.ues)
    if len(estimates) != n_users:
        raise ValueError("one (mean, cov) estimate required per UE")
    if all(np.allclose(cov, 0.0) for _, cov in estimates):
        n_pos = 1

    positions = np.empty((n_pos, n_users, 3))
    for i, (mean, cov) in enumerate(estimates):
        if n_pos == 1:
            positions[:, i, :] = np.asarray(mean, dtype=float)
        else:
            positions[:, i, :] = sample_gaussian(mean, cov, rng, size=n_pos)

    n_ris = len(scenario.ris)
    alpha_bs = np.empty(n_ris, dtype=complex)
    a_bs = np.empty((n_ris, scenario.bs.n_elements), dtype=complex)
    a_ris_bs = []
    for k, ris in enumerate(scenario.ris):
        alpha_bs[k] = bs_ris_link_gain(scenario.bs, ris, rf)
        aod_at_bs, _ = local_direction(scenario.bs.pose, ris.pose.position)
        aoa_at_ris, _ = local_direction(ris.pose, scenario.bs.pose.position)
        a_bs[k] = steering_vector(scenario.bs.layout, aod_at_bs, rf.wavelength_m)
        a_ris_bs.append(steering_vector(ris.layout, aoa_at_ris, rf.wavelength_m))

    los_gain, a_ue_all, a_ris_ue_all, nlos_sigma, nlos_base, direct = [], [], [], [], [], []
    for i, ue_cfg in enumerate(scenario.ues):
        n_ue = ue_cfg.array.n_elements
        gains = np.empty((n_pos, n_ris), dtype=complex)
        sigmas = np.empty((n_pos, n_ris))
        a_ue_i = np.empty((n_pos, n_ris, n_ue), dtype=complex)
        a_ris_ue_i = []
        base_i = []
        kappa = ue_cfg.rician_factor
        ue_observer = Pose(np.zeros(3), ue_cfg.array.pose.orientation)
        for k, ris in enumerate(scenario.ris):
            el_dep, az_dep, dist = local_direction_batch(ris.pose, positions[:, i, :])
            pattern = unit_cell_pattern_batch(el_dep, rf.pattern_exponent)
            path_power = (
                pattern * rf.rx_gain * rf.cell_boresight_gain * rf.wavelength_m**2
                / (16.0 * np.pi**2 * dist**rf.pathloss_exponent)
            )
            gains[:, k] = np.sqrt(kappa * path_power / (kappa + 1.0)) * np.exp(
                -2j * np.pi * dist / rf.wavelength_m
            )
            sigmas[:, k] = np.sqrt(path_power / (kappa + 1.0))
            rel = ris.pose.position[np.newaxis, :] - positions[:, i, :]
            el_ue, az_ue, _ = local_direction_batch(ue_observer, rel)
            a_ue_i[:, k, :] = steering_vector_batch(
                ue_cfg.array.layout, el_ue, az_ue, rf.wavelength_m
            )
            a_ris_ue_i.append(
                steering_vector_batch(ris.layout, el_dep, az_dep, rf.wavelength_m)
            )
            base_i.append(crandn(rng, n_nlos, n_ue, ris.n_elements))
        los_gain.append(gains)
        nlos_sigma.append(sigmas)
        a_ue_all.append(a_ue_i)
        a_ris_ue_all.append(tuple(a_ris_ue_i))
        nlos_base.append(tuple(base_i))
        scale = np.sqrt(ue_cfg.direct_nlos_variance)
        direct.append(scale * crandn(rng, n_nlos, n_ue, scenario.bs.n_elements))

    return UncertaintyEnsemble(
        positions=positions,
        alpha_bs=alpha_bs,
        a_bs=a_bs,
        a_ris_bs=tuple(a_ris_bs),
        los_gain=tuple(los_gain),
        a_ue=tuple(a_ue_all),
        a_ris_ue=tuple(a_ris_ue_all),
        nlos_sigma=tuple(nlos_sigma),
        nlos_base=tuple(nlos_base),
        direct=tuple(direct),
    )


class _EnsembleState:
    """Batched per-realization state of the surrogate minimization."""

    def __init__(self, ensemble, scenario, profiles, noise_variance, budgets):
        self.ens = ensemble
        self.noise_variance = noise_variance
        self.budgets = budgets
        self.n_omega = ensemble.n_samples
        self.pos_idx = np.repeat(np.arange(ensemble.n_pos), ensemble.n_nlos)
        self.nlos_idx = np.tile(np.arange(ensemble.n_nlos), ensemble.n_pos)
        self.b = [np.array(p.coefficients, dtype=complex) for p in profiles]
        self.u = []            # per UE (n_omega, K, N_U)
        self.channels = []     # per UE (n_omega, N_U, N_B)
        self.filters = [None] * ensemble.n_users
        self.weights = [None] * ensemble.n_users
        self.precoders = []
        n_bs = ensemble.a_bs.shape[1]
        for i in range(ensemble.n_users):
            n_ue = ensemble.a_ue[i].shape[2]
            v0 = np.zeros((self.n_omega, n_bs, n_ue), dtype=complex)
            self.precoders.append(v0)
        self.refresh_channels()
        # Matched-filter start at full power.
        for i in range(ensemble.n_users):
            h = self.channels[i]
            v0 = h.conj().swapaxes(1, 2)
            power = np.einsum("wbs,wbs->w", v0, v0.conj()).real
            scale = np.sqrt(budgets[i] / np.maximum(power, 1e-300))
            self.precoders[i] = v0 * scale[:, np.newaxis, np.newaxis]

    def composite_vectors(self, i):
        """u_{k,i} for the current profiles, shape (n_omega, K, N_U)."""
        ens = self.ens
        n_ue = ens.a_ue[i].shape[2]
        u = np.empty((self.n_omega, ens.n_ris, n_ue), dtype=complex)
        for k in range(ens.n_ris):
            weighted = self.b[k] * ens.a_ris_bs[k]
            los_scalar = ens.los_gain[i][:, k] * (ens.a_ris_ue[i][k] @ weighted)  # (n_pos,)
            los_part = los_scalar[:, np.newaxis] * ens.a_ue[i][:, k, :]          # (n_pos, N_U)
            nlos_part = ens.nlos_base[i][k] @ weighted                           # (n_nlos, N_U)
            grid = (
                los_part[:, np.newaxis, :]
                + ens.nlos_sigma[i][:, k, np.newaxis, np.newaxis] * nlos_part[np.newaxis, :, :]
            )
            u[:, k, :] = grid.reshape(self.n_omega, n_ue)
        return u

    def refresh_channels(self):
        ens = self.ens
        self.u = [self.composite_vectors(i) for i in range(ens.n_users)]
        self.channels = []
        for i in range(ens.n_users):
            h = ens.direct[i][self.nlos_idx].astype(complex, copy=True)
            for k in range(ens.n_ris):
                h += ens.alpha_bs[k] * (
                    self.u[i][:, k, :, np.newaxis] * ens.a_bs[k][np.newaxis, np.newaxis, :]
                )
            self.channels.append(h)

    # Batched WMMSE blocks -------------------------------------------------

    def update_filters_weights(self):
        phi = self.interference_gram()
        for i, h in enumerate(self.channels):
            n_ue = h.shape[1]
            j_i = np.einsum("wub,wbc,wvc->wuv", h, phi, h.conj(), optimize=True)
            j_i += self.noise_variance * np.eye(n_ue)[np.newaxis]
            hv = h @ self.precoders[i]
            g = np.linalg.solve(hermitize(j_i), hv)
            e = np.eye(hv.shape[2])[np.newaxis] - hv.conj().swapaxes(1, 2) @ g
            self.filters[i] = g
            self.weights[i] = np.linalg.inv(hermitize(e))

    def update_precoders(self):
        n_bs = self.ens.a_bs.shape[1]
        k_mat = np.zeros((self.n_omega, n_bs, n_bs), dtype=complex)
        for j, h in enumerate(self.channels):
            t_j = self.filters[j] @ self.weights[j] @ self.filters[j].conj().swapaxes(1, 2)
            k_mat += np.einsum("wub,wuv,wvc->wbc", h.conj(), t_j, h, optimize=True)
        eigval, eigvec = np.linalg.eigh(hermitize(k_mat))
        eigval = np.clip(eigval, 0.0, None)
        for i, h in enumerate(self.channels):
            target = h.conj().swapaxes(1, 2) @ self.filters[i] @ self.weights[i]
            proj = eigvec.conj().swapaxes(1, 2) @ target
            coeff = np.sum(np.abs(proj) ** 2, axis=2)
            mu = _waterfill_multiplier(eigval, coeff, self.budgets[i])
            v = eigvec @ (proj / (eigval + mu[:, np.newaxis])[:, :, np.newaxis])
            self.precoders[i] = v

    def interference_gram(self):
        phi = np.zeros((self.n_omega,) + (self.ens.a_bs.shape[1],) * 2, dtype=complex)
        for v in self.precoders:
            phi += v @ v.conj().swapaxes(1, 2)
        return phi

    def surrogate_objective(self) -> float:
        """Average over realizations of sum_i Tr(W E) - log det W, in nats."""
        total = np.zeros(self.n_omega)
        for i, h in enumerate(self.channels):
            g, w = self.filters[i], self.weights[i]
            hv = h @ self.precoders[i]
            resid = np.eye(hv.shape[2])[np.newaxis] - g.conj().swapaxes(1, 2) @ hv
            e = resid @ resid.conj().swapaxes(1, 2)
            for j in range(self.ens.n_users):
                if j == i:
                    continue
                ghv = g.conj().swapaxes(1, 2) @ (h @ self.precoders[j])
                e += ghv @ ghv.conj().swapaxes(1, 2)
            gram_g = g.conj().swapaxes(1, 2) @ g
            e += self.noise_variance * gram_g
            total += np.einsum("wuv,wvu->w", w, e).real
            sign, logdet = np.linalg.slogdet(w)
            total -= logdet
        return float(total.mean())

    def mean_sum_rate(self) -> float:
        """Ensemble-average perfect-CSI sum rate at the current precoders."""
        total = np.zeros(self.n_omega)
        phi = self.interference_gram()
        for i, h in enumerate(self.channels):
            n_ue = h.shape[1]
            hv = h @ self.precoders[i]
            own = hv @ hv.conj().swapaxes(1, 2)
            cov = np.einsum("wub,wbc,wvc->wuv", h, phi, h.conj(), optimize=True)
            interf = hermitize(cov - own) + self.noise_variance * np.eye(n_ue)[np.newaxis]
            core = hv.conj().swapaxes(1, 2) @ np.linalg.solve(interf, hv)
            sign, logdet = np.linalg.slogdet(
                np.eye(hv.shape[2])[np.newaxis] + hermitize(core)
            )
            total += logdet / np.log(2.0)
        return float(total.mean())

    # Shared phase sweep ---------------------------------------------------

    def _sweep_constants(self, k: int):
        """Per-RIS arrays that do not change across outer iterations."""
        ens = self.ens
        n_ue_max = max(a.shape[2] for a in ens.a_ue)
        p_cells = ens.a_ris_bs[k].size
        a_theta = np.zeros((ens.n_pos, ens.n_users, p_cells), dtype=complex)
        z = np.zeros((ens.n_nlos, ens.n_users, n_ue_max, p_cells), dtype=complex)
        x_vec = np.zeros((self.n_omega, ens.n_users, n_ue_max), dtype=complex)
        sigma = np.zeros((self.n_omega, ens.n_users))
        for i in range(ens.n_users):
            n_ue = ens.a_ue[i].shape[2]
            a_theta[:, i, :] = ens.a_ris_ue[i][k]
            z[:, i, :n_ue, :] = ens.nlos_base[i][k]
            x_pos = ens.los_gain[i][:, k, np.newaxis] * ens.a_ue[i][:, k, :]
            x_vec[:, i, :n_ue] = x_pos[self.pos_idx]
            sigma[:, i] = ens.nlos_sigma[i][self.pos_idx, k]
        return a_theta, z, x_vec, sigma

    def sweep_ris(self, k: int):
        """One exact coordinate pass over the cells of surface k.

        Each cell phase is set to cancel its linear surrogate coefficient
        given all other variables, in sequence.
        """
        ens = self.ens
        if not hasattr(self, "_sweep_cache"):
            self._sweep_cache = {}
        if k not in self._sweep_cache:
            self._sweep_cache[k] = self._sweep_constants(k)
        a_theta, z, x_vec, sigma = self._sweep_cache[k]

        phi = self.interference_gram()
        a_k = ens.a_bs[k]
        alpha = complex(ens.alpha_bs[k])
        n_ue_max = x_vec.shape[2]
        f_cross = np.empty((ens.n_ris, self.n_omega), dtype=complex)
        for k2 in range(ens.n_ris):
            f_cross[k2] = np.einsum("b,wbc,c->w", a_k, phi, ens.a_bs[k2].conj(), optimize=True)
        f_kk = np.ascontiguousarray(f_cross[k].real)

        t_mat = np.zeros((self.n_omega, ens.n_users, n_ue_max, n_ue_max), dtype=complex)
        w_other = np.zeros((self.n_omega, ens.n_users, n_ue_max), dtype=complex)
        tu = np.zeros((self.n_omega, ens.n_users, n_ue_max), dtype=complex)
        row_phi = np.einsum("b,wbc->wc", a_k, phi)
        for i in range(ens.n_users):
            n_ue = ens.a_ue[i].shape[2]
            t_i = self.filters[i] @ self.weights[i] @ self.filters[i].conj().swapaxes(1, 2)
            d_i = self.precoders[i] @ self.weights[i] @ self.filters[i].conj().swapaxes(1, 2)
            base = np.einsum("wc,wuc->wu", row_phi, ens.direct[i][self.nlos_idx].conj())
            for k2 in range(ens.n_ris):
                if k2 == k:
                    continue
                base += (
                    ens.alpha_bs[k2].conjugate() * f_cross[k2][:, np.newaxis]
                ) * self.u[i][:, k2, :].conj()
            w_other[:, i, :n_ue] = np.einsum("wu,wuv->wv", base, t_i)
            w_other[:, i, :n_ue] -= np.einsum("b,wbv->wv", a_k, d_i)
            t_mat[:, i, :n_ue, :n_ue] = t_i
            tu[:, i, :n_ue] = np.einsum("wuv,wv->wu", t_i, self.u[i][:, k, :])

        args = (
            self.b[k], ens.a_ris_bs[k], alpha, w_other, tu, f_kk, t_mat,
            x_vec, a_theta, self.pos_idx, sigma, z, self.nlos_idx,
        )
        if _HAVE_NUMBA:
            _sweep_kernel_fast(*args)
        else:
            _sweep_kernel_numpy(*args)


def optimize_profiles(
    ensemble: UncertaintyEnsemble,
    scenario: "ScenarioConfig",
    init_profiles: Sequence[RisProfile],
    settings: OptimizerSettings | None = None,
) -> RisOptResult:
    """Block-coordinate descent on the ensemble-averaged WMMSE surrogate.

    Each outer iteration updates receive filters, weights and precoders for
    every realization, then sweeps the cells of every surface once. The
    surrogate is non-increasing across iterations; if the budget runs out
    before the relative tolerance is met the best-so-far profiles are
    returned with converged=False.
    """
    settings = settings or scenario.optimizer
    budgets = [scenario.power_per_ue] * ensemble.n_users
    state = _EnsembleState(
        ensemble, scenario, init_profiles, scenario.rf.noise_variance, budgets
    )
    objective_trace = []
    rate_trace = []
    converged = False
    for _ in range(settings.max_outer):
        state.update_filters_weights()
        state.update_precoders()
        for k in range(ensemble.n_ris):
            state.sweep_ris(k)
            state.refresh_channels()
        objective_trace.append(state.surrogate_objective())
        rate_trace.append(state.mean_sum_rate())
        if len(objective_trace) > 1:
            prev, curr = objective_trace[-2], objective_trace[-1]
            if abs(prev - curr) <= settings.rel_tol * max(abs(prev), 1e-12):
                converged = True
                break
    profiles = tuple(RisProfile(b / np.abs(b)) for b in state.b)
    return RisOptResult(
        profiles=profiles,
        objective_trace=np.asarray(objective_trace),
        mean_rate_trace=np.asarray(rate_trace),
        converged=converged,
    )


def optimize_profiles_restarts(
    ensemble: UncertaintyEnsemble,
    scenario: "ScenarioConfig",
    rng: np.random.Generator,
    settings: OptimizerSettings | None = None,
) -> RisOptResult:
    """Random restarts of :func:`optimize_profiles`, best surrogate kept."""
    settings = settings or scenario.optimizer
    best = None
    for _ in range(settings.restarts):
        init = random_profiles(scenario, rng)
        result = optimize_profiles(ensemble, scenario, init, settings)
        if best is None or result.objective_trace[-1] < best.objective_trace[-1]:
            best = result
    return best


def _waterfill_multiplier(eigval, coeff, budget, iterations=200):
    """Batched smallest mu >= 0 with sum coeff / (eig + mu)^2 <= budget."""

    def power(mu):
        with np.errstate(divide="ignore"):
            return np.sum(coeff / (eigval + mu[:, np.newaxis]) ** 2, axis=1)

    n = eigval.shape[0]
    mu = np.zeros(n)
    floor = 1e-14 * np.maximum(eigval.max(axis=1), 1.0)
    feasible_at_zero = (eigval.min(axis=1) > floor) & (power(mu) <= budget * (1 + 1e-12))
    needs = ~feasible_at_zero
    if not needs.any():
        return mu
    hi = np.maximum(np.sqrt(coeff.sum(axis=1) / budget) - eigval.min(axis=1), 1e-30)
    grow = power(hi) > budget
    while grow.any():
        hi[grow] *= 2.0
        grow = power(hi) > budget
    lo = np.zeros(n)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        over = power(mid) > budget
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    return np.where(needs, hi, 0.0)


def _sweep_kernel_numpy(b, a_rb, alpha, w_other, tu, f_kk, t_mat, x_vec,
                        a_theta, pos_idx, sigma, z, nlos_idx):
    """Reference per-cell pass; same update order as the compiled kernel."""
    abs_alpha_sq = abs(alpha) ** 2
    for p in range(b.size):
        m = a_theta[pos_idx, :, p][:, :, np.newaxis] * x_vec
        m += sigma[:, :, np.newaxis] * z[nlos_idx, :, :, p]
        tm = np.einsum("wiuv,wiv->wiu", t_mat, m)
        s_lin = np.einsum("wiu,wiu->", w_other, m)
        s_tu = np.einsum("w,wiu,wiu->", f_kk, tu.conj(), m)
        s_quad = np.einsum("w,wiu,wiu->", f_kk, m.conj(), tm)
        gamma = alpha * a_rb[p] * (s_lin + alpha.conjugate() * s_tu)
        gamma -= b[p].conjugate() * abs_alpha_sq * s_quad
        mag = abs(gamma)
        if mag < 1e-300:
            continue
        b_new = -gamma.conjugate() / mag
        tu += ((b_new - b[p]) * a_rb[p]) * tm
        b[p] = b_new


if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _sweep_kernel_fast(b, a_rb, alpha, w_other, tu, f_kk, t_mat, x_vec,
                           a_theta, pos_idx, sigma, z, nlos_idx):  # pragma: no cover
        n_omega, n_users, n_ue = w_other.shape
        abs_alpha_sq = alpha.real * alpha.real + alpha.imag * alpha.imag
        alpha_c = np.conj(alpha)
        m_buf = np.empty((n_omega, n_users, n_ue), dtype=np.complex128)
        tm_buf = np.empty((n_omega, n_users, n_ue), dtype=np.complex128)
        for p in range(b.size):
            gamma = 0.0j
            for w in range(n_omega):
                a_idx = pos_idx[w]
                z_idx = nlos_idx[w]
                f_w = f_kk[w]
                for i in range(n_users):
                    theta = a_theta[a_idx, i, p]
                    sig = sigma[w, i]
                    dot_lin = 0.0j
                    dot_tu = 0.0j
                    for u in range(n_ue):
                        m_u = theta * x_vec[w, i, u] + sig * z[z_idx, i, u, p]
                        m_buf[w, i, u] = m_u
                        dot_lin += w_other[w, i, u] * m_u
                        dot_tu += np.conj(tu[w, i, u]) * m_u
                    quad = 0.0j
                    for u in range(n_ue):
                        acc = 0.0j
                        for v in range(n_ue):
                            acc += t_mat[w, i, u, v] * m_buf[w, i, v]
                        tm_buf[w, i, u] = acc
                        quad += np.conj(m_buf[w, i, u]) * acc
                    gamma += alpha * a_rb[p] * (dot_lin + alpha_c * f_w * dot_tu)
                    gamma -= np.conj(b[p]) * abs_alpha_sq * f_w * quad
            mag = abs(gamma)
            if mag < 1e-300:
                continue
            b_new = -np.conj(gamma) / mag
            delta = (b_new - b[p]) * a_rb[p]
            b[p] = b_new
            for w in range(n_omega):
                for i in range(n_users):
                    for u in range(n_ue):
                        tu[w, i, u] += delta * tm_buf[w, i, u]
