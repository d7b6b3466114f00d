"""Frame orchestration: the Monte Carlo evaluation loop and its statistics.

One run draws a position estimate per the selected scheme, configures the
surfaces once, then walks the UEs and evaluates rates (optionally through
Phase-II channel estimation and the robust precoder) at requested
coherence intervals. Runs are seeded through independent substreams so
results are identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import chest, localization, precoder, ris_opt
from .channel import bs_ris_channel, cascaded_channel, link_fading, ris_ue_los, sample_nlos, marginal_stats
from .channel import PlacedArray
from .config import ScenarioConfig
from .geometry import Pose
from .linalg import sample_gaussian, vec


@dataclass
class RunRecord:
    """Everything one Monte Carlo run produced."""

    run_index: int
    scheme: str
    phase1_symbols: int | None
    phase2_symbols: int | None
    overhead_factor: float
    peb: np.ndarray                   # (I,), nan where not applicable
    tau_seconds: np.ndarray           # (n_tau,)
    rates: np.ndarray                 # (n_tau, I) bits/s/Hz
    effective_rates: np.ndarray       # (n_tau, I)
    nmse_numeric: np.ndarray | None   # (n_tau, I)
    nmse_analytic: np.ndarray | None
    sum_rate_check: float             # optimizer-reported sum rate at tau_steps[0]
    fim_fallback: bool = False
    error: str | None = None


def random_walk(
    start, step_cov: np.ndarray, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Cumulative-Gaussian trajectory, (n_steps + 1) x 3 including the start."""
    start = np.asarray(start, dtype=float)
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if n_steps == 0:
        return start[np.newaxis, :].copy()
    steps = sample_gaussian(np.zeros(3), step_cov, rng, size=n_steps)
    return np.vstack([start, start + np.cumsum(steps, axis=0)])


def outage_rate(samples, outage_probability: float) -> float:
    """Lower empirical quantile of the rate samples."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("no samples")
    if not 0.0 < outage_probability < 1.0:
        raise ValueError("outage probability must be in (0, 1)")
    return float(np.quantile(samples, outage_probability, method="lower"))


def empirical_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sorted sample values and the step-function CDF evaluated on them."""
    values = np.sort(np.asarray(samples, dtype=float))
    probs = np.arange(1, values.size + 1) / values.size
    return values, probs


def synthesize_channel(
    scenario: ScenarioConfig,
    profiles: Sequence,
    ue_index: int,
    position,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one realization of the composed channel at a UE position."""
    ue_cfg = scenario.ues[ue_index]
    ue = PlacedArray(
        pose=Pose(np.asarray(position, dtype=float), ue_cfg.array.pose.orientation),
        layout=ue_cfg.array.layout,
    )
    n_ue, n_bs = ue.n_elements, scenario.bs.n_elements
    h = sample_nlos((n_ue, n_bs), ue_cfg.direct_nlos_variance, rng)
    for ris, profile in zip(scenario.ris, profiles):
        fading = link_fading(ris, ue, ue_cfg.rician_factor, scenario.rf)
        los = ris_ue_los(ris, ue, fading, scenario.rf)
        nlos = sample_nlos((n_ue, ris.n_elements), fading.nlos_variance, rng)
        h += cascaded_channel(bs_ris_channel(scenario.bs, ris, scenario.rf), los + nlos, profile)
    return h


def _position_uncertainty(scenario, scheme, rng_pilots):
    """Per-UE posterior covariance implied by the scheme, plus bookkeeping."""
    n = scenario.n_users
    sigmas = []
    peb = np.full(n, np.nan)
    fallback = False
    pilots = None
    if scheme.uses_phase1:
        n_p1 = scheme.phase1_symbols or scenario.frame.phase1_symbols
        pilots = localization.phase1_pilots(scenario, n_p1, rng_pilots)
    for i in range(n):
        if scheme.tag in ("prior", "punctual_prior"):
            sigma = scenario.prior_position_cov
        elif scheme.uses_phase1:
            try:
                sigma = localization.peb_report(scenario, pilots, i).sigma_pos
            except localization.UnidentifiableError:
                sigma = scenario.prior_position_cov
                fallback = True
        elif scheme.tag == "oracle":
            sigma = np.zeros((3, 3))
        else:  # random: no location information is used at all
            sigma = None
        sigmas.append(sigma)
        if sigma is not None:
            peb[i] = np.sqrt(max(np.trace(sigma), 0.0))
    return sigmas, peb, fallback


def _make_record(scenario, scheme, run_index, tau_steps, estimate, t2) -> RunRecord:
    n_users = scenario.n_users
    n_tau = len(tau_steps)
    return RunRecord(
        run_index=run_index,
        scheme=scheme.tag,
        phase1_symbols=scheme.phase1_symbols if scheme.uses_phase1 else None,
        phase2_symbols=t2 if estimate else None,
        overhead_factor=scenario.frame.overhead_factor(t2),
        peb=np.full(n_users, np.nan),
        tau_seconds=np.asarray(tau_steps, dtype=float) * scenario.frame.channel_coherence_s,
        rates=np.full((n_tau, n_users), np.nan),
        effective_rates=np.full((n_tau, n_users), np.nan),
        nmse_numeric=np.full((n_tau, n_users), np.nan) if estimate else None,
        nmse_analytic=np.full((n_tau, n_users), np.nan) if estimate else None,
        sum_rate_check=np.nan,
    )


def _evaluate_estimated(scenario, channels, stats, t2, rng_noise):
    """LMMSE estimates, robust precoders, and per-UE statistical rates."""
    n_users = len(channels)
    noise_var = scenario.rf.noise_variance
    budgets = [scenario.power_per_ue] * n_users
    h_hats, error_covs, seconds = [], [], []
    nmse_num = np.empty(n_users)
    nmse_ana = np.empty(n_users)
    for i, h in enumerate(channels):
        pilots2 = chest.design_pilots(
            scenario.bs.n_elements, t2, scenario.total_power,
            scenario.ues[i].array.n_elements,
        )
        n_obs = pilots2.n_symbols * pilots2.n_ue_antennas
        noise = np.sqrt(noise_var / 2.0) * (
            rng_noise.standard_normal(n_obs) + 1j * rng_noise.standard_normal(n_obs)
        )
        est = chest.lmmse_estimate(pilots2, pilots2.received(h, noise), stats[i], noise_var)
        nmse_num[i] = chest.nmse_empirical(est.estimate, vec(h))
        nmse_ana[i] = chest.nmse_analytic(est.error_cov, vec(h))
        h_hats.append(est.channel_matrix(h.shape[0], h.shape[1]))
        error_covs.append(est.error_cov)
        seconds.append(stats[i].second_moment)
    result = precoder.wmmse_optimize(
        h_hats, error_covs, budgets, noise_var, second_moments=seconds
    )
    n_bs = scenario.bs.n_elements
    rates = np.array([
        precoder.rate_estimated_csi(
            h_hats[i],
            precoder.interference_covariance(
                list(result.precoder_set.precoders), i,
                precoder.block_grid(error_covs[i], n_bs, h_hats[i].shape[0]),
                precoder.block_grid(seconds[i], n_bs, h_hats[i].shape[0]),
                noise_var,
            ),
            result.precoder_set.precoders[i],
        )
        for i in range(n_users)
    ])
    return rates, nmse_num, nmse_ana, float(result.sum_rate_trace[-1])


def _single_run(
    scenario: ScenarioConfig,
    scheme: ris_opt.RisScheme,
    run_index: int,
    seed_seq: np.random.SeedSequence,
    tau_steps: tuple[int, ...],
    estimate: bool,
    phase2_grid: tuple[int, ...],
    localization_scenario: ScenarioConfig | None = None,
) -> list[RunRecord]:
    streams = seed_seq.spawn(6)
    rng_pilots, rng_est, rng_ens, rng_walk, rng_chan, rng_noise = (
        np.random.default_rng(s) for s in streams
    )
    n_users = scenario.n_users
    records = [
        _make_record(scenario, scheme, run_index, tau_steps, estimate, t2)
        for t2 in phase2_grid
    ]
    try:
        sigmas, peb, fallback = _position_uncertainty(
            localization_scenario or scenario, scheme, rng_pilots
        )
        for record in records:
            record.peb = peb.copy()
            record.fim_fallback = fallback

        # Phase I output: estimated positions and the surface configuration.
        estimates = []
        for i, ue in enumerate(scenario.ues):
            true_pos = ue.array.pose.position
            if scheme.tag == "random":
                estimates.append((true_pos, None))
            elif scheme.tag == "oracle":
                estimates.append((true_pos.copy(), np.zeros((3, 3))))
            else:
                p_hat = localization.sample_position_estimate(true_pos, sigmas[i], rng_est)
                estimates.append((p_hat, sigmas[i]))

        if scheme.tag == "random":
            profiles = ris_opt.random_profiles(scenario, rng_ens)
        else:
            opt_estimates = [
                (p, np.zeros((3, 3)) if scheme.punctual else s) for p, s in estimates
            ]
            ensemble = ris_opt.build_ensemble(
                scenario,
                opt_estimates,
                scenario.optimizer.position_samples,
                scenario.optimizer.nlos_samples,
                rng_ens,
            )
            profiles = ris_opt.optimize_profiles_restarts(
                ensemble, scenario, rng_ens, scenario.optimizer
            ).profiles

        trajectories = [
            random_walk(ue.array.pose.position, scenario.mobility_step_cov,
                        max(tau_steps), rng_walk)
            for ue in scenario.ues
        ]

        stats = None
        if estimate:
            stats = [
                marginal_stats(
                    scenario, profiles, i, estimates[i][0],
                    sigmas[i] if sigmas[i] is not None else np.zeros((3, 3)),
                    scenario.marginal_samples, rng_est,
                )
                for i in range(n_users)
            ]

        budgets = [scenario.power_per_ue] * n_users
        noise_var = scenario.rf.noise_variance
        for ti, step in enumerate(tau_steps):
            channels = [
                synthesize_channel(scenario, profiles, i, trajectories[i][step], rng_chan)
                for i in range(n_users)
            ]
            if not estimate:
                result = precoder.wmmse_optimize(channels, None, budgets, noise_var)
                rates = precoder.rate_perfect_csi(
                    channels, list(result.precoder_set.precoders), noise_var
                )
                for record in records:
                    record.rates[ti] = rates
                    record.effective_rates[ti] = record.overhead_factor * rates
                    if ti == 0:
                        record.sum_rate_check = float(result.sum_rate_trace[-1])
            else:
                for record, t2 in zip(records, phase2_grid):
                    rates, nmse_num, nmse_ana, sum_rate = _evaluate_estimated(
                        scenario, channels, stats, t2, rng_noise
                    )
                    record.rates[ti] = rates
                    record.effective_rates[ti] = record.overhead_factor * rates
                    record.nmse_numeric[ti] = nmse_num
                    record.nmse_analytic[ti] = nmse_ana
                    if ti == 0:
                        record.sum_rate_check = sum_rate
    except Exception as exc:  # a failed run is recorded, never dropped
        for record in records:
            record.error = f"{type(exc).__name__}: {exc}"
    return records


def _run_star(args):
    return _single_run(*args)


def run_algorithm1(
    scenario: ScenarioConfig,
    scheme: ris_opt.RisScheme,
    n_runs: int,
    seed: int,
    tau_steps: Sequence[int] = (0,),
    estimate: bool = False,
    phase2_symbols: int | Sequence[int] | None = None,
    workers: int = 1,
    localization_scenario: ScenarioConfig | None = None,
) -> list[RunRecord]:
    """Monte Carlo sweep of configure-then-evaluate runs.

    Every run owns an independent seed substream derived from the root
    seed, so records are byte-identical for any worker count. When
    phase2_symbols is a sequence (with estimate=True) the expensive surface
    configuration is shared across the whole pilot sweep and one record per
    (run, pilot count) comes back. localization_scenario, when given,
    supplies the surfaces used for the Phase-I Fisher information (e.g.
    full-size surfaces while optimizing a reduced-scale copy).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    tau_steps = tuple(int(t) for t in tau_steps)
    if any(t < 0 for t in tau_steps):
        raise ValueError("tau steps must be nonnegative")
    if phase2_symbols is None:
        grid = (scenario.frame.phase2_symbols,)
    elif np.isscalar(phase2_symbols):
        grid = (int(phase2_symbols),)
    else:
        grid = tuple(int(t) for t in phase2_symbols)
    children = np.random.SeedSequence(seed).spawn(n_runs)
    args = [
        (scenario, scheme, r, children[r], tau_steps, estimate, grid,
         localization_scenario)
        for r in range(n_runs)
    ]
    if workers <= 1:
        nested = [_run_star(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_star, args, chunksize=1))
    return [record for sub in nested for record in sub]
