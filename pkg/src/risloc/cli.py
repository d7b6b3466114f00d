"""Batch experiment runner: scenario file in, one CSV (plus figure) out.

Each experiment reproduces one headline study: the Phase-I position error
bound sweep, the surface-configuration scheme comparison, the rate CDF,
rate under mobility, Phase-II estimation error, and the effective-rate
pilot trade-off. CSV floats are serialized with 17 significant digits so a
rerun with the same seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, localization
from .config import ConfigError, ScenarioConfig, effective_config_text, parse_scenario
from .ris_opt import RisScheme

EXPERIMENTS = (
    "peb-sweep",
    "ris-schemes",
    "rate-cdf",
    "mobility",
    "chest-nmse",
    "effective-rate",
)

PEB_KAPPAS = (1.0, 5.0, 50.0)
PEB_PILOTS = tuple(range(10, 121, 10))
SCHEME_LADDER = (
    ("random", None),
    ("prior", None),
    ("phase1", 10),
    ("phase1", 30),
    ("phase1", 50),
    ("oracle", None),
)
MOBILITY_TAUS = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
CHEST_PILOTS = tuple(range(8, 33))
EFFECTIVE_PILOTS = (2, 4, 6, 8, 9, 10, 11, 12, 13, 14, 15, 16, 20, 24, 32, 48, 64, 80, 96)
STATIONARY_DRAWS = 4


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _mean_se(values: np.ndarray) -> tuple[float, float, int]:
    values = values[np.isfinite(values)]
    n = values.size
    if n == 0:
        return float("nan"), float("nan"), 0
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se, n


def experiment_peb_sweep(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 2(a): PEB versus Phase-I pilot count for several Rician factors.

    Pilot sequences are nested across counts within a run, so each run's
    PEB curve is monotone by construction.
    """
    header = ["seed", "scheme", "kappa", "ue", "phase1_symbols", "peb_m", "std_err", "n_runs"]
    rows = []
    max_pilots = max(PEB_PILOTS)
    root = np.random.SeedSequence(seed)
    for kappa in PEB_KAPPAS:
        scen_k = scenario.with_rician_factor(kappa)
        peb = np.full((runs, len(PEB_PILOTS), scenario.n_users), np.nan)
        for r, child in enumerate(root.spawn(runs)):
            full = localization.phase1_pilots(scen_k, max_pilots, np.random.default_rng(child))
            for pi, n_pilots in enumerate(PEB_PILOTS):
                pilots = localization.Phase1Pilots(
                    symbol=full.symbol,
                    ris_sequences=tuple(seq[:n_pilots] for seq in full.ris_sequences),
                )
                for i in range(scenario.n_users):
                    peb[r, pi, i] = localization.peb_report(scen_k, pilots, i).peb
        for i in range(scenario.n_users):
            for pi, n_pilots in enumerate(PEB_PILOTS):
                mean, se, n = _mean_se(peb[:, pi, i])
                rows.append((seed, "phase1", kappa, i, n_pilots, mean, se, n))
    return header, rows


def _scheme_records(scenario, seed, runs, workers, schemes, tau_steps):
    per_scheme = {}
    for tag, pilots in schemes:
        scheme = RisScheme(tag=tag, phase1_symbols=pilots)
        per_scheme[(tag, pilots)] = harness.run_algorithm1(
            scenario, scheme, runs, seed, tau_steps=tau_steps, workers=workers
        )
    return per_scheme


def experiment_ris_schemes(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 2(b): stationary mean achievable rate per configuration scheme."""
    header = ["seed", "scheme", "phase1_symbols", "ue", "rate_mean", "std_err", "n_samples"]
    rows = []
    records = _scheme_records(
        scenario, seed, runs, workers, SCHEME_LADDER, (0,) * STATIONARY_DRAWS
    )
    for (tag, pilots), recs in records.items():
        rates = np.array([r.rates for r in recs if r.error is None])  # (n_ok, n_tau, I)
        for i in range(scenario.n_users):
            mean, se, n = _mean_se(rates[:, :, i].ravel())
            rows.append((seed, tag, pilots if pilots is not None else "", i, mean, se, n))
    return header, rows


def experiment_rate_cdf(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 3(a): empirical CDF of the stationary achievable rate."""
    header = ["seed", "scheme", "phase1_symbols", "ue", "rate", "cdf"]
    rows = []
    schemes = (("random", None), ("prior", None), ("phase1", 30), ("oracle", None))
    records = _scheme_records(
        scenario, seed, runs, workers, schemes, (0,) * STATIONARY_DRAWS
    )
    for (tag, pilots), recs in records.items():
        for i in range(scenario.n_users):
            samples = np.concatenate(
                [r.rates[:, i] for r in recs if r.error is None]
            )
            values, probs = harness.empirical_cdf(samples[np.isfinite(samples)])
            for v, p in zip(values, probs):
                rows.append((seed, tag, pilots if pilots is not None else "", i, float(v), float(p)))
    return header, rows


def experiment_mobility(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 3(b): rate decay over a location interval without re-localization."""
    header = ["seed", "scheme", "phase1_symbols", "ue", "tau_s", "rate_mean", "std_err", "n_runs"]
    rows = []
    t_c = scenario.frame.channel_coherence_s
    tau_steps = tuple(int(round(t / t_c)) for t in MOBILITY_TAUS)
    schemes = (
        ("phase1", 20),
        ("prior", None),
        ("punctual_phase1", 20),
        ("punctual_prior", None),
    )
    records = _scheme_records(scenario, seed, runs, workers, schemes, tau_steps)
    for (tag, pilots), recs in records.items():
        rates = np.array([r.rates for r in recs if r.error is None])
        for i in range(scenario.n_users):
            for ti, tau in enumerate(MOBILITY_TAUS):
                mean, se, n = _mean_se(rates[:, ti, i])
                rows.append((seed, tag, pilots if pilots is not None else "", i, tau, mean, se, n))
    return header, rows


def experiment_chest_nmse(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 4(a): LMMSE NMSE versus Phase-II pilots, with and without Phase I."""
    header = [
        "seed", "scheme", "phase1_symbols", "ue", "phase2_symbols",
        "nmse_analytic", "nmse_numeric", "std_err_numeric", "n_runs",
    ]
    rows = []
    for tag, pilots in (("phase1", 10), ("prior", None)):
        scheme = RisScheme(tag=tag, phase1_symbols=pilots)
        recs = harness.run_algorithm1(
            scenario, scheme, runs, seed, tau_steps=(0,), estimate=True,
            phase2_symbols=CHEST_PILOTS, workers=workers,
        )
        for t2 in CHEST_PILOTS:
            sel = [r for r in recs if r.error is None and r.phase2_symbols == t2]
            for i in range(scenario.n_users):
                numeric = np.array([r.nmse_numeric[0, i] for r in sel])
                analytic = np.array([r.nmse_analytic[0, i] for r in sel])
                mean_n, se_n, n = _mean_se(numeric)
                mean_a, _, _ = _mean_se(analytic)
                rows.append(
                    (seed, tag, pilots if pilots is not None else "", i, t2,
                     mean_a, mean_n, se_n, n)
                )
    return header, rows


def experiment_effective_rate(scenario: ScenarioConfig, seed: int, runs: int, workers: int = 1):
    """Fig. 4(b): effective rate against the Phase-II pilot budget."""
    header = [
        "seed", "scheme", "csi", "phase1_symbols", "ue", "phase2_symbols",
        "effective_rate_mean", "std_err", "n_runs",
    ]
    rows = []
    for tag, pilots in (("phase1", 20), ("prior", None)):
        scheme = RisScheme(tag=tag, phase1_symbols=pilots)
        recs = harness.run_algorithm1(
            scenario, scheme, runs, seed, tau_steps=(0,), estimate=True,
            phase2_symbols=EFFECTIVE_PILOTS, workers=workers,
        )
        for t2 in EFFECTIVE_PILOTS:
            sel = [r for r in recs if r.error is None and r.phase2_symbols == t2]
            for i in range(scenario.n_users):
                eff = np.array([r.effective_rates[0, i] for r in sel])
                mean, se, n = _mean_se(eff)
                rows.append(
                    (seed, tag, "estimated", pilots if pilots is not None else "",
                     i, t2, mean, se, n)
                )
    # Perfect-CSI reference: rate does not depend on the pilot count, only
    # the overhead factor does.
    scheme = RisScheme(tag="phase1", phase1_symbols=20)
    recs = harness.run_algorithm1(
        scenario, scheme, runs, seed, tau_steps=(0,), workers=workers
    )
    raw = np.array([r.rates[0] for r in recs if r.error is None])  # (n_ok, I)
    for t2 in EFFECTIVE_PILOTS:
        eta = scenario.frame.overhead_factor(t2)
        for i in range(scenario.n_users):
            mean, se, n = _mean_se(eta * raw[:, i])
            rows.append((seed, "phase1", "perfect", 20, i, t2, mean, se, n))
    return header, rows


_RUNNERS = {
    "peb-sweep": experiment_peb_sweep,
    "ris-schemes": experiment_ris_schemes,
    "rate-cdf": experiment_rate_cdf,
    "mobility": experiment_mobility,
    "chest-nmse": experiment_chest_nmse,
    "effective-rate": experiment_effective_rate,
}


def run_experiment(
    name: str,
    scenario: ScenarioConfig,
    seed: int,
    runs: int,
    out_path: str | Path,
    workers: int = 1,
    plot: bool = True,
) -> Path:
    """Run one named experiment and write its CSV (and figure) to out_path."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    header, rows = _RUNNERS[name](scenario, seed, runs, workers)
    out_path = Path(out_path)
    if out_path.parent and not out_path.parent.exists():
        raise FileNotFoundError(f"output directory {out_path.parent} does not exist")
    write_csv(out_path, header, rows)
    if plot:
        from . import report

        report.render_experiment(name, out_path, out_path.with_suffix(".png"))
    return out_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risloc",
        description="Location-aided RIS configuration and precoding experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write a CSV")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--scenario", required=True, help="path to a scenario YAML file")
    run.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    run.add_argument("--runs", type=int, default=20, help="Monte Carlo runs (default 20)")
    run.add_argument("--out", help="output CSV path")
    run.add_argument("--workers", type=int, default=1, help="parallel run workers")
    run.add_argument(
        "--print-effective-config",
        action="store_true",
        help="echo the fully-resolved configuration and exit",
    )
    run.add_argument("--no-plot", action="store_true", help="skip the figure next to the CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = parse_scenario(args.scenario)
        if args.print_effective_config:
            sys.stdout.write(effective_config_text(scenario))
            return 0
        if not args.experiment or not args.out:
            parser.error("--experiment and --out are required unless printing the config")
        if args.seed < 0:
            raise ValueError("--seed must be nonnegative")
        if args.runs < 1:
            raise ValueError("--runs must be positive")
        run_experiment(
            args.experiment, scenario, args.seed, args.runs, args.out,
            workers=args.workers, plot=not args.no_plot,
        )
        return 0
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
