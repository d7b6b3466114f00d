"""Figure rendering for experiment CSVs.

Each experiment gets one matplotlib figure saved next to its CSV. Plots
are generated from the written file, not from in-memory state, so the CSV
stays the canonical artifact.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_rows(csv_path: Path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def _label(row: dict) -> str:
    scheme = row["scheme"]
    pilots = row.get("phase1_symbols", "")
    return f"{scheme}@{pilots}" if pilots else scheme


def _series(rows, key_fn, x_field, y_field):
    series: dict = {}
    for row in rows:
        key = key_fn(row)
        series.setdefault(key, []).append((float(row[x_field]), float(row[y_field])))
    for key in series:
        series[key].sort()
    return series


def render_experiment(name: str, csv_path: str | Path, png_path: str | Path) -> Path:
    csv_path, png_path = Path(csv_path), Path(png_path)
    rows = _read_rows(csv_path)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))

    if name == "peb-sweep":
        series = _series(
            rows, lambda r: f"UE{r['ue']}, kappa={float(r['kappa']):g}",
            "phase1_symbols", "peb_m",
        )
        for label, pts in sorted(series.items()):
            ax.semilogy(*zip(*pts), marker="o", label=label)
        ax.set_xlabel("Phase-I pilot symbols")
        ax.set_ylabel("Position error bound (m)")
    elif name == "ris-schemes":
        labels, values = [], []
        by_scheme: dict = {}
        for row in rows:
            by_scheme.setdefault(_label(row), []).append(float(row["rate_mean"]))
        for label, rates in by_scheme.items():
            labels.append(label)
            values.append(sum(rates) / len(rates))
        ax.bar(range(len(labels)), values)
        ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
        ax.set_ylabel("Average achievable rate (bits/s/Hz)")
    elif name == "rate-cdf":
        series = _series(rows, lambda r: f"{_label(r)}, UE{r['ue']}", "rate", "cdf")
        for label, pts in sorted(series.items()):
            ax.plot(*zip(*pts), label=label)
        ax.set_xlabel("Achievable rate (bits/s/Hz)")
        ax.set_ylabel("CDF")
    elif name == "mobility":
        series = _series(rows, lambda r: f"{_label(r)}, UE{r['ue']}", "tau_s", "rate_mean")
        for label, pts in sorted(series.items()):
            ax.plot(*zip(*pts), marker="o", label=label)
        ax.set_xlabel("Time in movement (s)")
        ax.set_ylabel("Average achievable rate (bits/s/Hz)")
    elif name == "chest-nmse":
        series = _series(
            rows, lambda r: f"{_label(r)}, UE{r['ue']}", "phase2_symbols", "nmse_analytic"
        )
        for label, pts in sorted(series.items()):
            ax.semilogy(*zip(*pts), label=label)
        numeric = _series(
            rows, lambda r: f"{_label(r)}, UE{r['ue']}", "phase2_symbols", "nmse_numeric"
        )
        for label, pts in sorted(numeric.items()):
            ax.semilogy(*zip(*pts), linestyle="none", marker=".", label=f"{label} (numeric)")
        ax.set_xlabel("Phase-II pilot symbols")
        ax.set_ylabel("Normalized MSE")
    elif name == "effective-rate":
        series = _series(
            rows,
            lambda r: f"{_label(r)} ({r['csi']}), UE{r['ue']}",
            "phase2_symbols", "effective_rate_mean",
        )
        for label, pts in sorted(series.items()):
            ax.plot(*zip(*pts), marker="o", label=label)
        ax.set_xlabel("Phase-II pilot symbols")
        ax.set_ylabel("Effective achievable rate (bits/s/Hz)")
    else:
        raise ValueError(f"no renderer for experiment {name!r}")

    ax.grid(True, which="both", alpha=0.4)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path
