"""Shared scenario builders for the test suite."""

from pathlib import Path

import numpy as np
import pytest

from risloc.channel import PlacedArray, RfParams
from risloc.config import FrameTiming, ScenarioConfig, UePlacement
from risloc.geometry import ArrayLayout, Pose
from risloc.ris_opt import OptimizerSettings

TABLE1_PATH = Path(__file__).resolve().parents[1] / "scenarios" / "table1.cfg"


def rotation_for_boresight(boresight):
    """Any proper rotation whose local z axis points along boresight."""
    z = np.asarray(boresight, dtype=float)
    z = z / np.linalg.norm(z)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(z @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def make_rf(pathloss_exponent=2.0, carrier_hz=28e9):
    return RfParams(
        carrier_hz=carrier_hz,
        bandwidth_hz=120e3,
        noise_figure=10 ** 0.5,
        noise_density=10 ** (-169 / 10) * 1e-3,
        tx_gain=2.5,
        rx_gain=2.5,
        cell_boresight_gain=np.pi,
        pattern_exponent=0.57,
        pathloss_exponent=pathloss_exponent,
    )


def make_scenario(
    n_bs=(2, 2),
    ris_cells=(4, 4),
    n_ris=2,
    ue_antennas=(2, 1),
    n_ues=2,
    kappa=5.0,
    seed=0,
    optimizer=None,
    direct_nlos_variance=0.0,
    carrier_hz=28e9,
):
    """Small random-geometry scenario for unit tests.

    Surfaces are scattered on a circle looking inward at the UE cluster;
    the BS is elevated near that cluster so every leg stays inside the
    unit-cell pattern's front half-space.
    """
    rng = np.random.default_rng(seed)
    rf = make_rf(carrier_hz=carrier_hz)
    spacing = rf.wavelength_m / 2.0
    # BS elevated near the spot all surfaces face, so every leg sits inside
    # the unit-cell pattern's front half-space
    bs_pos = np.array([8.0, 4.0, 6.0]) + rng.normal(0, 0.5, 3)
    bs = PlacedArray(
        pose=Pose(bs_pos, rotation_for_boresight(np.array([5.0, 2.0, 0.0]) - bs_pos)),
        layout=ArrayLayout(*n_bs, spacing),
    )
    ris = []
    for k in range(n_ris):
        angle = 2.0 * np.pi * (k + 0.15) / max(n_ris, 2) + rng.normal(0, 0.2)
        pos = np.array([12.0 * np.cos(angle), 12.0 * np.sin(angle), 3.0])
        ris.append(
            PlacedArray(
                pose=Pose(pos, rotation_for_boresight(np.array([5.0, 2.0, 0.0]) - pos)),
                layout=ArrayLayout(*ris_cells, spacing),
            )
        )
    ues = []
    for i in range(n_ues):
        pos = np.array([5.0, 2.0, 0.0]) + rng.normal(0, 2.0, 3) * np.array([1, 1, 0])
        ues.append(
            UePlacement(
                array=PlacedArray(
                    pose=Pose(pos, np.eye(3)), layout=ArrayLayout(*ue_antennas, spacing)
                ),
                rician_factor=kappa,
                direct_nlos_variance=direct_nlos_variance,
            )
        )
    frame = FrameTiming(
        channel_coherence_s=1e-3,
        bandwidth_hz=rf.bandwidth_hz,
        phase1_symbols=10,
        phase2_symbols=8,
        n_coherence_intervals=1000,
    )
    return ScenarioConfig(
        rf=rf,
        bs=bs,
        ris=tuple(ris),
        ues=tuple(ues),
        frame=frame,
        total_power=1e-3,
        prior_position_cov=np.diag([2.0, 2.0, 0.0]),
        mobility_step_cov=np.diag([1e-6, 1e-6, 0.0]),
        marginal_samples=200,
        optimizer=optimizer or OptimizerSettings(position_samples=4, nlos_samples=2,
                                                 max_outer=10, rel_tol=1e-6),
    )


@pytest.fixture(scope="session")
def table1_scenario():
    from risloc.config import parse_scenario

    return parse_scenario(TABLE1_PATH)
