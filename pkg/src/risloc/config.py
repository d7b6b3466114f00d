"""Scenario configuration: frame timing, placements, and strict file parsing.

The scenario file is nested key-value YAML with an explicit schema version.
Parsing validates every invariant the downstream modules rely on and
rejects unknown keys, so a config that loads is a config that runs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import PlacedArray, RfParams
from .geometry import ArrayLayout, Pose
from .ris_opt import OptimizerSettings

SCHEMA_VERSION = 1
SPEED_OF_LIGHT = 299792458.0


class ConfigError(ValueError):
    """Scenario file rejected; the message carries the offending key path."""


@dataclass(frozen=True)
class FrameTiming:
    """Two-time-scale frame: one location interval of N_C coherence blocks.

    Symbol counts are per-interval pilot budgets: phase1_symbols spans the
    head of the frame, phase2_symbols the head of every coherence block.
    """

    channel_coherence_s: float
    bandwidth_hz: float
    phase1_symbols: int
    phase2_symbols: int
    n_coherence_intervals: int

    def __post_init__(self):
        if self.channel_coherence_s <= 0.0 or self.bandwidth_hz <= 0.0:
            raise ValueError("frame durations and bandwidth must be positive")
        if self.phase1_symbols % 2 != 0 or self.phase1_symbols < 2:
            raise ValueError("phase1_symbols must be a positive even number")
        if self.phase2_symbols < 1:
            raise ValueError("phase2_symbols must be positive")
        if self.n_coherence_intervals < 1:
            raise ValueError("n_coherence_intervals must be positive")
        if self.phase2_symbols > self.symbols_per_coherence:
            raise ValueError("phase2 pilots cannot exceed one coherence interval")

    @property
    def symbols_per_coherence(self) -> int:
        return int(round(self.channel_coherence_s * self.bandwidth_hz))

    @property
    def phase1_duration_s(self) -> float:
        return self.phase1_symbols / self.bandwidth_hz

    @property
    def location_coherence_s(self) -> float:
        return self.phase1_duration_s + self.n_coherence_intervals * self.channel_coherence_s

    def overhead_factor(self, phase2_symbols: int | None = None) -> float:
        """Effective-rate factor (T_C - T_P2) / T_C in symbol counts."""
        t2 = self.phase2_symbols if phase2_symbols is None else phase2_symbols
        return (self.symbols_per_coherence - t2) / self.symbols_per_coherence


@dataclass(frozen=True)
class UePlacement:
    """One served user: placed array, Rician factor, blocked-direct variance."""

    array: PlacedArray
    rician_factor: float
    direct_nlos_variance: float = 0.0

    def __post_init__(self):
        if self.rician_factor < 0.0:
            raise ValueError("Rician factor must be nonnegative")
        if self.direct_nlos_variance < 0.0:
            raise ValueError("direct NLOS variance must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a simulation run needs, validated at construction."""

    rf: RfParams
    bs: PlacedArray
    ris: tuple[PlacedArray, ...]
    ues: tuple[UePlacement, ...]
    frame: FrameTiming
    total_power: float
    prior_position_cov: np.ndarray
    mobility_step_cov: np.ndarray
    marginal_samples: int = 2000
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    planar_localization: bool = False

    def __post_init__(self):
        if self.total_power <= 0.0:
            raise ValueError("total power must be positive")
        if not self.ues:
            raise ValueError("at least one UE is required")
        if self.marginal_samples < 1:
            raise ValueError("marginal_samples must be positive")
        for name in ("prior_position_cov", "mobility_step_cov"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            if np.linalg.eigvalsh(0.5 * (arr + arr.T)).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_users(self) -> int:
        return len(self.ues)

    @property
    def n_ris(self) -> int:
        return len(self.ris)

    @property
    def power_per_ue(self) -> float:
        return self.total_power / self.n_users

    def with_rician_factor(self, kappa: float) -> "ScenarioConfig":
        ues = tuple(replace(ue, rician_factor=kappa) for ue in self.ues)
        return replace(self, ues=ues)

    def with_phase1_symbols(self, n: int) -> "ScenarioConfig":
        return replace(self, frame=replace(self.frame, phase1_symbols=n))

    def with_phase2_symbols(self, n: int) -> "ScenarioConfig":
        return replace(self, frame=replace(self.frame, phase2_symbols=n))


# ----------------------------------------------------------------------
# File parsing


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"missing required key '{path}{key}'")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], path: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{path.rstrip('.') or '<root>'}' must be a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} under '{path.rstrip('.') or '<root>'}'"
        )


def _float(mapping: dict, key: str, path: str) -> float:
    value = _require(mapping, key, path)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{path}{key}' must be a number, got {value!r}") from None


def _int(mapping: dict, key: str, path: str) -> int:
    value = _require(mapping, key, path)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"'{path}{key}' must be an integer, got {value!r}")
    return value


def _parse_layout(node: dict, path: str, default_spacing: float) -> ArrayLayout:
    _check_keys(node, {"n_x", "n_y", "spacing_m"}, path)
    spacing = node.get("spacing_m")
    spacing = default_spacing if spacing is None else float(spacing)
    try:
        return ArrayLayout(n_x=_int(node, "n_x", path), n_y=_int(node, "n_y", path),
                           spacing=spacing)
    except ValueError as exc:
        raise ConfigError(f"invalid array under '{path.rstrip('.')}': {exc}") from None


def _parse_placed(node: dict, path: str, default_spacing: float) -> PlacedArray:
    _check_keys(node, {"position", "orientation", "array"}, path)
    position = np.asarray(_require(node, "position", path), dtype=float)
    if position.shape != (3,):
        raise ConfigError(f"'{path}position' must be a 3-vector")
    orientation = np.asarray(_require(node, "orientation", path), dtype=float)
    if orientation.shape != (3, 3):
        raise ConfigError(f"'{path}orientation' must be a 3x3 matrix")
    try:
        pose = Pose(position=position, orientation=orientation)
    except ValueError as exc:
        raise ConfigError(f"'{path}orientation' is not a rotation: {exc}") from None
    layout = _parse_layout(_require(node, "array", path), path + "array.", default_spacing)
    return PlacedArray(pose=pose, layout=layout)


_ROOT_KEYS = {
    "schema_version", "rf", "bs", "ris", "ues", "frame", "power",
    "prior", "mobility", "estimation", "ris_optimizer", "localization",
}


def parse_scenario_dict(raw: dict) -> ScenarioConfig:
    _check_keys(raw, _ROOT_KEYS, "")
    version = _require(raw, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")

    rf_node = _require(raw, "rf", "")
    _check_keys(
        rf_node,
        {"carrier_hz", "bandwidth_hz", "noise_figure_db", "noise_density_dbm_hz",
         "tx_gain", "rx_gain", "cell_boresight_gain", "pattern_exponent",
         "pathloss_exponent"},
        "rf.",
    )
    try:
        rf = RfParams(
            carrier_hz=_float(rf_node, "carrier_hz", "rf."),
            bandwidth_hz=_float(rf_node, "bandwidth_hz", "rf."),
            noise_figure=10.0 ** (_float(rf_node, "noise_figure_db", "rf.") / 10.0),
            noise_density=10.0 ** (_float(rf_node, "noise_density_dbm_hz", "rf.") / 10.0) * 1e-3,
            tx_gain=_float(rf_node, "tx_gain", "rf."),
            rx_gain=_float(rf_node, "rx_gain", "rf."),
            cell_boresight_gain=_float(rf_node, "cell_boresight_gain", "rf."),
            pattern_exponent=_float(rf_node, "pattern_exponent", "rf."),
            pathloss_exponent=_float(rf_node, "pathloss_exponent", "rf."),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid rf section: {exc}") from None
    default_spacing = rf.wavelength_m / 2.0

    bs = _parse_placed(_require(raw, "bs", ""), "bs.", default_spacing)
    ris_nodes = _require(raw, "ris", "")
    if not isinstance(ris_nodes, list) or not ris_nodes:
        raise ConfigError("'ris' must be a non-empty list")
    ris = tuple(
        _parse_placed(node, f"ris[{k}].", default_spacing) for k, node in enumerate(ris_nodes)
    )

    ue_nodes = _require(raw, "ues", "")
    if not isinstance(ue_nodes, list) or not ue_nodes:
        raise ConfigError("'ues' must be a non-empty list")
    ues = []
    for i, node in enumerate(ue_nodes):
        path = f"ues[{i}]."
        _check_keys(
            node,
            {"position", "orientation", "array", "rician_factor", "direct_blockage_db"},
            path,
        )
        placed = _parse_placed(
            {k: node[k] for k in ("position", "orientation", "array")}, path, default_spacing
        )
        kappa = _float(node, "rician_factor", path)
        blockage_db = node.get("direct_blockage_db")
        if blockage_db is None:
            direct_var = 0.0
        else:
            dist = float(np.linalg.norm(placed.pose.position - bs.pose.position))
            freespace = (
                rf.tx_gain * rf.rx_gain * rf.wavelength_m**2
                / (16.0 * np.pi**2 * dist**rf.pathloss_exponent)
            )
            direct_var = freespace * 10.0 ** (-float(blockage_db) / 10.0)
        try:
            ues.append(UePlacement(array=placed, rician_factor=kappa,
                                   direct_nlos_variance=direct_var))
        except ValueError as exc:
            raise ConfigError(f"invalid UE {i}: {exc}") from None

    frame_node = _require(raw, "frame", "")
    _check_keys(
        frame_node,
        {"channel_coherence_s", "coherence_intervals", "phase1_symbols", "phase2_symbols"},
        "frame.",
    )
    try:
        frame = FrameTiming(
            channel_coherence_s=_float(frame_node, "channel_coherence_s", "frame."),
            bandwidth_hz=rf.bandwidth_hz,
            phase1_symbols=_int(frame_node, "phase1_symbols", "frame."),
            phase2_symbols=_int(frame_node, "phase2_symbols", "frame."),
            n_coherence_intervals=_int(frame_node, "coherence_intervals", "frame."),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid frame section: {exc}") from None

    power_node = _require(raw, "power", "")
    _check_keys(power_node, {"total_w"}, "power.")
    total_power = _float(power_node, "total_w", "power.")

    prior_node = raw.get("prior") or {}
    _check_keys(prior_node, {"position_cov_diag"}, "prior.")
    prior_diag = np.asarray(prior_node.get("position_cov_diag", [2.0, 2.0, 0.0]), dtype=float)
    if prior_diag.shape != (3,):
        raise ConfigError("'prior.position_cov_diag' must be a 3-vector")

    mobility_node = raw.get("mobility") or {}
    _check_keys(mobility_node, {"step_std_m"}, "mobility.")
    step_std = np.asarray(mobility_node.get("step_std_m", [1e-3, 1e-3, 0.0]), dtype=float)
    if step_std.shape != (3,):
        raise ConfigError("'mobility.step_std_m' must be a 3-vector")

    est_node = raw.get("estimation") or {}
    _check_keys(est_node, {"marginal_samples"}, "estimation.")
    marginal_samples = est_node.get("marginal_samples", 2000)

    opt_node = raw.get("ris_optimizer") or {}
    _check_keys(
        opt_node,
        {"position_samples", "nlos_samples", "max_outer", "rel_tol", "restarts"},
        "ris_optimizer.",
    )
    try:
        optimizer = OptimizerSettings(
            position_samples=opt_node.get("position_samples", 64),
            nlos_samples=opt_node.get("nlos_samples", 8),
            max_outer=opt_node.get("max_outer", 50),
            rel_tol=float(opt_node.get("rel_tol", 1e-4)),
            restarts=opt_node.get("restarts", 1),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid ris_optimizer section: {exc}") from None

    loc_node = raw.get("localization") or {}
    _check_keys(loc_node, {"planar"}, "localization.")
    planar = bool(loc_node.get("planar", False))

    try:
        return ScenarioConfig(
            rf=rf,
            bs=bs,
            ris=ris,
            ues=tuple(ues),
            frame=frame,
            total_power=total_power,
            prior_position_cov=np.diag(prior_diag),
            mobility_step_cov=np.diag(step_std**2),
            marginal_samples=marginal_samples,
            optimizer=optimizer,
            planar_localization=planar,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not well-formed YAML: {exc}") from None
    if raw is None:
        raise ConfigError(
            "empty scenario file; required sections: "
            + ", ".join(sorted(_ROOT_KEYS - {"prior", "mobility", "estimation",
                                             "ris_optimizer", "localization"}))
        )
    return parse_scenario_dict(raw)


def effective_config_text(scenario: ScenarioConfig) -> str:
    """Canonical YAML echo of the fully-resolved configuration.

    Byte-stable: keys sorted, defaults filled in, floats via repr.
    """
    rf = scenario.rf
    data = {
        "schema_version": SCHEMA_VERSION,
        "rf": {
            "carrier_hz": rf.carrier_hz,
            "bandwidth_hz": rf.bandwidth_hz,
            "noise_figure_db": 10.0 * np.log10(rf.noise_figure),
            "noise_density_dbm_hz": 10.0 * np.log10(rf.noise_density * 1e3),
            "tx_gain": rf.tx_gain,
            "rx_gain": rf.rx_gain,
            "cell_boresight_gain": rf.cell_boresight_gain,
            "pattern_exponent": rf.pattern_exponent,
            "pathloss_exponent": rf.pathloss_exponent,
        },
        "bs": _placed_dict(scenario.bs),
        "ris": [_placed_dict(r) for r in scenario.ris],
        "ues": [
            {
                **_placed_dict(ue.array),
                "rician_factor": ue.rician_factor,
                "direct_nlos_variance_w": ue.direct_nlos_variance,
            }
            for ue in scenario.ues
        ],
        "frame": {
            "channel_coherence_s": scenario.frame.channel_coherence_s,
            "coherence_intervals": scenario.frame.n_coherence_intervals,
            "phase1_symbols": scenario.frame.phase1_symbols,
            "phase2_symbols": scenario.frame.phase2_symbols,
        },
        "power": {"total_w": scenario.total_power},
        "prior": {"position_cov_diag": np.diag(scenario.prior_position_cov).tolist()},
        "mobility": {"step_std_m": np.sqrt(np.diag(scenario.mobility_step_cov)).tolist()},
        "estimation": {"marginal_samples": scenario.marginal_samples},
        "ris_optimizer": {
            "position_samples": scenario.optimizer.position_samples,
            "nlos_samples": scenario.optimizer.nlos_samples,
            "max_outer": scenario.optimizer.max_outer,
            "rel_tol": scenario.optimizer.rel_tol,
            "restarts": scenario.optimizer.restarts,
        },
        "localization": {"planar": scenario.planar_localization},
    }
    buf = io.StringIO()
    yaml.safe_dump(data, buf, sort_keys=True, default_flow_style=False)
    return buf.getvalue()


def _placed_dict(placed: PlacedArray) -> dict:
    return {
        "position": placed.pose.position.tolist(),
        "orientation": placed.pose.orientation.tolist(),
        "array": {
            "n_x": placed.layout.n_x,
            "n_y": placed.layout.n_y,
            "spacing_m": placed.layout.spacing,
        },
    }
