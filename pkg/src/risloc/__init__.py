"""Location-aided RIS configuration, channel estimation, and precoding simulator."""

from .channel import (
    ChannelStats,
    LinkFading,
    PlacedArray,
    RfParams,
    RisProfile,
    bs_ris_channel,
    cascaded_channel,
    cascaded_stats,
    composed_stats_at_position,
    link_fading,
    marginal_stats,
    ris_ue_los,
    sample_nlos,
)
from .chest import (
    EstimationResult,
    Phase2Pilots,
    UnderdeterminedPilotsError,
    design_pilots,
    error_gap,
    lmmse_estimate,
    ml_estimate,
)
from .config import (
    ConfigError,
    FrameTiming,
    ScenarioConfig,
    UePlacement,
    effective_config_text,
    parse_scenario,
)
from .geometry import (
    AnglePair,
    ArrayLayout,
    DegenerateGeometryError,
    Pose,
    local_direction,
    steering_vector,
    unit_cell_pattern,
)
from .harness import RunRecord, empirical_cdf, outage_rate, random_walk, run_algorithm1
from .localization import (
    FimReport,
    Phase1Pilots,
    UnidentifiableError,
    difference_observations,
    effective_noise_variance,
    fim_channel_params,
    fim_position_params,
    peb_report,
    phase1_pilots,
    position_error_covariance,
    sample_position_estimate,
)
from .precoder import (
    PrecoderSet,
    interference_covariance,
    rate_estimated_csi,
    rate_perfect_csi,
    wmmse_optimize,
)
from .ris_opt import (
    OptimizerSettings,
    RisOptResult,
    RisScheme,
    UncertaintyEnsemble,
    build_ensemble,
    optimize_profiles,
    random_profiles,
)

__version__ = "0.1.0"
