"""Spectral-efficiency analysis and max-min optimization for STAR-RIS
assisted cell-free massive MIMO with hardware impairments."""

from .scenario import (
    SystemConfig, Geometry, LargeScale, ConfigError, ZeroDistance,
    parse_config, load_config, dump_config, place_entities,
    large_scale_fading,
)
from .correlation import (
    CorrelationSet, NonSquareN, ris_correlation, ris_correlation_pair,
    ap_correlation, build_correlation_set,
)
from .channel import (
    PassiveBeamforming, ChannelRealization, SideMismatch, equal_split_pbf,
    random_pbf, phase_error_cf, effective_ris_matrices, los_steering,
    cascaded_covariance, covariance_tensor, sample_channel,
)
from .impairments import (
    PhaseNoisePath, phase_noise_variance, sample_phase_noise,
)
from .estimation import (
    PilotAssignment, ChannelStatistics, SingularPsi, assign_pilots,
    psi_matrix, lmmse_statistics, receive_pilots, estimate_channel,
)
from .closed_form import (
    PowerControl, SinrBreakdown, TermMatrices, epc_power, term_matrices,
    sinr_closed_form, dk_grouped, ergodic_se, remark_deltas,
)
from .montecarlo import (
    TrialComponents, TrialResult, empirical_sinr, simulate_trial,
    lemma1_oracle, lemma2_exact, lemma2_oracle,
)
from .socp import (
    SocProblem, SlackValues, Feasible, Infeasible, UOutOfRange,
    build_soc_problem, minimal_slacks, sinr_floor, constraint_residual,
    soc_feasible,
)
from .optimize import (
    NoFeasiblePoint, Particle, SwarmState, make_stats_builder, min_sinr,
    encode_pbf, decode_pbf, repair_position, velocity_limits,
    inertia_weight, apso_optimize, bisect_power, ao_maxmin,
    quasiconcavity_probe,
)
from .experiments import (
    ExperimentSpec, apply_variable, baselines, evaluate_draw, read_csv,
    run_cdf, run_sweep, run_optimizer_experiment, run_validate,
    run_lemmas, write_csv, write_json,
)

__version__ = "0.1.0"
