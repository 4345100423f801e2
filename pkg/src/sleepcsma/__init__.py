"""Sleep-enabled CSMA: exact analysis, optimal aggressiveness, online adaptation and simulation."""
from .adaptation import (AdaptationConfig, DynamicPdt, FrameMeasurement, PdtMode, apply_frame_boundary,
                         dynamic_pdt, estimate_arrival_rate, measure_frame, run_adaptive,
                         update_aggressiveness)
from .analytic import (AggressivenessProfile, StationaryDistribution, awake_fraction,
                       detailed_balance_residual, log_weight, stationary_distribution, throughput)
from .errors import (ConfigError, DomainError, EmptyFrame, EmptyTrace, InfeasibleState, LPNumericalFailure,
                     NoPackets, NonConvergence, RangeError, SizeLimitExceeded, SleepCSMAError)
from .optimizer import (OptimizationResult, OptimizerSettings, SolveStatus, kl_divergence, solve,
                        solve_adaptive_csma)
from .regions import (AwakeRegion, TrafficSpec, Verdict, awake_region_bounds, capacity_boundary,
                      feasibility_margin, pdt_to_awake_target)
from .simcore import (ContinuousSimulator, PowerModel, RunMetrics, empirical_occupancy, energy_per_packet,
                      run_continuous)
from .slotted import (SlottedConfig, SlottedMode, contention_window, max_throughput_under_cap,
                      r_max_for_window, run_dcf_80211, run_slotted, sweep_dcf_cw0)
from .topology import ConflictGraph, NetworkState, StateIndex, build_state_index, enumerate_configurations

__version__ = "0.1.0"
