"""Robust near-field DMA-NOMA beamforming: channel synthesis, CSI error
bounds, worst-case beamforming, and closed-form NOMA power allocation."""

from .geometry import (ArrayGeometry, ChannelSet, UserEnsemble, UserState,
                       build_geometry, los_channel, make_user_ensemble,
                       path_loss_vector, reconstruct_los, steering_vector,
                       synthesize_channels)
from .uncertainty import (UncertaintyBudget, UserUncertainty,
                          build_bound_matrices, compute_budget,
                          csi_error_radius, interference_caps,
                          solve_worst_position, xi_exact)
from .worst_case import WorstCaseCsi, minimize_rate_over_csi
from .beamforming import DigitalUpdate, DmaUpdate, update_digital, update_dma
from .power_alloc import (PowerSplit, allocate_powers, clamp_qos,
                          split_group_power, waterfill_unconstrained)
from .rates import RateReport, check_sic_ordering, evaluate
from .pipeline import (BeamformerState, Scenario, SolveTrace, SolverConfig,
                       feed_partition, position_draws, solve_robust)
from .harness import ExperimentConfig, build_scenario, run_baseline, run_experiment

__all__ = [
    "ArrayGeometry", "ChannelSet", "UserEnsemble", "UserState",
    "build_geometry", "los_channel", "make_user_ensemble", "path_loss_vector",
    "reconstruct_los", "steering_vector", "synthesize_channels",
    "UncertaintyBudget", "UserUncertainty", "build_bound_matrices",
    "compute_budget", "csi_error_radius", "interference_caps",
    "solve_worst_position", "xi_exact",
    "WorstCaseCsi", "minimize_rate_over_csi",
    "DigitalUpdate", "DmaUpdate", "update_digital", "update_dma",
    "PowerSplit", "allocate_powers", "clamp_qos", "split_group_power",
    "waterfill_unconstrained",
    "RateReport", "check_sic_ordering", "evaluate",
    "BeamformerState", "Scenario", "SolveTrace", "SolverConfig",
    "feed_partition", "position_draws", "solve_robust",
    "ExperimentConfig", "build_scenario", "run_baseline", "run_experiment",
]
