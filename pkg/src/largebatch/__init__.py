"""Large-minibatch data-parallel training recipe at desk scale.

Hybrid momentum-SGD/RMSprop optimizer with a smooth warm-up blend, a
slow-start linearly scaled learning-rate schedule, batch norm evaluated with
worker-averaged statistics, and simulated ring all-reduce in binary16.
"""

from .collective import (
    CommPrecision,
    CommStats,
    CostModel,
    SaturationWarning,
    all_reduce,
    fit_cost_model,
    ring_all_reduce,
    ring_time,
    scaling_efficiency,
    solve_for_efficiencies,
)
from .config import Config, ConfigError, apply_overrides, load_config, parse_config
from .lr_schedule import ClusterShape, LrSchedule, eta_base, goyal_schedule, lr_at, slow_start_schedule
from .numeric_core import NonFiniteError, Rng, ShapeError, from_binary16, rand_normal, to_binary16
from .optimizer import BlendCoefficients, OptimizerHyper, OptimizerState, alpha_sgd_at, blend_at, step
from .syncbn import BnLayerState, SyncError, sync_statistics
from .trainer import ReplicaDivergenceError, RunResult, TrainingError, prepare, run, warmup_comparison

__version__ = "0.1.0"

__all__ = [
    "BlendCoefficients", "BnLayerState", "ClusterShape", "CommPrecision", "CommStats", "Config",
    "ConfigError", "CostModel", "LrSchedule", "NonFiniteError", "OptimizerHyper", "OptimizerState",
    "ReplicaDivergenceError", "Rng", "RunResult", "SaturationWarning", "ShapeError", "SyncError",
    "TrainingError", "all_reduce", "alpha_sgd_at", "apply_overrides", "blend_at", "eta_base",
    "fit_cost_model", "from_binary16", "goyal_schedule", "load_config", "lr_at", "parse_config",
    "prepare", "rand_normal", "ring_all_reduce", "ring_time", "run", "scaling_efficiency",
    "slow_start_schedule", "solve_for_efficiencies", "step", "sync_statistics", "to_binary16",
    "warmup_comparison",
]
