"""Backdoor leverage attacks on cooperative multi-agent RL, desk scale.

The heavy lifting lives in the C++ extension; this package re-exports its
surface.
"""

from ._core import (  # noqa: F401
    Action,
    EnvConfig,
    GridWorld,
    MetricsReport,
    N_ACTIONS,
    StepResult,
    TriggerSpec,
    derive_metrics,
    kmeans,
    load_config,
    load_trigger,
    mine_failure_observations,
    pca_project,
    run_collect,
    run_evaluate,
    run_mine_failures,
    run_train_blast,
    run_train_clean,
    scan,
    spectral_scores,
    trigger_from_json,
    trigger_to_json,
)

__all__ = [
    "Action",
    "EnvConfig",
    "GridWorld",
    "MetricsReport",
    "N_ACTIONS",
    "StepResult",
    "TriggerSpec",
    "derive_metrics",
    "kmeans",
    "load_config",
    "load_trigger",
    "mine_failure_observations",
    "pca_project",
    "run_collect",
    "run_evaluate",
    "run_mine_failures",
    "run_train_blast",
    "run_train_clean",
    "scan",
    "spectral_scores",
    "trigger_from_json",
    "trigger_to_json",
]
