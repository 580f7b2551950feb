"""Configuration, experiment pipelines and the ``mk`` command line."""

from .config import DEFAULTS, KINDS, ExperimentConfig
from .experiments import (classical_limit_sweep, execute, fock_route, grid_error, ordering_sweep,
                          run_experiment)
from .output import ExperimentResult, Table

__all__ = [
    "DEFAULTS",
    "KINDS",
    "ExperimentConfig",
    "ExperimentResult",
    "Table",
    "classical_limit_sweep",
    "execute",
    "fock_route",
    "grid_error",
    "ordering_sweep",
    "run_experiment",
]
