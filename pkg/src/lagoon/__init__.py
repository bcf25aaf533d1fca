"""Lagoon: multi-agent simulation-based optimization for cluster-tool scheduling."""

from .model import (
    Instance,
    Job,
    Machine,
    Recipe,
    Schedule,
    count_permutations,
    cut_into_chunks,
    stirling_factorial,
    validate_schedule,
)
from .simulator import SimResult, makespan, simulate

__version__ = "0.1.0"
