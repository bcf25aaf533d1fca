"""Benchmark harness: test setups, experiment grids and the oracle check."""

from .grid import GridError, GridResult, OracleReport, ResultRow, oracle_check, run_grid, summarize
from .setups import CANONICAL, CANONICAL_SEEDS, SpecOutOfRangeError, TestSetup, canonical_instance, generate_setup
