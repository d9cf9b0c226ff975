"""Worst-case utility maximization for multiuser MISO downlink with bounded CSI errors."""

from .model import (
    ChannelSet,
    CovarianceSet,
    ProportionalFair,
    SumRate,
    SystemConfig,
    Utility,
    WeightedSumRate,
    rate,
    sample_channels,
    sample_error,
    sample_errors,
    sinr,
    utility,
)
from .lmi import build_phi, build_y, max_feasible_t, min_eig
from .wcum import IterationTrace, WcumState, certify_limit, init_t, run
from .evaluate import (
    WorstCaseReport,
    exact_worst_sinr,
    mc_worst_rate,
    naive_design,
    oracle_grid_design,
    worst_case_report,
)

__version__ = "0.1.0"
