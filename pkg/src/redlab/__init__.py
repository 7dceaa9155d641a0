"""Finite-length redundancy of universal source codes.

Closed-form minimax and probability bounds, two-stage and conditional
two-stage codes over Jeffreys-quantile grids, a Jeffreys-mixture reference
code, an arithmetic coder, and exact/Monte Carlo redundancy measurement.
"""

__version__ = "0.1.0"

from .family import (
    Kind,
    ParamFamily,
    ParamVector,
    SequenceSample,
    entropy_n,
    fisher_info,
    jeffreys_integral,
    markov1,
    memoryless,
    sample_jeffreys,
    seq_log_prob,
)
from .bounds import (
    minimax_redundancy,
    minimax_two_stage,
    thm1_curve,
    thm2_curve,
    two_stage_penalty,
    unit_ball_volume,
)
from .codecs import (
    CondTwoStageCode,
    IdealCode,
    MixtureCode,
    TwoStageCode,
    build_grid,
    ml_estimate,
    partition,
)
from .eval import empirical_curve, expected_redundancy, reproduce_figure
