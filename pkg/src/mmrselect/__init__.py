"""Minimax-regret best-arm selection with multivariate-normal rewards.

Nature's least-favorable prior is found numerically; its Bayes rule is the
minimax-regret rule. The package also plugs estimated means and covariances
into that rule for practical treatment choice.
"""

from .ammr import EstimateInput, cache_key, select_arm
from .decision import (
    DecisionRuleSpec,
    SelectionDecision,
    SupportPrior,
    bayes_scores,
    empirical_success,
    hard_rule,
    regret_loss,
    softmax_rule,
)
from .errors import (
    BadCount,
    BadScaleFlag,
    ConfigError,
    DegenerateResult,
    DimensionTooSmall,
    InvalidPrior,
    MMRError,
    NotPositiveDefinite,
    NotSymmetric,
    SolveFailed,
)
from .gradient import ObjectiveGradient, objective_and_gradient
from .mvn import MvnModel, QmcBatch, build_model, log_density, sample_batch
from .raster import RasterSlice, rasterize
from .risk import RiskEstimate, bayes_risk, pointwise_risk, sup_risk_scan
from .solver import SolveConfig, SolveReport, equalization_certificate, scale_solution, solve_lfp

__version__ = "0.1.0"
