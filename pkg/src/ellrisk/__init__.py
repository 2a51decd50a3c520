"""Minimax risk brackets for noisy random linear observation models with
elliptical constraints: the trace functional over trace-constrained SPD
priors, its maximizer-driven ridge estimator, and closed-form solvers for the
worked design laws."""

from .closed_form import (
    SequenceProblem,
    WaterfillSolution,
    covshift_lower,
    dicker_functional,
    kernel_waterfill,
    markov_phi,
    mourtada_limit,
    pinsker_waterfill,
    sobolev_rate,
)
from .ensembles import (
    DesignMatrix,
    GramEnsemble,
    KernelSpec,
    MarkovChainPath,
    gram_ensemble,
    markov_chain,
    markov_m_matrix,
    rkhs_features,
    sample_gaussian_design,
    sample_mixture_design,
    sample_shift_design,
)
from .estimator import RidgeEstimator, bayes_oracle_risk, fit, mc_risk, worst_case_risk
from .functional import (
    FunctionalResult,
    OptimizerOptions,
    RiskBracket,
    dicker_cd,
    gradient,
    maximize_phi,
    objective,
    population_functional,
    risk_bracket,
    sharp_lower,
    singular_split,
    to_population_sandwich,
)
from .problem import EllipticalProblem, PriorCovariance, feasible_project, new_problem

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix",
    "EllipticalProblem",
    "FunctionalResult",
    "GramEnsemble",
    "KernelSpec",
    "MarkovChainPath",
    "OptimizerOptions",
    "PriorCovariance",
    "RidgeEstimator",
    "RiskBracket",
    "SequenceProblem",
    "WaterfillSolution",
    "bayes_oracle_risk",
    "covshift_lower",
    "dicker_cd",
    "dicker_functional",
    "feasible_project",
    "fit",
    "gradient",
    "gram_ensemble",
    "kernel_waterfill",
    "markov_chain",
    "markov_m_matrix",
    "markov_phi",
    "maximize_phi",
    "mc_risk",
    "mourtada_limit",
    "new_problem",
    "objective",
    "pinsker_waterfill",
    "population_functional",
    "risk_bracket",
    "rkhs_features",
    "sample_gaussian_design",
    "sample_mixture_design",
    "sample_shift_design",
    "sharp_lower",
    "singular_split",
    "sobolev_rate",
    "to_population_sandwich",
    "worst_case_risk",
]
