"""Risk-averse multistage stochastic optimal control by sampled cutting planes.

The package trains polyhedral lower approximations of stage value
functions for convex control problems under a parametric family of
risk measures, reports a deterministic lower bound per iteration, and
estimates a statistical upper bound by evaluating the trained policy
on sampled scenario paths.
"""

from risksddp.risk import (
    DiscreteDistribution,
    Expectation,
    KLDivergence,
    MeanAVaR,
    OCE,
    RiskMeasure,
    parse_risk_spec,
    risk_measure_from_config,
)
from risksddp.model import (
    ControlSet,
    HydroParams,
    SocProblem,
    StageRealization,
    generate_hydrothermal,
    load_problem,
    problem_from_config,
    problem_to_config,
)
from risksddp.cuts import Cut, CutPool
from risksddp.stage import StageSolution, solve_stage
from risksddp.engine import BoundsRecord, TrainOptions, TrainState, train
from risksddp.evaluation import EvaluationResult, evaluate_policy, enumerate_expected_v1
from risksddp.oracle import exact_optimal_value, exact_policy_value
from risksddp.qfactor import QTrainState, train_q

__version__ = "0.1.0"

__all__ = [
    "BoundsRecord",
    "ControlSet",
    "Cut",
    "CutPool",
    "DiscreteDistribution",
    "EvaluationResult",
    "Expectation",
    "HydroParams",
    "KLDivergence",
    "MeanAVaR",
    "OCE",
    "QTrainState",
    "RiskMeasure",
    "SocProblem",
    "StageRealization",
    "StageSolution",
    "TrainOptions",
    "TrainState",
    "enumerate_expected_v1",
    "evaluate_policy",
    "exact_optimal_value",
    "exact_policy_value",
    "generate_hydrothermal",
    "load_problem",
    "parse_risk_spec",
    "problem_from_config",
    "problem_to_config",
    "risk_measure_from_config",
    "solve_stage",
    "train",
    "train_q",
    "__version__",
]
