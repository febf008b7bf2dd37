"""Expectation-constrained optimal stopping and control on binary lattices.

The package couples a budget-state backward-induction solver (pure and
relaxed/concavified modes) with three independent oracles at desk scale:
exhaustive enumeration of deterministic adapted rules, an occupation-measure
linear program solved by a self-contained simplex, and a multiplier-penalized
dual bound.  Diagnostics verify the driver's martingale structure, the
level-mixture representation of randomized stopping, and the consistency of
the recursion at intermediate horizons.
"""

from .model import (
    Budget,
    CoefficientSpec,
    ConstraintRecord,
    ConstraintSpec,
    ProblemInstance,
    RewardSpec,
    ValidationError,
    evaluate_cost,
    make_family,
    make_problem,
    slack_budget,
    validate_coefficients,
)
from .lattice import LatticeModel, PathEnsemble, build_lattice, simulate_paths, transition
from .solver import (
    PURE,
    RELAXED,
    BudgetGrid,
    PolicyTable,
    ValueTable,
    bellman_step,
    concavify,
    evaluate_policy,
    feasible_to_stop,
    solve,
)
from .oracle import (
    backward_induction,
    enumerate_pure,
    lp_certificates,
    solve_lp,
    solve_lp_exact,
)
from .dual import DualPoint, DualSearchConfig, dual_value, minimize_dual

__all__ = [
    "Budget",
    "BudgetGrid",
    "CoefficientSpec",
    "ConstraintRecord",
    "ConstraintSpec",
    "DualPoint",
    "DualSearchConfig",
    "LatticeModel",
    "PathEnsemble",
    "PolicyTable",
    "ProblemInstance",
    "PURE",
    "RELAXED",
    "RewardSpec",
    "ValidationError",
    "ValueTable",
    "backward_induction",
    "bellman_step",
    "build_lattice",
    "concavify",
    "enumerate_pure",
    "evaluate_cost",
    "evaluate_policy",
    "feasible_to_stop",
    "lp_certificates",
    "make_family",
    "make_problem",
    "minimize_dual",
    "dual_value",
    "simulate_paths",
    "slack_budget",
    "solve",
    "solve_lp",
    "solve_lp_exact",
    "transition",
    "validate_coefficients",
]

__version__ = "0.1.0"
