"""Generalized conditional gradient solver for potential mean field games on the torus."""
from .gcg import (
    QAG,
    ExploitabilityBased,
    GCGResult,
    IterateState,
    OptimalGoldenSection,
    POverKPlusP,
    PowerAlpha,
    gcg_run,
    golden_section,
    mfg_residuals,
    stepsize_exploitability,
    stepsize_prescribed,
    stepsize_qag,
)
from .grid import GridSpec
from .model import (
    Aggregation,
    KernelCongestion,
    LinearPrice,
    ProblemSpec,
    QuadraticLagrangian,
    ZeroCongestion,
    cost_J,
    default_problem,
)
from .pde import CflError, SolverError, best_response, solve_fp, solve_hjb

__all__ = [
    "QAG", "ExploitabilityBased", "GCGResult", "IterateState", "OptimalGoldenSection",
    "POverKPlusP", "PowerAlpha", "gcg_run", "golden_section", "mfg_residuals",
    "stepsize_exploitability", "stepsize_prescribed", "stepsize_qag", "GridSpec", "Aggregation",
    "KernelCongestion", "LinearPrice", "ProblemSpec", "QuadraticLagrangian", "ZeroCongestion",
    "cost_J", "default_problem", "CflError", "SolverError", "best_response", "solve_fp", "solve_hjb",
]
