"""Optimal arbitrage control of a finite, rate-constrained, lossy store."""

from .costs import (
    KinkedQuadraticCost,
    PriceImpactParams,
    PriceOrder,
    piecewise_linear_cost,
    quadratic_impact_cost,
    regularize,
    scale_cost,
)
from .model import (
    BadSpec,
    Infeasible,
    Instance,
    Schedule,
    StoreSpec,
    feasibility_check,
    objective,
    validate_instance,
)
from .oracle import BudgetExceeded, GridSpec, compare, dp_solve, exhaustive_solve
from .pricegen import CycleSpec, generate
from .rolling import (
    Backcast,
    ConditionalExpectation,
    PerfectForesight,
    ScenarioPath,
    ScenarioTree,
    TreeNode,
    generate_martingale_paths,
    random_martingale_tree,
    rolling_intrinsic,
    scenario_tree_dp,
    theorem6_check,
)
from .sensitivity import (
    dV_dE,
    dV_dPi,
    dV_dPo,
    finite_difference_check,
    sensitivity_report,
)
from .solver import (
    BracketFailure,
    NoConvergence,
    PathClass,
    PathTag,
    SolverOptions,
    Solution,
    advance_segment,
    classify_path,
    horizon_profile,
    solve,
)
from .verify import Certificate, certify_value_gap, check_kkt

__version__ = "0.1.0"
