"""Equilibrium laboratory for prediction-augmented facility location.

The harmonic selection rule places the facility at a reported location with
probability inversely proportional to its distance to a predicted optimum
(plus a trade-off constant).  This package computes the induced outcome
distributions, finds and certifies pure Nash equilibria of the resulting
game, measures the price of anarchy, and checks the quantitative bounds the
mechanism satisfies at equilibrium.
"""

from .analysis import (
    CheckFailure,
    CheckReport,
    OptResult,
    check_consistency_bound,
    gamma_accuracy,
    one_median,
    optimal_facility,
    pairwise_average,
    poa,
    run_battery,
)
from .equilibrium import (
    BestResponseDiagnostic,
    EquilibriumCertificate,
    NonConvergence,
    PathStrategy,
    ReportProfile,
    best_response_class,
    brute_force_epsilon_pne,
    dominance_check,
    find_pne_dynamics,
    find_pne_enumerative,
    verify_pne,
)
from .instance import Instance, make_instance
from .mechanism import (
    HarmonicDistribution,
    MechanismConfig,
    expected_agent_cost,
    expected_social_cost,
    harmonic_distribution,
    rd_distribution,
    sc_decomposition,
    social_cost,
)
from .metric import (
    AnchorPoint,
    Circle,
    CirclePoint,
    EuclideanLp,
    EuclideanPoint,
    MetricSpace,
    SegmentExtension,
    SegmentPoint,
    path_convexity_gap,
    point_from_json,
    point_to_json,
    space_from_json,
    validate_metric,
)

__all__ = [name for name in dir() if not name.startswith("_")]
