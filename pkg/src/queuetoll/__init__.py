"""Optimal routing, selfish equilibria and congestion prices for multiclass traffic in parallel queues."""
from .costs import CostModel, MM1MeanDelay, MM1TailProbability, PSLoad, Tabulated, cost_model_from_dict
from .model import (
    ClassSpec,
    InfeasibleError,
    SystemSpec,
    aggregate_rates,
    check_routing,
    effective_spec,
    social_cost,
    social_cost_gradient,
)
from .pricing import Certificate, NonOptimalRoutingError, PigouvianPrices, certify_prices, pigouvian_prices, price_shift
from .social_opt import (
    OptimumResult,
    StructureReport,
    check_optimal_structure,
    grid_oracle,
    solve_social_optimum,
)
from .wardrop import EquilibriumResult, solve_equilibrium, threshold_oracle, wardrop_residual

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "ClassSpec",
    "CostModel",
    "EquilibriumResult",
    "InfeasibleError",
    "MM1MeanDelay",
    "MM1TailProbability",
    "NonOptimalRoutingError",
    "OptimumResult",
    "PSLoad",
    "PigouvianPrices",
    "StructureReport",
    "SystemSpec",
    "Tabulated",
    "aggregate_rates",
    "certify_prices",
    "check_optimal_structure",
    "check_routing",
    "cost_model_from_dict",
    "effective_spec",
    "grid_oracle",
    "pigouvian_prices",
    "price_shift",
    "social_cost",
    "social_cost_gradient",
    "solve_equilibrium",
    "solve_social_optimum",
    "threshold_oracle",
    "wardrop_residual",
]
