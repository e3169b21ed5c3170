"""Exact Wiener-chaos algebra on a grid, Stein-type normal approximation bounds,
exchangeable-pair diagnostics and Monte Carlo distance estimation."""
from .chaos_algebra import (
    ChaosExpansion,
    GaussianSample,
    carre_du_champ,
    evaluate,
    expectation_product,
    fourth_moment_pure,
    from_kernel,
    gradient_product,
    hypercontractivity_constant,
    multiply,
    ou_generator,
    ou_semigroup,
    second_moment,
    variance,
)
from .grid_kernel import (
    BudgetExceededError,
    CellMap,
    Grid,
    GridMismatchError,
    Kernel,
    OrderMismatchError,
    contract,
    symmetrize,
)
from .stein_bounds import (
    BoundReport,
    ChaosVector,
    SingularCovarianceError,
    ZeroVarianceError,
    intermediate_bound,
    kappa,
    nprr_bound,
    smooth_bound,
    tv_bound,
    wasserstein_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "BudgetExceededError",
    "CellMap",
    "ChaosExpansion",
    "ChaosVector",
    "GaussianSample",
    "Grid",
    "GridMismatchError",
    "Kernel",
    "OrderMismatchError",
    "SingularCovarianceError",
    "ZeroVarianceError",
    "carre_du_champ",
    "contract",
    "evaluate",
    "expectation_product",
    "fourth_moment_pure",
    "from_kernel",
    "gradient_product",
    "hypercontractivity_constant",
    "intermediate_bound",
    "kappa",
    "multiply",
    "nprr_bound",
    "ou_generator",
    "ou_semigroup",
    "second_moment",
    "smooth_bound",
    "symmetrize",
    "tv_bound",
    "variance",
    "wasserstein_bound",
]
