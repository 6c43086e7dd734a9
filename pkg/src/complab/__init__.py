"""complab: constructive completeness checks for factor-diffusion markets.

A market driven by a d-dimensional diffusion is augmented with d traded
European assets.  The package prices those assets (Monte Carlo, a
Crank-Nicolson solver, closed forms), assembles the Jacobian of the pricing
functions and decides whether the traded assets span every claim.  When they
do not, it builds an explicit claim that no strategy can replicate.
"""

__version__ = "0.1.0"

from complab.factor_models import (
    FactorModel,
    StochVolModel,
    make_builtin_model,
    validate_ellipticity,
    eval_coefficients,
)
from complab.paths import PathSet, simulate_paths, quadratic_variation
from complab.pricing import Asset, price_mc, closed_form_heat, gradient
from complab.pde import GridSpec, solve_pde
from complab.completeness import (
    build_G,
    completeness_along_paths,
    single_point_test,
    incompleteness_witness,
)
from complab.hedging import (
    representation_integrand,
    replicate,
    varswap_price,
    varswap_rank_check,
)

__all__ = [
    "FactorModel",
    "StochVolModel",
    "make_builtin_model",
    "validate_ellipticity",
    "eval_coefficients",
    "PathSet",
    "simulate_paths",
    "quadratic_variation",
    "Asset",
    "price_mc",
    "closed_form_heat",
    "gradient",
    "GridSpec",
    "solve_pde",
    "build_G",
    "completeness_along_paths",
    "single_point_test",
    "incompleteness_witness",
    "representation_integrand",
    "replicate",
    "varswap_price",
    "varswap_rank_check",
]
