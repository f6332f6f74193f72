"""Gradient flows of probability densities on the line and their Lorenz-curve twins.

Densities live on a uniform spatial window; Lorenz curves on a cell-centred
grid in f with anchors L(0) = 0 and L(1) = first moment.  The two pictures are
linked by L_f = G (inverse cdf) and L_ff = 1 / (rho o G).
"""
from .errors import *  # noqa: F401,F403
from .functionals import (  # noqa: F401
    FrechetDerivative,
    Functional,
    boltzmann_entropy,
    cov_frechet,
    evaluate,
    frechet,
    free_energy,
    gaussian_interaction,
    gini_area,
    quadratic_interaction,
    quadratic_potential,
)
from .geometry import GradientStructure, grad_density, grad_lorenz, metric_pairing  # noqa: F401
from .transforms import (  # noqa: F401
    Density,
    Grid1D,
    LorenzCurve,
    TangentVector,
    cdf,
    density_from_lorenz,
    dt_inverse_cdf,
    dt_lorenz,
    inverse_cdf,
    lorenz_map,
    quantiles,
)

__version__ = "0.1.0"
