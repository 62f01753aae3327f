"""Simulation and Bayesian fitting of inhomogeneous Neyman-Scott (Thomas) and
generalised Thomas cluster point processes."""

from .covariates import CovariateSet, RasterCovariate, read_ascii_grid, write_ascii_grid
from .errors import (ChainError, CollinearityError, ConfigurationError, CovariateError, FitError, NSPPError,
                     NumericError, ValidationError)
from .firstorder import PoissonFit, fit_poisson_intensity
from .geometry import DilatedWindow, QuadratureGrid, Window, dilate, make_grid
from .gtp import GTPControl, estgtp, summarize_gtp
from .mcmc_thomas import ChainTrace, Control, ThomasProblem, fit_thomas, run_chain
from .model import (GPDParams, GTPParams, ThomasParams, gauss_rect_mass, gpd_mean, gpd_pmf, gpd_sample, gpd_var,
                    rgtp, simulate_thomas)
from .reporting import PosteriorSummary, acceptance_series, emit_plots, estimated_surfaces, summarize

__version__ = "0.1.0"

__all__ = [
    "ChainError", "ChainTrace", "CollinearityError", "ConfigurationError", "Control", "CovariateError",
    "CovariateSet", "DilatedWindow", "FitError", "GPDParams", "GTPControl", "GTPParams", "NSPPError",
    "NumericError", "PoissonFit", "PosteriorSummary", "QuadratureGrid", "RasterCovariate", "ThomasParams",
    "ThomasProblem", "ValidationError", "Window", "acceptance_series", "dilate", "emit_plots", "estgtp",
    "estimated_surfaces", "fit_poisson_intensity", "fit_thomas", "gauss_rect_mass", "gpd_mean", "gpd_pmf",
    "gpd_sample", "gpd_var", "make_grid", "read_ascii_grid", "rgtp", "run_chain", "simulate_thomas", "summarize",
    "summarize_gtp", "write_ascii_grid",
]
