"""Log-linear Poisson intensity fitting by Newton-Raphson on a quadrature grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .covariates import design_matrix
from .errors import CollinearityError, FitError, ValidationError
from .geometry import QuadratureGrid

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8
MAX_ITER = 100
COND_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class PoissonFit:
    coeffs: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    log_lik: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def slopes(self) -> np.ndarray:
        return self.coeffs[1:]

    def wald_pvalues(self) -> np.ndarray:
        """Two-sided Wald p-values for the slopes (intercept excluded)."""
        se = self.se[1:]
        z = np.divide(self.coeffs[1:], se, out=np.zeros_like(se), where=se > 0)
        return 2.0 * norm.sf(np.abs(z))


@dataclass(frozen=True, eq=False)
class Design:
    """Precomputed design rows at data points and at (collapsed) quadrature nodes.

    Covariates are piecewise constant, so nodes sharing a design row are
    merged with summed weights; the quadrature sum is unchanged.
    """

    data: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, points, covs, grid: QuadratureGrid, collapse: bool = True) -> "Design":
        zx = design_matrix(covs, points, True)
        zu = design_matrix(covs, grid.points, True)
        w = grid.weights
        if collapse and zu.shape[1] > 1:
            zu, inv = np.unique(zu, axis=0, return_inverse=True)
            w = np.bincount(inv.ravel(), weights=w, minlength=zu.shape[0])
        elif collapse:
            zu, w = zu[:1], np.array([w.sum()])
        return cls(zx, zu, w)

    @property
    def data_sum(self) -> np.ndarray:
        return self.data.sum(axis=0)


def _loglik(beta, d: Design, zsum):
    eta = d.nodes @ beta
    mu = d.weights * np.exp(eta)
    return float(zsum @ beta - mu.sum()), mu


def poisson_loglik(coeffs, X, covs, grid: QuadratureGrid) -> float:
    """``sum_x zbar(x) . b - integral_W exp(zbar(u) . b) du`` with the grid integral."""
    coeffs = np.asarray(coeffs, dtype=float)
    zx = design_matrix(covs, X, True)
    zu = design_matrix(covs, grid.points, True)
    return float(zx.sum(axis=0) @ coeffs - grid.weights @ np.exp(zu @ coeffs))


def poisson_gradient(coeffs, X, covs, grid: QuadratureGrid) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    zx = design_matrix(covs, X, True)
    zu = design_matrix(covs, grid.points, True)
    return zx.sum(axis=0) - zu.T @ (grid.weights * np.exp(zu @ coeffs))


def fit_design(d: Design, n_points: int, area: float, max_iter: int = MAX_ITER,
               tol: float = GRAD_TOL) -> PoissonFit:
    """Newton-Raphson with step halving on a precomputed :class:`Design`."""
    p = d.nodes.shape[1]
    if n_points < 1:
        raise ValidationError("cannot fit a Poisson intensity to an empty pattern")
    beta = np.zeros(p)
    beta[0] = np.log(n_points / area)
    zsum = d.data_sum
    ll, mu = _loglik(beta, d, zsum)
    grad = zsum - d.nodes.T @ mu
    for it in range(1, max_iter + 1):
        info = (d.nodes * mu[:, None]).T @ d.nodes
        cond = np.linalg.cond(info)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise CollinearityError(
                f"observed information is singular (condition number {cond:.3g}); "
                "check the covariates for collinearity or constant values",
                coeffs=beta, grad_norm=float(np.abs(grad).max()),
            )
        if np.abs(grad).max() < tol:
            return PoissonFit(beta, np.linalg.inv(info), True, it - 1, ll)
        step = np.linalg.solve(info, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, mu_new = _loglik(cand, d, zsum)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                raise FitError("line search failed", coeffs=beta, grad_norm=float(np.abs(grad).max()))
        beta, ll, mu = cand, ll_new, mu_new
        grad = zsum - d.nodes.T @ mu
    gnorm = float(np.abs(grad).max())
    if gnorm < tol:
        info = (d.nodes * mu[:, None]).T @ d.nodes
        return PoissonFit(beta, np.linalg.inv(info), True, max_iter, ll)
    raise FitError(f"no convergence after {max_iter} iterations (|grad| = {gnorm:.3g})",
                   coeffs=beta, grad_norm=gnorm)


def fit_poisson_intensity(X, covs, grid: QuadratureGrid, area: float | None = None) -> PoissonFit:
    """Maximum likelihood for ``log intensity = b0 + sum_i b_i z_i(u)``.

    Starts from the null-model solution ``b0 = log(n / |W|)``.  ``area``
    defaults to the grid weight total.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    d = Design.build(X, covs, grid)
    return fit_design(d, X.shape[0], grid.total if area is None else area)


def covariate_pvalues(C, covs, grid: QuadratureGrid) -> np.ndarray:
    """Wald p-values for the covariates of a Poisson fit to the centres ``C``."""
    return fit_poisson_intensity(C, covs, grid).wald_pvalues()


class CentrePValues:
    """Repeated p-value fits sharing the quadrature design of one region."""

    def __init__(self, covs, grid: QuadratureGrid):
        self.covs = list(covs)
        d = Design.build(np.empty((0, 2)), self.covs, grid)
        self.nodes = d.nodes
        self.weights = d.weights
        self.area = grid.total

    def __call__(self, C) -> np.ndarray:
        if not self.covs:
            return np.empty(0)
        zx = design_matrix(self.covs, C, True)
        d = Design(zx, self.nodes, self.weights)
        return fit_design(d, zx.shape[0], self.area).wald_pvalues()
