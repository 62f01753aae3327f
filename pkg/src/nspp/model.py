"""Model components of the inhomogeneous Thomas and generalised Thomas processes.

Centre intensity ``kappa * f(beta, u)`` with ``f = exp(beta . z(u))`` (no
intercept); cluster size ``alpha(mu, c) = exp(mu . (1, z_alpha(c)))`` and
spread ``omega(nu, c) = exp(nu . (1, z_omega(c)))``.  Offspring are
displaced by an isotropic Gaussian with standard deviation ``omega``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr

from .covariates import CovariateSet, design_matrix
from .errors import ConfigurationError, NumericError
from .geometry import DilatedWindow, QuadratureGrid, Window, dilate, default_cell, sample_uniform

# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class ThomasParams:
    kappa: float
    beta: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("beta", "mu", "nu"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.isfinite(v).all():
                raise ConfigurationError(f"{name} must be finite, got {v}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise ConfigurationError(f"kappa must be > 0, got {self.kappa}")
        if self.mu.size < 1 or self.nu.size < 1:
            raise ConfigurationError("mu and nu must contain at least the intercept")

    def check_dims(self, covs: CovariateSet) -> None:
        for name, vec, lst, extra in (
            ("beta", self.beta, covs.z_beta, 0),
            ("mu", self.mu, covs.z_alpha, 1),
            ("nu", self.nu, covs.z_omega, 1),
        ):
            if vec.size != len(lst) + extra:
                raise ConfigurationError(f"{name} has length {vec.size}, expected {len(lst) + extra}")


@dataclass(frozen=True)
class GPDParams:
    lam: float
    theta: float

    def __post_init__(self):
        if not (-1.0 <= self.lam < 1.0):
            raise ConfigurationError(f"GPD lambda must lie in [-1, 1), got {self.lam}")
        if not self.theta > 0:
            raise ConfigurationError(f"GPD theta must be > 0, got {self.theta}")


@dataclass(frozen=True)
class GTPParams:
    kappa: float
    omega: float
    gpd: GPDParams

    def __post_init__(self):
        if not self.kappa > 0 or not self.omega > 0:
            raise ConfigurationError("kappa and omega must be > 0")


@dataclass(frozen=True, eq=False)
class SimulatedPattern:
    """Observed points with ground truth.

    ``cluster_sizes`` counts every offspring of each parent, including those
    that fell outside the window and were discarded.
    """

    points: np.ndarray
    parents: np.ndarray
    parent_index: np.ndarray
    cluster_sizes: np.ndarray

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------- log-linear parts


def _loglinear(coeffs, covs, u, intercept):
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    pts = np.asarray(u, dtype=float)
    single = pts.ndim == 1
    z = design_matrix(covs, pts.reshape(-1, 2), intercept)
    if z.shape[1] != coeffs.size:
        raise ValueError(f"expected {z.shape[1]} coefficients, got {coeffs.size}")
    out = np.exp(z @ coeffs) if coeffs.size else np.ones(z.shape[0])
    return float(out[0]) if single else out


def f_centers(beta, covs, u):
    """Centre-intensity modulation ``exp(beta . z(u))``; 1 when there are no covariates."""
    return _loglinear(beta, covs, u, False)


def alpha_at(mu, covs, c):
    return _loglinear(mu, covs, c, True)


def omega_at(nu, covs, c):
    return _loglinear(nu, covs, c, True)


# ----------------------------------------------------------- Gaussian kernel


def gauss_kernel(d, omega):
    """Isotropic bivariate normal density at displacement ``d``."""
    d = np.asarray(d, dtype=float)
    r2 = np.sum(d * d, axis=-1)
    om2 = np.asarray(omega, dtype=float) ** 2
    return np.exp(-r2 / (2.0 * om2)) / (2.0 * np.pi * om2)


def _interval_prob(a, b):
    # P(a < Z < b); uses the upper tail when both limits are positive to avoid cancellation
    return np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def gauss_rect_mass(c, omega, rect):
    """Probability that ``N(c, omega^2 I)`` falls in ``rect = (xl, xr, yb, yt)``.

    Vectorised over centres ``c`` of shape ``(n, 2)`` and matching ``omega``.
    """
    c = np.asarray(c, dtype=float)
    xl, xr, yb, yt = rect
    om = np.asarray(omega, dtype=float)
    px = _interval_prob((xl - c[..., 0]) / om, (xr - c[..., 0]) / om)
    py = _interval_prob((yb - c[..., 1]) / om, (yt - c[..., 1]) / om)
    out = px * py
    return float(out) if np.ndim(out) == 0 else out


_SQRT2 = math.sqrt(2.0)


def _interval_prob_scalar(a: float, b: float) -> float:
    if a > 0:
        return 0.5 * (math.erfc(a / _SQRT2) - math.erfc(b / _SQRT2))
    if b < 0:
        return 0.5 * (math.erfc(-b / _SQRT2) - math.erfc(-a / _SQRT2))
    return 0.5 * (math.erf(b / _SQRT2) - math.erf(a / _SQRT2))


def window_mass_point(x: float, y: float, omega: float, pieces) -> float:
    """Scalar version of :func:`window_mass` for one centre; ``pieces`` as float tuples."""
    total = 0.0
    for xl, xr, yb, yt in pieces:
        total += (_interval_prob_scalar((xl - x) / omega, (xr - x) / omega)
                  * _interval_prob_scalar((yb - y) / omega, (yt - y) / omega))
    return total


def window_mass(c, omega, w: Window):
    """Gaussian mass of the window (union counted once) for each centre."""
    c = np.asarray(c, dtype=float)
    total = 0.0
    for rect in w.pieces:
        total = total + gauss_rect_mass(c, omega, rect)
    return total


# ----------------------------------------------------- generalised Poisson


def gpd_max_count(lam: float, theta: float) -> int | None:
    """Largest ``n`` with ``theta + lam * n > 0`` when ``lam < 0``; ``None`` otherwise."""
    if lam >= 0:
        return None
    m = int(np.ceil(theta / -lam)) - 1
    while theta + lam * (m + 1) > 0:
        m += 1
    while m > 0 and theta + lam * m <= 0:
        m -= 1
    return m


def _gpd_lograw(n, lam, theta):
    n = np.asarray(n, dtype=float)
    base = theta + lam * n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(theta) + (n - 1.0) * np.log(base) - theta - lam * n - gammaln(n + 1.0)
    return np.where((base > 0) & (n >= 0), out, -np.inf)


@lru_cache(maxsize=4096)
def gpd_log_norm(lam: float, theta: float) -> float:
    """Log of the raw pmf mass on the truncated support (0 for ``lam >= 0``)."""
    m = gpd_max_count(lam, theta)
    if m is None:
        return 0.0
    return float(logsumexp(_gpd_lograw(np.arange(m + 1), lam, theta)))


def gpd_logpmf(n, p: GPDParams | None = None, *, lam=None, theta=None):
    """Log pmf of the generalised Poisson distribution.

    For ``lam < 0`` the support is ``0..gpd_max_count`` and the pmf is
    renormalised over it.
    """
    if p is not None:
        lam, theta = p.lam, p.theta
    out = _gpd_lograw(n, lam, theta) - gpd_log_norm(float(lam), float(theta))
    return float(out) if np.ndim(out) == 0 else out


def gpd_pmf(n, p: GPDParams):
    out = np.exp(gpd_logpmf(n, p))
    return float(out) if np.ndim(out) == 0 else out


def gpd_mean(p: GPDParams) -> float:
    return p.theta / (1.0 - p.lam)


def gpd_var(p: GPDParams) -> float:
    return p.theta / (1.0 - p.lam) ** 3


_CDF_TAIL = 1e-12
_CDF_MAX_LEN = 50_000_000


@lru_cache(maxsize=256)
def _gpd_cdf_table(lam: float, theta: float) -> np.ndarray:
    m = gpd_max_count(lam, theta)
    if m is not None:
        pmf = np.exp(gpd_logpmf(np.arange(m + 1), lam=lam, theta=theta))
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        return cdf
    chunks = []
    acc = 0.0
    start = 0
    size = max(64, int(4 * (gpd_mean(GPDParams(lam, theta)) + 10 * np.sqrt(gpd_var(GPDParams(lam, theta))))))
    while True:
        n = np.arange(start, start + size)
        c = acc + np.cumsum(np.exp(_gpd_lograw(n, lam, theta)))
        chunks.append(c)
        acc = float(c[-1])
        start += size
        if acc >= 1.0 - _CDF_TAIL or start >= _CDF_MAX_LEN:
            break
        size *= 2
    return np.concatenate(chunks)


def gpd_sample(p: GPDParams, rng: np.random.Generator, size=None):
    """Draw by inversion of the cumulative pmf."""
    cdf = _gpd_cdf_table(float(p.lam), float(p.theta))
    u = rng.random(size)
    k = np.searchsorted(cdf, u, side="right")
    k = np.minimum(k, cdf.size - 1)
    return int(k) if size is None else k


# ------------------------------------------------------------------- kappa


def kappa_from_count(em, mu, beta, z_alpha, z_beta, grid: QuadratureGrid) -> float:
    """Centre intensity matching an expected observed count ``em``.

    Uses ``em ~= kappa * integral_W alpha(mu, u) f(beta, u) du`` on ``grid``.
    """
    integrand = alpha_at(mu, z_alpha, grid.points) * f_centers(beta, z_beta, grid.points)
    integral = float(grid.weights @ np.atleast_1d(integrand))
    if not (np.isfinite(integral) and integral > 0):
        raise NumericError(f"cannot recover kappa: integral of alpha*f over W is {integral}")
    return float(em) / integral


# -------------------------------------------------------------- simulators


def _log_f_upper_bound(beta, covs) -> float:
    bound = 0.0
    for b, c in zip(beta, covs):
        v = c.values[(c.values != c.nodata) & np.isfinite(c.values)]
        bound += float(np.max(b * v)) if v.size else 0.0
    return bound


def _scatter_offspring(parents, sizes, sd, w: Window, rng):
    idx = np.repeat(np.arange(parents.shape[0]), sizes)
    sd_rep = np.repeat(np.broadcast_to(sd, (parents.shape[0],)), sizes)
    pts = parents[idx] + rng.standard_normal((idx.size, 2)) * sd_rep[:, None]
    keep = w.contains(pts) if pts.shape[0] else np.zeros(0, dtype=bool)
    return pts[keep].reshape(-1, 2), idx[keep]


def simulate_thomas(params: ThomasParams, covs: CovariateSet, w: Window, w_dil: DilatedWindow,
                    rng: np.random.Generator) -> SimulatedPattern:
    """Two-stage simulation: thinned Poisson parents on ``w_dil``, Poisson clusters."""
    covs = covs or CovariateSet()
    params.check_dims(covs)
    log_bound = _log_f_upper_bound(params.beta, covs.z_beta)
    lam_max = params.kappa * np.exp(log_bound)
    if not np.isfinite(lam_max):
        raise NumericError(f"dominating centre intensity is not finite ({lam_max})")
    n_prop = rng.poisson(lam_max * w_dil.area)
    cand = sample_uniform(w_dil, n_prop, rng)
    if len(covs.z_beta):
        accept_p = f_centers(params.beta, covs.z_beta, cand) / np.exp(log_bound)
        parents = cand[rng.random(n_prop) < accept_p]
    else:
        parents = cand
    if parents.shape[0]:
        a = alpha_at(params.mu, covs.z_alpha, parents)
        om = omega_at(params.nu, covs.z_omega, parents)
    else:
        a = om = np.empty(0)
    sizes = rng.poisson(a) if parents.shape[0] else np.zeros(0, dtype=np.int64)
    pts, idx = _scatter_offspring(parents, sizes, om, w, rng)
    return SimulatedPattern(pts, parents, idx, np.asarray(sizes, dtype=np.int64))


def rgtp_window(omega: float, w: Window, cell: float | None = None) -> DilatedWindow:
    """Parent region for :func:`rgtp`: ``w`` dilated by ``4 * omega``."""
    radius = 4.0 * omega
    if cell is None:
        cell = default_cell(w, radius)
    return dilate(w, radius, cell)


def rgtp(params: GTPParams, w: Window, rng: np.random.Generator, w_dil: DilatedWindow | None = None
         ) -> SimulatedPattern:
    """Homogeneous generalised Thomas process restricted to ``w``."""
    if w_dil is None:
        w_dil = rgtp_window(params.omega, w)
    n_par = rng.poisson(params.kappa * w_dil.area)
    parents = sample_uniform(w_dil, n_par, rng)
    sizes = gpd_sample(params.gpd, rng, size=n_par).astype(np.int64)
    pts, idx = _scatter_offspring(parents, sizes, params.omega, w, rng)
    return SimulatedPattern(pts, parents, idx, sizes)
