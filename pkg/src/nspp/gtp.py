"""MCMC for the homogeneous generalised Thomas process.

Cluster sizes follow the generalised Poisson distribution, so the
likelihood is written with an explicit allocation of every observed point
to one latent centre.  A sweep updates the parameters (kappa, omega,
lambda, theta), the centres (birth / death of empty centres, moves) and the
point-to-centre connections.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChainError, ConfigurationError, NSPPError
from .geometry import DilatedWindow, Window, dilate, default_cell, sample_uniform
from .model import gpd_log_norm, gpd_max_count

log = logging.getLogger(__name__)

PARAMS = ("kappa", "omega", "lambda", "theta")


@dataclass(frozen=True)
class GTPControl:
    """Proposal scales, priors and run length.

    ``skappa``, ``somega`` and ``stheta`` are absolute step sizes; they are
    applied on the log scale after division by the prior mean of the
    corresponding lognormal prior.
    """

    a_kappa: float = 4.0
    b_kappa: float = 1.0
    a_omega: float = -3.0
    b_omega: float = 1.0
    l_lambda: float = -1.0
    u_lambda: float = 0.99
    a_theta: float = 4.0
    b_theta: float = 1.0
    skappa: float | None = None
    somega: float | None = None
    dlambda: float = 0.01
    stheta: float | None = None
    smove: float = 0.1
    iter: int = 1000
    seed: int = 0
    discard: int = 100
    step: int = 10
    conn_per_sweep: int = 1
    centers_per_sweep: int = 1
    dilation: float | None = None
    check_every: int = 1000

    def __post_init__(self):
        for s, a, b in (("skappa", self.a_kappa, self.b_kappa), ("somega", self.a_omega, self.b_omega),
                        ("stheta", self.a_theta, self.b_theta)):
            if getattr(self, s) is None:
                object.__setattr__(self, s, lognormal_mean(a, b) / 100.0)
        if self.dilation is None:
            object.__setattr__(self, "dilation", 4.0 * math.exp(self.a_omega))
        scales = (self.skappa, self.somega, self.dlambda, self.stheta, self.smove, self.b_kappa,
                  self.b_omega, self.b_theta, self.dilation)
        if not all(s > 0 for s in scales):
            raise ConfigurationError("proposal scales, prior SDs and dilation must be > 0")
        if not (self.l_lambda < self.u_lambda < 1.0 and self.l_lambda >= -1.0):
            raise ConfigurationError("need -1 <= l_lambda < u_lambda < 1")
        if self.iter < 1 or self.conn_per_sweep < 1 or self.centers_per_sweep < 1:
            raise ConfigurationError("iter and per-sweep multipliers must be >= 1")

    @property
    def log_steps(self) -> tuple[float, float, float]:
        """Relative (log-scale) random-walk SDs for kappa, omega, theta."""
        return (self.skappa / lognormal_mean(self.a_kappa, self.b_kappa),
                self.somega / lognormal_mean(self.a_omega, self.b_omega),
                self.stheta / lognormal_mean(self.a_theta, self.b_theta))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def lognormal_mean(a: float, b: float) -> float:
    return math.exp(a + 0.5 * b * b)


def lognormal_logpdf(x: float, a: float, b: float) -> float:
    lx = math.log(x)
    return -lx - math.log(b) - 0.5 * math.log(2 * math.pi) - 0.5 * ((lx - a) / b) ** 2


def cluster_term(n, lam: float, theta: float):
    """``log p(n | lam, theta) + log n!`` for the GPD (renormalised for ``lam < 0``).

    This is the per-cluster factor of the allocation likelihood: the ``n!``
    accounts for the exchangeable offspring of one centre.
    """
    n = np.asarray(n, dtype=float)
    base = theta + lam * n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = math.log(theta) + (n - 1.0) * np.log(base) - theta - lam * n
    out = np.where(base > 0, out, -np.inf) - gpd_log_norm(float(lam), float(theta))
    return float(out) if out.ndim == 0 else out


def _cluster_term_scalar(n: int, lam: float, theta: float, lognorm: float) -> float:
    base = theta + lam * n
    if base <= 0:
        return -math.inf
    return math.log(theta) + (n - 1) * math.log(base) - theta - lam * n - lognorm


@dataclass(eq=False)
class GTPState:
    centers: np.ndarray
    alloc: np.ndarray
    sizes: np.ndarray
    kappa: float
    omega: float
    lam: float
    theta: float
    sq_sum: float = 0.0
    loglik: float = 0.0

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    def dump(self) -> str:
        return json.dumps({
            "centers": self.centers.tolist(), "alloc": self.alloc.tolist(), "kappa": self.kappa,
            "omega": self.omega, "lambda": self.lam, "theta": self.theta, "loglik": self.loglik,
        })


def gtp_loglik(X, state: GTPState, area_dil: float) -> float:
    """Allocation log-likelihood, computed from scratch.

    ``sum_j [log p(n_j) + log n_j!] + sum_x log k(x - c_a(x), omega)
    + n_c log kappa - kappa |W_dil|``.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    sizes = np.bincount(state.alloc, minlength=state.n_centers)
    clusters = float(np.sum(cluster_term(sizes, state.lam, state.theta)))
    d = X - state.centers[state.alloc]
    om2 = state.omega**2
    gauss = float(np.sum(-np.sum(d * d, axis=1) / (2 * om2) - math.log(2 * math.pi * om2)))
    return clusters + gauss + state.n_centers * math.log(state.kappa) - state.kappa * area_dil


@dataclass(eq=False)
class GTPTrace:
    kappa: np.ndarray
    omega: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    n_centers: np.ndarray
    loglik: np.ndarray
    acc_kappa: np.ndarray
    acc_omega: np.ndarray
    acc_lambda: np.ndarray
    acc_theta: np.ndarray
    acc_centers: np.ndarray
    acc_conn: np.ndarray
    control: GTPControl | None = None
    extra: dict = field(default_factory=dict)

    HEADER = ("iter", "kappa", "omega", "lambda", "theta", "n_centers", "loglik", "acc_kappa", "acc_omega",
              "acc_lambda", "acc_theta", "acc_centers", "acc_conn")

    def __len__(self):
        return self.kappa.size

    def param(self, name: str) -> np.ndarray:
        return {"kappa": self.kappa, "omega": self.omega, "lambda": self.lam, "theta": self.theta}[name]

    def row(self, i: int) -> list:
        return [i + 1, repr(float(self.kappa[i])), repr(float(self.omega[i])), repr(float(self.lam[i])),
                repr(float(self.theta[i])), int(self.n_centers[i]), repr(float(self.loglik[i])),
                int(self.acc_kappa[i]), int(self.acc_omega[i]), int(self.acc_lambda[i]), int(self.acc_theta[i]),
                repr(float(self.acc_centers[i])), repr(float(self.acc_conn[i]))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.HEADER)
            for i in range(len(self)):
                wr.writerow(self.row(i))


class GTPSampler:
    def __init__(self, X, w: Window, control: GTPControl, rng: np.random.Generator,
                 w_dil: DilatedWindow | None = None, state: GTPState | None = None, prior_only: bool = False):
        self.X = np.asarray(X, dtype=float).reshape(-1, 2)
        self.w = w
        self.control = control
        self.rng = rng
        if w_dil is None:
            w_dil = dilate(w, control.dilation, default_cell(w, control.dilation))
        self.w_dil = w_dil
        self.area = w_dil.area
        self.log_area = math.log(self.area)
        self.prior_only = prior_only
        self.rk, self.ro, self.rt = control.log_steps
        self.state = state if state is not None else self.initial_state()
        self.refresh()

    # -- setup
    def initial_state(self) -> GTPState:
        """Centres at ``ceil(sqrt(n))`` random data points, nearest-centre allocation."""
        n = self.X.shape[0]
        if n == 0:
            raise ConfigurationError("generalised Thomas fit needs a non-empty pattern")
        k = max(1, math.ceil(math.sqrt(n)))
        centers = self.X[np.sort(self.rng.choice(n, size=k, replace=False))].copy()
        d2 = ((self.X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        alloc = np.argmin(d2, axis=1).astype(np.int64)
        rms = math.sqrt(max(float(d2[np.arange(n), alloc].mean()) / 2.0, 1e-12))
        omega = min(max(rms, 1e-3 * self.w.shorter_side), self.w.shorter_side)
        lam = min(max(0.0, self.control.l_lambda), self.control.u_lambda)
        theta = max(n / k * (1.0 - lam), 1e-3)
        kappa = k / self.area
        return GTPState(centers, alloc, np.bincount(alloc, minlength=k), kappa, omega, lam, theta)

    def refresh(self) -> None:
        """Recompute cached sizes, squared distances and log-likelihood."""
        st = self.state
        st.sizes = np.bincount(st.alloc, minlength=st.n_centers)
        d = self.X - st.centers[st.alloc]
        st.sq_sum = float(np.sum(d * d))
        st.loglik = gtp_loglik(self.X, st, self.area)

    # -- pieces of the log-likelihood
    def _gauss(self, sq_sum: float, omega: float) -> float:
        om2 = omega * omega
        return -sq_sum / (2 * om2) - self.X.shape[0] * math.log(2 * math.pi * om2)

    def _clusters(self, sizes, lam, theta) -> float:
        return float(np.sum(cluster_term(sizes, lam, theta)))

    def _accept(self, log_ratio: float) -> bool:
        u = self.rng.random()
        if log_ratio >= 0:
            return True
        if log_ratio == -math.inf or math.isnan(log_ratio):
            return False
        return math.log(u) < log_ratio

    def log_prior(self, st: GTPState) -> float:
        c = self.control
        return (lognormal_logpdf(st.kappa, c.a_kappa, c.b_kappa) + lognormal_logpdf(st.omega, c.a_omega, c.b_omega)
                + lognormal_logpdf(st.theta, c.a_theta, c.b_theta) - math.log(c.u_lambda - c.l_lambda))

    # -- parameter updates
    def reflect(self, x: float) -> float:
        lo, hi = self.control.l_lambda, self.control.u_lambda
        width = hi - lo
        # fold onto [lo, hi] with period 2 * width
        y = (x - lo) % (2 * width)
        return lo + (y if y <= width else 2 * width - y)

    def step_kappa(self) -> bool:
        st, c = self.state, self.control
        new = st.kappa * math.exp(self.rk * self.rng.standard_normal())
        dprior = lognormal_logpdf(new, c.a_kappa, c.b_kappa) - lognormal_logpdf(st.kappa, c.a_kappa, c.b_kappa)
        jac = math.log(new / st.kappa)
        dll = 0.0 if self.prior_only else st.n_centers * math.log(new / st.kappa) - (new - st.kappa) * self.area
        ok = self._accept(dll + dprior + jac)
        if ok:
            st.kappa = new
            st.loglik = self._loglik_cached()
        return ok

    def step_omega(self) -> bool:
        st, c = self.state, self.control
        new = st.omega * math.exp(self.ro * self.rng.standard_normal())
        dprior = lognormal_logpdf(new, c.a_omega, c.b_omega) - lognormal_logpdf(st.omega, c.a_omega, c.b_omega)
        jac = math.log(new / st.omega)
        dll = 0.0 if self.prior_only else self._gauss(st.sq_sum, new) - self._gauss(st.sq_sum, st.omega)
        ok = self._accept(dll + dprior + jac)
        if ok:
            st.omega = new
            st.loglik = self._loglik_cached()
        return ok

    def step_theta(self) -> bool:
        st, c = self.state, self.control
        new = st.theta * math.exp(self.rt * self.rng.standard_normal())
        dprior = lognormal_logpdf(new, c.a_theta, c.b_theta) - lognormal_logpdf(st.theta, c.a_theta, c.b_theta)
        jac = math.log(new / st.theta)
        dll = 0.0 if self.prior_only else (self._clusters(st.sizes, st.lam, new)
                                           - self._clusters(st.sizes, st.lam, st.theta))
        ok = self._accept(dll + dprior + jac)
        if ok:
            st.theta = new
            st.loglik = self._loglik_cached()
        return ok

    def step_lambda(self) -> bool:
        st = self.state
        new = self.reflect(st.lam + self.control.dlambda * self.rng.standard_normal())
        dll = 0.0 if self.prior_only else (self._clusters(st.sizes, new, st.theta)
                                           - self._clusters(st.sizes, st.lam, st.theta))
        ok = self._accept(dll)
        if ok:
            st.lam = new
            st.loglik = self._loglik_cached()
        return ok

    def step_params(self) -> tuple[bool, bool, bool, bool]:
        return self.step_kappa(), self.step_omega(), self.step_lambda(), self.step_theta()

    def _loglik_cached(self) -> float:
        st = self.state
        return (self._clusters(st.sizes, st.lam, st.theta) + self._gauss(st.sq_sum, st.omega)
                + st.n_centers * math.log(st.kappa) - st.kappa * self.area)

    # -- centres
    def step_centers(self) -> bool:
        st = self.state
        kind = int(self.rng.integers(3))
        lognorm = gpd_log_norm(float(st.lam), float(st.theta))
        empty_term = math.log(st.kappa) + _cluster_term_scalar(0, st.lam, st.theta, lognorm)
        if kind == 0:
            c = sample_uniform(self.w_dil, 1, self.rng)
            n_empty = int(np.count_nonzero(st.sizes == 0))
            ok = self._accept(empty_term + self.log_area - math.log(n_empty + 1))
            if ok:
                st.centers = np.vstack([st.centers, c])
                st.sizes = np.r_[st.sizes, 0]
                st.loglik += empty_term
            return ok
        if kind == 1:
            empty = np.flatnonzero(st.sizes == 0)
            if empty.size == 0:
                self.rng.random()
                return False
            j = int(empty[self.rng.integers(empty.size)])
            if st.n_centers == 1:
                self.rng.random()
                return False
            ok = self._accept(-empty_term + math.log(empty.size) - self.log_area)
            if ok:
                keep = np.arange(st.n_centers) != j
                st.centers = st.centers[keep]
                st.sizes = st.sizes[keep]
                st.alloc = np.where(st.alloc > j, st.alloc - 1, st.alloc)
                st.loglik -= empty_term
            return ok
        j = int(self.rng.integers(st.n_centers))
        new = st.centers[j] + self.control.smove * self.rng.standard_normal(2)
        if not self.w_dil.contains_xy(float(new[0]), float(new[1])):
            self.rng.random()
            return False
        members = self.X[st.alloc == j]
        old_sq = float(np.sum((members - st.centers[j]) ** 2))
        new_sq = float(np.sum((members - new) ** 2))
        dll = -(new_sq - old_sq) / (2 * st.omega**2)
        ok = self._accept(dll)
        if ok:
            st.centers = st.centers.copy()
            st.centers[j] = new
            st.sq_sum += new_sq - old_sq
            st.loglik += dll
        return ok

    # -- connections
    def step_connections(self) -> bool:
        st = self.state
        n = self.X.shape[0]
        i = int(self.rng.integers(n))
        k = int(self.rng.integers(st.n_centers))
        j = int(st.alloc[i])
        if k == j:
            self.rng.random()
            return True
        lam, theta = st.lam, st.theta
        lognorm = gpd_log_norm(float(lam), float(theta))
        nj, nk = int(st.sizes[j]), int(st.sizes[k])
        dcl = (_cluster_term_scalar(nj - 1, lam, theta, lognorm) + _cluster_term_scalar(nk + 1, lam, theta, lognorm)
               - _cluster_term_scalar(nj, lam, theta, lognorm) - _cluster_term_scalar(nk, lam, theta, lognorm))
        x0, x1 = self.X[i]
        cj0, cj1 = st.centers[j]
        ck0, ck1 = st.centers[k]
        dj = (x0 - cj0) ** 2 + (x1 - cj1) ** 2
        dk = (x0 - ck0) ** 2 + (x1 - ck1) ** 2
        dll = dcl - (dk - dj) / (2 * st.omega**2)
        ok = self._accept(dll)
        if ok:
            st.alloc[i] = k
            st.sizes[j] -= 1
            st.sizes[k] += 1
            st.sq_sum += dk - dj
            st.loglik += dll
        return ok

    def sweep(self):
        a_k, a_o, a_l, a_t = self.step_params()
        c = self.control
        acc_c = sum(self.step_centers() for _ in range(c.centers_per_sweep)) / c.centers_per_sweep
        acc_n = sum(self.step_connections() for _ in range(c.conn_per_sweep)) / c.conn_per_sweep
        return a_k, a_o, a_l, a_t, acc_c, acc_n

    def check_cache(self, tol: float = 1e-6) -> None:
        st = self.state
        cached = st.loglik
        self.refresh()
        if not abs(cached - st.loglik) <= tol * max(1.0, abs(st.loglik)):
            raise NSPPError(f"cached GTP log-likelihood {cached!r} drifted from {st.loglik!r}")


def estgtp(X, w: Window, control: GTPControl, rng: np.random.Generator | None = None,
           w_dil: DilatedWindow | None = None) -> GTPTrace:
    """Run ``control.iter`` sweeps and return the full trace."""
    if rng is None:
        rng = np.random.default_rng(control.seed)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if X.shape[0] == 0:
        raise ConfigurationError("estgtp needs a non-empty point pattern")
    sampler = GTPSampler(X, w, control, rng, w_dil)
    n = control.iter
    tr = GTPTrace(*(np.empty(n) for _ in range(4)), np.empty(n, dtype=np.int64), np.empty(n),
                  *(np.zeros(n, dtype=bool) for _ in range(4)), np.zeros(n), np.zeros(n), control=control,
                  extra={"area_dil": sampler.area})
    for it in range(n):
        try:
            a_k, a_o, a_l, a_t, a_c, a_n = sampler.sweep()
            if control.check_every and (it + 1) % control.check_every == 0:
                sampler.check_cache()
        except (NSPPError, FloatingPointError, ValueError) as exc:
            raise ChainError(f"{type(exc).__name__}: {exc}", it + 1, sampler.state.dump()) from exc
        st = sampler.state
        tr.kappa[it], tr.omega[it], tr.lam[it], tr.theta[it] = st.kappa, st.omega, st.lam, st.theta
        tr.n_centers[it] = st.n_centers
        tr.loglik[it] = st.loglik
        tr.acc_kappa[it], tr.acc_omega[it], tr.acc_lambda[it], tr.acc_theta[it] = a_k, a_o, a_l, a_t
        tr.acc_centers[it], tr.acc_conn[it] = a_c, a_n
    return tr


def dispersion_verdict(q025: float, q975: float) -> str:
    if q025 <= 0.0 <= q975:
        return "Poisson not rejected"
    return "over-dispersed" if q025 > 0 else "under-dispersed"


def summarize_gtp(trace: GTPTrace, discard: int, step: int) -> dict:
    """Posterior medians and 95% intervals from the thinned post-discard samples."""
    if step < 1:
        raise ConfigurationError("step must be >= 1")
    if discard >= len(trace):
        raise ConfigurationError(f"discard ({discard}) must be smaller than the trace length ({len(trace)})")
    from .reporting import quantiles

    out = {}
    for name in PARAMS:
        s = trace.param(name)[discard::step]
        if s.size == 0:
            raise ConfigurationError("no samples left after discarding and thinning")
        q = quantiles(s)
        out[name] = {"median": q[1], "q025": q[0], "q975": q[2]}
    out["n_samples"] = int(trace.kappa[discard::step].size)
    out["dispersion"] = dispersion_verdict(out["lambda"]["q025"], out["lambda"]["q975"])
    return out
