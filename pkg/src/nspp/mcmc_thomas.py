"""Second-step MCMC for the inhomogeneous Thomas process.

The latent centres are updated by birth-death-move, the cluster-size
coefficients ``mu`` and spread coefficients ``nu`` by Gaussian random-walk
Metropolis-Hastings.  ``kappa`` is not sampled: it is recomputed from
``mu`` so that the expected number of observed points matches the data.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .covariates import CovariateSet, design_matrix
from .errors import ChainError, ConfigurationError, NSPPError, NumericError
from .firstorder import CentrePValues, PoissonFit
from .geometry import DilatedWindow, QuadratureGrid, Window, make_grid, sample_uniform
from .model import f_centers, gauss_kernel, window_mass, window_mass_point

log = logging.getLogger(__name__)

BIRTH, DEATH, MOVE = 0, 1, 2
MOVE_NAMES = ("birth", "death", "move")
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Control:
    """Run length, priors and proposal scales.

    Priors are normal: ``mu_0 ~ N(prior_alpha_mean, prior_alpha_sd)``,
    ``mu_i ~ N(0, prior_alphavec_sd[i-1])`` for ``i >= 1``, and likewise
    for ``nu`` with the omega hyperparameters (all on the log scale).
    """

    n_step: int
    burn_in: int
    sampling_freq: int
    prior_alpha_mean: float
    prior_alpha_sd: float
    prior_omega_mean: float
    prior_omega_sd: float
    prior_alphavec_sd: tuple = ()
    prior_omegavec_sd: tuple = ()
    proposal_mu_sd: tuple | None = None
    proposal_nu_sd: tuple | None = None
    move_sd: float | None = None
    seed: int = 0
    check_every: int = 1000

    def __post_init__(self):
        for name in ("prior_alphavec_sd", "prior_omegavec_sd"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if self.proposal_mu_sd is None:
            object.__setattr__(self, "proposal_mu_sd",
                               tuple(0.1 * s for s in (self.prior_alpha_sd, *self.prior_alphavec_sd)))
        if self.proposal_nu_sd is None:
            object.__setattr__(self, "proposal_nu_sd",
                               tuple(0.1 * s for s in (self.prior_omega_sd, *self.prior_omegavec_sd)))
        if self.move_sd is None:
            object.__setattr__(self, "move_sd", math.exp(self.prior_omega_mean))
        for name in ("proposal_mu_sd", "proposal_nu_sd"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if not (0 <= self.burn_in < self.n_step):
            raise ConfigurationError(f"need 0 <= BurnIn < NStep, got {self.burn_in}, {self.n_step}")
        if self.sampling_freq < 1:
            raise ConfigurationError("SamplingFreq must be >= 1")
        sds = (self.prior_alpha_sd, self.prior_omega_sd, *self.prior_alphavec_sd, *self.prior_omegavec_sd,
               *self.proposal_mu_sd, *self.proposal_nu_sd, self.move_sd)
        if not all(s > 0 for s in sds):
            raise ConfigurationError("all standard deviations must be > 0")
        if len(self.proposal_mu_sd) != 1 + len(self.prior_alphavec_sd):
            raise ConfigurationError("proposal_mu_sd length must equal 1 + len(Prior_alphavec_SD)")
        if len(self.proposal_nu_sd) != 1 + len(self.prior_omegavec_sd):
            raise ConfigurationError("proposal_nu_sd length must equal 1 + len(Prior_omegavec_SD)")

    @classmethod
    def with_defaults(cls, n_points: int, window: Window, n_alpha: int = 0, n_omega: int = 0, **given):
        """Fill unspecified priors with weakly informative, scale-aware values."""
        given = {k: v for k, v in given.items() if v is not None}
        given.setdefault("prior_alpha_mean", math.log(math.sqrt(max(n_points, 1))))
        given.setdefault("prior_alpha_sd", 2.0)
        given.setdefault("prior_omega_mean", math.log(0.05 * window.shorter_side))
        given.setdefault("prior_omega_sd", 5.0)
        given.setdefault("prior_alphavec_sd", (2.0,) * n_alpha)
        given.setdefault("prior_omegavec_sd", (2.0,) * n_omega)
        return cls(**given)

    @property
    def record_iterations(self) -> np.ndarray:
        """1-based iterations kept for summaries: burn_in + q, burn_in + 2q, ..."""
        return np.arange(self.burn_in + self.sampling_freq, self.n_step + 1, self.sampling_freq)

    def prior_parameters(self) -> dict:
        return {
            "Prior_alpha_mean": self.prior_alpha_mean,
            "Prior_alpha_SD": self.prior_alpha_sd,
            "Prior_omega_mean": self.prior_omega_mean,
            "Prior_omega_SD": self.prior_omega_sd,
            "Prior_alphavec_SD": list(self.prior_alphavec_sd),
            "Prior_omegavec_SD": list(self.prior_omegavec_sd),
            "Proposal_mu_SD": list(self.proposal_mu_sd),
            "Proposal_nu_SD": list(self.proposal_nu_sd),
            "Move_SD": self.move_sd,
        }


def normal_logpdf(x, mean, sd) -> float:
    x = np.asarray(x, dtype=float)
    z = (x - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI))


# ------------------------------------------------------ from-scratch terms


def cox_loglik(X, centers, mu, nu, covs: CovariateSet, w: Window) -> float:
    """Poisson log-density of ``X`` given the centres (up to the ``|W|`` constant).

    ``sum_x log lambda(x) - sum_c alpha(c) * P(c + omega(c) Z in W)`` with
    ``lambda(u) = sum_c alpha(c) k(u - c, omega(c))``.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0] == 0:
        raise ValueError("cox_loglik needs at least one centre")
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    a = np.exp(design_matrix(covs.z_alpha, centers) @ np.asarray(mu, dtype=float))
    om = np.exp(design_matrix(covs.z_omega, centers) @ np.asarray(nu, dtype=float))
    lam = np.zeros(X.shape[0])
    for j in range(centers.shape[0]):
        lam += a[j] * gauss_kernel(X - centers[j], om[j])
    with np.errstate(divide="ignore"):
        data_term = float(np.sum(np.log(lam)))
    return data_term - float(np.sum(a * window_mass(centers, om, w)))


def center_logprior(centers, beta_hat, kappa, covs: CovariateSet, grid_dil: QuadratureGrid) -> float:
    """``sum_c log(kappa f(c)) - kappa * integral_{W_dil} f``; the ``+|W_dil|`` constant is dropped."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    integral = float(grid_dil.weights @ np.atleast_1d(f_centers(beta_hat, covs.z_beta, grid_dil.points)))
    logf = np.log(np.atleast_1d(f_centers(beta_hat, covs.z_beta, centers))) if centers.shape[0] else np.zeros(0)
    return float(centers.shape[0] * math.log(kappa) + logf.sum() - kappa * integral)


def mask_grid(w_dil: DilatedWindow) -> QuadratureGrid:
    """Quadrature nodes at the mask cell centres, weights summing to ``|W_dil|``."""
    pts = w_dil.cell_centers()
    return QuadratureGrid(pts, np.full(pts.shape[0], w_dil.cell**2), "W_dil")


# ------------------------------------------------------------------ problem


@dataclass(eq=False)
class ThomasProblem:
    """Data, geometry and fixed first-step quantities for one fit."""

    X: np.ndarray
    covs: CovariateSet
    w: Window
    w_dil: DilatedWindow
    beta_hat: np.ndarray
    grid_w: QuadratureGrid
    grid_dil: QuadratureGrid = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 2)
        self.beta_hat = np.atleast_1d(np.asarray(self.beta_hat, dtype=float))
        if self.beta_hat.size != len(self.covs.z_beta):
            raise ConfigurationError(
                f"beta_hat has {self.beta_hat.size} entries for {len(self.covs.z_beta)} z_beta covariates"
            )
        if self.grid_dil is None:
            self.grid_dil = mask_grid(self.w_dil)
        self.n = self.X.shape[0]
        # kappa integral: collapse nodes with identical (z_alpha design, f)
        za = design_matrix(self.covs.z_alpha, self.grid_w.points)
        fw = np.atleast_1d(f_centers(self.beta_hat, self.covs.z_beta, self.grid_w.points))
        key = np.column_stack([za, fw])
        key, inv = np.unique(key, axis=0, return_inverse=True)
        self._kz = key[:, :-1]
        self._kw = np.bincount(inv.ravel(), weights=self.grid_w.weights * fw, minlength=key.shape[0])
        self._pieces = [tuple(float(v) for v in r) for r in self.w.pieces]
        self._plain = not (self.covs.z_alpha or self.covs.z_omega or self.covs.z_beta)
        self.f_integral_dil = float(
            self.grid_dil.weights @ np.atleast_1d(f_centers(self.beta_hat, self.covs.z_beta, self.grid_dil.points))
        )

    @classmethod
    def from_fit(cls, X, covs, w, w_dil, fit: PoissonFit, grid_w=None):
        return cls(X, covs, w, w_dil, fit.slopes, grid_w if grid_w is not None else make_grid(w))

    def kappa(self, mu) -> float:
        integral = float(self._kw @ np.exp(self._kz @ np.asarray(mu, dtype=float)))
        if not (np.isfinite(integral) and integral > 0):
            raise NumericError(f"integral of alpha*f over W is {integral}")
        return self.n / integral

    def center_features(self, c: np.ndarray):
        """Design rows for alpha and omega and ``log f`` at centres ``c`` (``(k, 2)``)."""
        if self._plain:
            ones = np.ones((c.shape[0], 1))
            return ones, ones.copy(), np.zeros(c.shape[0])
        za = design_matrix(self.covs.z_alpha, c)
        zo = design_matrix(self.covs.z_omega, c)
        if self.covs.z_beta:
            logf = design_matrix(self.covs.z_beta, c, False) @ self.beta_hat
        else:
            logf = np.zeros(c.shape[0])
        return za, zo, logf

    def sqdist(self, c: np.ndarray) -> np.ndarray:
        dx = self.X[:, 0][None, :] - c[:, 0][:, None]
        dy = self.X[:, 1][None, :] - c[:, 1][:, None]
        return dx * dx + dy * dy

    @staticmethod
    def kernel_from_sqdist(d2: np.ndarray, omega: np.ndarray) -> np.ndarray:
        inv = 0.5 / (omega * omega)
        return np.exp(d2 * -inv[:, None]) * (inv / math.pi)[:, None]

    def kernel_rows(self, c: np.ndarray, omega: np.ndarray) -> np.ndarray:
        return self.kernel_from_sqdist(self.sqdist(c), omega)

    def masses(self, c: np.ndarray, omega: np.ndarray) -> np.ndarray:
        if c.shape[0] == 1:
            return np.array([window_mass_point(float(c[0, 0]), float(c[0, 1]), float(omega[0]), self._pieces)])
        return np.atleast_1d(window_mass(c, omega, self.w))


# -------------------------------------------------------------------- state


def _loglik_from(alpha, kern, mass) -> float:
    lam = alpha @ kern
    if lam.size and not (lam > 0).all():
        return -math.inf
    return float(np.sum(np.log(lam))) - float(alpha @ mass)


@dataclass(eq=False)
class ChainState:
    centers: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    kappa: float
    za: np.ndarray
    zo: np.ndarray
    logf: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    d2: np.ndarray
    kern: np.ndarray
    mass: np.ndarray
    loglik: float
    logprior_c: float

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def build(cls, problem: ThomasProblem, centers, mu, nu) -> "ChainState":
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        mu = np.asarray(mu, dtype=float).copy()
        nu = np.asarray(nu, dtype=float).copy()
        za, zo, logf = problem.center_features(centers)
        alpha = np.exp(za @ mu)
        omega = np.exp(zo @ nu)
        d2 = problem.sqdist(centers)
        kern = problem.kernel_from_sqdist(d2, omega)
        mass = problem.masses(centers, omega)
        kappa = problem.kappa(mu)
        st = cls(centers, mu, nu, kappa, za, zo, logf, alpha, omega, d2, kern, mass,
                 _loglik_from(alpha, kern, mass), 0.0)
        st.logprior_c = st.center_prior(problem, kappa)
        return st

    def center_prior(self, problem: ThomasProblem, kappa: float) -> float:
        return self.n_centers * math.log(kappa) + float(self.logf.sum()) - kappa * problem.f_integral_dil

    def dump(self) -> str:
        return json.dumps({
            "centers": self.centers.tolist(),
            "mu": self.mu.tolist(),
            "nu": self.nu.tolist(),
            "kappa": self.kappa,
            "loglik": self.loglik,
        })


# -------------------------------------------------------------------- trace


@dataclass(eq=False)
class ChainTrace:
    """Full-length per-iteration diagnostics plus the thinned records."""

    mu: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray
    n_centers: np.ndarray
    loglik: np.ndarray
    acc_bdm: np.ndarray
    acc_mu: np.ndarray
    acc_nu: np.ndarray
    move_type: np.ndarray
    record_iters: np.ndarray
    pvalues: np.ndarray
    z_beta_names: tuple = ()
    control: Control | None = None
    prior_parameters: dict = field(default_factory=dict)

    @property
    def n_iter(self) -> int:
        return self.kappa.size

    @property
    def record_index(self) -> np.ndarray:
        return self.record_iters - 1

    def move_tallies(self) -> dict:
        out = {}
        for code, name in enumerate(MOVE_NAMES):
            sel = self.move_type == code
            out[name] = {"proposed": int(sel.sum()), "accepted": int(self.acc_bdm[sel].sum())}
        return out

    def csv_header(self) -> list[str]:
        return (["iter", "kappa"] + [f"mu_{i}" for i in range(self.mu.shape[1])]
                + [f"nu_{i}" for i in range(self.nu.shape[1])] + ["n_centers", "loglik"]
                + [f"pval_{name}" for name in self.pvalue_names] + ["acc_bdm", "acc_mu", "acc_nu"])

    @property
    def pvalue_names(self) -> tuple:
        k = self.pvalues.shape[1]
        return tuple(self.z_beta_names) if len(self.z_beta_names) == k else tuple(str(i + 1) for i in range(k))

    def csv_row(self, r: int) -> list:
        i = int(self.record_iters[r]) - 1
        return _format_row(int(self.record_iters[r]), self.kappa[i], self.mu[i], self.nu[i], self.n_centers[i],
                           self.loglik[i], self.pvalues[r], self.acc_bdm[i], self.acc_mu[i], self.acc_nu[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.csv_header())
            for r in range(self.record_iters.size):
                wr.writerow(self.csv_row(r))


def _format_row(it, kappa, mu, nu, nc, ll, pv, ab, am, an) -> list:
    return ([it, repr(float(kappa))] + [repr(float(v)) for v in mu] + [repr(float(v)) for v in nu]
            + [int(nc), repr(float(ll))] + [repr(float(v)) for v in pv] + [int(ab), int(am), int(an)])


# ------------------------------------------------------------------ sampler


class ThomasSampler:
    """Birth-death-move / Metropolis-Hastings sampler for one chain.

    ``prior_only`` drops the data likelihood and the centre-process density
    from the ``mu``/``nu`` updates (test harness for the prior sampling check).
    """

    def __init__(self, problem: ThomasProblem, control: Control, rng: np.random.Generator,
                 state: ChainState | None = None, prior_only: bool = False):
        self.p = problem
        self.control = control
        self.rng = rng
        self.prior_only = prior_only
        l = len(problem.covs.z_alpha)
        m = len(problem.covs.z_omega)
        if len(control.prior_alphavec_sd) != l or len(control.prior_omegavec_sd) != m:
            raise ConfigurationError(
                f"prior SD vectors have lengths {len(control.prior_alphavec_sd)}, "
                f"{len(control.prior_omegavec_sd)}; expected {l} (z_alpha) and {m} (z_omega)"
            )
        self.mu_mean = np.r_[control.prior_alpha_mean, np.zeros(l)]
        self.mu_sd = np.r_[control.prior_alpha_sd, control.prior_alphavec_sd]
        self.nu_mean = np.r_[control.prior_omega_mean, np.zeros(m)]
        self.nu_sd = np.r_[control.prior_omega_sd, control.prior_omegavec_sd]
        self.prop_mu = np.asarray(control.proposal_mu_sd)
        self.prop_nu = np.asarray(control.proposal_nu_sd)
        self.log_area_dil = math.log(problem.w_dil.area)
        self.state = state if state is not None else self.initial_state()

    def initial_state(self) -> ChainState:
        n = self.p.n
        a0 = math.exp(self.control.prior_alpha_mean)
        k = min(n, max(1, math.ceil(n / a0))) if n else 1
        if n:
            idx = self.rng.choice(n, size=k, replace=False)
            centers = self.p.X[np.sort(idx)]
        else:
            centers = sample_uniform(self.p.w_dil, 1, self.rng)
        return ChainState.build(self.p, centers, self.mu_mean.copy(), self.nu_mean.copy())

    # -- log-density pieces
    def log_prior_mu(self, mu) -> float:
        return normal_logpdf(mu, self.mu_mean, self.mu_sd)

    def log_prior_nu(self, nu) -> float:
        return normal_logpdf(nu, self.nu_mean, self.nu_sd)

    def log_target(self, st: ChainState) -> float:
        """Unnormalised log posterior of a state (for consistency checks)."""
        lp = self.log_prior_mu(st.mu) + self.log_prior_nu(st.nu)
        if self.prior_only:
            return lp
        return st.loglik + st.logprior_c + lp

    def _accept(self, log_ratio: float) -> bool:
        u = self.rng.random()
        if log_ratio >= 0:
            return True
        if log_ratio == -math.inf or math.isnan(log_ratio):
            return False
        return math.log(u) < log_ratio

    # -- centre updates
    def propose_birth(self, c: np.ndarray) -> tuple[float, dict]:
        """Log Hastings ratio for adding the centre ``c`` (shape ``(1, 2)``) and the new cache."""
        st, p = self.state, self.p
        za, zo, logf = p.center_features(c)
        a = np.exp(za @ st.mu)
        om = np.exp(zo @ st.nu)
        drow = p.sqdist(c)
        krow = p.kernel_from_sqdist(drow, om)
        mrow = p.masses(c, om)
        alpha = np.concatenate([st.alpha, a])
        kern = np.concatenate([st.kern, krow])
        mass = np.concatenate([st.mass, mrow])
        ll = _loglik_from(alpha, kern, mass)
        dprior = math.log(st.kappa) + float(logf[0])
        ratio = ll - st.loglik + dprior + self.log_area_dil - math.log(st.n_centers + 1)
        return ratio, dict(c=c, za=za, zo=zo, logf=logf, alpha=alpha, om=om, drow=drow, kern=kern, mass=mass,
                           ll=ll, dprior=dprior)

    def _apply_birth(self, u: dict) -> None:
        st = self.state
        st.centers = np.concatenate([st.centers, u["c"]])
        st.za = np.concatenate([st.za, u["za"]])
        st.zo = np.concatenate([st.zo, u["zo"]])
        st.logf = np.concatenate([st.logf, u["logf"]])
        st.alpha, st.omega = u["alpha"], np.concatenate([st.omega, u["om"]])
        st.d2 = np.concatenate([st.d2, u["drow"]])
        st.kern, st.mass, st.loglik = u["kern"], u["mass"], u["ll"]
        st.logprior_c += u["dprior"]

    def propose_death(self, i: int) -> tuple[float, dict]:
        """Log Hastings ratio for deleting centre ``i`` (requires at least two centres)."""
        st = self.state
        nc = st.n_centers
        keep = np.arange(nc) != i
        alpha = st.alpha[keep]
        kern = st.kern[keep]
        mass = st.mass[keep]
        ll = _loglik_from(alpha, kern, mass)
        dprior = -(math.log(st.kappa) + float(st.logf[i]))
        ratio = ll - st.loglik + dprior + math.log(nc) - self.log_area_dil
        return ratio, dict(keep=keep, alpha=alpha, kern=kern, mass=mass, ll=ll, dprior=dprior)

    def _apply_death(self, u: dict) -> None:
        st = self.state
        keep = u["keep"]
        st.centers = st.centers[keep]
        st.za, st.zo, st.logf = st.za[keep], st.zo[keep], st.logf[keep]
        st.alpha, st.omega, st.d2 = u["alpha"], st.omega[keep], st.d2[keep]
        st.kern, st.mass, st.loglik = u["kern"], u["mass"], u["ll"]
        st.logprior_c += u["dprior"]

    def propose_move(self, i: int, c: np.ndarray) -> tuple[float, dict]:
        """Log ratio for moving centre ``i`` to ``c`` (shape ``(1, 2)``, inside ``W_dil``)."""
        st, p = self.state, self.p
        za, zo, logf = p.center_features(c)
        a = float(np.exp(za @ st.mu)[0])
        om = np.exp(zo @ st.nu)
        drow = p.sqdist(c)
        krow = p.kernel_from_sqdist(drow, om)[0]
        mrow = float(p.masses(c, om)[0])
        alpha = st.alpha.copy()
        alpha[i] = a
        kern = st.kern.copy()
        kern[i] = krow
        mass = st.mass.copy()
        mass[i] = mrow
        ll = _loglik_from(alpha, kern, mass)
        dprior = float(logf[0] - st.logf[i])
        return ll - st.loglik + dprior, dict(i=i, c=c, za=za, zo=zo, logf=logf, om=om, drow=drow, alpha=alpha,
                                             kern=kern, mass=mass, ll=ll, dprior=dprior)

    def _apply_move(self, u: dict) -> None:
        st = self.state
        i = u["i"]
        for name, row in (("centers", u["c"][0]), ("za", u["za"][0]), ("zo", u["zo"][0]), ("logf", u["logf"][0]),
                          ("omega", u["om"][0]), ("d2", u["drow"][0])):
            arr = getattr(st, name).copy()
            arr[i] = row
            setattr(st, name, arr)
        st.alpha, st.kern, st.mass, st.loglik = u["alpha"], u["kern"], u["mass"], u["ll"]
        st.logprior_c += u["dprior"]

    def step_birth_death_move(self) -> tuple[int, bool]:
        """One birth, death or move proposal (probability 1/3 each); returns ``(kind, accepted)``."""
        st = self.state
        p = self.p
        kind = int(self.rng.integers(3))
        if kind == BIRTH:
            ratio, upd = self.propose_birth(sample_uniform(p.w_dil, 1, self.rng))
            ok = self._accept(ratio)
            if ok:
                self._apply_birth(upd)
            return kind, ok
        if kind == DEATH:
            nc = st.n_centers
            i = int(self.rng.integers(nc))
            if nc == 1:
                self.rng.random()  # keep the stream aligned with an MH coin
                return kind, False
            ratio, upd = self.propose_death(i)
            ok = self._accept(ratio)
            if ok:
                self._apply_death(upd)
            return kind, ok
        i = int(self.rng.integers(st.n_centers))
        c = st.centers[i:i + 1] + self.control.move_sd * self.rng.standard_normal((1, 2))
        if not p.w_dil.contains_xy(float(c[0, 0]), float(c[0, 1])):
            self.rng.random()
            return kind, False
        ratio, upd = self.propose_move(i, c)
        ok = self._accept(ratio)
        if ok:
            self._apply_move(upd)
        return kind, ok

    # -- parameter updates
    def propose_mu(self, mu_new) -> tuple[float, dict]:
        """Log acceptance ratio for replacing ``mu`` and the resulting cache values."""
        st = self.state
        mu_new = np.asarray(mu_new, dtype=float)
        dprior = self.log_prior_mu(mu_new) - self.log_prior_mu(st.mu)
        if self.prior_only:
            return dprior, {"mu": mu_new}
        alpha = np.exp(st.za @ mu_new)
        kappa = self.p.kappa(mu_new)
        ll = _loglik_from(alpha, st.kern, st.mass)
        lpc = st.center_prior(self.p, kappa)
        ratio = ll - st.loglik + lpc - st.logprior_c + dprior
        return ratio, {"mu": mu_new, "alpha": alpha, "kappa": kappa, "loglik": ll, "logprior_c": lpc}

    def step_update_mu(self) -> bool:
        st = self.state
        mu_new = st.mu + self.prop_mu * self.rng.standard_normal(st.mu.size)
        ratio, upd = self.propose_mu(mu_new)
        ok = self._accept(ratio)
        if ok:
            self._apply_mu(upd)
        return ok

    def _apply_mu(self, upd: dict) -> None:
        st = self.state
        st.mu = upd["mu"]
        if "alpha" in upd:
            st.alpha, st.kappa, st.loglik, st.logprior_c = upd["alpha"], upd["kappa"], upd["loglik"], upd["logprior_c"]
        else:
            rebuilt = ChainState.build(self.p, st.centers, st.mu, st.nu)
            self.state = rebuilt

    def propose_nu(self, nu_new) -> tuple[float, dict]:
        st = self.state
        nu_new = np.asarray(nu_new, dtype=float)
        dprior = self.log_prior_nu(nu_new) - self.log_prior_nu(st.nu)
        if self.prior_only:
            return dprior, {"nu": nu_new}
        omega = np.exp(st.zo @ nu_new)
        kern = self.p.kernel_from_sqdist(st.d2, omega)
        mass = self.p.masses(st.centers, omega)
        ll = _loglik_from(st.alpha, kern, mass)
        return ll - st.loglik + dprior, {"nu": nu_new, "omega": omega, "kern": kern, "mass": mass, "loglik": ll}

    def step_update_nu(self) -> bool:
        st = self.state
        nu_new = st.nu + self.prop_nu * self.rng.standard_normal(st.nu.size)
        ratio, upd = self.propose_nu(nu_new)
        ok = self._accept(ratio)
        if ok:
            st.nu = upd["nu"]
            if "omega" in upd:
                st.omega, st.kern, st.mass, st.loglik = upd["omega"], upd["kern"], upd["mass"], upd["loglik"]
            else:
                self.state = ChainState.build(self.p, st.centers, st.mu, st.nu)
        return ok

    def sweep(self) -> tuple[int, bool, bool, bool]:
        kind, a_c = self.step_birth_death_move()
        a_mu = self.step_update_mu()
        a_nu = self.step_update_nu()
        return kind, a_c, a_mu, a_nu

    def check_cache(self, tol: float = 1e-6) -> None:
        st = self.state
        fresh = cox_loglik(self.p.X, st.centers, st.mu, st.nu, self.p.covs, self.p.w)
        if not (abs(fresh - st.loglik) <= tol * max(1.0, abs(fresh)) or fresh == st.loglik):
            raise NumericError(f"cached log-likelihood {st.loglik!r} drifted from {fresh!r}")
        # refresh to the from-scratch value so rounding cannot accumulate
        st.loglik = fresh


def run_chain(problem: ThomasProblem, control: Control, rng: np.random.Generator | None = None,
              trace_path=None, progress: bool = False) -> ChainTrace:
    """Run ``control.n_step`` sweeps (birth-death-move, mu, nu) and record the trace.

    Centre p-values for the ``z_beta`` covariates are computed at the
    recorded iterations only.  When ``trace_path`` is given, recorded rows
    are appended to that CSV as they are produced.
    """
    if rng is None:
        rng = np.random.default_rng(control.seed)
    sampler = ThomasSampler(problem, control, rng)
    n = control.n_step
    l1 = sampler.state.mu.size
    m1 = sampler.state.nu.size
    k = len(problem.covs.z_beta)
    tr = ChainTrace(
        mu=np.empty((n, l1)), nu=np.empty((n, m1)), kappa=np.empty(n), n_centers=np.empty(n, dtype=np.int64),
        loglik=np.empty(n), acc_bdm=np.zeros(n, dtype=bool), acc_mu=np.zeros(n, dtype=bool),
        acc_nu=np.zeros(n, dtype=bool), move_type=np.empty(n, dtype=np.int8),
        record_iters=control.record_iterations, pvalues=np.empty((control.record_iterations.size, k)),
        z_beta_names=tuple(c.name for c in problem.covs.z_beta), control=control,
        prior_parameters=control.prior_parameters(),
    )
    pv = CentrePValues(problem.covs.z_beta, problem.grid_dil)
    fh = writer = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(tr.csv_header())
    next_rec = 0
    recs = tr.record_iters
    try:
        for it in range(n):
            try:
                kind, a_c, a_mu, a_nu = sampler.sweep()
                if control.check_every and (it + 1) % control.check_every == 0:
                    sampler.check_cache()
                st = sampler.state
                tr.mu[it] = st.mu
                tr.nu[it] = st.nu
                tr.kappa[it] = st.kappa
                tr.n_centers[it] = st.n_centers
                tr.loglik[it] = st.loglik
                tr.acc_bdm[it], tr.acc_mu[it], tr.acc_nu[it] = a_c, a_mu, a_nu
                tr.move_type[it] = kind
                if next_rec < recs.size and recs[next_rec] == it + 1:
                    tr.pvalues[next_rec] = pv(st.centers) if k else np.empty(0)
                    if writer is not None:
                        writer.writerow(tr.csv_row(next_rec))
                    next_rec += 1
            except (NSPPError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise ChainError(f"{type(exc).__name__}: {exc}", it + 1, sampler.state.dump()) from exc
            if progress and (it + 1) % 1000 == 0:
                log.info("iteration %d / %d: %d centres, loglik %.3f", it + 1, n,
                         sampler.state.n_centers, sampler.state.loglik)
    finally:
        if fh is not None:
            fh.close()
    return tr


def fit_thomas(X, covs: CovariateSet, w: Window, w_dil: DilatedWindow, control: Control, fit: PoissonFit,
               rng=None, grid_w: QuadratureGrid | None = None, trace_path=None) -> ChainTrace:
    problem = ThomasProblem.from_fit(X, covs, w, w_dil, fit, grid_w)
    return run_chain(problem, control, rng, trace_path)


def with_seed(control: Control, seed: int) -> Control:
    return replace(control, seed=seed)
