"""Tests for the generalised Thomas process sampler and its summaries."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from conftest import ScriptedRNG
from nspp.errors import ConfigurationError
from nspp.geometry import Window, dilate
from nspp.gtp import (GTPControl, GTPSampler, GTPState, GTPTrace, cluster_term, dispersion_verdict, estgtp,
                      gtp_loglik, summarize_gtp)
from nspp.model import gpd_logpmf, gpd_max_count

UNIT = Window.unit_square()


def make_state(centers, alloc, kappa=20.0, omega=0.08, lam=0.4, theta=1.5):
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    alloc = np.asarray(alloc, dtype=np.int64)
    return GTPState(centers, alloc, np.bincount(alloc, minlength=centers.shape[0]), kappa, omega, lam, theta)


def poisson_cluster_loglik(X, centers, alloc, kappa, omega, theta, area):
    """Independent Poisson-cluster allocation likelihood: theta^n e^-theta per centre."""
    sizes = np.bincount(alloc, minlength=len(centers))
    out = float(np.sum(sizes * math.log(theta) - theta))
    for x, a in zip(X, alloc):
        out += stats.multivariate_normal(mean=centers[a], cov=omega**2 * np.eye(2)).logpdf(x)
    return out + len(centers) * math.log(kappa) - kappa * area


class TestLoglik:
    def test_empty_center_poisson(self):
        st = make_state([[0.5, 0.5]], np.zeros(0, dtype=np.int64), kappa=3.0, lam=0.0, theta=1.7)
        got = gtp_loglik(np.empty((0, 2)), st, 2.0)
        assert got == pytest.approx(-1.7 + math.log(3.0) - 6.0, abs=1e-12)

    def test_hand_computed(self):
        X = np.array([[0.5, 0.5], [0.6, 0.4]])
        c = np.array([0.55, 0.45])
        lam, theta, om, kappa, area = 0.5, 2.0, 0.1, 10.0, 1.5
        st = make_state([c], [0, 0], kappa=kappa, omega=om, lam=lam, theta=theta)
        # log p(2) + log 2! = log theta + log(theta + 2 lam) - theta - 2 lam
        clusters = math.log(2.0) + math.log(3.0) - 2.0 - 1.0
        gauss = sum(-((x - c) ** 2).sum() / (2 * om**2) - math.log(2 * math.pi * om**2) for x in X)
        expected = clusters + gauss + math.log(kappa) - kappa * area
        assert gtp_loglik(X, st, area) == pytest.approx(expected, abs=1e-12)

    def test_cluster_term_is_pmf_times_factorial(self):
        n = np.arange(12)
        for lam, theta in ((0.3, 2.0), (0.0, 1.0), (-0.2, 3.0)):
            expected = gpd_logpmf(n, lam=lam, theta=theta) + np.array([math.lgamma(k + 1) for k in n])
            np.testing.assert_allclose(cluster_term(n, lam, theta), expected, rtol=1e-12, atol=1e-12)

    def test_poisson_reduction(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, (6, 2))
        C = rng.uniform(0, 1, (3, 2))
        for alloc in itertools.islice(itertools.product(range(3), repeat=6), 0, 729, 37):
            alloc = np.array(alloc)
            st = make_state(C, alloc, kappa=7.0, omega=0.15, lam=0.0, theta=2.5)
            expected = poisson_cluster_loglik(X, C, alloc, 7.0, 0.15, 2.5, 1.3)
            assert gtp_loglik(X, st, 1.3) == pytest.approx(expected, abs=1e-9)

    def test_outside_support_minus_inf(self):
        X = np.zeros((4, 2))
        st = make_state([[0.0, 0.0]], [0, 0, 0, 0], lam=-0.5, theta=1.2)  # support 0..2
        assert gtp_loglik(X, st, 1.0) == -math.inf


class TestControl:
    def test_default_scales(self):
        c = GTPControl()
        assert c.skappa == pytest.approx(math.exp(4.5) / 100)
        assert c.log_steps == pytest.approx((0.01, 0.01, 0.01))
        assert c.dilation == pytest.approx(4 * math.exp(-3.0))

    @pytest.mark.parametrize("kw", [dict(dlambda=0.0), dict(l_lambda=0.5, u_lambda=0.4), dict(u_lambda=1.0),
                                    dict(iter=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            GTPControl(**kw)


def sampler_for(X, state, rng=None, **kw):
    kw.setdefault("dilation", 0.1)
    return GTPSampler(X, UNIT, GTPControl(**kw), rng if rng is not None else np.random.default_rng(0),
                      state=state)


class TestParams:
    X = np.array([[0.3, 0.5], [0.45, 0.55], [0.7, 0.2]])

    def test_zero_step_accepted(self):
        s = sampler_for(self.X, make_state([[0.35, 0.5], [0.7, 0.25]], [0, 0, 1]),
                        rng=ScriptedRNG(uniforms=[1.0 - 1e-16] * 4))
        s.rng.standard_normal = lambda *a: 0.0
        assert s.step_params() == (True, True, True, True)

    def test_prior_only_kappa(self):
        ctl = dict(a_kappa=2.0, b_kappa=0.6, skappa=math.exp(2.0 + 0.18) * 1.2)
        s = sampler_for(self.X, make_state([[0.35, 0.5]], [0, 0, 0]), rng=np.random.default_rng(3), **ctl)
        s.prior_only = True
        thin, n = 10, 10_000
        draws = np.empty(n)
        for i in range(n * thin):
            s.step_kappa()
            if i % thin == thin - 1:
                draws[i // thin] = s.state.kappa
        assert stats.kstest(np.log(draws), "norm", args=(2.0, 0.6)).pvalue > 0.01

    def test_lambda_stays_in_bounds(self):
        s = sampler_for(self.X, make_state([[0.35, 0.5]], [0, 0, 0], lam=0.0), dlambda=0.7, l_lambda=-0.3,
                        u_lambda=0.6, rng=np.random.default_rng(4))
        seen = []
        for _ in range(3000):
            s.step_lambda()
            seen.append(s.state.lam)
        seen = np.array(seen)
        assert seen.min() >= -0.3 and seen.max() <= 0.6
        assert seen.min() < -0.2 and seen.max() > 0.5

    @pytest.mark.parametrize("x, expected", [(0.75, 0.45), (-0.4, -0.2), (0.1, 0.1), (2.1, 0.3)])
    def test_reflect(self, x, expected):
        s = sampler_for(self.X, make_state([[0.35, 0.5]], [0, 0, 0]), l_lambda=-0.3, u_lambda=0.6)
        assert s.reflect(x) == pytest.approx(expected)


class TestCenters:
    X = np.array([[0.3, 0.5], [0.45, 0.55]])

    def test_death_all_occupied(self):
        s = sampler_for(self.X, make_state([[0.3, 0.5], [0.45, 0.5]], [0, 1]),
                        rng=ScriptedRNG(ints=[1], uniforms=[0.0]))
        assert s.step_centers() is False
        assert s.state.n_centers == 2

    def test_isolated_empty_center_move(self):
        for seed in range(20):
            s = sampler_for(self.X, make_state([[0.3, 0.5], [0.5, 0.5]], [0, 0]), smove=0.01,
                            rng=ScriptedRNG(ints=[2, 1], uniforms=[1.0 - 1e-16], seed=seed))
            before = s.state.loglik
            assert s.step_centers() is True
            assert s.state.loglik == before
            assert not np.allclose(s.state.centers[1], [0.5, 0.5])

    def test_empty_center_count(self):
        """Frozen parameters and connections: empty centres are Poisson(kappa |W_dil| p(0))."""
        X = np.array([[0.3, 0.5], [0.35, 0.55], [0.7, 0.6]])
        s = sampler_for(X, make_state([[0.32, 0.52], [0.7, 0.6]], [0, 0, 1], kappa=15.0, lam=0.3, theta=1.2),
                        rng=np.random.default_rng(8), smove=0.05)
        rate = 15.0 * s.area * math.exp(cluster_term(0, 0.3, 1.2))
        n = 100_000
        counts = np.zeros(60, dtype=np.int64)
        for _ in range(n):
            s.step_centers()
            counts[int(np.count_nonzero(s.state.sizes == 0))] += 1
        exact = stats.poisson.pmf(np.arange(60), rate)
        assert 0.5 * np.abs(counts / n - exact).sum() < 0.02
        s.check_cache()


class TestConnections:
    X = np.array([[0.3, 0.5], [0.45, 0.55]])
    C = np.array([[0.32, 0.52], [0.5, 0.5]])

    def test_same_center(self):
        s = sampler_for(self.X, make_state(self.C, [0, 1]), rng=ScriptedRNG(ints=[1, 1], uniforms=[0.5]))
        before = (s.state.alloc.copy(), s.state.loglik)
        assert s.step_connections() is True
        np.testing.assert_array_equal(s.state.alloc, before[0])
        assert s.state.loglik == before[1]

    def test_single_center_noop(self):
        s = sampler_for(self.X, make_state(self.C[:1], [0, 0]), rng=np.random.default_rng(0))
        for _ in range(50):
            s.step_connections()
            np.testing.assert_array_equal(s.state.alloc, [0, 0])

    def test_allocation_toy(self):
        """Exact enumeration over the four allocations of two points to two fixed centres."""
        s = sampler_for(self.X, make_state(self.C, [0, 0]), rng=np.random.default_rng(0))
        states = list(itertools.product([0, 1], repeat=2))
        logw = np.array([gtp_loglik(self.X, make_state(self.C, list(a)), s.area) for a in states])
        exact = np.exp(logw - logw.max())
        exact /= exact.sum()
        n = 100_000
        counts = np.zeros(4)
        for _ in range(n):
            s.step_connections()
            a = s.state.alloc
            counts[2 * a[0] + a[1]] += 1
        assert 0.5 * np.abs(counts / n - exact).sum() < 0.01
        s.check_cache()


class TestEstgtp:
    def setup_method(self):
        rng = np.random.default_rng(5)
        parents = rng.uniform(0, 1, (8, 2))
        self.X = np.clip(np.repeat(parents, 4, axis=0) + 0.03 * rng.standard_normal((32, 2)), 0.001, 0.999)

    def test_length(self):
        tr = estgtp(self.X, UNIT, GTPControl(iter=5, dilation=0.1), np.random.default_rng(0))
        assert len(tr) == 5

    def test_deterministic(self, tmp_path):
        ctl = GTPControl(iter=300, dilation=0.1, conn_per_sweep=5)
        estgtp(self.X, UNIT, ctl, np.random.default_rng(1)).write_csv(tmp_path / "a.csv")
        estgtp(self.X, UNIT, ctl, np.random.default_rng(1)).write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == ("iter,kappa,omega,lambda,theta,n_centers,loglik,acc_kappa,acc_omega,acc_lambda,"
                          "acc_theta,acc_centers,acc_conn")

    def test_bookkeeping_and_support(self):
        ctl = GTPControl(dilation=0.1, conn_per_sweep=10, l_lambda=-0.9, dlambda=0.2, a_theta=math.log(2))
        st = make_state(self.X[::4], np.repeat(np.arange(8), 4), lam=-0.2, theta=2.0)
        s = GTPSampler(self.X, UNIT, ctl, np.random.default_rng(2), state=st)
        for it in range(1500):
            s.sweep()
            st = s.state
            assert st.sizes.sum() == 32
            np.testing.assert_array_equal(st.sizes, np.bincount(st.alloc, minlength=st.n_centers))
            if st.lam < 0:
                assert st.sizes.max() <= gpd_max_count(st.lam, st.theta)
            if it % 500 == 0:
                s.check_cache()

    def test_empty_pattern_rejected(self):
        with pytest.raises(ConfigurationError):
            estgtp(np.empty((0, 2)), UNIT, GTPControl(iter=5))


def constant_trace(n, **values):
    base = dict(kappa=1.0, omega=0.1, lam=0.0, theta=2.0)
    base.update(values)
    arrs = [np.full(n, float(base[k])) for k in ("kappa", "omega", "lam", "theta")]
    return GTPTrace(*arrs, np.ones(n, dtype=np.int64), np.zeros(n), *(np.zeros(n, dtype=bool) for _ in range(4)),
                    np.zeros(n), np.zeros(n))


class TestSummarize:
    def test_constant(self):
        out = summarize_gtp(constant_trace(50, kappa=7.5), 10, 3)
        assert out["kappa"] == {"median": 7.5, "q025": 7.5, "q975": 7.5}
        assert out["n_samples"] == 14

    def test_over_dispersed(self):
        tr = constant_trace(100)
        tr.lam[:] = np.linspace(0.15, 0.6, 100)
        assert summarize_gtp(tr, 0, 1)["dispersion"] == "over-dispersed"

    def test_quantiles_sort_oracle(self):
        tr = constant_trace(1000)
        tr.theta[:] = np.random.default_rng(0).gamma(2.0, size=1000)
        got = summarize_gtp(tr, 100, 7)["theta"]
        s = np.sort(tr.theta[100::7])
        n = s.size

        def q(p):
            h = (n - 1) * p
            lo = math.floor(h)
            return s[lo] + (h - lo) * (s[min(lo + 1, n - 1)] - s[lo])

        assert got["q025"] == pytest.approx(q(0.025), abs=1e-14)
        assert got["median"] == pytest.approx(q(0.5), abs=1e-14)
        assert got["q975"] == pytest.approx(q(0.975), abs=1e-14)

    @pytest.mark.parametrize("discard, step", [(50, 1), (60, 1), (0, 0)])
    def test_errors(self, discard, step):
        with pytest.raises(ConfigurationError):
            summarize_gtp(constant_trace(50), discard, step)

    @pytest.mark.parametrize("q, verdict", [((-0.1, 0.2), "Poisson not rejected"), ((0.0, 0.3), "Poisson not rejected"),
                                            ((0.05, 0.3), "over-dispersed"), ((-0.4, -0.1), "under-dispersed")])
    def test_verdict(self, q, verdict):
        assert dispersion_verdict(*q) == verdict
