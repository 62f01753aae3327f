"""Tests for posterior summaries, surfaces, acceptance series, plots and trace files."""

import csv
import json
import math

import numpy as np
import pytest

from conftest import linear_covariate
from nspp.covariates import CovariateSet
from nspp.errors import ConfigurationError, ValidationError
from nspp.geometry import Window, dilate, make_grid
from nspp.mcmc_thomas import ChainTrace
from nspp.model import alpha_at, f_centers
from nspp.reporting import (BETA_HAT_LABEL, PosteriorSummary, acceptance_series, emit_plots, estimated_surfaces,
                            hist_plot, histogram, load_thomas_trace, quantiles, redraw, summarize,
                            surface_plot, thomas_plot_inputs, trace_plot, write_chain_csv)

UNIT = Window.unit_square()


def make_trace(n=200, burn_in=100, freq=5, l=0, m=0, k=0, seed=0, names=None):
    rng = np.random.default_rng(seed)
    rec = np.arange(burn_in + freq, n + 1, freq)
    return ChainTrace(
        mu=rng.normal(2.0, 0.1, (n, l + 1)), nu=rng.normal(-3.0, 0.1, (n, m + 1)), kappa=rng.gamma(20, 1, n),
        n_centers=rng.integers(1, 30, n), loglik=rng.normal(-100, 5, n), acc_bdm=rng.random(n) < 0.3,
        acc_mu=rng.random(n) < 0.4, acc_nu=rng.random(n) < 0.5, move_type=rng.integers(0, 3, n).astype(np.int8),
        record_iters=rec, pvalues=rng.random((rec.size, k)),
        z_beta_names=tuple(names or (f"z{j}" for j in range(k))),
    )


def sort_quantile(x, p):
    """Independent linear-interpolation quantile from the sorted sample."""
    s = sorted(x)
    h = (len(s) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestQuantiles:
    def test_constant(self):
        assert quantiles(np.full(17, 3.25)) == (3.25, 3.25, 3.25)

    def test_one_to_hundred(self):
        s = np.arange(1, 101, dtype=float)
        q025, med, q975 = quantiles(s)
        assert med == 50.5
        assert q025 == pytest.approx(sort_quantile(s, 0.025), abs=1e-12)
        assert q975 == pytest.approx(sort_quantile(s, 0.975), abs=1e-12)
        assert (q025, q975) == pytest.approx((3.475, 97.525))

    def test_random_sort_oracle(self):
        s = np.random.default_rng(3).standard_cauchy(333)
        got = quantiles(s)
        assert got == pytest.approx(tuple(sort_quantile(s, p) for p in (0.025, 0.5, 0.975)), abs=1e-12)

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            quantiles([])


class TestSummarize:
    def test_constant_trace(self):
        tr = make_trace()
        tr.kappa[:] = 12.0
        s = summarize(tr)
        assert s.params["kappa"] == (12.0, 12.0, 12.0)
        assert s.n_samples == 20

    def test_uses_recorded_rows(self):
        tr = make_trace()
        s = summarize(tr)
        rec = tr.kappa[tr.record_iters - 1]
        assert s.params["kappa"][0] == float(np.median(rec))
        assert s.params["alpha"][0] == pytest.approx(float(np.median(np.exp(tr.mu[tr.record_iters - 1, 0]))))
        assert s.params["omega"][1] <= s.params["omega"][0] <= s.params["omega"][2]

    def test_median_pvalue(self):
        tr = make_trace(n=15, burn_in=0, freq=5, k=1, names=["slope"])
        tr.pvalues[:, 0] = [0.2, 0.04, 0.9]
        assert summarize(tr).median_pvalues == {"slope": 0.2}

    def test_empty_after_burn_in(self):
        tr = make_trace(n=10, burn_in=8, freq=5)
        with pytest.raises(ConfigurationError):
            summarize(tr)

    def test_json_keys(self):
        tr = make_trace(k=2)
        s = summarize(tr, beta_hat={"z0": 0.5, "z1": -1.0})
        out = s.to_json()
        assert {"parameter", "median", "q025", "q975"} == set(out["parameters"][0])
        assert [c["covariate"] for c in out["covariates"]] == ["z0", "z1"]
        assert out["beta_hat"]["label"] == BETA_HAT_LABEL
        json.dumps(out)


class TestSurfaces:
    def summary(self, mu, nu, kappa, beta):
        params = {"kappa": (kappa, kappa, kappa)}
        params.update({f"mu_{i}": (v, v, v) for i, v in enumerate(mu)})
        params.update({f"nu_{i}": (v, v, v) for i, v in enumerate(nu)})
        return PosteriorSummary(params, beta_hat=beta)

    def test_homogeneous_constant(self):
        wd = dilate(UNIT, 0.1, 0.02)
        s = self.summary([2.0], [-3.0], 25.0, {})
        surf = estimated_surfaces(s, CovariateSet(), wd)
        for name, expected in (("intensity", 25.0), ("alpha", math.exp(2.0)), ("omega", math.exp(-3.0))):
            v = surf[name].values
            inside = ~np.isnan(v)
            assert inside.sum() == wd.mask.sum()
            np.testing.assert_allclose(v[inside], expected, rtol=1e-14)

    def test_alpha_definitional_and_intensity_integral(self):
        zb = linear_covariate("zb")
        za = linear_covariate("za", slope_axis=1)
        covs = CovariateSet(z_beta=(zb,), z_alpha=(za,))
        wd = dilate(UNIT, 0.1, 0.01)
        s = self.summary([1.5, 0.7], [-3.0], 30.0, {"zb": 1.1})
        surf = estimated_surfaces(s, covs, wd)
        a = surf["alpha"]
        rng = np.random.default_rng(0)
        for _ in range(25):
            r, c = int(rng.integers(a.nrows)), int(rng.integers(a.ncols))
            if np.isnan(a.values[r, c]):
                continue
            centre = np.array([[a.origin[0] + (c + 0.5) * a.cell, a.origin[1] + (r + 0.5) * a.cell]])
            assert a.values[r, c] == pytest.approx(float(alpha_at([1.5, 0.7], (za,), centre)[0]), rel=1e-14)
        # intensity over the cells of W integrates to kappa * int_W f
        lam = surf["intensity"]
        xs = lam.origin[0] + (np.arange(lam.ncols) + 0.5) * lam.cell
        ys = lam.origin[1] + (np.arange(lam.nrows) + 0.5) * lam.cell
        in_w = ((xs >= 0) & (xs <= 1))[None, :] & ((ys >= 0) & (ys <= 1))[:, None]
        integral = float(np.sum(lam.values[in_w])) * lam.cell**2
        g = make_grid(UNIT, 0.001)
        expected = 30.0 * float(g.weights @ f_centers(np.array([1.1]), (zb,), g.points))
        assert integral == pytest.approx(expected, rel=2e-3)


class TestAcceptanceSeries:
    def test_all_accepted(self):
        np.testing.assert_array_equal(acceptance_series(np.ones(50, dtype=bool), 10), 1.0)

    def test_alternating(self):
        s = acceptance_series(np.arange(20) % 2, 2)
        assert s[0] == 0.0
        np.testing.assert_array_equal(s[1:], 0.5)

    @pytest.mark.parametrize("window", [1, 7, 1000])
    def test_brute_force(self, window):
        f = np.random.default_rng(window).random(2500) < 0.37
        s = acceptance_series(f, window)
        brute = np.array([np.mean(f[max(0, i + 1 - window):i + 1]) for i in range(f.size)])
        np.testing.assert_array_equal(s, brute)

    def test_bad_window(self):
        with pytest.raises(ConfigurationError):
            acceptance_series([1, 0], 0)


class TestPlots:
    def test_empty_parameter_set(self, tmp_path):
        assert emit_plots(tmp_path / "p", {}) == []
        assert list((tmp_path / "p").iterdir()) == []

    def test_histogram_counts(self):
        s = np.random.default_rng(1).normal(size=777)
        counts, edges = histogram(s)
        assert counts.sum() == 777 and edges.size == counts.size + 1
        assert histogram(np.full(5, 2.0))[0].tolist() == [5]

    def test_complex_model_manifest(self, tmp_path):
        zb, za, zo = linear_covariate("zb"), linear_covariate("za", slope_axis=1), linear_covariate("zo")
        covs = CovariateSet(z_beta=(zb,), z_alpha=(za,), z_omega=(zo,))
        tr = make_trace(l=1, m=1, k=1, names=["zb"])
        s = summarize(tr, beta_hat={"zb": 0.4})
        surf = estimated_surfaces(s, covs, dilate(UNIT, 0.1, 0.02))
        files = emit_plots(tmp_path, **thomas_plot_inputs(tr), summary=s, surfaces=surf)
        names = {f.name for f in files}
        assert {"surface_intensity.svg", "surface_alpha.svg", "surface_omega.svg"} <= names
        for p in ("kappa", "mu_0", "mu_1", "nu_0", "nu_1"):
            assert {f"trace_{p}.svg", f"hist_{p}.svg"} <= names
        assert {"hist_pvalue_zb.svg", "trace_loglik.svg", "trace_n_centers.svg", "accept_bdm.svg"} <= names
        for f in files:
            assert f.exists() and f.stat().st_size > 0
        svgs = [f for f in files if f.suffix == ".svg"]
        assert all(f.with_suffix(".csv") in files for f in svgs)
        _, rows = read_rows(tmp_path / "hist_kappa.csv")
        assert sum(int(r[2]) for r in rows) == tr.record_iters.size

    def test_csv_bit_equal_to_trace(self, tmp_path):
        tr = make_trace()
        s = summarize(tr)
        emit_plots(tmp_path, **thomas_plot_inputs(tr), summary=s, window=50)
        header, rows = read_rows(tmp_path / "trace_kappa.csv")
        assert header == ["iter", "value", "median", "q025", "q975"]
        np.testing.assert_array_equal([float(r[1]) for r in rows], tr.kappa)
        assert float(rows[0][2]) == s.params["kappa"][0]
        _, rows = read_rows(tmp_path / "accept_mu.csv")
        np.testing.assert_array_equal([float(r[1]) for r in rows], acceptance_series(tr.acc_mu, 50))

    def test_redraw_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        vals = rng.normal(size=300)
        wd = dilate(UNIT, 0.1, 0.05)
        s = PosteriorSummary({"kappa": (9.0, 9.0, 9.0), "mu_0": (1.0, 1.0, 1.0), "nu_0": (-2.0, -2.0, -2.0)})
        surf = estimated_surfaces(s, CovariateSet(), wd)["alpha"]
        produced = (trace_plot(tmp_path, "t", np.arange(1, 301), vals, (-1.9, 0.1, 2.0), "t")
                    + trace_plot(tmp_path, "u", np.arange(1, 301), vals, None, "u")
                    + hist_plot(tmp_path, "h", vals, "h") + surface_plot(tmp_path, "s", surf))
        for svg in (p for p in produced if p.suffix == ".svg"):
            again = redraw(svg.with_suffix(".csv"), tmp_path / f"re_{svg.name}", svg.stem)
            assert again.read_bytes() == svg.read_bytes(), svg.name

    def test_deterministic_svg(self, tmp_path):
        vals = np.linspace(0, 1, 50)
        a = trace_plot(tmp_path, "a", np.arange(50), vals, None, "x")[0]
        b = trace_plot(tmp_path, "b", np.arange(50), vals, None, "x")[0]
        assert a.read_bytes() == b.read_bytes()


class TestTraceFiles:
    def test_round_trip(self, tmp_path):
        tr = make_trace(l=1, k=2, names=["elev", "grad"])
        tr.write_csv(tmp_path / "trace.csv")
        write_chain_csv(tr, tmp_path / "chain.csv")
        back = load_thomas_trace(tmp_path / "trace.csv", tmp_path / "chain.csv")
        for name in ("mu", "nu", "kappa", "n_centers", "loglik", "acc_bdm", "acc_mu", "acc_nu", "move_type",
                     "record_iters", "pvalues"):
            np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))
        assert back.z_beta_names == ("elev", "grad")
        assert summarize(back).to_json() == summarize(tr).to_json()

    def test_truncated_row(self, tmp_path):
        tr = make_trace()
        tr.write_csv(tmp_path / "trace.csv")
        write_chain_csv(tr, tmp_path / "chain.csv")
        text = (tmp_path / "chain.csv").read_text().splitlines()
        text[30] = text[30][:12]
        (tmp_path / "chain.csv").write_text("\n".join(text) + "\n")
        with pytest.raises(ValidationError, match="malformed row at line 31"):
            load_thomas_trace(tmp_path / "trace.csv", tmp_path / "chain.csv")
