"""Shared helpers for the test suite."""

import numpy as np
import pytest

from nspp.covariates import RasterCovariate
from nspp.geometry import Window, sample_uniform

FIXTURES = __import__("pathlib").Path(__file__).resolve().parents[1] / "src" / "nspp" / "fixtures"


def linear_covariate(name="x", cell=0.01, lo=-0.5, hi=1.5, slope_axis=0):
    """Raster ``z(x, y) = x`` (or ``y``) covering ``[lo, hi]^2``."""
    n = round((hi - lo) / cell)
    f = (lambda x, y: x) if slope_axis == 0 else (lambda x, y: y)
    return RasterCovariate.from_function(name, f, (lo, lo), cell, n, n)


def simulate_poisson(rng, coeffs, covs, w: Window):
    """Inhomogeneous Poisson pattern with intensity exp(b0 + sum b_i z_i) by thinning."""
    coeffs = np.asarray(coeffs, dtype=float)
    pts = sample_uniform(w, 200_000, rng)
    eta = coeffs[0] + sum(b * c.values_at(pts) for b, c in zip(coeffs[1:], covs))
    lam_max = float(np.max(eta))
    # bound from the rasters themselves
    bound = coeffs[0] + sum(max(b * c.values.max(), b * c.values.min()) for b, c in zip(coeffs[1:], covs))
    lam_max = max(lam_max, bound)
    n = rng.poisson(np.exp(lam_max) * w.area)
    cand = sample_uniform(w, n, rng)
    eta = coeffs[0] + sum(b * c.values_at(cand) for b, c in zip(coeffs[1:], covs)) if n else np.empty(0)
    return cand[rng.random(n) < np.exp(eta - lam_max)] if n else cand


class ScriptedRNG:
    """Generator stand-in: scripted ``integers`` and ``random`` draws, real normals and uniforms otherwise."""

    def __init__(self, ints=(), uniforms=(), seed=0):
        self.ints = list(ints)
        self.uniforms = list(uniforms)
        self._rng = np.random.default_rng(seed)

    def integers(self, *args, **kwargs):
        return self.ints.pop(0) if self.ints else self._rng.integers(*args, **kwargs)

    def random(self, *args, **kwargs):
        if self.uniforms and not args and not kwargs:
            return self.uniforms.pop(0)
        return self._rng.random(*args, **kwargs)

    def __getattr__(self, name):
        return getattr(self._rng, name)


ACCEPTANCE_RESULTS: list[tuple[int, str]] = []


@pytest.fixture
def acceptance():
    """``record(number, passed, detail)``: log one acceptance-criterion verdict for the final report."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_RESULTS.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


def toy_center_integral(wd, w, alpha, omega, sub=4):
    """``int_{W_dil} exp(-alpha * P(c + omega Z in W)) dc`` on ``sub x sub`` sub-cells of every mask cell."""
    from nspp.model import window_mass

    h = wd.cell / sub
    off = (np.arange(sub) + 0.5) * h - wd.cell / 2
    ox, oy = np.meshgrid(off, off)
    pts = (wd.cell_centers()[:, None, :] + np.stack([ox.ravel(), oy.ravel()], 1)[None]).reshape(-1, 2)
    return float(np.exp(-alpha * window_mass(pts, omega, w)).sum() * h * h)


@pytest.fixture
def unit():
    return Window.unit_square()
