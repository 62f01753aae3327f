"""Posterior summaries, diagnostic series, estimated surfaces and SVG plots.

Every plot is written together with a CSV holding exactly the plotted
numbers, so figures can be regenerated or checked without the trace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariates import RasterCovariate, design_matrix
from .errors import ConfigurationError, NSPPError
from .geometry import DilatedWindow
from .model import alpha_at, f_centers, omega_at

QUANTILE_METHOD = "linear"
BETA_HAT_LABEL = "Poisson-approximation estimate; significance via posterior median p-value"


def quantiles(samples) -> tuple[float, float, float]:
    """``(q2.5, median, q97.5)`` with linear interpolation between order statistics."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ConfigurationError("cannot summarise an empty sample")
    q = np.quantile(s, [0.025, 0.5, 0.975], method=QUANTILE_METHOD)
    return float(q[0]), float(q[1]), float(q[2])


@dataclass
class PosteriorSummary:
    params: dict  # name -> (median, q025, q975)
    median_pvalues: dict = field(default_factory=dict)
    n_samples: int = 0
    beta_hat: dict = field(default_factory=dict)
    prior_parameters: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def median(self, name: str) -> float:
        return self.params[name][0]

    def to_json(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "parameters": [{"parameter": k, "median": v[0], "q025": v[1], "q975": v[2]}
                           for k, v in self.params.items()],
            "covariates": [{"covariate": k, "median_pvalue": v} for k, v in self.median_pvalues.items()],
        }
        if self.beta_hat:
            out["beta_hat"] = {"label": BETA_HAT_LABEL, "estimates": self.beta_hat}
        if self.prior_parameters:
            out["priorParameters"] = self.prior_parameters
        out.update(self.extra)
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n")


def thomas_parameter_samples(trace) -> dict:
    """Recorded samples keyed by reported parameter name."""
    ri = trace.record_index
    out = {"kappa": trace.kappa[ri], "alpha": np.exp(trace.mu[ri, 0]), "omega": np.exp(trace.nu[ri, 0])}
    for i in range(trace.mu.shape[1]):
        out[f"mu_{i}"] = trace.mu[ri, i]
    for i in range(trace.nu.shape[1]):
        out[f"nu_{i}"] = trace.nu[ri, i]
    return out


def summarize(trace, control=None, beta_hat: dict | None = None) -> PosteriorSummary:
    """Medians and 95% intervals over the recorded (post burn-in, thinned) samples."""
    if trace.record_iters.size == 0:
        raise ConfigurationError("no recorded samples after burn-in and thinning")
    params = {}
    for name, s in thomas_parameter_samples(trace).items():
        q025, med, q975 = quantiles(s)
        params[name] = (med, q025, q975)
    pvals = {}
    for j, name in enumerate(trace.z_beta_names):
        pvals[name] = float(np.median(trace.pvalues[:, j]))
    return PosteriorSummary(params, pvals, int(trace.record_iters.size), dict(beta_hat or {}),
                            dict(trace.prior_parameters))


def summary_from_gtp(result: dict) -> PosteriorSummary:
    params = {k: (v["median"], v["q025"], v["q975"]) for k, v in result.items() if isinstance(v, dict)}
    return PosteriorSummary(params, n_samples=result["n_samples"], extra={"dispersion": result["dispersion"]})


def median_vector(summary: PosteriorSummary, prefix: str) -> np.ndarray:
    vals = []
    i = 0
    while f"{prefix}_{i}" in summary.params:
        vals.append(summary.median(f"{prefix}_{i}"))
        i += 1
    return np.array(vals)


def estimated_surfaces(summary: PosteriorSummary, covs, w_dil: DilatedWindow, cell: float | None = None,
                       beta_hat=None) -> dict:
    """Rasters of ``kappa f(beta_hat, u)``, ``alpha(mu, u)`` and ``omega(nu, u)`` at posterior medians.

    Cells whose centres fall outside ``w_dil`` hold NaN.
    """
    if cell is None:
        cell = w_dil.cell
    x0, x1, y0, y1 = w_dil.bbox
    ncols = int(math.ceil((x1 - x0) / cell - 1e-9))
    nrows = int(math.ceil((y1 - y0) / cell - 1e-9))
    xc = x0 + (np.arange(ncols) + 0.5) * cell
    yc = y0 + (np.arange(nrows) + 0.5) * cell
    gx, gy = np.meshgrid(xc, yc)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = w_dil.contains(pts)
    if beta_hat is None:
        beta_hat = np.array(list(summary.beta_hat.values()), dtype=float)
    mu = median_vector(summary, "mu")
    nu = median_vector(summary, "nu")
    kappa = summary.median("kappa")
    fields = {
        "intensity": lambda p: kappa * np.atleast_1d(f_centers(beta_hat, covs.z_beta, p)),
        "alpha": lambda p: np.atleast_1d(alpha_at(mu, covs.z_alpha, p)),
        "omega": lambda p: np.atleast_1d(omega_at(nu, covs.z_omega, p)),
    }
    out = {}
    for name, fn in fields.items():
        vals = np.full(pts.shape[0], np.nan)
        if inside.any():
            vals[inside] = fn(pts[inside])
        out[name] = RasterCovariate(name, (x0, y0), cell, vals.reshape(nrows, ncols), nodata=float("nan"))
    return out


def acceptance_series(flags, window: int = 1000) -> np.ndarray:
    """Fraction of accepted updates over the last ``window`` steps (prefix mean at the start)."""
    if window < 1:
        raise ConfigurationError("window must be >= 1")
    f = np.asarray(flags)
    if f.dtype == bool:
        f = f.astype(np.int64)
    c = np.concatenate([[0], np.cumsum(f)])
    idx = np.arange(1, f.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# ------------------------------------------------------------------ plotting


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "nspp"
    return plt


def _save(fig, path: Path) -> None:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise NSPPError(f"cannot write plot {path}: {exc}") from exc
    finally:
        fig.clf()
        _plt().close(fig)


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            wr.writerows(rows)
    except OSError as exc:
        raise NSPPError(f"cannot write {path}: {exc}") from exc


def _r(v) -> str:
    return repr(float(v))


def plot_label(stem: str) -> str:
    """Axis label used for the plot written under ``stem`` (so a CSV alone can regenerate it)."""
    for prefix, fmt in (("trace_pvalue_", "p-value {}"), ("hist_pvalue_", "p-value {}"),
                        ("accept_", "accepted fraction ({})"), ("trace_", "{}"), ("hist_", "{}"),
                        ("surface_", "{}")):
        if stem.startswith(prefix):
            return fmt.format(stem[len(prefix):])
    return stem


def _trace_figure(svg: Path, iters, values, q=None, ylabel=None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(iters, values, lw=0.6, color="black")
    if q is not None:
        ax.axhline(q[1], color="red", lw=1.2)
        ax.axhline(q[0], color="red", lw=1.0, ls="--")
        ax.axhline(q[2], color="red", lw=1.0, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel or svg.stem)
    fig.tight_layout()
    _save(fig, svg)


def _hist_figure(svg: Path, counts, edges, xlabel=None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.stairs(counts, edges, fill=True, color="0.6")
    ax.set_xlabel(xlabel or svg.stem)
    ax.set_ylabel("count")
    fig.tight_layout()
    _save(fig, svg)


def _surface_figure(svg: Path, values, extent, label=None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(values, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label=label or svg.stem)
    ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, svg)


def trace_plot(out: Path, stem: str, iters, values, q=None, ylabel=None) -> list[Path]:
    """Trace with the median (solid red) and 2.5%/97.5% quantiles (dashed red)."""
    csv_path = out / f"{stem}.csv"
    if q is None:
        _write_csv(csv_path, ["iter", "value"], ([int(i), _r(v)] for i, v in zip(iters, values)))
    else:
        lines = [_r(q[1]), _r(q[0]), _r(q[2])]
        _write_csv(csv_path, ["iter", "value", "median", "q025", "q975"],
                   ([int(i), _r(v)] + lines for i, v in zip(iters, values)))
    svg = out / f"{stem}.svg"
    _trace_figure(svg, np.asarray(iters), np.asarray(values, dtype=float), q, ylabel or plot_label(stem))
    return [svg, csv_path]


def histogram(samples):
    """Freedman-Diaconis histogram (falls back to one bin for degenerate samples)."""
    s = np.asarray(samples, dtype=float)
    if s.size < 2 or np.ptp(s) == 0:
        lo = float(s.min()) if s.size else 0.0
        return np.array([s.size]), np.array([lo - 0.5, lo + 0.5])
    return np.histogram(s, bins="fd")


def hist_plot(out: Path, stem: str, samples, xlabel=None) -> list[Path]:
    counts, edges = histogram(samples)
    csv_path = out / f"{stem}.csv"
    _write_csv(csv_path, ["bin_left", "bin_right", "count"],
               ([_r(edges[i]), _r(edges[i + 1]), int(counts[i])] for i in range(counts.size)))
    svg = out / f"{stem}.svg"
    _hist_figure(svg, counts, edges, xlabel or plot_label(stem))
    return [svg, csv_path]


def _surface_extent(xs, ys, cell=None) -> tuple:
    """Image extent from the cell-centre coordinates (the numbers stored in the CSV)."""
    if cell is None:
        if xs.size > 1:
            cell = (xs[-1] - xs[0]) / (xs.size - 1)
        elif ys.size > 1:
            cell = (ys[-1] - ys[0]) / (ys.size - 1)
        else:
            cell = 1.0
    return (float(xs[0] - cell / 2), float(xs[-1] + cell / 2), float(ys[0] - cell / 2), float(ys[-1] + cell / 2))


def surface_plot(out: Path, stem: str, raster: RasterCovariate) -> list[Path]:
    x0, _, y0, _ = raster.extent
    xs = np.array([float(_r(x0 + (c + 0.5) * raster.cell)) for c in range(raster.ncols)])
    ys = np.array([float(_r(y0 + (r + 0.5) * raster.cell)) for r in range(raster.nrows)])
    csv_path = out / f"{stem}.csv"
    rows = []
    for r in range(raster.nrows):
        for c in range(raster.ncols):
            rows.append([_r(xs[c]), _r(ys[r]), _r(raster.values[r, c])])
    _write_csv(csv_path, ["x", "y", "value"], rows)
    svg = out / f"{stem}.svg"
    one = raster.cell if xs.size == 1 and ys.size == 1 else None
    _surface_figure(svg, raster.values, _surface_extent(xs, ys, one), plot_label(stem))
    return [svg, csv_path]


def redraw(csv_path, svg_path, label=None) -> Path:
    """Re-render a plot from its sibling CSV alone (kind detected from the header)."""
    csv_path, svg_path = Path(csv_path), Path(svg_path)
    label = label or plot_label(csv_path.stem)
    header, data = _read_table(csv_path, allow_nan=True)
    if header[:2] == ["iter", "value"]:
        q = None
        if header == ["iter", "value", "median", "q025", "q975"] and data.shape[0]:
            q = (data[0, 3], data[0, 2], data[0, 4])
        _trace_figure(svg_path, data[:, 0].astype(np.int64), data[:, 1], q, label)
    elif header == ["bin_left", "bin_right", "count"]:
        edges = np.append(data[:, 0], data[-1, 1])
        _hist_figure(svg_path, data[:, 2].astype(np.int64), edges, label)
    elif header == ["x", "y", "value"]:
        xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
        values = data[:, 2].reshape(ys.size, xs.size)
        _surface_figure(svg_path, values, _surface_extent(xs, ys), label)
    else:
        raise ConfigurationError(f"{csv_path}: unrecognised plot data header {header}")
    return svg_path


def emit_plots(out_dir, traces: dict, recorded: dict | None = None, summary: PosteriorSummary | None = None,
               pvalues: dict | None = None, diagnostics: dict | None = None, acceptance: dict | None = None,
               surfaces: dict | None = None, window: int = 1000) -> list[Path]:
    """Write the plot suite; returns every file written.

    ``traces`` maps parameter name to ``(iters, values)`` over the whole chain,
    ``recorded`` the same names to post burn-in samples used for histograms.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise NSPPError(f"cannot create output directory {out}: {exc}") from exc
    files: list[Path] = []
    recorded = recorded or {}
    for name, (iters, vals) in traces.items():
        q = None
        if summary is not None and name in summary.params:
            med, lo, hi = summary.params[name]
            q = (lo, med, hi)
        files += trace_plot(out, f"trace_{name}", iters, vals, q)
        if name in recorded:
            files += hist_plot(out, f"hist_{name}", recorded[name])
    for name, (iters, vals) in (pvalues or {}).items():
        files += hist_plot(out, f"hist_pvalue_{name}", vals)
        files += trace_plot(out, f"trace_pvalue_{name}", iters, vals, None)
    for name, (iters, vals) in (diagnostics or {}).items():
        files += trace_plot(out, f"trace_{name}", iters, vals, None)
    for name, flags in (acceptance or {}).items():
        flags = np.asarray(flags)
        series = acceptance_series(flags, window)
        files += trace_plot(out, f"accept_{name}", np.arange(1, flags.size + 1), series, None)
    for name, raster in (surfaces or {}).items():
        files += surface_plot(out, f"surface_{name}", raster)
    return files


def thomas_plot_inputs(trace) -> dict:
    iters = np.arange(1, trace.n_iter + 1)
    rec = trace.record_iters
    traces = {"kappa": (iters, trace.kappa)}
    for i in range(trace.mu.shape[1]):
        traces[f"mu_{i}"] = (iters, trace.mu[:, i])
    for i in range(trace.nu.shape[1]):
        traces[f"nu_{i}"] = (iters, trace.nu[:, i])
    samples = thomas_parameter_samples(trace)
    recorded = {k: samples[k] for k in traces}
    pvalues = {name: (rec, trace.pvalues[:, j]) for j, name in enumerate(trace.z_beta_names)}
    diagnostics = {"loglik": (iters, trace.loglik), "n_centers": (iters, trace.n_centers)}
    acceptance = {"bdm": trace.acc_bdm, "mu": trace.acc_mu, "nu": trace.acc_nu}
    return dict(traces=traces, recorded=recorded, pvalues=pvalues, diagnostics=diagnostics, acceptance=acceptance)


def gtp_plot_inputs(trace, discard: int, step: int) -> dict:
    iters = np.arange(1, len(trace) + 1)
    names = ("kappa", "omega", "lambda", "theta")
    traces = {n: (iters, trace.param(n)) for n in names}
    recorded = {n: trace.param(n)[discard::step] for n in names}
    diagnostics = {"loglik": (iters, trace.loglik), "n_centers": (iters, trace.n_centers)}
    acceptance = {"kappa": trace.acc_kappa, "omega": trace.acc_omega, "lambda": trace.acc_lambda,
                  "theta": trace.acc_theta, "centers": trace.acc_centers, "conn": trace.acc_conn}
    return dict(traces=traces, recorded=recorded, diagnostics=diagnostics, acceptance=acceptance)


# ------------------------------------------------------------- trace files

CHAIN_HEADER_TAIL = ("n_centers", "loglik", "acc_bdm", "acc_mu", "acc_nu", "move")


def write_chain_csv(trace, path) -> None:
    """Full-length per-iteration Thomas diagnostics (the trace CSV keeps recorded rows only)."""
    header = (["iter", "kappa"] + [f"mu_{i}" for i in range(trace.mu.shape[1])]
              + [f"nu_{i}" for i in range(trace.nu.shape[1])] + list(CHAIN_HEADER_TAIL))
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for i in range(trace.n_iter):
                wr.writerow([i + 1, _r(trace.kappa[i])] + [_r(v) for v in trace.mu[i]]
                            + [_r(v) for v in trace.nu[i]]
                            + [int(trace.n_centers[i]), _r(trace.loglik[i]), int(trace.acc_bdm[i]),
                               int(trace.acc_mu[i]), int(trace.acc_nu[i]), int(trace.move_type[i])])
    except OSError as exc:
        raise NSPPError(f"cannot write {path}: {exc}") from exc


def _read_table(path, required: tuple = (), allow_nan: bool = False) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV; malformed rows raise a ValidationError naming the line."""
    from .errors import ValidationError

    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read trace {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{path}: header lacks column(s) {', '.join(missing)}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}: malformed row at line {lineno}: expected {len(header)} fields, "
                                  f"found {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed row at line {lineno}: {exc}") from exc
        if not allow_nan and not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"{path}: malformed row at line {lineno}: non-finite value")
        data.append(vals)
    if not data:
        raise ValidationError(f"{path}: no data rows")
    return header, np.array(data)


def _cols(header, prefix):
    return [j for j, h in enumerate(header) if h.startswith(prefix)]


def load_thomas_trace(trace_path, chain_path, z_beta_names=None):
    """Rebuild a :class:`ChainTrace` from the recorded-rows CSV and the full chain CSV."""
    from .errors import ValidationError
    from .mcmc_thomas import ChainTrace

    th, t = _read_table(trace_path, ("iter", "kappa", "mu_0", "nu_0"))
    ch, c = _read_table(chain_path, ("iter", "kappa", "mu_0", "nu_0") + CHAIN_HEADER_TAIL)
    iters = c[:, 0].astype(np.int64)
    if not np.array_equal(iters, np.arange(1, iters.size + 1)):
        bad = int(np.argmax(iters != np.arange(1, iters.size + 1)))
        raise ValidationError(f"{chain_path}: malformed row at line {bad + 2}: iterations not consecutive")
    rec = t[:, 0].astype(np.int64)
    if rec.size and (rec.max() > iters.size or rec.min() < 1):
        bad = int(np.argmax((rec > iters.size) | (rec < 1)))
        raise ValidationError(f"{trace_path}: malformed row at line {bad + 2}: iteration outside the chain")
    pcols = _cols(th, "pval_")
    pv = t[:, pcols]
    names = tuple(z_beta_names) if z_beta_names else tuple(th[j][len("pval_"):] for j in pcols)
    col = {h: j for j, h in enumerate(ch)}
    return ChainTrace(
        mu=c[:, _cols(ch, "mu_")], nu=c[:, _cols(ch, "nu_")], kappa=c[:, 1],
        n_centers=c[:, col["n_centers"]].astype(np.int64), loglik=c[:, col["loglik"]],
        acc_bdm=c[:, col["acc_bdm"]].astype(bool), acc_mu=c[:, col["acc_mu"]].astype(bool),
        acc_nu=c[:, col["acc_nu"]].astype(bool), move_type=c[:, col["move"]].astype(np.int8),
        record_iters=rec, pvalues=pv, z_beta_names=names,
    )


def load_gtp_trace(path):
    """Rebuild a :class:`GTPTrace` from its CSV."""
    from .gtp import GTPTrace

    header, t = _read_table(path, GTPTrace.HEADER)
    col = {h: j for j, h in enumerate(header)}
    g = lambda n: t[:, col[n]]  # noqa: E731
    return GTPTrace(g("kappa"), g("omega"), g("lambda"), g("theta"), g("n_centers").astype(np.int64),
                    g("loglik"), g("acc_kappa").astype(bool), g("acc_omega").astype(bool),
                    g("acc_lambda").astype(bool), g("acc_theta").astype(bool), g("acc_centers"), g("acc_conn"))
