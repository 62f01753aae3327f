"""Command-line frontend: ``nspp {simulate,simulate-gtp,fit,fit-gtp,report,validate}``.

Exit codes: 0 success, 2 invalid configuration or data, 3 numeric or
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .config import RunConfig, derive_rng, validate, write_pattern
from .errors import ChainError, ConfigurationError, NSPPError
from .firstorder import fit_poisson_intensity
from .geometry import make_grid
from .gtp import estgtp, summarize_gtp
from .mcmc_thomas import ThomasProblem, run_chain
from .model import GPDParams, GTPParams, ThomasParams, rgtp, rgtp_window, simulate_thomas

log = logging.getLogger("nspp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.exc = exc


class Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage: %s", self.name)
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError) and isinstance(ev, Exception):
            raise StageError(self.name, ev) from ev
        return False


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if args.out else cfg.out
    if out is None:
        raise ConfigurationError("no output directory: pass --out or set 'out' in the config")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, files, name: str = "manifest.json") -> list[str]:
    names = sorted(str(Path(f).relative_to(out)) for f in files)
    for n in names:
        p = out / n
        if not p.exists() or p.stat().st_size == 0:
            raise NSPPError(f"artifact {p} is missing or empty")
    _dump_json(out / name, {"files": names})
    return names


# --------------------------------------------------------------- commands


def cmd_validate(cfg: RunConfig, args) -> int:
    mode = args.mode
    with Stage("validate"):
        inputs = validate(cfg, mode)
    msg = [f"configuration valid for {mode}"]
    if "X" in inputs:
        msg.append(f"{inputs['X'].shape[0]} points")
    if "covs" in inputs:
        msg.append(f"{len(inputs['covs'].all())} covariate(s)")
    if not args.quiet:
        print("; ".join(msg))
    return EXIT_OK


def _thomas_params(cfg: RunConfig) -> ThomasParams:
    sec = cfg.section("simulate")
    try:
        mu = sec["mu"] if "mu" in sec else [math.log(sec["alpha"])]
        nu = sec["nu"] if "nu" in sec else [math.log(sec["omega"])]
        return ThomasParams(float(sec["kappa"]), np.asarray(sec.get("beta", []), float), np.asarray(mu, float),
                            np.asarray(nu, float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"simulate section: need kappa, beta, mu (or alpha), nu (or omega): {exc}") from exc


def cmd_simulate(cfg: RunConfig, args) -> int:
    with Stage("validate"):
        inputs = validate(cfg, "simulate")
        params = _thomas_params(cfg)
        params.check_dims(inputs["covs"])
        out = _out_dir(cfg, args)
    with Stage("simulate"):
        sim = simulate_thomas(params, inputs["covs"], inputs["window"], inputs["w_dil"],
                              derive_rng(cfg.seed, "simulate"))
    return _write_simulation(out, sim, args)


def cmd_simulate_gtp(cfg: RunConfig, args) -> int:
    with Stage("validate"):
        w = cfg.require_window()
        sec = cfg.section("simulate")
        try:
            params = GTPParams(float(sec["kappa"]), float(sec["omega"]),
                               GPDParams(float(sec["lambda"]), float(sec["theta"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"simulate section: need kappa, omega, lambda, theta: {exc}") from exc
        w_dil = cfg.dilated() if cfg.dilation is not None else rgtp_window(params.omega, w)
        out = _out_dir(cfg, args)
    with Stage("simulate"):
        sim = rgtp(params, w, derive_rng(cfg.seed, "simulate-gtp"), w_dil)
    return _write_simulation(out, sim, args)


def _write_simulation(out: Path, sim, args) -> int:
    with Stage("write"):
        files = [out / "pattern.csv", out / "parents.csv", out / "offspring.csv"]
        write_pattern(files[0], sim.points)
        write_pattern(files[1], sim.parents, {"cluster_size": [int(s) for s in sim.cluster_sizes]})
        write_pattern(files[2], sim.points, {"parent": [int(i) + 1 for i in sim.parent_index]})
        _manifest(out, files)
    if not args.quiet:
        print(f"simulated {sim.points.shape[0]} points from {sim.parents.shape[0]} parents -> {out}")
    return EXIT_OK


def _write_chain_error(out: Path, exc: BaseException) -> None:
    cause = exc.exc if isinstance(exc, StageError) else exc
    if isinstance(cause, ChainError):
        path = out / "chain_error_state.json"
        path.write_text(cause.state_dump + "\n" if cause.state_dump else "{}\n")
        log.error("chain failed at iteration %s; state written to %s", cause.iteration, path)


def _fit_one_chain(cfg, inputs, problem, fit, out: Path, chain: int, args) -> list:
    control = inputs["control"]
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "trace.csv", out / "chain.csv", out / "summary.json"]
    try:
        with Stage("mcmc"):
            trace = run_chain(problem, control, derive_rng(cfg.seed, f"mcmc/{chain}"), trace_path=files[0],
                              progress=not args.quiet)
    except StageError as exc:
        _write_chain_error(out, exc)
        raise
    with Stage("report"):
        reporting.write_chain_csv(trace, files[1])
        names = ["intercept", *(c.name for c in problem.covs.z_beta)]
        beta_hat = {n: float(v) for n, v in zip(names, fit.coeffs)}
        summary = reporting.summarize(trace, control, beta_hat={k: beta_hat[k] for k in names[1:]})
        summary.extra["step1"] = {
            "label": reporting.BETA_HAT_LABEL,
            "coefficients": beta_hat,
            "std_errors": {n: float(s) for n, s in zip(names, fit.se)},
            "wald_pvalues": {n: float(p) for n, p in zip(names[1:], fit.wald_pvalues())},
        }
        summary.extra["move_tallies"] = trace.move_tallies()
        summary.extra["seed"] = cfg.seed
        summary.extra["chain"] = chain
        summary.write_json(files[2])
        if not args.no_plots:
            surfaces = reporting.estimated_surfaces(summary, problem.covs, problem.w_dil,
                                                    beta_hat=np.asarray(fit.slopes))
            files += reporting.emit_plots(out / "plots", summary=summary, surfaces=surfaces,
                                          **reporting.thomas_plot_inputs(trace))
    if not args.quiet:
        _print_summary(summary, chain)
    return files


def _print_summary(summary, chain=None) -> None:
    head = "posterior summary" + (f" (chain {chain})" if chain is not None else "")
    print(head)
    for name, (med, lo, hi) in summary.params.items():
        print(f"  {name:>10s}  median {med:.6g}  95% [{lo:.6g}, {hi:.6g}]")
    for name, p in summary.median_pvalues.items():
        print(f"  z_beta {name}: median p-value {p:.4g}")
    if "dispersion" in summary.extra:
        print(f"  dispersion: {summary.extra['dispersion']}")


def cmd_fit(cfg: RunConfig, args) -> int:
    with Stage("validate"):
        inputs = validate(cfg, "fit")
        out = _out_dir(cfg, args)
    control = inputs["control"]
    _dump_json(out / "priorParameters.json", control.prior_parameters())
    if not args.quiet:
        print("priorParameters: " + json.dumps(control.prior_parameters()))
    X, covs, w, w_dil = inputs["X"], inputs["covs"], inputs["window"], inputs["w_dil"]
    with Stage("step1"):
        grid_w = make_grid(w)
        fit = fit_poisson_intensity(X, covs.z_beta, grid_w, area=w.area)
        problem = ThomasProblem.from_fit(X, covs, w, w_dil, fit, grid_w)
    files = [out / "priorParameters.json"]
    if args.chains == 1:
        files += _fit_one_chain(cfg, inputs, problem, fit, out, 0, args)
    else:
        for k in range(args.chains):
            files += _fit_one_chain(cfg, inputs, problem, fit, out / f"chain_{k}", k, args)
    _manifest(out, files)
    return EXIT_OK


def cmd_fit_gtp(cfg: RunConfig, args) -> int:
    with Stage("validate"):
        inputs = validate(cfg, "fit-gtp")
        out = _out_dir(cfg, args)
    control = inputs["control"]
    _dump_json(out / "priorParameters.json", control.as_dict())
    if not args.quiet:
        print("priorParameters: " + json.dumps(control.as_dict()))
    w_dil = cfg.dilated(control.dilation)
    files = [out / "priorParameters.json"]
    for k in range(args.chains):
        cdir = out if args.chains == 1 else out / f"chain_{k}"
        cdir.mkdir(parents=True, exist_ok=True)
        try:
            with Stage("mcmc"):
                trace = estgtp(inputs["X"], inputs["window"], control, derive_rng(cfg.seed, f"gtp/{k}"), w_dil)
        except StageError as exc:
            _write_chain_error(cdir, exc)
            raise
        with Stage("report"):
            files += _report_gtp(trace, cdir, control.discard, control.step, args, {"seed": cfg.seed, "chain": k})
    _manifest(out, files)
    return EXIT_OK


def _report_gtp(trace, out: Path, discard: int, step: int, args, extra: dict) -> list:
    files = [out / "gtp_trace.csv", out / "summary.json"]
    trace.write_csv(files[0])
    summary = reporting.summary_from_gtp(summarize_gtp(trace, discard, step))
    summary.extra.update(extra)
    summary.extra.update({"discard": discard, "step": step})
    summary.write_json(files[1])
    if not args.no_plots:
        files += reporting.emit_plots(out / "plots", summary=summary, **reporting.gtp_plot_inputs(trace, discard, step))
    if not args.quiet:
        _print_summary(summary)
    return files


def cmd_report(cfg: RunConfig, args) -> int:
    """Re-render summaries and plots from an existing trace directory."""
    sec = cfg.section("report")
    with Stage("validate"):
        src = cfg.path.parent / sec["trace_dir"] if "trace_dir" in sec else (Path(args.out) if args.out else cfg.out)
        if src is None:
            raise ConfigurationError("report needs 'report.trace_dir' in the config or --out")
        out = Path(args.out) if args.out else src
        out.mkdir(parents=True, exist_ok=True)
    with Stage("report"):
        if (src / "gtp_trace.csv").exists():
            trace = reporting.load_gtp_trace(src / "gtp_trace.csv")
            control = cfg.gtp_control() if cfg.raw.get("gtp") is not None else None
            discard = sec.get("discard", control.discard if control else 100)
            step = sec.get("step", control.step if control else 10)
            files = _report_gtp(trace, out, discard, step, args, {})
        elif (src / "trace.csv").exists() and (src / "chain.csv").exists():
            trace = reporting.load_thomas_trace(src / "trace.csv", src / "chain.csv")
            prev = src / "summary.json"
            beta_hat = {}
            if prev.exists():
                old = json.loads(prev.read_text())
                beta_hat = old.get("beta_hat", {}).get("estimates", {})
                trace.prior_parameters = old.get("priorParameters", {})
            summary = reporting.summarize(trace, beta_hat=beta_hat)
            files = [out / "summary_report.json"]
            summary.write_json(files[0])
            surfaces = None
            if cfg.window is not None and cfg.dilation is not None:
                w_dil = cfg.dilated()
                surfaces = reporting.estimated_surfaces(summary, cfg.covariates(w_dil), w_dil,
                                                        beta_hat=np.array(list(beta_hat.values()), dtype=float))
            files += reporting.emit_plots(out / "plots", summary=summary, surfaces=surfaces,
                                          **reporting.thomas_plot_inputs(trace))
            if not args.quiet:
                _print_summary(summary)
        else:
            raise ConfigurationError(f"no trace found in {src} (expected trace.csv + chain.csv or gtp_trace.csv)")
    _manifest(out, files, "report_manifest.json")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "simulate-gtp": cmd_simulate_gtp,
    "fit": cmd_fit,
    "fit-gtp": cmd_fit_gtp,
    "report": cmd_report,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nspp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--out", help="output directory (overrides the config's 'out')")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
        sp.add_argument("--chains", type=int, default=1, help="number of independent chains")
        sp.add_argument("--quiet", action="store_true", help="only report errors")
        sp.add_argument("--standardize", action="store_true", help="standardize covariates over the dilated window")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG/CSV plot output")
        if name == "validate":
            sp.add_argument("--mode", default="fit", choices=[c for c in COMMANDS if c != "validate"],
                            help="which command's inputs to check")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.chains < 1:
            raise ConfigurationError("--chains must be >= 1")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.standardize:
            cfg.standardize = True
        return COMMANDS[args.command](cfg, args)
    except (StageError, NSPPError, OSError, ArithmeticError, ValueError) as exc:
        cause = exc.exc if isinstance(exc, StageError) else exc
        code = EXIT_CONFIG if isinstance(cause, ConfigurationError) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
