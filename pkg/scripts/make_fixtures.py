"""Regenerate the bundled example datasets in src/nspp/fixtures/ (deterministic)."""

import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from nspp.cli import main
from nspp.covariates import RasterCovariate, write_ascii_grid

ROOT = Path(__file__).resolve().parents[1] / "src" / "nspp" / "fixtures"
UNIT = {"x_left": [0.0], "x_right": [1.0], "y_bottom": [0.0], "y_top": [1.0], "dilation": 0.12}


def dump(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def simulate(kind, cfg, dest):
    with tempfile.TemporaryDirectory() as tmp:
        c = Path(tmp) / "sim.json"
        dump(c, {**cfg, "out": "sim"})
        for name in cfg.get("covariate_files", []):
            shutil.copy(dest / name, Path(tmp) / name)
        assert main([kind, "--config", str(c), "--quiet"]) == 0
        shutil.copy(Path(tmp) / "sim" / "pattern.csv", dest / "pattern.csv")
        shutil.copy(Path(tmp) / "sim" / "parents.csv", dest / "parents.csv")


def homogeneous():
    d = ROOT / "thomas_homogeneous"
    d.mkdir(parents=True, exist_ok=True)
    dump(d / "window.json", UNIT)
    simulate("simulate", {"window": UNIT, "seed": 11,
                          "simulate": {"kappa": 25, "alpha": 8, "omega": 0.03}}, d)
    dump(d / "config.json", {
        "pattern": "pattern.csv", "window": "window.json", "out": "out", "seed": 2024,
        "control": {"NStep": 2000, "BurnIn": 1000, "SamplingFreq": 10},
    })


def inhomogeneous():
    d = ROOT / "thomas_inhomogeneous"
    d.mkdir(parents=True, exist_ok=True)
    dump(d / "window.json", UNIT)
    z1 = RasterCovariate.from_function("z1", lambda x, y: 2.0 * (x - 0.5), (-0.25, -0.25), 0.05, 30, 30)
    z2 = RasterCovariate.from_function("z2", lambda x, y: 2.0 * (y - 0.5), (-0.25, -0.25), 0.05, 30, 30)
    write_ascii_grid(z1, d / "z1.asc")
    write_ascii_grid(z2, d / "z2.asc")
    covs = {"z_beta": ["z1.asc"], "z_alpha": ["z2.asc"], "z_omega": []}
    simulate("simulate", {"window": UNIT, "seed": 12, "covariates": covs, "covariate_files": ["z1.asc", "z2.asc"],
                          "simulate": {"kappa": 20, "beta": [1.0], "mu": [float(np.log(6.0)), 0.4],
                                       "nu": [float(np.log(0.03))]}}, d)
    dump(d / "config.json", {
        "pattern": "pattern.csv", "window": "window.json", "covariates": covs, "out": "out", "seed": 2024,
        "control": {"NStep": 2000, "BurnIn": 1000, "SamplingFreq": 10},
    })


def gtp():
    d = ROOT / "gtp"
    d.mkdir(parents=True, exist_ok=True)
    win = {k: v for k, v in UNIT.items() if k != "dilation"}
    dump(d / "window.json", win)
    simulate("simulate-gtp", {"window": win, "seed": 13,
                              "simulate": {"kappa": 30, "omega": 0.03, "lambda": 0.5, "theta": 2.0}}, d)
    dump(d / "config.json", {
        "pattern": "pattern.csv", "window": "window.json", "out": "out", "seed": 2024,
        "gtp": {"a_kappa": 3.4, "b_kappa": 1.5, "a_omega": -3.0, "b_omega": 1.0, "a_theta": 1.1, "b_theta": 1.5,
                "dlambda": 0.05, "smove": 0.03, "iter": 2000, "discard": 1000, "step": 10,
                "conn_per_sweep": 20, "dilation": 0.12},
    })


if __name__ == "__main__":
    homogeneous()
    inhomogeneous()
    gtp()
