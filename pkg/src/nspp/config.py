"""Run configuration, dataset I/O and validation for the command-line frontend.

A run is described by one JSON file.  Relative paths inside it are resolved
against the directory holding the file.  Control field names use the
conventional control-list names (``NStep``, ``BurnIn``,
``Prior_alpha_mean``, ``skappa``, ...).
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariates import CovariateSet, read_ascii_grid
from .errors import ConfigurationError, CovariateError, ValidationError
from .geometry import DilatedWindow, Window, default_cell, dilate
from .gtp import GTPControl
from .mcmc_thomas import Control

# config key -> Control field
THOMAS_KEYS = {
    "NStep": "n_step",
    "BurnIn": "burn_in",
    "SamplingFreq": "sampling_freq",
    "Prior_alpha_mean": "prior_alpha_mean",
    "Prior_alpha_SD": "prior_alpha_sd",
    "Prior_omega_mean": "prior_omega_mean",
    "Prior_omega_SD": "prior_omega_sd",
    "Prior_alphavec_SD": "prior_alphavec_sd",
    "Prior_omegavec_SD": "prior_omegavec_sd",
    "Proposal_mu_SD": "proposal_mu_sd",
    "Proposal_nu_SD": "proposal_nu_sd",
    "Move_SD": "move_sd",
    "check_every": "check_every",
}

GTP_KEYS = {name: name for name in GTPControl.__dataclass_fields__ if name != "seed"}

ROLES = ("z_beta", "z_alpha", "z_omega")


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one pipeline stage, derived from the run seed and a fixed label."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


def _load_json(path: Path, what: str) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {what} {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{what} {path} must hold a JSON object")
    return obj


# --------------------------------------------------------------- datasets


def read_pattern(path) -> np.ndarray:
    """Read a point pattern CSV with header ``x,y``."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read pattern {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0][:2]] != ["x", "y"]:
        raise ValidationError(f"{path}: first line must be the header 'x,y'")
    pts = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            x, y = (float(v) for v in row[:2]) if len(row) >= 2 else (None, None)
        except ValueError:
            x = None
        if x is None or not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError(f"{path}: malformed row at line {lineno}: {','.join(row)!r}")
        pts.append((x, y))
    return np.array(pts, dtype=float).reshape(-1, 2)


def write_pattern(path, points, extra: dict | None = None) -> None:
    """Write ``x,y`` (plus optional extra columns) with round-trip exact floats."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y", *extra])
        cols = list(extra.values())
        for i, (x, y) in enumerate(points):
            wr.writerow([repr(float(x)), repr(float(y))] + [c[i] for c in cols])


def parse_window(spec: dict, where: str = "window") -> tuple[Window, float | None]:
    """Window from ``x_left/x_right/y_bottom/y_top`` arrays; returns it with the optional dilation."""
    missing = [k for k in ("x_left", "x_right", "y_bottom", "y_top") if k not in spec]
    if missing:
        raise ValidationError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        w = Window.from_edges(spec["x_left"], spec["x_right"], spec["y_bottom"], spec["y_top"])
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    dil = spec.get("dilation")
    if dil is not None and not (isinstance(dil, (int, float)) and dil > 0):
        raise ValidationError(f"{where}: dilation must be a positive number, got {dil!r}")
    return w, None if dil is None else float(dil)


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    path: Path
    raw: dict
    seed: int = 0
    out: Path | None = None
    standardize: bool = False
    window: Window | None = None
    dilation: float | None = None
    pattern_path: Path | None = None
    covariate_paths: dict = field(default_factory=dict)  # role -> list of (name, path)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        raw = _load_json(path, "config")
        return cls.from_dict(raw, path)

    @classmethod
    def from_dict(cls, raw: dict, path=None) -> "RunConfig":
        path = Path(path) if path is not None else Path("config.json")
        base = path.parent
        seed = raw.get("seed", 0)
        if not (isinstance(seed, int) and 0 <= seed < 2**64):
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        cfg = cls(path=path, raw=raw, seed=seed, standardize=bool(raw.get("standardize", False)))
        if raw.get("out") is not None:
            cfg.out = base / raw["out"]
        win = raw.get("window")
        if isinstance(win, str):
            wpath = base / win
            cfg.window, cfg.dilation = parse_window(_load_json(wpath, "window spec"), str(wpath))
        elif isinstance(win, dict):
            cfg.window, cfg.dilation = parse_window(win)
        elif win is not None:
            raise ValidationError("window must be a file name or an object")
        if raw.get("dilation") is not None:
            d = raw["dilation"]
            if not (isinstance(d, (int, float)) and d > 0):
                raise ValidationError(f"dilation must be a positive number, got {d!r}")
            cfg.dilation = float(d)
        if raw.get("pattern") is not None:
            cfg.pattern_path = base / raw["pattern"]
        covs = raw.get("covariates") or {}
        if not isinstance(covs, dict):
            raise ValidationError("covariates must map z_beta/z_alpha/z_omega to lists of raster files")
        unknown = set(covs) - set(ROLES)
        if unknown:
            raise ValidationError(f"unknown covariate role(s) {sorted(unknown)}; use {', '.join(ROLES)}")
        for role in ROLES:
            entries = []
            for item in covs.get(role, []) or []:
                if isinstance(item, str):
                    p = base / item
                    entries.append((p.stem, p))
                elif isinstance(item, dict) and "path" in item:
                    p = base / item["path"]
                    entries.append((str(item.get("name", p.stem)), p))
                else:
                    raise ValidationError(f"covariates.{role}: entries must be paths or {{name, path}} objects")
            cfg.covariate_paths[role] = entries
        return cfg

    # -- pieces
    def section(self, name: str) -> dict:
        sec = self.raw.get(name) or {}
        if not isinstance(sec, dict):
            raise ValidationError(f"config section {name!r} must be an object")
        return sec

    def require_window(self) -> Window:
        if self.window is None:
            raise ValidationError("config lacks a window specification")
        return self.window

    def dilated(self, radius: float | None = None) -> DilatedWindow:
        w = self.require_window()
        r = radius if radius is not None else self.dilation
        if r is None or not r > 0:
            raise ValidationError("a positive dilation radius is required (window 'dilation' field)")
        cell = self.raw.get("cell")
        return dilate(w, r, cell if cell is not None else default_cell(w, r))

    def read_pattern(self) -> np.ndarray:
        if self.pattern_path is None:
            raise ValidationError("config lacks a 'pattern' file")
        return read_pattern(self.pattern_path)

    def covariates(self, w_dil: DilatedWindow | None = None) -> CovariateSet:
        """Load rasters by role; a raster named in several roles is read once."""
        cache = {}
        roles = {}
        for role in ROLES:
            covs = []
            for name, p in self.covariate_paths.get(role, []):
                key = (name, str(p))
                if key not in cache:
                    if not p.exists():
                        raise ValidationError(f"covariate {name!r}: file {p} does not exist")
                    try:
                        cov = read_ascii_grid(p, name)
                    except (CovariateError, ValueError, OSError) as exc:
                        raise ValidationError(f"covariate {name!r}: {exc}") from exc
                    if self.standardize:
                        if w_dil is None:
                            raise ValidationError("standardize needs the dilated window")
                        cov = cov.standardized(w_dil)
                    cache[key] = cov
                covs.append(cache[key])
            roles[role] = tuple(covs)
        return CovariateSet(**roles)

    def role_names(self, role: str) -> list[str]:
        return [n for n, _ in self.covariate_paths.get(role, [])]

    def thomas_control(self, n_points: int, n_alpha: int, n_omega: int) -> Control:
        sec = self.section("control")
        unknown = set(sec) - set(THOMAS_KEYS)
        if unknown:
            raise ValidationError(f"unknown control field(s): {', '.join(sorted(unknown))}")
        given = {THOMAS_KEYS[k]: v for k, v in sec.items()}
        for k in ("n_step", "burn_in", "sampling_freq"):
            if k not in given:
                inv = {v: k for k, v in THOMAS_KEYS.items()}
                raise ValidationError(f"control lacks {inv[k]}")
        try:
            return Control.with_defaults(n_points, self.require_window(), n_alpha, n_omega, seed=self.seed, **given)
        except TypeError as exc:
            raise ValidationError(f"control: {exc}") from exc

    def gtp_control(self) -> GTPControl:
        sec = self.section("gtp")
        unknown = set(sec) - set(GTP_KEYS)
        if unknown:
            raise ValidationError(f"unknown gtp field(s): {', '.join(sorted(unknown))}")
        given = dict(sec)
        if self.dilation is not None:
            given.setdefault("dilation", self.dilation)
        try:
            return GTPControl(seed=self.seed, **given)
        except TypeError as exc:
            raise ValidationError(f"gtp: {exc}") from exc


def check_points_inside(X: np.ndarray, w: Window) -> None:
    inside = w.contains(X) if X.shape[0] else np.zeros(0, dtype=bool)
    if not np.all(inside):
        i = int(np.argmin(inside))
        raise ValidationError(f"point {i + 1} at ({float(X[i, 0])!r}, {float(X[i, 1])!r}) lies outside the window")


def validate(cfg: RunConfig, mode: str) -> dict:
    """Run every static check for ``mode``; returns the loaded inputs."""
    if mode == "report":
        return {}
    w = cfg.require_window()
    out: dict = {"window": w}
    if mode in ("fit", "simulate"):
        out["w_dil"] = cfg.dilated()
        out["covs"] = cfg.covariates(out["w_dil"])
        out["covs"].check_coverage(out["w_dil"])
    if mode in ("fit", "fit-gtp"):
        X = cfg.read_pattern()
        if X.shape[0] == 0:
            raise ValidationError(f"pattern {cfg.pattern_path} holds no points")
        check_points_inside(X, w)
        out["X"] = X
    if mode == "fit":
        out["control"] = cfg.thomas_control(out["X"].shape[0], len(out["covs"].z_alpha), len(out["covs"].z_omega))
    if mode == "fit-gtp":
        out["control"] = cfg.gtp_control()
    return out
