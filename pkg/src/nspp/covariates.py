"""Gridded spatial covariates (pixel images) and ESRI ASCII grid I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CovariateError, NumericError, ValidationError
from .geometry import DilatedWindow, QuadratureGrid

DEFAULT_NODATA = -9999.0


@dataclass(frozen=True, eq=False)
class RasterCovariate:
    """Piecewise-constant field on a regular grid.

    ``values[row, col]`` with row 0 the southernmost row.  A point ``p`` is
    mapped to ``col = floor((x - x0) / cell)``; points on the far (east or
    north) edge of the raster belong to the last column/row.
    """

    name: str
    origin: tuple[float, float]
    cell: float
    values: np.ndarray = field(repr=False)
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"covariate {self.name!r}: values must be a non-empty 2-D array")
        if not self.cell > 0:
            raise ValueError(f"covariate {self.name!r}: cell must be > 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, x0 + self.ncols * self.cell, y0, y0 + self.nrows * self.cell

    @classmethod
    def from_function(cls, name, func, origin, cell, ncols, nrows, nodata=DEFAULT_NODATA):
        """Sample ``func(x, y)`` at cell centres."""
        x0, y0 = origin
        xc = x0 + (np.arange(ncols) + 0.5) * cell
        yc = y0 + (np.arange(nrows) + 0.5) * cell
        gx, gy = np.meshgrid(xc, yc)
        return cls(name, origin, cell, np.asarray(func(gx, gy), dtype=float) * np.ones_like(gx), nodata)

    @classmethod
    def covering(cls, name, func, region, cell=None, nodata=DEFAULT_NODATA):
        """Raster aligned with, and covering, the bounding box of ``region``."""
        x0, x1, y0, y1 = region.bbox
        if cell is None:
            cell = region.cell if isinstance(region, DilatedWindow) else min(x1 - x0, y1 - y0) / 100
        ncols = int(np.ceil((x1 - x0) / cell - 1e-9))
        nrows = int(np.ceil((y1 - y0) / cell - 1e-9))
        return cls.from_function(name, func, (x0, y0), cell, ncols, nrows, nodata)

    def index(self, pts: np.ndarray):
        x0, y0 = self.origin
        fx = (pts[:, 0] - x0) / self.cell
        fy = (pts[:, 1] - y0) / self.cell
        ok = (fx >= 0) & (fx <= self.ncols) & (fy >= 0) & (fy <= self.nrows)
        col = np.clip(np.floor(np.where(ok, fx, 0)).astype(np.int64), 0, self.ncols - 1)
        row = np.clip(np.floor(np.where(ok, fy, 0)).astype(np.int64), 0, self.nrows - 1)
        return row, col, ok

    def values_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            return np.empty(0)
        row, col, ok = self.index(pts)
        out = self.values[row, col]
        bad = ~ok | (out == self.nodata) | np.isnan(out)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            why = "outside raster extent" if not ok[i] else "nodata cell"
            raise CovariateError(
                f"covariate {self.name!r} cannot be evaluated at ({pts[i, 0]!r}, {pts[i, 1]!r}): {why}"
            )
        return out

    def value_at(self, p) -> float:
        return float(self.values_at(np.asarray(p, dtype=float).reshape(1, 2))[0])

    def rescaled(self, scale: float, shift: float = 0.0) -> "RasterCovariate":
        """Covariate ``shift + scale * z`` (nodata cells preserved)."""
        v = self.values
        nd = v == self.nodata
        out = np.where(nd, self.nodata, shift + scale * v)
        return RasterCovariate(self.name, self.origin, self.cell, out, self.nodata)

    def standardized(self, region) -> "RasterCovariate":
        """Centre and scale to unit SD over the cells whose centres fall in ``region``."""
        x0, y0 = self.origin
        xc = x0 + (np.arange(self.ncols) + 0.5) * self.cell
        yc = y0 + (np.arange(self.nrows) + 0.5) * self.cell
        gx, gy = np.meshgrid(xc, yc)
        inside = region.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
        vals = self.values[inside & (self.values != self.nodata)]
        sd = float(vals.std())
        if not sd > 0:
            raise ValidationError(f"covariate {self.name!r} is constant over the region; cannot standardize")
        return self.rescaled(1.0 / sd, -float(vals.mean()) / sd)


def value_at(c: RasterCovariate, p) -> float:
    return c.value_at(p)


def check_coverage(cov: RasterCovariate, region: DilatedWindow) -> None:
    """Raise if any mask cell centre of ``region`` maps outside or to nodata."""
    centres = region.cell_centers()
    row, col, ok = cov.index(centres)
    vals = cov.values[row, col]
    bad = ~ok | (vals == cov.nodata) | np.isnan(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(
            f"covariate {cov.name!r} does not cover the dilated window: "
            f"uncovered cell centred at ({centres[i, 0]!r}, {centres[i, 1]!r})"
        )


def design_matrix(covs, points, with_intercept: bool = True) -> np.ndarray:
    """Rows ``(1, z_1(p), ..., z_k(p))`` (intercept optional) for each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    cols = [np.ones(pts.shape[0])] if with_intercept else []
    cols.extend(c.values_at(pts) if pts.shape[0] else np.empty(0) for c in covs)
    if not cols:
        return np.empty((pts.shape[0], 0))
    return np.column_stack(cols)


def design_vector(covs, p, with_intercept: bool = True) -> np.ndarray:
    return design_matrix(covs, np.asarray(p, dtype=float).reshape(1, 2), with_intercept)[0]


def integrate_exp_linear(covs, coeffs, grid: QuadratureGrid, with_intercept: bool = True) -> float:
    """Midpoint-rule integral of ``exp(design . coeffs)`` over ``grid``."""
    coeffs = np.asarray(coeffs, dtype=float)
    z = design_matrix(covs, grid.points, with_intercept)
    if z.shape[1] != coeffs.size:
        raise ValueError(f"expected {z.shape[1]} coefficients, got {coeffs.size}")
    eta = z @ coeffs
    if not np.isfinite(eta).all():
        i = int(np.flatnonzero(~np.isfinite(eta))[0])
        raise NumericError(f"non-finite exponent at node ({grid.points[i, 0]}, {grid.points[i, 1]})")
    with np.errstate(over="raise"):
        try:
            return float(np.sum(grid.weights * np.exp(eta)))
        except FloatingPointError:
            i = int(np.argmax(eta))
            raise NumericError(
                f"exponent overflow at node ({grid.points[i, 0]}, {grid.points[i, 1]}): {eta[i]}"
            ) from None


@dataclass(frozen=True)
class CovariateSet:
    """Covariates for the centre intensity, cluster size and cluster spread."""

    z_beta: tuple = ()
    z_alpha: tuple = ()
    z_omega: tuple = ()

    def __post_init__(self):
        for role in ("z_beta", "z_alpha", "z_omega"):
            covs = tuple(getattr(self, role) or ())
            object.__setattr__(self, role, covs)
            names = [c.name for c in covs]
            dup = {n for n in names if names.count(n) > 1}
            if dup:
                raise ValidationError(f"duplicate covariate name(s) in {role}: {sorted(dup)}")
        shared = {c.name for c in self.z_beta} & {c.name for c in self.z_alpha}
        if shared:
            raise ValidationError(
                f"covariate(s) {sorted(shared)} appear in both z_beta and z_alpha; these lists must be "
                "disjoint, otherwise the centre-intensity and cluster-size effects are not identifiable"
            )

    def all(self):
        seen = {}
        for c in (*self.z_beta, *self.z_alpha, *self.z_omega):
            seen.setdefault(c.name, c)
        return list(seen.values())

    def check_coverage(self, region: DilatedWindow) -> None:
        for c in self.all():
            check_coverage(c, region)


# --- ESRI ASCII grid -----------------------------------------------------

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path, name: str | None = None) -> RasterCovariate:
    path = Path(path)
    header = {}
    with path.open() as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key in ("xllcenter", "yllcenter"):
            raise CovariateError(f"{path}: cell-centre registration ({parts[0]}) is not supported")
        if key not in _HEADER_KEYS:
            body_start = i
            break
        if len(parts) != 2:
            raise CovariateError(f"{path}:{i + 1}: malformed header line {line!r}")
        header[key] = parts[1]
    else:
        body_start = len(lines)
    missing = [k for k in _HEADER_KEYS[:5] if k not in header]
    if missing:
        raise CovariateError(f"{path}: missing header field(s) {missing}")
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    rows = [ln.split() for ln in lines[body_start:] if ln.strip()]
    if len(rows) != nrows:
        raise CovariateError(f"{path}: expected {nrows} data rows, found {len(rows)}")
    for j, r in enumerate(rows):
        if len(r) != ncols:
            raise CovariateError(f"{path}: data row {j + 1} has {len(r)} values, expected {ncols}")
    values = np.array([[float(v) for v in r] for r in rows], dtype=float)[::-1]
    nodata = float(header.get("nodata_value", DEFAULT_NODATA))
    return RasterCovariate(
        name or path.stem,
        (float(header["xllcorner"]), float(header["yllcorner"])),
        float(header["cellsize"]),
        values,
        nodata,
    )


def write_ascii_grid(cov: RasterCovariate, path) -> None:
    """Write with shortest round-trip float formatting (bit-exact on read)."""
    x0, y0 = cov.origin
    lines = [
        f"ncols {cov.ncols}",
        f"nrows {cov.nrows}",
        f"xllcorner {x0!r}",
        f"yllcorner {y0!r}",
        f"cellsize {cov.cell!r}",
        f"NODATA_value {cov.nodata!r}",
    ]
    for row in cov.values[::-1]:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
