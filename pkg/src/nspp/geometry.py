"""Observation windows built from axis-aligned rectangles.

A :class:`Window` is the union of one or more (possibly overlapping)
rectangles.  A :class:`DilatedWindow` is a raster approximation of the
window enlarged by a disc of given radius; cluster centres live there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

DEFAULT_CELL_FRACTION = 1.0 / 200.0


def _as_points(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    scalar = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {arr.shape}")
    return arr, scalar


@dataclass(frozen=True, eq=False)
class Window:
    """Union of closed axis-aligned rectangles.

    ``rects`` rows are ``(x_left, x_right, y_bottom, y_top)``.
    """

    rects: np.ndarray

    def __post_init__(self):
        r = np.array(self.rects, dtype=float, copy=True).reshape(-1, 4)
        if r.shape[0] == 0:
            raise ConfigurationError("window needs at least one rectangle")
        bad = (r[:, 0] >= r[:, 1]) | (r[:, 2] >= r[:, 3]) | ~np.isfinite(r).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ConfigurationError(f"rectangle {i} is degenerate: {tuple(r[i])}")
        r.setflags(write=False)
        object.__setattr__(self, "rects", r)

    @classmethod
    def from_edges(cls, x_left, x_right, y_bottom, y_top) -> "Window":
        cols = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (x_left, x_right, y_bottom, y_top)]
        if len({c.size for c in cols}) != 1:
            raise ConfigurationError("x_left, x_right, y_bottom, y_top must have equal length")
        return cls(np.column_stack(cols))

    @classmethod
    def unit_square(cls) -> "Window":
        return cls([[0.0, 1.0, 0.0, 1.0]])

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        r = self.rects
        return float(r[:, 0].min()), float(r[:, 1].max()), float(r[:, 2].min()), float(r[:, 3].max())

    @property
    def shorter_side(self) -> float:
        x0, x1, y0, y1 = self.bbox
        return min(x1 - x0, y1 - y0)

    @cached_property
    def pieces(self) -> np.ndarray:
        """Disjoint rectangles whose union equals the window.

        Built on the grid of all rectangle edges, so the decomposition is exact.
        """
        r = self.rects
        if r.shape[0] == 1:
            return r
        xs = np.unique(r[:, :2])
        ys = np.unique(r[:, 2:])
        xm = 0.5 * (xs[:-1] + xs[1:])
        ym = 0.5 * (ys[:-1] + ys[1:])
        gx, gy = np.meshgrid(xm, ym, indexing="ij")
        inside = self.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
        out = []
        for i in range(xm.size):
            j = 0
            while j < ym.size:
                if not inside[i, j]:
                    j += 1
                    continue
                j0 = j
                while j < ym.size and inside[i, j]:
                    j += 1
                out.append((xs[i], xs[i + 1], ys[j0], ys[j]))
        p = np.array(out, dtype=float)
        p.setflags(write=False)
        return p

    @cached_property
    def area(self) -> float:
        p = self.pieces
        return float(np.sum((p[:, 1] - p[:, 0]) * (p[:, 3] - p[:, 2])))

    def contains(self, p):
        """Closed-boundary membership; vectorised over an ``(n, 2)`` array."""
        pts, scalar = _as_points(p)
        x = pts[:, 0:1]
        y = pts[:, 1:2]
        r = self.rects
        hit = ((x >= r[:, 0]) & (x <= r[:, 1]) & (y >= r[:, 2]) & (y <= r[:, 3])).any(axis=1)
        return bool(hit[0]) if scalar else hit

    def distance(self, p) -> np.ndarray:
        """Euclidean distance from each point to the window (0 inside)."""
        pts, _ = _as_points(p)
        best = np.full(pts.shape[0], np.inf)
        for xl, xr, yb, yt in self.rects:
            dx = np.maximum(np.maximum(xl - pts[:, 0], pts[:, 0] - xr), 0.0)
            dy = np.maximum(np.maximum(yb - pts[:, 1], pts[:, 1] - yt), 0.0)
            np.minimum(best, np.hypot(dx, dy), out=best)
        return best


def window_area(w: Window) -> float:
    return w.area


def contains(region, p):
    return region.contains(p)


@dataclass(frozen=True, eq=False)
class DilatedWindow:
    """Raster mask of the Minkowski sum of ``base`` with a closed disc.

    Cell ``(row, col)`` covers ``[x0 + col*cell, x0 + (col+1)*cell)`` and
    the analogous y-range; row 0 is the southernmost row.
    """

    base: Window
    radius: float
    cell: float
    origin: tuple[float, float]
    mask: np.ndarray = field(repr=False)

    @property
    def nrows(self) -> int:
        return self.mask.shape[0]

    @property
    def ncols(self) -> int:
        return self.mask.shape[1]

    @cached_property
    def area(self) -> float:
        return float(np.count_nonzero(self.mask)) * self.cell**2

    @cached_property
    def true_cells(self) -> np.ndarray:
        rows, cols = np.nonzero(self.mask)
        return np.column_stack([rows, cols])

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, x0 + self.ncols * self.cell, y0, y0 + self.nrows * self.cell

    def cell_centers(self) -> np.ndarray:
        rc = self.true_cells
        x0, y0 = self.origin
        return np.column_stack([x0 + (rc[:, 1] + 0.5) * self.cell, y0 + (rc[:, 0] + 0.5) * self.cell])

    def _cell_index(self, pts: np.ndarray):
        x0, y0 = self.origin
        fx = (pts[:, 0] - x0) / self.cell
        fy = (pts[:, 1] - y0) / self.cell
        inside = (fx >= 0) & (fx <= self.ncols) & (fy >= 0) & (fy <= self.nrows)
        col = np.clip(np.floor(np.where(inside, fx, 0)).astype(np.int64), 0, self.ncols - 1)
        row = np.clip(np.floor(np.where(inside, fy, 0)).astype(np.int64), 0, self.nrows - 1)
        return row, col, inside

    def contains_xy(self, x: float, y: float) -> bool:
        """Scalar membership test for a single point (same rule as ``contains``)."""
        x0, y0 = self.origin
        fx = (x - x0) / self.cell
        fy = (y - y0) / self.cell
        if 0 <= fx <= self.ncols and 0 <= fy <= self.nrows:
            if self.mask[min(int(fy), self.nrows - 1), min(int(fx), self.ncols - 1)]:
                return True
        return bool(self.base.contains((x, y)))

    def contains(self, p):
        pts, scalar = _as_points(p)
        row, col, inside = self._cell_index(pts)
        hit = (inside & self.mask[row, col]) | self.base.contains(pts)
        return bool(hit[0]) if scalar else hit


def default_cell(w: Window, radius: float = 0.0) -> float:
    cell = w.shorter_side * DEFAULT_CELL_FRACTION
    if radius > 0:
        cell = min(cell, radius / 2.0)
    return cell


def dilate(w: Window, radius: float, cell: float | None = None) -> DilatedWindow:
    """Rasterised dilation of ``w`` by ``radius``.

    A mask cell is set when its centre lies within ``radius`` of ``w``.  The
    raster is anchored at the lower-left corner of the window's bounding
    box, so dilations with a common cell size are cell-aligned.
    """
    if radius < 0 or not np.isfinite(radius):
        raise ConfigurationError(f"dilation radius must be >= 0, got {radius}")
    if cell is None:
        cell = default_cell(w, radius)
    if cell <= 0:
        raise ConfigurationError(f"cell size must be > 0, got {cell}")
    if radius > 0 and cell > radius / 2.0:
        raise ConfigurationError(
            f"cell {cell} too coarse for dilation radius {radius} (need cell <= radius/2)"
        )
    bx0, bx1, by0, by1 = w.bbox
    pad = int(np.ceil(radius / cell - 1e-9))
    x0 = bx0 - pad * cell
    y0 = by0 - pad * cell
    ncols = int(np.ceil((bx1 + radius - x0) / cell - 1e-9))
    nrows = int(np.ceil((by1 + radius - y0) / cell - 1e-9))
    xc = x0 + (np.arange(ncols) + 0.5) * cell
    mask = np.zeros((nrows, ncols), dtype=bool)
    # row-chunked to bound memory on fine rasters
    chunk = max(1, 2_000_000 // max(ncols, 1))
    for r0 in range(0, nrows, chunk):
        r1 = min(nrows, r0 + chunk)
        yc = y0 + (np.arange(r0, r1) + 0.5) * cell
        gx, gy = np.meshgrid(xc, yc)
        d = w.distance(np.column_stack([gx.ravel(), gy.ravel()]))
        mask[r0:r1] = (d <= radius).reshape(r1 - r0, ncols)
    mask.setflags(write=False)
    return DilatedWindow(base=w, radius=float(radius), cell=float(cell), origin=(x0, y0), mask=mask)


def region_area(region) -> float:
    return region.area


def sample_uniform(region, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform points on a window or dilated window."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty((0, 2))
    if isinstance(region, DilatedWindow):
        cells = region.true_cells
        pick = cells[rng.integers(0, cells.shape[0], size=n)]
        u = rng.random((n, 2))
        x0, y0 = region.origin
        return np.column_stack([
            x0 + (pick[:, 1] + u[:, 0]) * region.cell,
            y0 + (pick[:, 0] + u[:, 1]) * region.cell,
        ])
    p = region.pieces
    a = (p[:, 1] - p[:, 0]) * (p[:, 3] - p[:, 2])
    idx = rng.choice(p.shape[0], size=n, p=a / a.sum()) if p.shape[0] > 1 else np.zeros(n, dtype=int)
    u = rng.random((n, 2))
    sel = p[idx]
    return np.column_stack([
        sel[:, 0] + u[:, 0] * (sel[:, 1] - sel[:, 0]),
        sel[:, 2] + u[:, 1] * (sel[:, 3] - sel[:, 2]),
    ])


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Midpoint-rule nodes and weights over a region."""

    points: np.ndarray
    weights: np.ndarray
    domain: str = "W"

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.points.shape[0]


def make_grid(region, cell: float | None = None, domain: str | None = None) -> QuadratureGrid:
    """Midpoint grid over the bounding box, restricted to ``region``."""
    if cell is None:
        base = region.base if isinstance(region, DilatedWindow) else region
        cell = default_cell(base)
    if cell <= 0:
        raise ConfigurationError(f"grid cell must be > 0, got {cell}")
    x0, x1, y0, y1 = region.bbox
    nx = max(int(np.ceil((x1 - x0) / cell - 1e-9)), 0)
    ny = max(int(np.ceil((y1 - y0) / cell - 1e-9)), 0)
    xc = x0 + (np.arange(nx) + 0.5) * cell
    yc = y0 + (np.arange(ny) + 0.5) * cell
    gx, gy = np.meshgrid(xc, yc)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[region.contains(pts)] if pts.size else pts.reshape(0, 2)
    if pts.shape[0] == 0:
        raise ConfigurationError(f"quadrature grid with cell {cell} is empty for this region")
    if domain is None:
        domain = "W_dil" if isinstance(region, DilatedWindow) else "W"
    return QuadratureGrid(points=pts, weights=np.full(pts.shape[0], cell * cell), domain=domain)
