"""Decision-region rasters on two-coordinate slices of the data space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decision import DecisionRuleSpec

MIN_RESOLUTION = 16
DEFAULT_RANGE = (-4.0, 4.0)
DEFAULT_RESOLUTION = 401
ROW_CHUNK = 64


@dataclass(frozen=True, eq=False)
class RasterSlice:
    """Arm labels (1-based) on a square grid over coordinates ``axes``.

    ``labels[a, b]`` is the chosen arm at ``x[axes[0]] = grid[a]`` and
    ``x[axes[1]] = grid[b]``; every other coordinate is held at ``fixed``.
    """

    axes: tuple[int, int]
    fixed: np.ndarray
    lo: float
    hi: float
    resolution: int
    labels: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.resolution)

    def counts(self, n_arms: int) -> np.ndarray:
        """Number of cells assigned to each arm."""
        return np.bincount(self.labels.ravel() - 1, minlength=n_arms)

    def to_csv(self) -> str:
        """CSV text with header ``x{i},x{j},arm`` (1-based), LF line endings."""
        i, j = self.axes
        g = [repr(float(v)) for v in self.grid]
        lines = [f"x{i + 1},x{j + 1},arm"]
        for a, ga in enumerate(g):
            row = self.labels[a]
            lines.extend(f"{ga},{gb},{int(row[b])}" for b, gb in enumerate(g))
        return "\n".join(lines) + "\n"


def _slice_points(dim, axes, fixed, grid_a, grid_b) -> np.ndarray:
    pts = np.empty((len(grid_a), len(grid_b), dim))
    pts[...] = fixed
    pts[:, :, axes[0]] = grid_a[:, None]
    pts[:, :, axes[1]] = grid_b[None, :]
    return pts


def _check_slice(dim, axes, fixed, lo, hi, resolution):
    i, j = axes
    if not (0 <= i < dim and 0 <= j < dim) or i == j:
        raise ValueError(f"slice axes must be two distinct coordinates in 1..{dim}")
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"grid resolution must be at least {MIN_RESOLUTION}")
    if not hi > lo:
        raise ValueError("grid range must satisfy lo < hi")
    fixed = np.zeros(dim) if fixed is None else np.array(fixed, dtype=float)
    if fixed.shape != (dim,):
        raise ValueError("fixed must give a value for every coordinate")
    return fixed


def rasterize(
    spec: DecisionRuleSpec,
    axes=(0, 1),
    fixed=None,
    lo: float = DEFAULT_RANGE[0],
    hi: float = DEFAULT_RANGE[1],
    resolution: int = DEFAULT_RESOLUTION,
) -> RasterSlice:
    """Label every grid cell with the hard Bayes rule's choice.

    ``axes`` are 0-based coordinate indices; entries of ``fixed`` on those
    axes are ignored.
    """
    dim = spec.dim
    fixed = _check_slice(dim, axes, fixed, lo, hi, resolution)
    grid = np.linspace(lo, hi, resolution)
    labels = np.empty((resolution, resolution), dtype=np.int64)
    for start in range(0, resolution, ROW_CHUNK):
        rows = grid[start : start + ROW_CHUNK]
        pts = _slice_points(dim, axes, fixed, rows, grid)
        h = spec.scores(pts)
        labels[start : start + len(rows)] = np.argmax(h, axis=-1) + 1
    labels.setflags(write=False)
    return RasterSlice(tuple(int(a) for a in axes), fixed, float(lo), float(hi), int(resolution), labels)


def empirical_success_raster(
    dim: int,
    axes=(0, 1),
    fixed=None,
    lo: float = DEFAULT_RANGE[0],
    hi: float = DEFAULT_RANGE[1],
    resolution: int = DEFAULT_RESOLUTION,
) -> RasterSlice:
    """Pick-the-winner labels on the same grid, for comparison."""
    fixed = _check_slice(dim, axes, fixed, lo, hi, resolution)
    grid = np.linspace(lo, hi, resolution)
    pts = _slice_points(dim, axes, fixed, grid, grid)
    labels = np.argmax(pts, axis=-1) + 1
    labels.setflags(write=False)
    return RasterSlice(tuple(int(a) for a in axes), fixed, float(lo), float(hi), int(resolution), labels)
