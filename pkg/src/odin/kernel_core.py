"""Uniform product-kernel density estimates on a shared distance cache.

With the rectangular kernel K(u) = 1 iff max_i |u_i| <= 1/2, a sample s lies
in the kernel support around x exactly when the Chebyshev distance
max_k |x_k - s_k| is at most h/2.  Distances are therefore computed once per
(evals, samples) pair and every bandwidth reduces to an integer count of
cache entries under a threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class SampleSet:
    """N points in d dimensions, stored as an (N, d) float array."""

    points: np.ndarray
    box: tuple[float, float] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be an (N, d) array with N, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample coordinates must be finite")
        if self.box is not None:
            lo, hi = self.box
            if np.any(pts < lo) or np.any(pts > hi):
                raise ValueError(f"sample coordinates fall outside the declared box [{lo}, {hi}]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_csv(cls, path: str | Path, box: tuple[float, float] | None = None) -> "SampleSet":
        """Read one point per row; a non-numeric first row is treated as a header."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        if not rows:
            raise ValueError(f"{path}: no rows")
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
        return cls(np.array([[float(c) for c in r] for r in rows], dtype=float), box=box)

    def to_csv(self, path: str | Path, header: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow([f"x{k}" for k in range(self.dim)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric product kernel; only the uniform rectangle is implemented."""

    kind: str = "uniform-product"
    half_width: float = 0.5
    sup_norm: float = 1.0

    def __post_init__(self):
        if self.kind != "uniform-product":
            raise ValueError(f"unsupported kernel {self.kind!r}")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """K(u) for scaled offsets u with shape (..., d)."""
        u = np.asarray(u, dtype=float)
        return np.all(np.abs(u) <= self.half_width, axis=-1).astype(float)

    def contains(self, diff: np.ndarray, h: float) -> np.ndarray:
        """Support membership of unscaled offsets: every |diff_k| <= h/2."""
        return np.all(np.abs(np.asarray(diff, dtype=float)) <= self.half_width * h, axis=-1)


UNIFORM = KernelSpec()


@dataclass
class DistanceCache:
    """Chebyshev distances from M eval points to N samples.

    ``excluded`` marks pairs that never count (self-pairs for leave-one-out).
    One cache serves every bandwidth of an ensemble.
    """

    distances: np.ndarray
    excluded: np.ndarray
    dim: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.distances.shape

    @property
    def n_samples(self) -> int:
        return self.distances.shape[1]

    @property
    def n_included(self) -> np.ndarray:
        return self.distances.shape[1] - self.excluded.sum(axis=1)

    def nearest(self) -> np.ndarray:
        """Distance from each eval point to its closest counted sample (inf if none)."""
        return np.where(self.excluded, np.inf, self.distances).min(axis=1)

    def counts(self, radii: Sequence[float] | np.ndarray) -> np.ndarray:
        """In-box counts, shape (M, R): non-excluded entries <= each radius.

        Every entry is binned once against the sorted radii and the per-row
        histograms are accumulated, so all bandwidths cost one pass.
        """
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        order = np.argsort(radii, kind="stable")
        r_sorted = radii[order]
        m, n = self.distances.shape
        nb = r_sorted.size + 1
        # bin k holds entries with r_sorted[k-1] < dist <= r_sorted[k]; bin R holds the rest
        bins = np.searchsorted(r_sorted, self.distances, side="left")
        bins[self.excluded] = nb - 1
        bins += (np.arange(m) * nb)[:, None]
        hist = np.bincount(bins.ravel(), minlength=m * nb).reshape(m, nb)
        cum = np.cumsum(hist[:, :-1], axis=1)
        out = np.empty_like(cum)
        out[:, order] = cum
        return out


def pairwise_chebyshev(evals: SampleSet, samples: SampleSet, exclude_diagonal: bool = False) -> DistanceCache:
    """Max-coordinate distances between every eval point and every sample."""
    if evals.dim != samples.dim:
        raise ValueError(f"dimension mismatch: evals d={evals.dim}, samples d={samples.dim}")
    x, y = evals.points, samples.points
    dist = np.abs(x[:, 0][:, None] - y[:, 0][None, :])
    for k in range(1, x.shape[1]):
        np.maximum(dist, np.abs(x[:, k][:, None] - y[:, k][None, :]), out=dist)
    excluded = np.zeros(dist.shape, dtype=bool)
    if exclude_diagonal:
        m = min(dist.shape)
        excluded[np.arange(m), np.arange(m)] = True
    return DistanceCache(dist, excluded, x.shape[1])


def _norm_volume(h: float, d: int, n_effective: int) -> float:
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if n_effective < 1:
        raise ValueError("n_effective must be >= 1 (leave-one-out needs at least two samples)")
    vol = h**d
    if vol == 0.0 or not np.isfinite(vol):
        raise ValueError(f"h^d is not representable for h={h}, d={d}")
    return n_effective * vol


def density_from_counts(counts: np.ndarray, h: float, d: int, n_effective: int) -> np.ndarray:
    return counts / _norm_volume(h, d, n_effective)


def kde_eval(cache: DistanceCache, h: float, kernel: KernelSpec = UNIFORM, n_effective: int | None = None) -> np.ndarray:
    """Density estimate at each eval point: count / (n_effective * h^d).

    ``n_effective`` defaults to the number of non-excluded samples per row
    (N for cross estimates, N - 1 for leave-one-out).
    """
    if n_effective is None:
        n_effective = int(cache.n_included.min())
    scale = _norm_volume(h, cache.dim, n_effective)
    counts = np.count_nonzero((cache.distances <= kernel.half_width * h) & ~cache.excluded, axis=1)
    return counts / scale


def coverage_radius(s1: SampleSet, s2: SampleSet) -> np.ndarray:
    """Per evaluation point X_j, the Chebyshev distance to its nearest counted neighbour.

    Both density estimates are positive at X_j exactly when half the bandwidth
    reaches this radius (f1 from all of ``s1``, f2 leave-one-out from ``s2``).
    """
    near1 = pairwise_chebyshev(s2, s1).nearest()
    near2 = pairwise_chebyshev(s2, s2, exclude_diagonal=True).nearest()
    return np.maximum(near1, near2)


def smallest_covering_l(
    need: np.ndarray | float,
    l_grid: Sequence[float],
    bandwidth_rule: Callable[[float], float],
    kernel: KernelSpec = UNIFORM,
) -> float:
    """First l in the ascending grid whose bandwidth covers every radius in ``need``."""
    grid = np.asarray(l_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("l_grid is empty")
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("l_grid must be positive and strictly ascending")
    hs = np.array([bandwidth_rule(float(l)) for l in grid])
    if np.any(np.diff(hs) <= 0):
        raise ValueError("bandwidth_rule must be strictly increasing in l")
    need = np.atleast_1d(np.asarray(need, dtype=float))
    ok = need[:, None] <= kernel.half_width * hs[None, :]
    passing = np.flatnonzero(ok.all(axis=0))
    if passing.size == 0:
        worst = int(np.argmax(need))
        raise ValueError(
            f"grid exhausted: no l in [{grid[0]}, {grid[-1]}] gives positive estimates; "
            f"eval index {worst} needs h >= {2 * need[worst]:.6g}"
        )
    return float(grid[passing[0]])


def min_positive_bandwidth(
    s1: SampleSet,
    s2: SampleSet,
    l_grid: Sequence[float],
    bandwidth_rule: Callable[[float], float],
    kernel: KernelSpec = UNIFORM,
) -> float:
    """Smallest l in the grid at which both density estimates are positive at every X_j.

    Positivity is monotone in h for the uniform kernel, so the first passing
    grid element is returned.
    """
    return smallest_covering_l(coverage_radius(s1, s2), l_grid, bandwidth_rule, kernel)
