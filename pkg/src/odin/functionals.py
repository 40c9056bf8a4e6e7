"""Divergence functionals G(f1, f2) = E_{f2}[g(f1(X), f2(X))] and their plug-in estimate."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from odin.kernel_core import UNIFORM, KernelSpec, SampleSet, density_from_counts, pairwise_chebyshev

CLIP_FLOOR = 1e-12


def _check_args(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("density arguments must be positive after clipping")
    return x, y


def g_renyi(x, y, alpha: float = 0.5):
    """(x / y) ** alpha; integrating against f2 gives the Renyi-alpha integral."""
    x, y = _check_args(x, y)
    out = (x / y) ** alpha
    return float(out) if out.ndim == 0 else out


def g_kl(x, y):
    """-ln(x / y), so G = int f2 ln(f2 / f1) = KL(f2 || f1)."""
    x, y = _check_args(x, y)
    out = -np.log(x / y)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FunctionalSpec:
    name: str
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    alpha: float | None = None
    lipschitz: bool = True
    clip_floor: float = CLIP_FLOOR
    # mixed partials depend on x, y only through x^a y^b (needed for the ODin2 bias expansion)
    power_form_derivatives: bool = True
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, x, y):
        return self.evaluate(x, y)

    @property
    def label(self) -> str:
        if self.alpha is None:
            return self.name
        return f"{self.name}:alpha={self.alpha:g}"


def kl(clip_floor: float = CLIP_FLOOR) -> FunctionalSpec:
    return FunctionalSpec("kl", g_kl, clip_floor=clip_floor)


def renyi(alpha: float = 0.5, clip_floor: float = CLIP_FLOOR) -> FunctionalSpec:
    if not (0.0 < alpha < 1.0):
        warnings.warn(f"alpha={alpha} lies outside (0, 1); this range is untested", stacklevel=2)

    def evaluate(x, y, _a=alpha):
        return g_renyi(x, y, _a)

    return FunctionalSpec("renyi", evaluate, alpha=alpha, clip_floor=clip_floor)


def constant(value: float = 1.0) -> FunctionalSpec:
    """g == value; handy for checking the averaging step in isolation."""

    def evaluate(x, y, _v=value):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, _v, dtype=float)

    return FunctionalSpec("constant", evaluate, params={"value": value})


def parse_functional(text: str) -> FunctionalSpec:
    """Parse ``kl`` or ``renyi:alpha=0.5`` style selectors."""
    name, _, rest = text.strip().partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"malformed functional parameter {item!r} in {text!r}")
        params[key.strip()] = float(val)
    name = name.lower()
    if name == "kl":
        if set(params) - {"clip"}:
            raise ValueError(f"kl takes no parameters besides clip, got {sorted(params)}")
        return kl(params.get("clip", CLIP_FLOOR))
    if name == "renyi":
        if set(params) - {"alpha", "clip"}:
            raise ValueError(f"unknown renyi parameters {sorted(set(params) - {'alpha', 'clip'})}")
        return renyi(params.get("alpha", 0.5), params.get("clip", CLIP_FLOOR))
    raise ValueError(f"unknown functional {name!r} (expected 'kl' or 'renyi:alpha=A')")


@dataclass
class EstimateResult:
    value: float
    bandwidths: tuple[float, float]
    clipped_count: int
    n: tuple[int, int]
    per_l: list[float] | None = None
    l_values: list[float] | None = None
    weights: list[float] | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "bandwidths": list(self.bandwidths),
            "clipped_count": self.clipped_count,
            "n": list(self.n),
        }
        if self.per_l is not None:
            out["per_l"] = self.per_l
            out["l_values"] = self.l_values
        if self.weights is not None:
            out["weights"] = self.weights
        out.update(self.extra)
        return out


def plugin_from_densities(f1: np.ndarray, f2: np.ndarray, g: FunctionalSpec) -> tuple[float, int]:
    """Mean of g over eval points after clipping; returns (value, clipped_count)."""
    low1 = f1 < g.clip_floor
    low2 = f2 < g.clip_floor
    clipped = int(low1.sum() + low2.sum())
    if clipped:
        f1 = np.where(low1, g.clip_floor, f1)
        f2 = np.where(low2, g.clip_floor, f2)
    vals = np.asarray(g(f1, f2), dtype=float).ravel()
    # fsum is correctly rounded, so the mean does not depend on row order
    return math.fsum(vals.tolist()) / vals.size, clipped


def plugin_estimate(
    s1: SampleSet,
    s2: SampleSet,
    h1: float,
    h2: float,
    g: FunctionalSpec,
    kernel: KernelSpec = UNIFORM,
) -> EstimateResult:
    """Leave-one-out KDE plug-in estimate evaluated at the points of ``s2``.

    f1 uses all N1 samples of ``s1``; f2 at X_i uses the other N2 - 1 samples.
    """
    if s1.dim != s2.dim:
        raise ValueError(f"dimension mismatch: s1 d={s1.dim}, s2 d={s2.dim}")
    if s2.n < 2:
        raise ValueError("the leave-one-out estimate needs N2 >= 2")
    cross = pairwise_chebyshev(s2, s1)
    loo = pairwise_chebyshev(s2, s2, exclude_diagonal=True)
    c1 = cross.counts([kernel.half_width * h1])[:, 0]
    c2 = loo.counts([kernel.half_width * h2])[:, 0]
    f1 = density_from_counts(c1, h1, s1.dim, s1.n)
    f2 = density_from_counts(c2, h2, s2.dim, s2.n - 1)
    value, clipped = plugin_from_densities(f1, f2, g)
    if not math.isfinite(value):
        raise FloatingPointError(f"plug-in estimate is not finite at h1={h1}, h2={h2}")
    return EstimateResult(value, (float(h1), float(h2)), clipped, (s1.n, s2.n))
