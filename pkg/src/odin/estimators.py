"""ODin1 / ODin2 ensemble estimators and their convex combination."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from odin.ensemble import BasisSet, WeightSolution, basis_for, solve_weights
from odin.functionals import EstimateResult, FunctionalSpec, plugin_from_densities
from odin.kernel_core import UNIFORM, KernelSpec, SampleSet, density_from_counts, pairwise_chebyshev

KINDS = ("odin1", "odin2", "plugin")

# l ranges used when none are given: ODin1 on [1.5, 3], ODin2 on [2, 3]
DEFAULT_L_RANGE = {"odin1": (1.5, 3.0), "odin2": (2.0, 3.0), "plugin": (2.0, 3.0)}
DEFAULT_L = 50


@dataclass
class EnsembleConfig:
    kind: str
    l_values: np.ndarray
    functional: FunctionalSpec
    eta: float | str = "auto"
    lam: int | None = None
    s_cap: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        lv = np.asarray(self.l_values, dtype=float).ravel()
        if lv.size == 0 or np.any(lv <= 0) or np.any(np.diff(lv) <= 0):
            raise ValueError("l_values must be positive and strictly increasing")
        self.l_values = lv

    @property
    def L(self) -> int:
        return self.l_values.size

    @classmethod
    def default(cls, kind: str, functional: FunctionalSpec, L: int = DEFAULT_L, lmin=None, lmax=None, eta="auto", **kw):
        lo, hi = DEFAULT_L_RANGE[kind]
        lo = lo if lmin is None else lmin
        hi = hi if lmax is None else lmax
        return cls(kind, np.linspace(lo, hi, L), functional, eta=eta, **kw)

    def basis(self, d: int) -> BasisSet:
        if self.kind == "odin2":
            return basis_for("odin2", d, lam=self.lam, s_cap=self.s_cap)
        return basis_for("odin1" if self.kind == "odin1" else "odin2", d)

    def bandwidths(self, d: int, n: int) -> np.ndarray:
        return self.basis(d).bandwidth(self.l_values, n)


@lru_cache(maxsize=256)
def _cached_weights(kind, d, n, l_key, eta, lam, s_cap) -> WeightSolution:
    basis = basis_for(kind, d, lam=lam, s_cap=s_cap) if kind == "odin2" else basis_for(kind, d)
    return solve_weights(np.array(l_key), basis, n, eta)


def weights_for(config: EnsembleConfig, d: int, n: int) -> WeightSolution:
    """Weights depend only on (kind, d, N, l_values, eta), never on the data."""
    if config.kind == "plugin":
        raise ValueError("the plug-in baseline has no ensemble weights")
    return _cached_weights(config.kind, d, n, tuple(config.l_values.tolist()), config.eta, config.lam, config.s_cap)


class PairCaches:
    """Cross and leave-one-out distance caches for one (s1, s2) draw."""

    def __init__(self, s1: SampleSet, s2: SampleSet, kernel: KernelSpec = UNIFORM):
        if s1.dim != s2.dim:
            raise ValueError(f"dimension mismatch: s1 d={s1.dim}, s2 d={s2.dim}")
        if s2.n < 2:
            raise ValueError("the leave-one-out estimate needs N2 >= 2")
        self.s1, self.s2, self.kernel = s1, s2, kernel
        self.cross = pairwise_chebyshev(s2, s1)
        self.loo = pairwise_chebyshev(s2, s2, exclude_diagonal=True)

    def plugin_values(self, hs, g: FunctionalSpec) -> tuple[np.ndarray, np.ndarray]:
        """Plug-in estimate with h1 = h2 = h for every h; returns (values, clipped counts)."""
        hs = np.atleast_1d(np.asarray(hs, dtype=float))
        radii = self.kernel.half_width * hs
        c1 = self.cross.counts(radii)
        c2 = self.loo.counts(radii)
        d = self.s1.dim
        vals = np.empty(hs.size)
        clipped = np.empty(hs.size, dtype=np.int64)
        for k, h in enumerate(hs):
            f1 = density_from_counts(c1[:, k], h, d, self.s1.n)
            f2 = density_from_counts(c2[:, k], h, d, self.s2.n - 1)
            vals[k], clipped[k] = plugin_from_densities(f1, f2, g)
        return vals, clipped


def _weighted_sum(weights: np.ndarray, values: np.ndarray) -> float:
    total = 0.0
    for w, v in zip(weights.tolist(), values.tolist()):
        total += w * v
    return total


def ensemble_estimate(
    s1: SampleSet,
    s2: SampleSet,
    config: EnsembleConfig,
    weights: WeightSolution | np.ndarray,
    caches: PairCaches | None = None,
) -> EstimateResult:
    """sum_l w(l) * plug-in estimate at h(l), with both densities at the same bandwidth."""
    if s1.n != s2.n:
        raise ValueError(f"ensemble estimators need N1 == N2 (got {s1.n} and {s2.n})")
    w = np.asarray(weights.weights if isinstance(weights, WeightSolution) else weights, dtype=float)
    if w.size != config.L:
        raise ValueError(f"{w.size} weights for {config.L} ensemble members")
    n, d = s2.n, s2.dim
    hs = config.bandwidths(d, n)
    caches = caches or PairCaches(s1, s2)
    vals, clipped = caches.plugin_values(hs, config.functional)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FloatingPointError(f"plug-in estimate not finite at l={config.l_values[bad[0]]}")
    value = _weighted_sum(w, vals)
    res = EstimateResult(
        value=value,
        bandwidths=(float(hs[0]), float(hs[-1])),
        clipped_count=int(clipped.sum()),
        n=(s1.n, s2.n),
        per_l=vals.tolist(),
        l_values=config.l_values.tolist(),
        weights=w.tolist(),
    )
    if isinstance(weights, WeightSolution):
        res.extra["weight_solution"] = {"epsilon": weights.epsilon, "norm_sq": weights.norm_sq, "eta": weights.eta}
    return res


def _odin(kind: str, s1: SampleSet, s2: SampleSet, config: EnsembleConfig, caches=None) -> EstimateResult:
    if config.kind != kind:
        raise ValueError(f"config is for {config.kind!r}, expected {kind!r}")
    if s1.n != s2.n:
        raise ValueError(f"ensemble estimators need N1 == N2 (got {s1.n} and {s2.n})")
    sol = weights_for(config, s2.dim, s2.n)
    res = ensemble_estimate(s1, s2, config, sol, caches)
    res.extra["estimator"] = kind
    return res


def odin1_estimate(s1: SampleSet, s2: SampleSet, config: EnsembleConfig, caches=None) -> EstimateResult:
    """Ensemble with h(l) = l N^(-1/(2d)) and psi_i(l) = l^i, i = 1..d, plus l^-d."""
    return _odin("odin1", s1, s2, config, caches)


def odin2_estimate(s1: SampleSet, s2: SampleSet, config: EnsembleConfig, caches=None) -> EstimateResult:
    """Ensemble with h(l) = l N^(-1/(d+1)) over the (j, q) index set."""
    return _odin("odin2", s1, s2, config, caches)


def combined_estimate(
    s1: SampleSet,
    s2: SampleSet,
    cfg1: EnsembleConfig,
    cfg2: EnsembleConfig,
    rho: float,
    caches=None,
) -> EstimateResult:
    """(1 - rho) * ODin1 + rho * ODin2."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    caches = caches or PairCaches(s1, s2)
    r1 = odin1_estimate(s1, s2, cfg1, caches)
    r2 = odin2_estimate(s1, s2, cfg2, caches)
    if rho == 0.0:
        value = r1.value
    elif rho == 1.0:
        value = r2.value
    else:
        value = (1.0 - rho) * r1.value + rho * r2.value
    return EstimateResult(
        value=value,
        bandwidths=(min(r1.bandwidths[0], r2.bandwidths[0]), max(r1.bandwidths[1], r2.bandwidths[1])),
        clipped_count=r1.clipped_count + r2.clipped_count,
        n=r1.n,
        extra={"estimator": f"combined:rho={rho:g}", "rho": rho, "odin1": r1.value, "odin2": r2.value},
    )


def estimate_all_l(s1: SampleSet, s2: SampleSet, config: EnsembleConfig, caches=None) -> np.ndarray:
    """Plug-in estimates at every h(l) of the config's rule."""
    caches = caches or PairCaches(s1, s2)
    vals, _ = caches.plugin_values(config.bandwidths(s2.dim, s2.n), config.functional)
    return vals
