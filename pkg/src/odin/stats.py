"""Monte Carlo summary statistics: MSE, log-log slopes, Q-Q data, paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats as sps


class MSESummary(NamedTuple):
    mse: float
    se: float  # standard error of the mean estimate
    bias: float
    variance: float  # sample variance, ddof = 1
    mean: float


def mse_and_se(estimates, truth: float) -> MSESummary:
    est = np.asarray(estimates, dtype=float).ravel()
    if est.size < 2:
        raise ValueError("need at least two trials")
    if not np.all(np.isfinite(est)):
        raise ValueError("estimates must be finite")
    mean = float(np.mean(est))
    err = est - truth
    mse = float(np.mean(err * err))
    var = float(np.var(est, ddof=1))
    return MSESummary(mse, math.sqrt(var / est.size), mean - truth, var, mean)


def loglog_slope(ns, mses) -> float:
    """Negated least-squares slope of log(mse) against log(N)."""
    ns = np.asarray(ns, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if ns.shape != mses.shape:
        raise ValueError("ns and mses must align")
    if np.any(ns <= 0) or np.any(mses <= 0):
        raise ValueError("sample sizes and MSEs must be positive")
    if np.unique(ns).size < 2:
        raise ValueError("need at least two distinct sample sizes")
    slope = np.polyfit(np.log(ns), np.log(mses), 1)[0]
    return float(-slope)


@dataclass
class QQData:
    theoretical: np.ndarray
    empirical: np.ndarray
    correlation: float

    def rows(self):
        return zip(self.theoretical.tolist(), self.empirical.tolist())


def qq_points(values) -> QQData:
    """Studentized order statistics against standard-normal quantiles at (k - 0.5)/T."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 10:
        raise ValueError("need at least 10 values for a Q-Q comparison")
    sd = float(np.std(v, ddof=1))
    if not sd > 0:
        raise ValueError("sample standard deviation is zero")
    emp = np.sort((v - v.mean()) / sd)
    theo = sps.norm.ppf((np.arange(1, v.size + 1) - 0.5) / v.size)
    r = float(np.corrcoef(theo, emp)[0, 1])
    return QQData(theo, emp, max(-1.0, min(1.0, r)))


class TTestResult(NamedTuple):
    t: float
    p: float
    df: int
    alternative: str


ALTERNATIVES = ("two-sided", "greater", "less")


def paired_ttest(a, b, alternative: str = "two-sided") -> TTestResult:
    """Paired t-test on d = a - b.

    ``greater`` tests mean(a) > mean(b), ``less`` the reverse.  All-zero
    differences give t = 0, p = 1; zero spread with a nonzero mean gives the
    infinite-t limit.
    """
    alt = {"a>b": "greater", "a<b": "less"}.get(alternative, alternative)
    if alt not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES} (or 'a>b' / 'a<b'), got {alternative!r}")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("paired samples must have the same length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    diff = a - b
    df = diff.size - 1
    mean = float(np.mean(diff))
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, alt)
        t = math.copysign(math.inf, mean)
    else:
        t = mean / (sd / math.sqrt(diff.size))
    if alt == "two-sided":
        p = 2.0 * float(sps.t.sf(abs(t), df))
    elif alt == "greater":
        p = float(sps.t.sf(t, df))
    else:
        p = float(sps.t.cdf(t, df))
    return TTestResult(t, min(1.0, p), df, alt)


@dataclass
class TrialMatrix:
    """T trials by C cells of estimates with a ground-truth value per cell."""

    estimates: np.ndarray
    truth: np.ndarray
    cells: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.estimates = np.atleast_2d(np.asarray(self.estimates, dtype=float))
        self.truth = np.asarray(self.truth, dtype=float).ravel()
        if self.estimates.shape[0] < 1:
            raise ValueError("need at least one trial")
        if self.truth.size != self.estimates.shape[1]:
            raise ValueError("one truth value per cell")

    def summaries(self) -> list[MSESummary]:
        return [mse_and_se(self.estimates[:, c], self.truth[c]) for c in range(self.truth.size)]
