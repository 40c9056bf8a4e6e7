"""Seeded Monte Carlo experiment runner.

Every experiment is a list of cells, one per (density case, d, N).  A trial
draws fresh samples from streams keyed by (seed, cell, trial, role) and
evaluates every estimator of the experiment on the same draw, so estimator
comparisons are paired by trial.  Ensemble weights depend only on the cell and
are solved once per cell in the parent process.  Trials run in a process pool
and are merged in (cell, trial) order, so the output bytes do not depend on
the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from odin import stats
from odin.distributions import TruncatedGaussianSpec, tg_sample, true_divergence
from odin.ensemble import basis_for, solve_weights
from odin.estimators import DEFAULT_L_RANGE, PairCaches
from odin.functionals import parse_functional
from odin.kernel_core import coverage_radius, smallest_covering_l

KINDS = ("mse-sweep", "clt", "tuning-sweep", "rho-sweep")
KIND_ALIASES = {"tuning": "tuning-sweep", "rho": "rho-sweep", "mse": "mse-sweep"}
DEFAULT_NS = (100, 240, 560, 1330, 3200)

# min/max of the l grid for the tuning sweep, Sets 1 to 5
TUNING_SETS = {
    "odin1": ((1.5, 3.0), (1.75, 3.0), (2.0, 3.0), (2.25, 3.0), (2.5, 3.0)),
    "odin2": ((2.0, 3.0), (2.25, 3.0), (2.5, 3.0), (2.75, 3.0), (2.75, 3.25)),
}
DEFAULT_ETAS = (0.5, 1.0, 2.5, 5.0, 7.5, 10.0)
DEFAULT_RHOS = tuple(round(0.05 * k, 2) for k in range(21))

# stream roles: evaluation draws, pilot draws for the l_min guard, tuning draws
ROLE_F1, ROLE_F2, ROLE_PILOT1, ROLE_PILOT2, ROLE_TUNE1, ROLE_TUNE2 = 0, 1, 2, 3, 4, 5
DEFAULT_TUNE_LMINS = (1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0)
DEFAULT_TUNE_WIDTHS = (0.5, 1.0, 2.0, 4.0)

# weight solves performed by the runner; trials never solve weights
WEIGHT_SOLVES = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DensityCase:
    """f1 and f2 as isotropic truncated Gaussians on the unit cube.

    ``scale="variance"`` reads var1/var2 as sigma^2; ``"sigma"`` reads them as
    sigma and squares them.
    """

    name: str
    mu1: float
    mu2: float
    var1: float
    var2: float
    scale: str = "variance"

    def __post_init__(self):
        if self.scale not in ("variance", "sigma"):
            raise ConfigError(f"density scale must be 'variance' or 'sigma', got {self.scale!r}")

    def specs(self, d: int) -> tuple[TruncatedGaussianSpec, TruncatedGaussianSpec]:
        v1, v2 = (self.var1, self.var2) if self.scale == "variance" else (self.var1**2, self.var2**2)
        return TruncatedGaussianSpec.isotropic(d, self.mu1, v1), TruncatedGaussianSpec.isotropic(d, self.mu2, v2)


DIFFERENT_MEANS = DensityCase("different-means", 0.7, 0.3, 0.1, 0.1)
CLT_SAME = DensityCase("same", 0.3, 0.3, 0.3, 0.3)
CLT_DIFFERENT = DensityCase("different", 0.7, 0.3, 0.1, 0.3)


@dataclass
class ExperimentConfig:
    kind: str = "mse-sweep"
    dims: list[int] = field(default_factory=lambda: [4])
    sample_sizes: list[int] = field(default_factory=lambda: list(DEFAULT_NS))
    trials: int | None = None
    seed: int = 0
    functional: str | None = None
    densities: list[DensityCase] | None = None
    L: int = 50
    l_ranges: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_L_RANGE))
    eta: float | str = "auto"
    # "pilot": raise min(l) to the largest l_min seen on pilot draws; "none": use l ranges as given
    l_guard: str | None = None
    # default: one pilot per trial, so on average fewer than one trial outruns the guard
    pilot_draws: int | None = None
    # "fixed": use l_ranges; "tuned": pick (min l, width) per cell and estimator by MSE on separate tuning draws
    l_select: str = "fixed"
    tune_trials: int = 30
    tune_lmins: list[float] = field(default_factory=lambda: list(DEFAULT_TUNE_LMINS))
    tune_widths: list[float] = field(default_factory=lambda: list(DEFAULT_TUNE_WIDTHS))
    l_sets: dict[str, list[tuple[float, float]]] = field(default_factory=lambda: {k: list(v) for k, v in TUNING_SETS.items()})
    etas: list[float] = field(default_factory=lambda: list(DEFAULT_ETAS))
    eta_sweep_range: tuple[float, float] = (2.0, 3.0)
    rhos: list[float] = field(default_factory=lambda: list(DEFAULT_RHOS))
    threads: int = 1
    out: str | None = None

    def __post_init__(self):
        self.kind = KIND_ALIASES.get(self.kind, self.kind)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.trials is None:
            self.trials = 200 if self.kind == "clt" else 100
        if self.functional is None:
            self.functional = "kl" if self.kind == "clt" else "renyi:alpha=0.5"
        if self.densities is None:
            self.densities = [CLT_SAME, CLT_DIFFERENT] if self.kind == "clt" else [DIFFERENT_MEANS]
        if self.pilot_draws is None:
            self.pilot_draws = self.trials
        if self.l_guard is None:
            # the tuning sweep studies the l sets themselves, so it leaves them alone
            self.l_guard = "none" if self.kind == "tuning-sweep" else "pilot"
        self.densities = [d if isinstance(d, DensityCase) else DensityCase(**d) for d in self.densities]
        self.l_ranges = {k: tuple(map(float, v)) for k, v in self.l_ranges.items()}
        self.l_sets = {k: [tuple(map(float, s)) for s in v] for k, v in self.l_sets.items()}
        self.eta_sweep_range = tuple(map(float, self.eta_sweep_range))
        self.validate()

    def validate(self):
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials!r}")
        if self.kind == "clt" and self.trials < 50:
            raise ConfigError("the CLT experiment needs at least 50 trials for Q-Q data")
        if self.kind != "clt" and self.trials < 2:
            raise ConfigError("MSE summaries need at least 2 trials")
        if not self.dims or any(int(d) < 1 for d in self.dims):
            raise ConfigError("dims must be a nonempty list of positive integers")
        ns = list(self.sample_sizes)
        if not ns or any(n < 2 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("sample_sizes must be strictly ascending integers >= 2")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        for k in ("odin1", "odin2"):
            lo, hi = self.l_ranges.get(k, (None, None))
            if lo is None or not 0 < lo < hi:
                raise ConfigError(f"l range for {k} must satisfy 0 < min < max, got {self.l_ranges.get(k)}")
        if self.l_guard not in ("pilot", "none"):
            raise ConfigError(f"l_guard must be 'pilot' or 'none', got {self.l_guard!r}")
        if self.l_guard == "pilot" and self.pilot_draws < 1:
            raise ConfigError("pilot_draws must be >= 1")
        if self.l_select not in ("fixed", "tuned"):
            raise ConfigError(f"l_select must be 'fixed' or 'tuned', got {self.l_select!r}")
        if self.l_select == "tuned":
            if self.kind == "tuning-sweep":
                raise ConfigError("the tuning sweep enumerates its own l sets; l_select must be 'fixed'")
            if self.tune_trials < 2:
                raise ConfigError("tune_trials must be >= 2")
            if not self.tune_lmins or not self.tune_widths:
                raise ConfigError("tuning needs nonempty tune_lmins and tune_widths")
            if any(not v > 0 for v in [*self.tune_lmins, *self.tune_widths]):
                raise ConfigError("tuning grid values must be positive")
        if self.kind == "tuning-sweep":
            if not self.etas:
                raise ConfigError("the eta sweep needs a nonempty eta list")
            if any(not e > 0 for e in self.etas):
                raise ConfigError("eta values must be positive")
            for k in ("odin1", "odin2"):
                if not self.l_sets.get(k):
                    raise ConfigError(f"no l sets defined for {k}")
        if self.kind == "rho-sweep":
            if not self.rhos or any(not 0.0 <= r <= 1.0 for r in self.rhos):
                raise ConfigError("rho grid must be a nonempty subset of [0, 1]")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        parse_functional(self.functional)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["densities"] = [dataclasses.asdict(d) for d in self.densities]
        return out


# ---------------------------------------------------------------------------
# cell planning
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    """One weighted estimator inside a cell: label, bandwidths, weights."""

    label: str
    kind: str
    l_values: np.ndarray
    bandwidths: np.ndarray
    weights: np.ndarray
    epsilon: float
    norm_sq: float
    eta: float | None


@dataclass
class CellPlan:
    index: int
    case: DensityCase
    d: int
    n: int
    truth: float
    ensembles: list[Ensemble]
    # plug-in bandwidths (label, l, h), evaluated on every trial
    plugin: list[tuple[str, float, float]]
    l_guard: dict[str, float] = field(default_factory=dict)
    # l_select == "tuned": candidate ensembles per estimator, and the tuning record
    candidates: list[Ensemble] = field(default_factory=list)
    tuning: dict = field(default_factory=dict)

    @property
    def key(self) -> dict:
        return {"cell": self.index, "case": self.case.name, "d": self.d, "n": self.n}


@lru_cache(maxsize=None)
def _pilot_radius(case: DensityCase, d: int, n: int, seed: int, cell: int, draws: int) -> float:
    """Largest coverage radius over pilot draws that are independent of the trial streams."""
    p, q = case.specs(d)
    worst = 0.0
    for k in range(draws):
        s1 = tg_sample(p, n, seed, (cell, k, ROLE_PILOT1))
        s2 = tg_sample(q, n, seed, (cell, k, ROLE_PILOT2))
        worst = max(worst, float(coverage_radius(s1, s2).max()))
    return worst


def _pilot_l_min(case: DensityCase, d: int, n: int, seed: int, cell: int, kind: str, draws: int) -> float:
    power = basis_for(kind, d).bandwidth_power
    grid = np.round(np.arange(1, 4001) * 0.01, 2)
    return smallest_covering_l(_pilot_radius(case, d, n, seed, cell, draws), grid, lambda l: l * float(n) ** power)


def _ensemble(label: str, kind: str, l_values, d: int, n: int, eta) -> Ensemble:
    global WEIGHT_SOLVES
    basis = basis_for(kind, d)
    sol = solve_weights(l_values, basis, n, eta)
    WEIGHT_SOLVES += 1
    return Ensemble(label, kind, sol.l_values, basis.bandwidth(sol.l_values, n), sol.weights, sol.epsilon, sol.norm_sq, sol.eta)


def _guarded_range(cfg: ExperimentConfig, kind: str, case, d, n, cell, lo, hi) -> tuple[float, float, float | None]:
    if cfg.l_guard != "pilot":
        return lo, hi, None
    l_min = _pilot_l_min(case, d, n, cfg.seed, cell, kind, cfg.pilot_draws)
    shift = max(0.0, l_min - lo)
    return lo + shift, hi + shift, l_min


def _plugin_grid(e: Ensemble) -> list[tuple[str, float, float]]:
    return [(f"plugin/l={float(l)!r}", float(l), float(h)) for l, h in zip(e.l_values, e.bandwidths)]


def _candidates(cfg: ExperimentConfig, kind: str, d: int, n: int, l_min: float | None) -> list[Ensemble]:
    out = []
    for lo in cfg.tune_lmins:
        if l_min is not None and lo < l_min:
            continue
        for width in cfg.tune_widths:
            out.append(_ensemble(f"{kind}/lmin={float(lo)!r},width={float(width)!r}", kind, np.linspace(lo, lo + width, cfg.L), d, n, cfg.eta))
    return out


def plan_cells(cfg: ExperimentConfig) -> list[CellPlan]:
    g = parse_functional(cfg.functional)
    plans = []
    cell = 0
    for case in cfg.densities:
        for d in cfg.dims:
            p, q = case.specs(d)
            truth = true_divergence(g, p, q).value
            for n in cfg.sample_sizes:
                ensembles, guard, plugin = [], {}, []
                if cfg.kind == "tuning-sweep":
                    for kind in ("odin1", "odin2"):
                        for s, (lo, hi) in enumerate(cfg.l_sets[kind], start=1):
                            lo, hi, lm = _guarded_range(cfg, kind, case, d, n, cell, lo, hi)
                            ensembles.append(_ensemble(f"{kind}/set{s}", kind, np.linspace(lo, hi, cfg.L), d, n, cfg.eta))
                        lo, hi, lm = _guarded_range(cfg, kind, case, d, n, cell, *cfg.eta_sweep_range)
                        for eta in cfg.etas:
                            ensembles.append(_ensemble(f"{kind}/eta={eta:g}", kind, np.linspace(lo, hi, cfg.L), d, n, eta))
                    plans.append(CellPlan(cell, case, d, n, truth, ensembles, plugin, guard))
                else:
                    candidates = []
                    for kind in ("odin1", "odin2"):
                        lo, hi, lm = _guarded_range(cfg, kind, case, d, n, cell, *cfg.l_ranges[kind])
                        if lm is not None:
                            guard[kind] = lm
                        # the fixed (guarded) range is always a candidate, so tuning never comes up empty
                        fixed = _ensemble(kind, kind, np.linspace(lo, hi, cfg.L), d, n, cfg.eta)
                        ensembles.append(fixed)
                        if cfg.l_select == "tuned":
                            candidates.append(dataclasses.replace(fixed, label=f"{kind}/fixed"))
                            candidates += _candidates(cfg, kind, d, n, lm)
                    plan = CellPlan(cell, case, d, n, truth, ensembles, plugin, guard, candidates)
                    if cfg.kind == "mse-sweep":
                        # plug-in baseline candidates: the ODin2 grid
                        plan.plugin = _plugin_grid(ensembles[1])
                    plans.append(plan)
                cell += 1
    return plans


def _select(plans: list[CellPlan], results, cfg: ExperimentConfig) -> None:
    """Replace each plan's ensembles with the candidates of least tuning-draw MSE."""
    by_cell: dict[int, dict[str, list[float]]] = {}
    for cell, _, rows, err in results:
        if err is None:
            for label, v, _ in rows:
                by_cell.setdefault(cell, {}).setdefault(label, []).append(v)
    for plan in plans:
        vals = by_cell.get(plan.index, {})
        table = {}
        for e in plan.candidates:
            v = np.asarray(vals.get(e.label, []))
            table[e.label] = float(np.mean((v - plan.truth) ** 2)) if v.size >= 2 else math.inf
        chosen = []
        for e in plan.ensembles:
            pool = [c for c in plan.candidates if c.kind == e.kind]
            best = min(pool, key=lambda c: table[c.label])
            chosen.append(dataclasses.replace(best, label=e.kind))
            plan.tuning[e.kind] = {"chosen": best.label, "l_min": float(best.l_values[0]), "l_max": float(best.l_values[-1])}
        plan.tuning["mse"] = table
        plan.ensembles = chosen
        if plan.plugin:
            # keep the fixed-range grid so tuning never weakens the plug-in baseline
            merged = {lab: (lab, l, h) for lab, l, h in plan.plugin + _plugin_grid(chosen[1])}
            plan.plugin = sorted(merged.values(), key=lambda r: r[1])


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(plans, seed, functional, tuning):
    _WORKER["plans"] = plans
    _WORKER["seed"] = seed
    _WORKER["g"] = parse_functional(functional)
    _WORKER["tuning"] = tuning


def run_trial(plan: CellPlan, trial: int, seed: int, g, tuning: bool = False) -> list[tuple[str, float, int]]:
    """(label, estimate, clipped count) for every estimator of the cell on one draw.

    ``tuning=True`` evaluates the tuning candidates on the tuning streams instead.
    """
    p, q = plan.case.specs(plan.d)
    r1, r2 = (ROLE_TUNE1, ROLE_TUNE2) if tuning else (ROLE_F1, ROLE_F2)
    s1 = tg_sample(p, plan.n, seed, (plan.index, trial, r1))
    s2 = tg_sample(q, plan.n, seed, (plan.index, trial, r2))
    caches = PairCaches(s1, s2)
    ensembles = plan.candidates if tuning else plan.ensembles
    plugin = [] if tuning else plan.plugin
    out = []
    # one counting pass over all bandwidths of the cell
    hs = np.concatenate([e.bandwidths for e in ensembles] + [np.array([h for _, _, h in plugin])])
    vals, clipped = caches.plugin_values(hs, g)
    pos = 0
    for e in ensembles:
        v = vals[pos : pos + e.bandwidths.size]
        c = clipped[pos : pos + e.bandwidths.size]
        pos += e.bandwidths.size
        total = 0.0
        for w, x in zip(e.weights.tolist(), v.tolist()):
            total += w * x
        out.append((e.label, total, int(c.sum())))
    for (label, _, _), v, c in zip(plugin, vals[pos:], clipped[pos:]):
        out.append((label, float(v), int(c)))
    return out


def _trial_task(args):
    cell, trial = args
    plan = _WORKER["plans"][cell]
    try:
        return cell, trial, run_trial(plan, trial, _WORKER["seed"], _WORKER["g"], _WORKER["tuning"]), None
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        return cell, trial, None, f"{type(exc).__name__}: {exc}"


def _execute(plans: list[CellPlan], cfg: ExperimentConfig, tuning: bool = False):
    trials = cfg.tune_trials if tuning else cfg.trials
    tasks = [(c.index, t) for c in plans for t in range(trials)]
    init = (plans, cfg.seed, cfg.functional, tuning)
    if cfg.threads == 1:
        _init_worker(*init)
        results = [_trial_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(cfg.threads, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (8 * cfg.threads))))
    results.sort(key=lambda r: (r[0], r[1]))
    return results


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    plan: CellPlan
    # label -> T estimates in trial order (failed trials omitted)
    estimates: dict[str, np.ndarray]
    clipped_trials: dict[str, int]
    failures: list[tuple[int, str]]

    @property
    def complete(self) -> bool:
        return not self.failures


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    summary: dict
    weight_solves: int

    @property
    def ok(self) -> bool:
        return all(c.complete for c in self.cells)


def _collect(plans, results, trials) -> list[CellResult]:
    cells = []
    by_cell: dict[int, list] = {p.index: [] for p in plans}
    for cell, trial, rows, err in results:
        by_cell[cell].append((trial, rows, err))
    for plan in plans:
        est: dict[str, list[float]] = {}
        clipped: dict[str, int] = {}
        failures = []
        for trial, rows, err in by_cell[plan.index]:
            if err is not None:
                failures.append((trial, err))
                continue
            for label, v, c in rows:
                est.setdefault(label, []).append(v)
                clipped[label] = clipped.get(label, 0) + (c > 0)
        cells.append(CellResult(plan, {k: np.asarray(v) for k, v in est.items()}, clipped, failures))
    return cells


def _fmt(x: float) -> str:
    return repr(float(x))


def _summary_row(label: str, values: np.ndarray, truth: float) -> dict:
    s = stats.mse_and_se(values, truth)
    return {"estimator": label, "mse": s.mse, "se": s.se, "bias": s.bias, "variance": s.variance, "mean": s.mean}


def _cell_summary(cell: CellResult, cfg: ExperimentConfig) -> dict:
    plan = cell.plan
    out = dict(plan.key)
    out["truth"] = plan.truth
    out["completed_trials"] = cfg.trials - len(cell.failures)
    out["failures"] = [{"trial": t, "error": e} for t, e in cell.failures]
    out["l_guard"] = plan.l_guard
    if plan.tuning:
        out["tuning"] = plan.tuning
    out["ensembles"] = [
        {"label": e.label, "l_min": float(e.l_values[0]), "l_max": float(e.l_values[-1]), "epsilon": e.epsilon,
         "norm_sq": e.norm_sq, "eta": e.eta}
        for e in plan.ensembles
    ]
    out["clipped_trials"] = {k: v for k, v in sorted(cell.clipped_trials.items()) if v}
    if out["completed_trials"] < 2:
        out["error"] = "fewer than two trials completed"
        return out
    rows = [_summary_row(e.label, cell.estimates[e.label], plan.truth) for e in plan.ensembles]
    if plan.plugin:
        plug = [_summary_row(label, cell.estimates[label], plan.truth) for label, _, _ in plan.plugin]
        best = min(range(len(plug)), key=lambda i: plug[i]["mse"])
        kernel = dict(plug[best], estimator="kernel")
        kernel["l"] = plan.plugin[best][1]
        kernel["h"] = plan.plugin[best][2]
        rows.append(kernel)
        out["plugin_grid"] = [{"l": l, "mse": r["mse"]} for (_, l, _), r in zip(plan.plugin, plug)]
    out["estimators"] = rows
    if cfg.kind in ("mse-sweep", "rho-sweep"):
        e1, e2 = cell.estimates["odin1"], cell.estimates["odin2"]
        rhos = cfg.rhos if cfg.kind == "rho-sweep" else list(DEFAULT_RHOS)
        curve = []
        for r in rhos:
            comb = e1 if r == 0.0 else e2 if r == 1.0 else (1.0 - r) * e1 + r * e2
            curve.append({"rho": r, "mse": stats.mse_and_se(comb, plan.truth).mse})
        best = min(curve, key=lambda c: c["mse"])
        out["rho_curve"] = curve
        out["best_rho"] = best["rho"]
        out["estimators"].append({"estimator": "combined", "rho": best["rho"], "mse": best["mse"]})
        sq1 = (e1 - plan.truth) ** 2
        sq2 = (e2 - plan.truth) ** 2
        out["ttests"] = {
            alt: stats.paired_ttest(sq1, sq2, alt)._asdict() for alt in ("two-sided", "greater", "less")
        }
    if cfg.kind == "clt":
        out["qq"] = {}
        for e in plan.ensembles:
            try:
                qq = stats.qq_points(cell.estimates[e.label])
                out["qq"][e.label] = {"correlation": qq.correlation}
            except ValueError as exc:
                out["qq"][e.label] = {"error": str(exc)}
    return out


def _slopes(cells: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for c in cells:
        if "estimators" in c:
            groups.setdefault((c["case"], c["d"]), []).append(c)
    out = []
    for (case, d), cs in groups.items():
        if len(cs) < 2:
            continue
        labels = [r["estimator"] for r in cs[0]["estimators"]]
        for label in labels:
            ns, ms = [], []
            for c in cs:
                row = next(r for r in c["estimators"] if r["estimator"] == label)
                ns.append(c["n"])
                ms.append(row["mse"])
            try:
                slope = stats.loglog_slope(ns, ms)
            except ValueError:
                slope = None
            out.append({"case": case, "d": d, "estimator": label, "slope": slope})
    return out


def _write_outputs(report: ExperimentReport, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "case", "d", "n", "trial", "estimator", "estimate"])
        for cell in report.cells:
            p = cell.plan
            labels = list(cell.estimates)
            failed = {t for t, _ in cell.failures}
            trials = [t for t in range(report.config.trials) if t not in failed]
            for i, t in enumerate(trials):
                for label in labels:
                    w.writerow([p.index, p.case.name, p.d, p.n, t, label, _fmt(cell.estimates[label][i])])
    with open(out_dir / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "case", "d", "n", "estimator", "mse", "se", "bias", "variance", "mean", "truth"])
        for c in report.summary["cells"]:
            for r in c.get("estimators", []):
                if "se" not in r:
                    continue
                w.writerow([c["cell"], c["case"], c["d"], c["n"], r["estimator"], *(_fmt(r[k]) for k in ("mse", "se", "bias", "variance", "mean")), _fmt(c["truth"])])
    if report.config.kind == "clt":
        with open(out_dir / "qq.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "case", "d", "n", "estimator", "theoretical", "empirical"])
            for cell in report.cells:
                p = cell.plan
                for e in p.ensembles:
                    vals = cell.estimates.get(e.label)
                    if vals is None or vals.size < 10 or not np.std(vals) > 0:
                        continue
                    for a, b in stats.qq_points(vals).rows():
                        w.writerow([p.index, p.case.name, p.d, p.n, e.label, _fmt(a), _fmt(b)])
    if report.config.kind == "tuning-sweep":
        with open(out_dir / "grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "d", "estimator", "variant", "n", "mse", "se"])
            for c in report.summary["cells"]:
                for r in c.get("estimators", []):
                    kind, _, variant = r["estimator"].partition("/")
                    w.writerow([c["case"], c["d"], kind, variant, c["n"], _fmt(r["mse"]), _fmt(r["se"])])
    if report.config.kind == "rho-sweep":
        with open(out_dir / "rho.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "case", "d", "n", "rho", "mse"])
            for c in report.summary["cells"]:
                for r in c.get("rho_curve", []):
                    w.writerow([c["cell"], c["case"], c["d"], c["n"], _fmt(r["rho"]), _fmt(r["mse"])])
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _sanitize(o):
    """Non-finite floats become strings so summary.json stays valid JSON."""
    if isinstance(o, dict):
        return {k: _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return o


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> ExperimentReport:
    """Plan cells, run every trial, summarize, and write outputs if a directory is given."""
    global WEIGHT_SOLVES
    WEIGHT_SOLVES = 0
    plans = plan_cells(cfg)
    solves = WEIGHT_SOLVES
    if cfg.l_select == "tuned":
        _select(plans, _execute(plans, cfg, tuning=True), cfg)
    results = _execute(plans, cfg)
    cells = _collect(plans, results, cfg.trials)
    cell_summaries = [_cell_summary(c, cfg) for c in cells]
    summary = {
        "config": cfg.to_dict(),
        "cells": cell_summaries,
        "weight_solves": solves,
        "complete": all(c.complete for c in cells),
    }
    if cfg.kind in ("mse-sweep", "tuning-sweep", "rho-sweep"):
        summary["slopes"] = _slopes(cell_summaries)
    summary["config"].pop("threads")  # output must not depend on the worker count
    summary["config"].pop("out")
    summary = _sanitize(summary)
    report = ExperimentReport(cfg, cells, summary, solves)
    target = out if out is not None else cfg.out
    if target is not None:
        _write_outputs(report, Path(target))
    return report


def _with_kind(cfg: ExperimentConfig, kind: str) -> ExperimentConfig:
    if cfg.kind != kind:
        raise ConfigError(f"config kind is {cfg.kind!r}, expected {kind!r}")
    return cfg


def run_mse_sweep(cfg: ExperimentConfig, out=None) -> ExperimentReport:
    return run_experiment(_with_kind(cfg, "mse-sweep"), out)


def run_clt_experiment(cfg: ExperimentConfig, out=None) -> ExperimentReport:
    return run_experiment(_with_kind(cfg, "clt"), out)


def run_tuning_sweep(cfg: ExperimentConfig, out=None) -> ExperimentReport:
    return run_experiment(_with_kind(cfg, "tuning-sweep"), out)


def run_rho_sweep(cfg: ExperimentConfig, out=None) -> ExperimentReport:
    return run_experiment(_with_kind(cfg, "rho-sweep"), out)
