"""Bias basis functions and weight optimization for the ensemble estimators.

Two weight problems are solved over an ensemble index set ``l_values``:

* exact:   min ||w||_2  s.t.  sum(w) = 1,  sum_l w(l) psi_i(l) = 0 for every basis entry;
* relaxed: min eps      s.t.  sum(w) = 1,  |gamma_i(w) sqrt(N) phi_i(N)| <= eps,  ||w||^2 <= eta.

The relaxed problem is solved by bisection on eps.  For a candidate eps the
smallest achievable ||w||^2 is a least-distance program: writing
w = 1/L + t with t orthogonal to the ones vector, minimize ||t|| subject to the
slab constraints, which Lawson and Hanson reduce to one nonnegative least
squares solve.  NNLS only needs the optimal active constraints to be
independent, so the nearly collinear power bases of high dimensions are
handled.  Dykstra's alternating projections are kept as an independent
(slow) feasibility test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

TOL_CONSTRAINT = 1e-8
TOL_EPS = 1e-6
RANK_RTOL = 1e-11


class InfeasibleError(ValueError):
    pass


class RankDeficientError(ValueError):
    def __init__(self, message: str, dependent: Sequence[str] = ()):
        super().__init__(message)
        self.dependent = list(dependent)


class SolverError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class BasisEntry:
    """psi(l) = l ** l_power and phi(N) = N ** n_power."""

    label: str
    l_power: float
    n_power: float

    def psi(self, l):
        return np.asarray(l, dtype=float) ** self.l_power

    def phi(self, n: float) -> float:
        return float(n) ** self.n_power

    def scale(self, n: float) -> float:
        """sqrt(N) * phi(N), the factor applied to gamma in the relaxed problem."""
        return float(n) ** (0.5 + self.n_power)


@dataclass(frozen=True)
class BasisSet:
    kind: str
    d: int
    entries: tuple[BasisEntry, ...]
    bandwidth_power: float  # h(l) = l * N ** bandwidth_power
    params: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def bandwidth(self, l, n: int):
        return np.asarray(l, dtype=float) * float(n) ** self.bandwidth_power

    def psi_matrix(self, l_values) -> np.ndarray:
        l_values = np.asarray(l_values, dtype=float)
        if not self.entries:
            return np.zeros((0, l_values.size))
        return np.vstack([e.psi(l_values) for e in self.entries])

    def scales(self, n: int) -> np.ndarray:
        return np.array([e.scale(n) for e in self.entries], dtype=float)


def odin1_basis(d: int) -> BasisSet:
    """psi_i(l) = l^i with phi = N^(-i/2d) for i = 1..d, plus l^-d with phi = N^(-1/2)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    entries = [BasisEntry(f"l^{i}", float(i), -i / (2 * d)) for i in range(1, d + 1)]
    entries.append(BasisEntry(f"l^-{d}", float(-d), -0.5))
    return BasisSet("odin1", d, tuple(entries), -1.0 / (2 * d))


def default_lambda(d: int) -> int:
    """Smallest even integer >= d + 1."""
    return d + 1 + (d + 1) % 2


def odin2_index_set(d: int, lam: int, s_cap: float | None = None) -> list[tuple[int, int]]:
    """Pairs (j, q) with 0 < j + q < (d + 1)/2, q <= lam/2, j <= floor(s)."""
    bound = Fraction(d + 1, 2)
    q_max = lam // 2
    j_max = math.floor(s_cap) if s_cap is not None else math.ceil(bound)
    pairs = []
    for total in range(1, math.ceil(bound)):
        if not total < bound:
            continue
        for q in range(0, min(total, q_max) + 1):
            j = total - q
            if j <= j_max:
                pairs.append((j, q))
    return pairs


def odin2_basis(d: int, lam: int | None = None, s_cap: float | None = None) -> BasisSet:
    """psi_{j,q}(l) = l^(j - d q) with phi = N^(-(j+q)/(d+1)) over the index set J."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if lam is None:
        lam = default_lambda(d)
    if lam % 2:
        raise ValueError(f"lambda must be even, got {lam}")
    if lam < d + 1:
        raise ValueError(f"lambda={lam} < d+1={d + 1}: the parametric-rate condition does not hold")
    entries = [
        BasisEntry(f"({j},{q})", float(j - d * q), -(j + q) / (d + 1))
        for j, q in odin2_index_set(d, lam, s_cap)
    ]
    return BasisSet("odin2", d, tuple(entries), -1.0 / (d + 1), params={"lambda": lam, "s_cap": s_cap})


def basis_for(kind: str, d: int, **kw) -> BasisSet:
    if kind == "odin1":
        return odin1_basis(d)
    if kind == "odin2":
        return odin2_basis(d, **kw)
    raise ValueError(f"unknown ensemble kind {kind!r}")


@dataclass
class WeightSolution:
    weights: np.ndarray
    epsilon: float
    norm_sq: float
    iterations: int
    residuals: np.ndarray  # |gamma_w(i)| per basis entry
    scaled_residuals: np.ndarray  # |gamma_w(i)| * sqrt(N) phi_i(N); equals residuals for the exact solver
    l_values: np.ndarray
    eta: float | None = None
    method: str = "exact"
    labels: list[str] = field(default_factory=list)

    def violations(self) -> list[str]:
        """Certificate check; an empty list means every invariant holds."""
        out = []
        s = math.fsum(self.weights.tolist())
        if abs(s - 1.0) > 1e-10:
            out.append(f"sum(w) = {s!r}")
        if self.method == "exact":
            bad = np.flatnonzero(self.residuals > TOL_CONSTRAINT)
            out += [f"|gamma({self.labels[i] if self.labels else i})| = {self.residuals[i]:.3g}" for i in bad]
        else:
            bad = np.flatnonzero(self.scaled_residuals > self.epsilon + TOL_CONSTRAINT)
            out += [f"scaled residual {i} = {self.scaled_residuals[i]:.3g} > eps" for i in bad]
            if self.eta is not None and self.norm_sq > self.eta + TOL_CONSTRAINT:
                out.append(f"||w||^2 = {self.norm_sq:.6g} > eta = {self.eta:.6g}")
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "l_values": self.l_values.tolist(),
            "weights": self.weights.tolist(),
            "epsilon": self.epsilon,
            "norm_sq": self.norm_sq,
            "eta": self.eta,
            "iterations": self.iterations,
            "labels": list(self.labels),
            "residuals": self.residuals.tolist(),
            "scaled_residuals": self.scaled_residuals.tolist(),
        }


def _check_l_values(l_values) -> np.ndarray:
    lv = np.asarray(l_values, dtype=float).ravel()
    if lv.size == 0:
        raise ValueError("l_values is empty")
    if np.any(lv <= 0) or not np.all(np.isfinite(lv)):
        raise ValueError("l_values must be positive and finite")
    if np.unique(lv).size != lv.size:
        raise RankDeficientError("l_values contains duplicates", dependent=["l_values"])
    return lv


def _normalized_rows(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(M, axis=1)
    return M / norms[:, None], norms


class _MinNorm:
    """Minimum-norm solutions of B w = z for a fixed full-row-rank B (pivoted QR of B^T)."""

    def __init__(self, B: np.ndarray):
        self.B = B
        Q, R, piv = scipy.linalg.qr(B.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        self.rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag.size else 0
        self.Q, self.R, self.piv = Q, R, piv

    @property
    def full_rank(self) -> bool:
        return self.rank == self.B.shape[0]

    def solve(self, z: np.ndarray) -> np.ndarray:
        y = scipy.linalg.solve_triangular(self.R, z[self.piv], trans="T", lower=False)
        w = self.Q @ y
        # one refinement sweep recovers most of what the row scaling leaves behind
        r = z - self.B @ w
        y = scipy.linalg.solve_triangular(self.R, r[self.piv], trans="T", lower=False)
        return w + self.Q @ y

    def multipliers(self, w: np.ndarray) -> np.ndarray:
        """lam with B^T lam = w (w lies in the row space of B)."""
        y = self.Q.T @ w
        lam_p = scipy.linalg.solve_triangular(self.R, y, lower=False)
        lam = np.empty_like(lam_p)
        lam[self.piv] = lam_p
        return lam


def _constraint_matrix(l_values: np.ndarray, basis: BasisSet) -> np.ndarray:
    return np.vstack([np.ones((1, l_values.size)), basis.psi_matrix(l_values)])


def solve_weights_exact(l_values, basis: BasisSet) -> WeightSolution:
    """Minimum-norm weights with sum(w) = 1 and every gamma_w(i) = 0."""
    lv = _check_l_values(l_values)
    L, I = lv.size, len(basis)
    if L <= I and I > 0:
        raise InfeasibleError(f"need more ensemble members than basis entries (L={L}, I={I})")
    A = _constraint_matrix(lv, basis)
    An, _ = _normalized_rows(A)
    mn = _MinNorm(An)
    if not mn.full_rank:
        names = ["sum"] + basis.labels
        dep = [names[k] for k in mn.piv[mn.rank :]]
        raise RankDeficientError(f"constraint rows are linearly dependent: {dep}", dependent=dep)
    b = np.zeros(I + 1)
    b[0] = 1.0 / np.linalg.norm(A[0])
    w = mn.solve(b)
    gamma = np.abs(A[1:] @ w)
    return WeightSolution(
        weights=w,
        epsilon=0.0,
        norm_sq=float(w @ w),
        iterations=1,
        residuals=gamma,
        scaled_residuals=gamma.copy(),
        l_values=lv,
        method="exact",
        labels=basis.labels,
    )


def _dykstra(C: np.ndarray, eps: float, eta: float, tol: float = 1e-9, max_iter: int = 100_000):
    """Alternating projections onto {sum w = 1}, each slab |c_i w| <= eps, and the ball ||w||^2 <= eta.

    Returns (feasible, w, iterations).
    """
    L = C.shape[1]
    radius = math.sqrt(eta)
    norms2 = np.einsum("ij,ij->i", C, C)
    w = np.full(L, 1.0 / L)
    k = C.shape[0] + 2
    incr = np.zeros((k, L))

    def project(j, v):
        if j == 0:
            return v + (1.0 - v.sum()) / L
        if j == 1:
            n = np.linalg.norm(v)
            return v if n <= radius else v * (radius / n)
        c = C[j - 2]
        t = c @ v
        if abs(t) <= eps:
            return v
        return v - (t - math.copysign(eps, t)) / norms2[j - 2] * c

    for it in range(1, max_iter + 1):
        prev = w
        for j in range(k):
            y = w + incr[j]
            p = project(j, y)
            incr[j] = y - p
            w = p
        if it % 10 == 0 or it == max_iter:
            viol = max(
                abs(w.sum() - 1.0),
                max(0.0, w @ w - eta),
                float(np.max(np.abs(C @ w) - eps, initial=0.0)),
            )
            if viol < tol and np.linalg.norm(w - prev) < tol:
                return True, w, it
    return False, w, max_iter


def _finish(w, lv, basis, n, eta, iters, method) -> WeightSolution:
    psi = basis.psi_matrix(lv)
    gamma = np.abs(psi @ w)
    scaled = gamma * basis.scales(n)
    eps = float(scaled.max()) if scaled.size else 0.0
    return WeightSolution(
        weights=w,
        epsilon=eps,
        norm_sq=float(w @ w),
        iterations=iters,
        residuals=gamma,
        scaled_residuals=scaled,
        l_values=lv,
        eta=eta,
        method=method,
        labels=basis.labels,
    )


def _least_distance(G: np.ndarray, h: np.ndarray) -> np.ndarray | None:
    """min ||x|| subject to G x >= h, or None when the constraints are incompatible."""
    m, n = G.shape
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    try:
        u, _ = nnls(E, f, maxiter=50 * max(m, n))
    except RuntimeError as exc:
        raise SolverError(f"NNLS failed: {exc}") from exc
    r = E @ u - f
    if r[-1] > -1e-13:
        return None
    return -r[:-1] / r[-1]


class _SlabProblem:
    """min ||w||^2 s.t. sum(w) = 1 and |c_i w| <= eps, for the scaled rows c_i."""

    def __init__(self, C: np.ndarray):
        self.C = C
        L = C.shape[1]
        self.w0 = np.full(L, 1.0 / L)
        self.cw0 = C @ self.w0
        pc = C - C.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(pc, axis=1)
        # rows constant over l cannot be moved by t; their slabs are fixed by cw0
        self.movable = norms > 1e-300
        self.pn = pc[self.movable] / norms[self.movable, None]
        self.norms = norms[self.movable]

    def min_norm(self, eps: float) -> np.ndarray | None:
        if np.any(np.abs(self.cw0[~self.movable]) > eps):
            return None
        if not self.movable.any():
            return self.w0.copy()
        cw = self.cw0[self.movable]
        G = np.vstack([-self.pn, self.pn])
        h = np.concatenate([(cw - eps) / self.norms, (-eps - cw) / self.norms])
        t = _least_distance(G, h)
        if t is None:
            return None
        # near the feasibility boundary the LDP residual is tiny and the division
        # amplifies rounding; accept the point only if it really lies in every slab
        w = self.w0 + (t - t.mean())
        if np.max(np.abs(self.C @ w)) > eps + 1e-9 * max(1.0, eps):
            return None
        return w


def solve_weights_relaxed(
    l_values,
    basis: BasisSet,
    n: int,
    eta: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    method: str = "nnls",
) -> WeightSolution:
    """Weights minimizing the largest scaled bias residual subject to ||w||^2 <= eta.

    Among optimal weight vectors the one with the smallest norm is returned.
    ``method="dykstra"`` swaps the feasibility test for alternating projections.
    """
    lv = _check_l_values(l_values)
    L, I = lv.size, len(basis)
    if eta < 1.0 / L:
        raise InfeasibleError(
            f"eta={eta:.6g} < 1/L={1.0 / L:.6g}: by Cauchy-Schwarz any w with sum(w)=1 has ||w||^2 >= 1/L"
        )
    if I == 0 or L == 1:
        return _finish(np.full(L, 1.0 / L), lv, basis, n, eta, 0, "relaxed")

    C = basis.psi_matrix(lv) * basis.scales(n)[:, None]
    iters = 0
    if method == "nnls":
        slabs = _SlabProblem(C)

        def feasible(eps):
            nonlocal iters
            iters += 1
            w = slabs.min_norm(eps)
            return (w is not None and float(w @ w) <= eta), w

        w_zero = slabs.min_norm(0.0)
        if w_zero is not None and float(w_zero @ w_zero) <= eta:
            return _finish(w_zero, lv, basis, n, eta, 1, "relaxed")
    elif method == "dykstra":

        def feasible(eps):
            nonlocal iters
            ok, w, it = _dykstra(C, eps, eta)
            iters += it
            return ok, w
    else:
        raise ValueError(f"unknown method {method!r}")

    w_uni = np.full(L, 1.0 / L)
    lo, hi = 0.0, float(np.max(np.abs(C @ w_uni)))
    w_hi = w_uni  # feasible at eps = max |c_i w_uni| by construction
    for _ in range(max_iter):
        if hi - lo <= max(tol, tol * hi):
            break
        mid = 0.5 * (lo + hi)
        ok, w = feasible(mid)
        if ok:
            hi, w_hi = mid, w
        else:
            lo = mid
    else:
        raise SolverError("bisection on eps did not converge", residuals=np.abs(C @ w_hi))
    return _finish(w_hi, lv, basis, n, eta, iters, "relaxed" if method == "nnls" else "relaxed-dykstra")


def solve_weights_auto(l_values, basis: BasisSet, n: int, rtol: float = 1e-8, max_iter: int = 200) -> WeightSolution:
    """Self-consistent eta = eps: the root of eps(eta) - eta on [1/L, eps(1/L)].

    eps(eta) is nonincreasing, so the root is unique; if eps(1/L) <= 1/L the
    tightest admissible eta = 1/L is used.
    """
    lv = _check_l_values(l_values)
    L = lv.size
    lo = 1.0 / L
    sol_lo = solve_weights_relaxed(lv, basis, n, lo)
    if sol_lo.epsilon <= lo:
        return sol_lo
    hi = sol_lo.epsilon
    best = solve_weights_relaxed(lv, basis, n, hi)
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        sol = solve_weights_relaxed(lv, basis, n, mid)
        if sol.epsilon <= mid:
            hi, best = mid, sol
        else:
            lo = mid
    best.method = "relaxed-auto"
    return best


def solve_weights(l_values, basis: BasisSet, n: int, eta: float | str = "auto") -> WeightSolution:
    """Dispatch on an eta policy: a number, ``"auto"``, or ``"exact"``."""
    if eta == "exact":
        return solve_weights_exact(l_values, basis)
    if eta == "auto":
        return solve_weights_auto(l_values, basis, n)
    return solve_weights_relaxed(l_values, basis, n, float(eta))


def parse_eta(text: str | float) -> float | str:
    """``auto``, ``exact``, ``fixed:<v>`` or a bare number."""
    if isinstance(text, (int, float)):
        return float(text)
    t = text.strip().lower()
    if t in ("auto", "exact"):
        return t
    if t.startswith("fixed:"):
        t = t[len("fixed:") :]
    return float(t)
