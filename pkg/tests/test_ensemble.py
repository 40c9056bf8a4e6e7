import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odin.ensemble import (
    BasisEntry,
    BasisSet,
    InfeasibleError,
    RankDeficientError,
    basis_for,
    default_lambda,
    odin1_basis,
    odin2_basis,
    odin2_index_set,
    parse_eta,
    solve_weights,
    solve_weights_auto,
    solve_weights_exact,
    solve_weights_relaxed,
)
from oracles import kkt_min_norm, odin2_pairs_bruteforce, relaxed_grid_oracle


def linear_basis():
    # a single constraint sum_l w_l * l = 0, no N dependence
    return BasisSet("test", 1, (BasisEntry("l", 1.0, 0.0),), -1.0)


def two_term_basis():
    return BasisSet("test", 2, (BasisEntry("l", 1.0, -0.25), BasisEntry("1/l", -1.0, -0.5)), -0.5)


# --- bases -------------------------------------------------------------------


def test_odin1_basis_shape():
    b = odin1_basis(4)
    assert b.labels == ["l^1", "l^2", "l^3", "l^4", "l^-4"]
    assert b.bandwidth_power == pytest.approx(-1 / 8)
    assert b.bandwidth(2.0, 256) == pytest.approx(2.0 * 256 ** (-1 / 8))
    assert [e.n_power for e in b.entries] == pytest.approx([-1 / 8, -2 / 8, -3 / 8, -4 / 8, -0.5])


def test_default_lambda_is_smallest_even_above():
    for d in range(1, 12):
        lam = default_lambda(d)
        assert lam % 2 == 0 and lam >= d + 1 and lam - 2 < d + 1


@pytest.mark.parametrize("d", range(1, 11))
def test_odin2_index_set_matches_bruteforce(d):
    lam = default_lambda(d)
    assert set(odin2_index_set(d, lam)) == odin2_pairs_bruteforce(d, lam)
    assert len(set(odin2_index_set(d, lam))) == len(odin2_index_set(d, lam))


def test_odin2_index_set_examples():
    assert odin2_index_set(4, 6) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert odin2_index_set(1, 2) == []
    assert odin2_index_set(2, 4) == [(1, 0), (0, 1)]


def test_odin2_basis_powers_and_errors():
    b = odin2_basis(4)
    e = dict(zip(b.labels, b.entries))
    assert e["(1,1)"].l_power == 1 - 4
    assert e["(1,1)"].n_power == pytest.approx(-2 / 5)
    with pytest.raises(ValueError):
        odin2_basis(4, lam=5)
    with pytest.raises(ValueError):
        odin2_basis(4, lam=4)
    with pytest.raises(ValueError):
        basis_for("odin3", 2)


# --- exact weights ------------------------------------------------------------


def test_exact_hand_solution():
    sol = solve_weights_exact([1.0, 2.0, 3.0], linear_basis())
    assert sol.weights == pytest.approx([4 / 3, 1 / 3, -2 / 3], abs=1e-12)
    assert sol.violations() == []


@pytest.mark.parametrize("kind,d", [("odin1", 2), ("odin1", 3), ("odin2", 4)])
def test_exact_matches_kkt(kind, d):
    basis = basis_for(kind, d)
    lv = np.linspace(1.5, 3.0, len(basis) + 4)
    sol = solve_weights_exact(lv, basis)
    A = np.vstack([np.ones(lv.size), basis.psi_matrix(lv)])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    w = kkt_min_norm(A, b)
    assert sol.weights == pytest.approx(w, rel=1e-6, abs=1e-6)
    assert sol.violations() == []


def test_exact_beats_normal_equations_when_ill_conditioned():
    basis = odin2_basis(6)
    lv = np.linspace(1.5, 3.0, len(basis) + 4)
    A = np.vstack([np.ones(lv.size), basis.psi_matrix(lv)])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    sol = solve_weights_exact(lv, basis)
    rel = lambda w: np.abs(A @ w - b) / (np.abs(A) @ np.abs(w))
    assert rel(sol.weights).max() < 1e-12
    assert rel(sol.weights).max() <= rel(kkt_min_norm(A, b)).max()
    assert sol.violations() == []


def test_exact_is_norm_minimal_by_random_search():
    basis = odin1_basis(2)
    lv = np.linspace(1.0, 3.0, 7)
    sol = solve_weights_exact(lv, basis)
    A = np.vstack([np.ones(lv.size), basis.psi_matrix(lv)])
    null = np.linalg.svd(A)[2][A.shape[0] :]
    rng = np.random.default_rng(0)
    for _ in range(2000):
        v = sol.weights + null.T @ rng.normal(scale=rng.choice([1e-4, 1e-2, 1.0]), size=null.shape[0])
        assert np.allclose(A @ v, A @ sol.weights, atol=1e-9)
        assert v @ v >= sol.norm_sq - 1e-12


def test_exact_errors():
    with pytest.raises(InfeasibleError):
        solve_weights_exact([1.0, 2.0], odin1_basis(2))
    with pytest.raises(RankDeficientError):
        solve_weights_exact([1.0, 1.0, 2.0, 3.0], linear_basis())
    with pytest.raises(ValueError):
        solve_weights_exact([-1.0, 2.0, 3.0], linear_basis())
    with pytest.raises(ValueError):
        solve_weights_exact([], linear_basis())


def test_exact_rank_deficient_basis():
    # l^0 is the constant row: dependent on the sum constraint
    b = BasisSet("test", 1, (BasisEntry("l^0", 0.0, 0.0),), -1.0)
    with pytest.raises(RankDeficientError) as err:
        solve_weights_exact([1.0, 2.0, 3.0], b)
    assert err.value.dependent


def test_exact_empty_basis_is_uniform():
    b = basis_for("odin2", 1)
    sol = solve_weights_exact([1.0, 2.0, 4.0], b)
    assert sol.weights == pytest.approx([1 / 3] * 3)


# --- relaxed weights -------------------------------------------------------------


def test_relaxed_matches_grid_oracle():
    basis = two_term_basis()
    lv = np.array([1.5, 2.0, 2.5, 3.0])
    n, eta = 100, 2.0
    sol = solve_weights_relaxed(lv, basis, n, eta)
    C = basis.psi_matrix(lv) * basis.scales(n)[:, None]
    grid_min = relaxed_grid_oracle(C, eta, grid=121)
    assert sol.violations() == []
    assert sol.epsilon <= grid_min + 1e-9
    # grid step is about 2 r / 120; the objective is Lipschitz with constant max row norm of C
    slack = 2 * math.sqrt(eta) / 120 * np.linalg.norm(C, axis=1).max() * math.sqrt(3)
    assert grid_min - sol.epsilon <= slack


def test_relaxed_eps_zero_when_exact_fits():
    basis = linear_basis()
    sol = solve_weights_relaxed([1.0, 2.0, 3.0], basis, 10, eta=5.0)
    assert sol.epsilon == pytest.approx(0.0, abs=1e-10)
    assert sol.weights == pytest.approx([4 / 3, 1 / 3, -2 / 3], abs=1e-9)


def test_relaxed_norm_bound_binds():
    basis = linear_basis()
    sol = solve_weights_relaxed([1.0, 2.0, 3.0], basis, 10, eta=0.5)
    assert sol.norm_sq <= 0.5 + 1e-8
    assert sol.epsilon > 0
    assert sol.violations() == []


@pytest.mark.parametrize("basis,n,eta", [(two_term_basis(), 100, 0.6), (odin1_basis(2), 50, 1.0)])
def test_relaxed_agrees_with_dykstra(basis, n, eta):
    lv = np.linspace(1.5, 3.0, 6)
    a = solve_weights_relaxed(lv, basis, n, eta)
    b = solve_weights_relaxed(lv, basis, n, eta, method="dykstra", tol=1e-6)
    assert a.epsilon == pytest.approx(b.epsilon, rel=1e-3, abs=1e-5)
    assert b.method == "relaxed-dykstra"


def test_relaxed_rejects_eta_below_cauchy_schwarz():
    with pytest.raises(InfeasibleError):
        solve_weights_relaxed([1.0, 2.0, 3.0, 4.0], linear_basis(), 10, 0.2)
    sol = solve_weights_relaxed([1.0, 2.0, 3.0, 4.0], linear_basis(), 10, 0.25)
    assert sol.weights == pytest.approx([0.25] * 4, abs=1e-8)


def test_relaxed_uniform_cases():
    sol = solve_weights_relaxed([2.0], odin1_basis(2), 100, 1.0)
    assert sol.weights.tolist() == [1.0]
    sol = solve_weights_relaxed([1.0, 2.0], basis_for("odin2", 1), 100, 1.0)
    assert sol.weights.tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        solve_weights_relaxed([1.0, 2.0], linear_basis(), 10, 1.0, method="simplex")


@pytest.mark.property
@given(st.floats(0.1, 4.0), st.floats(0.1, 4.0))
def test_eps_nonincreasing_in_eta(a, b):
    basis = odin1_basis(3)
    lv = np.linspace(1.5, 3.0, 8)
    lo, hi = sorted((1 / 8 + a, 1 / 8 + b))
    e_lo = solve_weights_relaxed(lv, basis, 300, lo).epsilon
    e_hi = solve_weights_relaxed(lv, basis, 300, hi).epsilon
    assert e_hi <= e_lo + 1e-7 * max(1.0, e_lo)


@pytest.mark.property
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_eps_convex_in_eta(a, b):
    # value function of a convex program in its right-hand side
    basis = odin2_basis(4)
    lv = np.linspace(2.0, 3.0, 9)
    e1, e2 = 1 / 9 + a, 1 / 9 + b
    f = lambda eta: solve_weights_relaxed(lv, basis, 500, eta).epsilon
    assert f(0.5 * (e1 + e2)) <= 0.5 * (f(e1) + f(e2)) + 1e-6 * max(1.0, f(e1), f(e2))


@pytest.mark.property
@given(st.integers(3, 30), st.floats(1.0, 2.0), st.floats(0.2, 2.0), st.integers(50, 5000))
def test_relaxed_certificate(L, lo, width, n):
    basis = odin1_basis(3)
    sol = solve_weights_relaxed(np.linspace(lo, lo + width, L), basis, n, 2.0)
    assert sol.violations() == []


# --- automatic eta ------------------------------------------------------------


@pytest.mark.parametrize("kind,d,n", [("odin1", 4, 100), ("odin2", 4, 1330), ("odin1", 10, 1000)])
def test_auto_eta_is_fixed_point(kind, d, n):
    basis = basis_for(kind, d)
    lv = np.linspace(1.5, 3.0, 50)
    sol = solve_weights_auto(lv, basis, n)
    assert sol.method == "relaxed-auto"
    assert sol.violations() == []
    if sol.eta > 1 / 50 + 1e-12:
        assert sol.epsilon == pytest.approx(sol.eta, rel=1e-6)
        # a slightly smaller eta must give a larger eps
        tighter = solve_weights_relaxed(lv, basis, n, sol.eta * (1 - 1e-4))
        assert tighter.epsilon > tighter.eta


def test_solve_weights_dispatch_and_parse_eta():
    lv = np.linspace(1.5, 3.0, 8)
    b = odin1_basis(2)
    assert solve_weights(lv, b, 100, "exact").method == "exact"
    assert solve_weights(lv, b, 100, 1.5).method == "relaxed"
    assert solve_weights(lv, b, 100, "auto").method == "relaxed-auto"
    assert parse_eta("AUTO") == "auto"
    assert parse_eta("fixed:2.5") == 2.5
    assert parse_eta("3") == 3.0
    assert parse_eta(4) == 4.0
    with pytest.raises(ValueError):
        parse_eta("loose")


def test_weight_solution_to_dict_roundtrip_fields():
    sol = solve_weights_exact([1.0, 2.0, 3.0], linear_basis())
    d = sol.to_dict()
    assert d["method"] == "exact" and len(d["weights"]) == 3 and d["labels"] == ["l"]


def test_relaxed_two_members_near_infeasible_slabs():
    # two members, four nearly contradictory slabs: the LDP step used to return points off the plane
    lv = np.array([1.53, 2.37])
    C = np.array([[1.43032546, 0.92337466], [3.97717163, 22.89823422], [4.96621294, 11.91623796], [1.58205422, 2.45063301]])
    basis = BasisSet("test", 2, tuple(BasisEntry(f"r{i}", float(p), 0.0) for i, p in enumerate((1, 2, 3, 4))), -0.5)
    from odin.ensemble import _SlabProblem

    slabs = _SlabProblem(C)
    for eps in np.linspace(2.5, 2.6, 101):
        w = slabs.min_norm(eps)
        if w is not None:
            assert abs(w.sum() - 1) < 1e-12
            assert np.max(np.abs(C @ w)) <= eps + 1e-8
    sol = solve_weights_relaxed(lv, basis, 50, 1.4)
    assert sol.violations() == []
