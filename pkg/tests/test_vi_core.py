import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from notchvi import vi_core
from notchvi.errors import (
    NonPositiveDiagonal,
    NotConverged,
    NotPositiveDefinite,
    NoValidActiveSet,
    TooLarge,
)
from notchvi.vi_core import (
    VIProblem,
    brute_force_vi,
    check_positive_definite,
    complementarity,
    solve_quasilinear,
)


def solve(p, **kw):
    return vi_core.solve_linear_vi(p, **kw)


def test_diagonal_clamp():
    p = VIProblem(sp.identity(2, format="csr"), [-1.0, 2.0], [0.0, 0.0])
    U, stats = solve(p)
    np.testing.assert_allclose(U, [0, 2], atol=1e-12)
    assert stats.converged


def test_unconstrained_reduces_to_linear_solve():
    rng = np.random.default_rng(1)
    G = rng.normal(size=(6, 6))
    M = G @ G.T + 6 * np.eye(6)
    b = rng.normal(size=6)
    U, stats = solve(VIProblem(M, b, np.full(6, -np.inf)))
    np.testing.assert_allclose(U, np.linalg.solve(M, b), atol=1e-12)
    assert stats.method == "direct"


def test_brute_force_examples():
    assert brute_force_vi(VIProblem(np.array([[2.0]]), [-3.0], [0.0]))[0] == 0
    assert brute_force_vi(VIProblem(np.array([[2.0]]), [3.0], [0.0]))[0] == pytest.approx(1.5)
    np.testing.assert_allclose(brute_force_vi(VIProblem(np.eye(2), [-1.0, 2.0], [0.0, 0.0])), [0, 2])


def test_brute_force_limits():
    with pytest.raises(TooLarge):
        brute_force_vi(VIProblem(np.eye(17), np.zeros(17), np.zeros(17)))
    # indefinite matrix with positive diagonal: no sign-consistent active set
    M = np.array([[1.0, -2.0], [-2.0, 1.0]])
    with pytest.raises(NoValidActiveSet):
        brute_force_vi(VIProblem(M, [1.0, 1.0], [0.0, 0.0]))


def test_nonpositive_diagonal():
    with pytest.raises(NonPositiveDiagonal):
        VIProblem(np.diag([1.0, 0.0]), np.zeros(2), np.zeros(2))


def test_verify_flag_detects_indefinite():
    M = sp.csr_matrix(np.array([[1.0, 3.0], [3.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        check_positive_definite(VIProblem(M, np.ones(2), np.zeros(2)))


def test_not_converged_carries_iterate():
    n = 40
    M = sp.diags([-1.0, 2.0001, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    p = VIProblem(M, np.ones(n), np.zeros(n))
    with pytest.raises(NotConverged) as info:
        solve(p, max_iter=3, warm_start="none", check_every=1)
    assert info.value.solution.shape == (n,)
    assert not info.value.stats.converged


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 10))
def test_psor_matches_oracle_property(seed, n):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    M = G @ G.T + n * np.eye(n)
    b = rng.normal(size=n)
    lb = np.where(rng.uniform(size=n) < 0.3, -np.inf, rng.normal(size=n))
    p = VIProblem(sp.csr_matrix(M), b, lb)
    U, _ = solve(p, tol=1e-12, warm_start="none")
    assert np.max(np.abs(U - brute_force_vi(p))) <= 1e-8
    c = complementarity(p, U)
    assert c.ok(1e-10, n)


def test_nonsymmetric_fallback():
    rng = np.random.default_rng(4)
    n = 8
    G = rng.normal(size=(n, n))
    M = G @ G.T + n * np.eye(n) + 0.5 * (G - G.T)
    p = VIProblem(sp.csr_matrix(M), rng.normal(size=n), np.zeros(n))
    U, stats = solve(p, tol=1e-11)
    assert stats.method == "projected-fb"
    assert complementarity(p, U).natural_residual <= 1e-11


def quasi_problem(U):
    g = 1 + U**2 / (1 + U**2)
    M = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]) * (1 + g.mean())
    return VIProblem(sp.csr_matrix(M), np.array([1.0, -2.0, 3.0]), np.zeros(3))


def test_quasilinear_fixed_point():
    U, stats = solve_quasilinear(quasi_problem, np.zeros(3), tol_outer=1e-12)
    assert stats.converged
    # reference: plain fixed-point iteration with the brute-force oracle
    V = np.zeros(3)
    for _ in range(200):
        V = brute_force_vi(quasi_problem(V))
    np.testing.assert_allclose(U, V, atol=1e-10)
    U2, stats2 = solve_quasilinear(quasi_problem, U, tol_outer=1e-9)
    assert stats2.iterations <= 1
    tail = stats.history[3:]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:]))


def test_quasilinear_constant_assembler_one_iteration():
    p = VIProblem(np.eye(2), [1.0, -1.0], [0.0, 0.0])
    U, stats = solve_quasilinear(lambda _: p, np.zeros(2), state_dependent=False)
    assert stats.iterations == 1
    np.testing.assert_allclose(U, [1, 0])


def test_quasilinear_reports_nonconvergence():
    def flip(U):
        return VIProblem(np.eye(1), [1.0 if U[0] <= 0.5 else 0.0], [-np.inf])

    with pytest.raises(NotConverged):
        solve_quasilinear(flip, np.zeros(1), max_outer=5)


def test_damping_validation():
    with pytest.raises(ValueError):
        solve_quasilinear(quasi_problem, np.zeros(3), damping=0.0)
