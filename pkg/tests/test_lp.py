import itertools

import numpy as np
import pytest

from qpopf.grid import ParametricLP
from qpopf.lp import (
    active_set,
    dual_certificate,
    l1_distance,
    project_feasible,
    solve_lp,
)


def brute_force_lp(c, A, b):
    """Vertex enumeration oracle: try every n-row subset of tight rows."""
    c, A, b = np.asarray(c, float), np.asarray(A, float), np.asarray(b, float)
    q, n = A.shape
    best = None
    for rows in itertools.combinations(range(q), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.max(A @ x - b) <= 1e-8:
            val = float(c @ x)
            if best is None or val < best[0] - 1e-12:
                best = (val, x)
    return best


def random_bounded_lp(rng, n=3, extra_rows=8):
    A = np.vstack([rng.normal(size=(extra_rows, n)), np.eye(n), -np.eye(n)])
    b = np.concatenate([rng.uniform(0.5, 2.0, size=extra_rows), np.full(2 * n, 2.0)])
    c = rng.normal(size=n)
    return c, A, b


def as_plp(c, A, b):
    A = np.asarray(A, float)
    q = A.shape[0]
    return ParametricLP(
        c=np.asarray(c, float),
        W=np.asarray(A, float),
        S=np.asarray(b, float),
        T=np.zeros((q, 1)),
        theta_box=np.array([[-1.0, 1.0]]),
    )


def test_toy_positive_theta(toy_plp):
    sol = solve_lp(toy_plp, np.array([0.5]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.5, abs=1e-9)
    assert sol.active_set == [0]


def test_toy_negative_theta(toy_plp):
    sol = solve_lp(toy_plp, np.array([-0.5]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.0, abs=1e-9)
    assert sol.active_set == [1]


def test_toy_boundary_is_degenerate(toy_plp):
    sol = solve_lp(toy_plp, np.array([0.0]))
    assert sol.degenerate
    assert sol.active_set == [0, 1]


def test_infeasible_and_unbounded_statuses():
    # x <= 0 and -x <= -1 cannot hold together
    plp = as_plp([1.0], [[1.0], [-1.0]], [0.0, -1.0])
    assert solve_lp(plp, np.zeros(1)).status == "infeasible"
    # min x with only x <= 1
    plp = as_plp([1.0], [[1.0]], [1.0])
    assert solve_lp(plp, np.zeros(1)).status == "unbounded"


def test_active_set_matches_residual_scan():
    rng = np.random.default_rng(5)
    for _ in range(20):
        c, A, b = random_bounded_lp(rng, n=3, extra_rows=5)
        plp = as_plp(c, A, b)
        sol = solve_lp(plp, np.zeros(1))
        assert sol.status in ("optimal", "degenerate")
        resid = np.abs(A @ sol.x - b)
        expected = [int(i) for i in np.flatnonzero(resid <= 1e-7)]
        assert active_set(sol, plp, np.zeros(1)) == expected
        assert sol.active_set == expected


def test_objective_matches_vertex_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(10):
        c, A, b = random_bounded_lp(rng, n=3, extra_rows=6)
        plp = as_plp(c, A, b)
        sol = solve_lp(plp, np.zeros(1))
        oracle = brute_force_lp(c, A, b)
        assert oracle is not None
        assert sol.objective == pytest.approx(oracle[0], abs=1e-8)


def test_determinism_bitwise():
    rng = np.random.default_rng(23)
    c, A, b = random_bounded_lp(rng, n=4, extra_rows=10)
    plp = as_plp(c, A, b)
    first = solve_lp(plp, np.zeros(1))
    for _ in range(3):
        again = solve_lp(plp, np.zeros(1))
        assert again.active_set == first.active_set
        assert again.basis == first.basis
        assert np.array_equal(again.x, first.x)


def test_dual_certificate_reproduces_objective():
    rng = np.random.default_rng(31)
    for _ in range(10):
        c, A, b = random_bounded_lp(rng, n=3, extra_rows=6)
        plp = as_plp(c, A, b)
        sol = solve_lp(plp, np.zeros(1))
        if sol.status != "optimal":
            continue
        y = dual_certificate(plp, sol, np.zeros(1))
        assert np.min(y) >= -1e-9
        np.testing.assert_allclose(plp.W.T @ y, -plp.c, atol=1e-8)
        assert -float(plp.rhs(np.zeros(1)) @ y) == pytest.approx(sol.objective, abs=1e-6)


def test_project_feasible_identity(toy_plp):
    x = np.array([0.7])
    out = project_feasible(x, toy_plp, np.array([0.5]))
    np.testing.assert_array_equal(out, x)


def test_project_single_bound(toy_plp):
    out = project_feasible(np.array([2.0]), toy_plp, np.array([0.5]))
    assert out[0] == pytest.approx(1.0, abs=1e-8)


def test_project_idempotent():
    rng = np.random.default_rng(41)
    c, A, b = random_bounded_lp(rng, n=3, extra_rows=6)
    plp = as_plp(c, A, b)
    x_tilde = rng.normal(size=3) * 10.0
    p1 = project_feasible(x_tilde, plp, np.zeros(1))
    p2 = project_feasible(p1, plp, np.zeros(1))
    np.testing.assert_allclose(p1, p2, atol=1e-10)
    assert np.max(A @ p1 - b) <= 1e-8


def test_projection_l1_optimality_small():
    # brute-force check on a box: projection of an outside point onto
    # [-1,1]^2 clips componentwise under the L1 objective
    plp = as_plp(
        [0.0, 0.0],
        np.vstack([np.eye(2), -np.eye(2)]),
        np.ones(4),
    )
    out = project_feasible(np.array([3.0, -0.2]), plp, np.zeros(1))
    np.testing.assert_allclose(out, [1.0, -0.2], atol=1e-8)
    assert l1_distance(out, [3.0, -0.2]) == pytest.approx(2.0, abs=1e-8)
