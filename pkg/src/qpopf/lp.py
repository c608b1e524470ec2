"""Dense LP solving with active-set extraction and L1 feasibility projection.

``solve_lp`` wraps the HiGHS simplex (via scipy) and post-processes its
answer: a residual scan identifies the active rows, a deterministic rank
selection picks an n-row basis (treating each opposing equality pair as
one hyperplane), and the solution is re-solved from that basis so the
returned vertex is accurate to linear-solve precision rather than solver
tolerance.  Results are deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from qpopf.grid import ParametricLP

TOL_FEAS = 1e-8
TOL_ACTIVE = 1e-7

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "maxiter": 200_000,
}


class LpNumericError(RuntimeError):
    """Solver failed to converge within its pivot budget."""


class ProjectionError(RuntimeError):
    """Feasible set empty at the given parameter."""


@dataclass
class LPSolution:
    """Solver output.

    ``active_set`` lists every row whose residual is within ``TOL_ACTIVE``
    (both members of a binding equality pair appear).  ``basis`` is the
    deterministic n-row subset used for polishing and for the parametric
    affine map; it is None when the solve did not produce one.  Status
    ``degenerate`` means optimal but with a non-unique basis (more active
    hyperplanes than variables, or fewer than n).
    """

    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded | degenerate
    active_set: list[int] = field(default_factory=list)
    basis: list[int] | None = None
    max_violation: float = float("nan")

    @property
    def is_optimal(self) -> bool:
        return self.status in ("optimal", "degenerate")

    @property
    def degenerate(self) -> bool:
        return self.status == "degenerate"

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist() if self.x is not None else None,
            "objective": self.objective,
            "status": self.status,
            "active_set": list(self.active_set),
            "basis": list(self.basis) if self.basis is not None else None,
            "max_violation": self.max_violation,
        }


def _linprog_dense(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> tuple[str, np.ndarray | None]:
    res = linprog(
        c,
        A_ub=A,
        b_ub=b,
        bounds=[(None, None)] * A.shape[1],
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 0:
        return "optimal", np.asarray(res.x, dtype=float)
    if res.status == 2:
        return "infeasible", None
    if res.status == 3:
        return "unbounded", None
    raise LpNumericError(f"LP solver failed: status={res.status} ({res.message})")


def _scan_active(A: np.ndarray, b: np.ndarray, x: np.ndarray, tol: float) -> list[int]:
    resid = A @ x - b
    return [int(i) for i in np.flatnonzero(np.abs(resid) <= tol)]


def _effective_count(active: list[int], mirror: dict[int, int]) -> int:
    """Active-hyperplane count: a fully-active opposing pair counts once."""
    active_set = set(active)
    count = 0
    for i in active:
        j = mirror.get(i)
        if j is not None and j in active_set and j < i:
            continue  # counted at the lower-indexed member
        count += 1
    return count


def _greedy_basis(A: np.ndarray, rows: list[int], n: int) -> list[int] | None:
    """First n linearly independent rows of ``rows`` (ascending order)."""
    picked: list[int] = []
    basis_vecs = np.zeros((0, A.shape[1]))
    for i in rows:
        v = A[i].astype(float)
        r = v - basis_vecs.T @ (basis_vecs @ v) if len(picked) else v
        nrm = np.linalg.norm(r)
        if nrm > 1e-9 * max(1.0, np.linalg.norm(v)):
            picked.append(i)
            basis_vecs = np.vstack([basis_vecs, r / nrm])
            if len(picked) == n:
                return picked
    return None


def _fix_basis_signs(
    plp: ParametricLP, basis: list[int], mirror: dict[int, int]
) -> tuple[list[int], np.ndarray | None]:
    """Swap equality-pair members so the basic dual is nonnegative.

    Returns the (sorted) corrected basis and its dual values, or the
    original basis with None if the basic system is singular.
    """
    W_B = plp.W[basis]
    try:
        y = np.linalg.solve(W_B.T, -plp.c)
    except np.linalg.LinAlgError:
        return basis, None
    out = list(basis)
    for pos, i in enumerate(out):
        j = mirror.get(i)
        if j is not None and y[pos] < -1e-9:
            out[pos] = j
            y[pos] = -y[pos]
    order = np.argsort(out)
    return [out[k] for k in order], y[order]


def solve_lp(
    plp: ParametricLP,
    theta: np.ndarray,
    tol_active: float = TOL_ACTIVE,
    tol_feas: float = TOL_FEAS,
) -> LPSolution:
    """Minimize c.x over {W x <= S + T theta} and extract the active set."""
    theta = np.asarray(theta, dtype=float)
    b = plp.rhs(theta)
    status, x = _linprog_dense(plp.c, plp.W, b)
    if x is None:
        return LPSolution(x=np.full(plp.n, np.nan), objective=float("nan"), status=status)

    mirror = plp.mirror_row()
    active = _scan_active(plp.W, b, x, tol_active)
    basis = _greedy_basis(plp.W, active, plp.n)
    if basis is not None:
        basis, _ = _fix_basis_signs(plp, basis, mirror)
        x_polished = _polish(plp, b, basis)
        if x_polished is not None:
            raw_viol = float(np.max(plp.W @ x - b, initial=0.0))
            new_viol = float(np.max(plp.W @ x_polished - b, initial=0.0))
            if new_viol <= max(1e-9, raw_viol):
                x = x_polished
        active = _scan_active(plp.W, b, x, tol_active)

    eff = _effective_count(active, mirror)
    status = "optimal" if eff == plp.n and basis is not None else "degenerate"
    return LPSolution(
        x=x,
        objective=float(plp.c @ x),
        status=status,
        active_set=active,
        basis=basis,
        max_violation=float(np.max(plp.W @ x - b, initial=0.0)),
    )


def _polish(plp: ParametricLP, b: np.ndarray, basis: list[int]) -> np.ndarray | None:
    try:
        return np.linalg.solve(plp.W[basis], b[basis])
    except np.linalg.LinAlgError:
        return None


def active_set(
    solution: LPSolution,
    plp: ParametricLP,
    theta: np.ndarray,
    tol_active: float = TOL_ACTIVE,
) -> list[int]:
    """Rows with |W_i x - S_i - T_i theta| <= tol_active, ascending."""
    if not solution.is_optimal:
        raise ValueError(f"active_set requires an optimal solution, got {solution.status}")
    b = plp.rhs(np.asarray(theta, dtype=float))
    return _scan_active(plp.W, b, solution.x, tol_active)


def dual_certificate(plp: ParametricLP, solution: LPSolution, theta: np.ndarray) -> np.ndarray:
    """Dual vector y >= 0 with W'y = -c supported on the basis rows.

    For a nondegenerate optimum, -rhs.y equals the primal objective.
    """
    if solution.basis is None:
        raise ValueError("solution has no basis to build a certificate from")
    y = np.zeros(plp.q)
    y_b = np.linalg.solve(plp.W[solution.basis].T, -plp.c)
    y[solution.basis] = y_b
    return y


def solve_raw(
    c: np.ndarray, A: np.ndarray, b: np.ndarray
) -> tuple[str, np.ndarray | None]:
    """One-shot dense LP (no parametric structure), same backend."""
    return _linprog_dense(
        np.asarray(c, dtype=float), np.asarray(A, dtype=float), np.asarray(b, dtype=float)
    )


def project_feasible(
    x_tilde: np.ndarray,
    plp: ParametricLP,
    theta: np.ndarray,
    tol_feas: float = TOL_FEAS,
) -> np.ndarray:
    """L1-closest feasible point to ``x_tilde`` at parameter ``theta``.

    Solved as an auxiliary LP over (x, u) with u >= |x - x_tilde|;
    already-feasible inputs are returned unchanged.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    theta = np.asarray(theta, dtype=float)
    b = plp.rhs(theta)
    if float(np.max(plp.W @ x_tilde - b, initial=0.0)) <= tol_feas:
        return x_tilde.copy()

    n, q = plp.n, plp.q
    eye = np.eye(n)
    A_aux = np.block(
        [
            [plp.W, np.zeros((q, n))],
            [eye, -eye],
            [-eye, -eye],
        ]
    )
    b_aux = np.concatenate([b, x_tilde, -x_tilde])
    c_aux = np.concatenate([np.zeros(n), np.ones(n)])
    status, z = _linprog_dense(c_aux, A_aux, b_aux)
    if status != "optimal":
        raise ProjectionError(f"projection LP is {status} at theta={theta}")
    # Polish from the aux basis for a precise vertex.
    active = _scan_active(A_aux, b_aux, z, TOL_ACTIVE)
    basis = _greedy_basis(A_aux, active, 2 * n)
    if basis is not None:
        try:
            z_p = np.linalg.solve(A_aux[basis], b_aux[basis])
            if float(np.max(A_aux @ z_p - b_aux, initial=0.0)) <= max(
                1e-9, float(np.max(A_aux @ z - b_aux, initial=0.0))
            ):
                z = z_p
        except np.linalg.LinAlgError:
            pass
    x = z[:n]
    viol = float(np.max(plp.W @ x - b, initial=0.0))
    if viol > tol_feas:
        raise LpNumericError(f"projection violates constraints by {viol:.3e}")
    return x


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(np.abs(np.asarray(a) - np.asarray(b))))
