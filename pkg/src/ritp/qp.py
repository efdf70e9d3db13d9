"""Dense convex quadratic programming via a primal active-set method.

    minimize    0.5 x'Hx + f'x
    subject to  A_eq x = b_eq,   A_in x <= b_in

Feasibility is obtained by extending the problem with one slack variable t
bounding all inequality violations (big-M phase), which gives a trivially
feasible start; at the optimum t = 0 whenever the original problem is
feasible. Pivoting is deterministic: the lowest-index violated/blocking
constraint is always chosen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-9
REG_EPS = 1e-9


@dataclass(frozen=True)
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if H.shape != (f.size, f.size):
            raise ValueError("H must be square and match f")
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("H must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        for name in ("A_eq", "A_in"):
            mat = getattr(self, name)
            vec = getattr(self, name.replace("A", "b"))
            if mat is None:
                object.__setattr__(self, name, np.zeros((0, f.size)))
                object.__setattr__(self, name.replace("A", "b"), np.zeros(0))
            else:
                mat = np.atleast_2d(np.asarray(mat, dtype=float))
                vec = np.atleast_1d(np.asarray(vec, dtype=float))
                if mat.shape != (vec.size, f.size):
                    raise ValueError(f"{name} dimensions inconsistent")
                object.__setattr__(self, name, mat)
                object.__setattr__(self, name.replace("A", "b"), vec)

    @property
    def n(self) -> int:
        return self.f.size


@dataclass
class QPSolution:
    x: np.ndarray | None
    status: str  # optimal | infeasible | max_iter
    eq_multipliers: np.ndarray | None = None
    in_multipliers: np.ndarray | None = None
    kkt: dict = field(default_factory=dict)
    regularized: bool = False
    iterations: int = 0


def kkt_residuals(problem: QPProblem, x: np.ndarray, eq_mult: np.ndarray,
                  in_mult: np.ndarray) -> dict:
    """Residual norms of the four KKT conditions.

    stationarity:    ||Hx + f + A_eq' lam + A_in' mu||_inf
    primal:          max(||A_eq x - b_eq||_inf, max(A_in x - b_in, 0))
    dual:            max(-mu, 0)
    complementarity: max |mu_i (A_in x - b_in)_i|
    """
    grad = problem.H @ x + problem.f
    if problem.A_eq.shape[0]:
        grad = grad + problem.A_eq.T @ eq_mult
    if problem.A_in.shape[0]:
        grad = grad + problem.A_in.T @ in_mult
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    primal = 0.0
    if problem.A_eq.shape[0]:
        primal = float(np.max(np.abs(problem.A_eq @ x - problem.b_eq)))
    slack = np.zeros(0)
    if problem.A_in.shape[0]:
        slack = problem.A_in @ x - problem.b_in
        primal = max(primal, float(np.max(np.maximum(slack, 0.0))))
    dual = float(np.max(np.maximum(-in_mult, 0.0))) if in_mult.size else 0.0
    comp = float(np.max(np.abs(in_mult * slack))) if in_mult.size else 0.0
    return {
        "stationarity": stationarity,
        "primal": primal,
        "dual": dual,
        "complementarity": comp,
    }


def _solve_eqp(H, g, A):
    """Direction/multipliers of min 0.5 p'Hp + g'p s.t. A p = 0."""
    n = H.shape[0]
    m = A.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    if m:
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _active_set(H, f, A_eq, b_eq, A_in, b_in, x0, max_iter, tol):
    """Primal active-set loop from a feasible x0; lowest-index pivoting."""
    x = x0.copy()
    n_eq = A_eq.shape[0]
    n_in = A_in.shape[0]
    active = []  # inequality indices, kept sorted
    if n_in:
        active = [i for i in range(n_in) if A_in[i] @ x >= b_in[i] - tol * 10]
    mult_in = np.zeros(n_in)
    lam_eq = np.zeros(n_eq)
    for iteration in range(1, max_iter + 1):
        rows = np.vstack([A_eq] + [A_in[i : i + 1] for i in active]) if (n_eq or active) \
            else np.zeros((0, x.size))
        g = H @ x + f
        p, lam = _solve_eqp(H, g, rows)
        step_tol = tol * (1.0 + float(np.max(np.abs(x), initial=0.0)))
        if np.max(np.abs(p), initial=0.0) < step_tol:
            mult_in[:] = 0.0
            lam_eq = lam[:n_eq]
            lam_act = lam[n_eq:]
            for k, i in enumerate(active):
                mult_in[i] = lam_act[k]
            drop_tol = tol * 10 * (1.0 + float(np.max(np.abs(lam_act), initial=0.0)))
            negative = [i for k, i in enumerate(active) if lam_act[k] < -drop_tol]
            if not negative:
                return x, lam_eq, mult_in, "optimal", iteration
            active.remove(min(negative))
            continue
        # ratio test over inactive inequalities; ascending scan makes the
        # lowest-index constraint win ties
        alpha = 1.0
        blocker = None
        for i in range(n_in):
            if i in active:
                continue
            denom = A_in[i] @ p
            if denom > tol:
                room = (b_in[i] - A_in[i] @ x) / denom
                if room < alpha:
                    alpha = max(room, 0.0)
                    blocker = i
        x = x + alpha * p
        if blocker is not None:
            active.append(blocker)
            active.sort()
    return x, lam_eq, mult_in, "max_iter", max_iter


def solve(problem: QPProblem, tol: float = 1e-8, max_iter: int | None = None) -> QPSolution:
    """Solve the QP; H is regularized by +1e-9 I (flagged) if not positive definite."""
    n = problem.n
    H = problem.H.copy()
    regularized = False
    try:
        np.linalg.cholesky(H + 0.0)
    except np.linalg.LinAlgError:
        H = H + REG_EPS * np.eye(n)
        regularized = True
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            # PSD with nontrivial null space; bump once more so the KKT systems solve
            H = H + 1e-8 * np.eye(n)
    if max_iter is None:
        max_iter = 100 + 10 * (n + problem.A_in.shape[0] + problem.A_eq.shape[0])

    n_in = problem.A_in.shape[0]
    if n_in == 0:
        # pure equality-constrained problem: one KKT solve from a feasible base point
        if problem.A_eq.shape[0]:
            x0 = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)[0]
            if np.max(np.abs(problem.A_eq @ x0 - problem.b_eq)) > 1e-7:
                return QPSolution(x=None, status="infeasible", regularized=regularized)
        else:
            x0 = np.zeros(n)
        p, lam = _solve_eqp(H, H @ x0 + problem.f, problem.A_eq)
        x = x0 + p
        sol = QPSolution(x=x, status="optimal", eq_multipliers=lam, in_multipliers=np.zeros(0),
                         regularized=regularized, iterations=1)
        sol.kkt = kkt_residuals(problem, x, lam, np.zeros(0))
        return sol

    # feasible base point for the equalities
    if problem.A_eq.shape[0]:
        x0 = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)[0]
        if np.max(np.abs(problem.A_eq @ x0 - problem.b_eq)) > 1e-7:
            return QPSolution(x=None, status="infeasible", regularized=regularized)
    else:
        x0 = np.zeros(n)

    violation = float(np.max(problem.A_in @ x0 - problem.b_in))
    phase1_iters = 0
    if violation > DEFAULT_TOL:
        # phase 1: exact-penalty slack minimization. The unit linear cost on t
        # dominates the tiny x anchor, so t* = 0 exactly whenever feasible.
        H1 = np.zeros((n + 1, n + 1))
        H1[:n, :n] = 1e-8 * np.eye(n)
        H1[n, n] = 1.0
        f1 = np.zeros(n + 1)
        f1[n] = 1.0
        A_eq1 = np.hstack([problem.A_eq, np.zeros((problem.A_eq.shape[0], 1))])
        A_in1 = np.vstack(
            [
                np.hstack([problem.A_in, -np.ones((n_in, 1))]),
                np.concatenate([np.zeros(n), [-1.0]])[None, :],
            ]
        )
        b_in1 = np.concatenate([problem.b_in, [0.0]])
        z0 = np.concatenate([x0, [violation + 1.0]])
        z, _, _, status1, phase1_iters = _active_set(
            H1, f1, A_eq1, problem.b_eq, A_in1, b_in1, z0, max_iter, DEFAULT_TOL
        )
        if status1 != "optimal" or z[n] > 1e-6:
            status = "infeasible" if status1 == "optimal" else status1
            return QPSolution(x=None, status=status, regularized=regularized,
                              iterations=phase1_iters)
        x0 = z[:n]

    x, lam_eq, mult_in, status, iters = _active_set(
        H, problem.f, problem.A_eq, problem.b_eq, problem.A_in, problem.b_in,
        x0, max_iter, DEFAULT_TOL,
    )
    sol = QPSolution(
        x=x, status=status, eq_multipliers=lam_eq, in_multipliers=mult_in,
        regularized=regularized, iterations=phase1_iters + iters,
    )
    sol.kkt = kkt_residuals(problem, x, lam_eq, mult_in)
    if status == "optimal" and max(sol.kkt.values()) > tol * 100:
        sol.status = "max_iter"
    return sol
