"""Dense strictly convex QP solver.

Solves::

    minimize    0.5 x'Px + q'x
    subject to  Gx <= h

with the dual active-set method of Goldfarb and Idnani. The method starts
from the unconstrained minimiser and repeatedly adds the most violated
constraint, so no feasible starting point is needed and the primal
objective increases monotonically towards the optimum. The active set of
a previous solve can be supplied as a warm start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .errors import DimensionMismatch

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"
INFEASIBLE = "infeasible"

FEAS_TOL = 1e-10
DEP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.shape[0]
        G = np.asarray(self.G, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if P.shape != (n, n):
            raise DimensionMismatch(f"P has shape {P.shape}, expected {(n, n)}")
        if G.shape[0] != h.shape[0]:
            raise DimensionMismatch(f"G has {G.shape[0]} rows but h has {h.shape[0]} entries")
        scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.h.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    kkt: tuple = (math.nan, math.nan, math.nan)
    active_set: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status == OPTIMAL

    @property
    def objective(self):
        return self.objective_history[-1] if self.objective_history else math.nan


def kkt_residuals(p: QpProblem, x, lam):
    """(stationarity, primal violation, complementarity), all infinity norms."""
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if x.shape[0] != p.n or lam.shape[0] != p.m:
        raise DimensionMismatch(f"expected x of size {p.n} and lam of size {p.m}")
    stat = p.P @ x + p.q + p.G.T @ lam
    slack = p.G @ x - p.h
    return (
        float(np.max(np.abs(stat), initial=0.0)),
        float(np.max(slack, initial=0.0)) if p.m else 0.0,
        float(np.max(np.abs(lam * slack), initial=0.0)),
    )


class QpSolver:
    """Reusable solver; one solve at a time per instance."""

    def __init__(self, feas_tol=FEAS_TOL, max_iter=None):
        self.feas_tol = feas_tol
        self.max_iter = max_iter

    def solve(self, problem: QpProblem, warm_start=None) -> QpSolution:
        """Solve ``problem``.

        Args:
            problem: strictly convex QP.
            warm_start: optional iterable of constraint indices expected to be
                active at the solution (e.g. ``previous.active_set``).
        """
        P, q, G, h = problem.P, problem.q, problem.G, problem.h
        n, m = problem.n, problem.m
        cap = self.max_iter or 10 * (n + m)
        try:
            c, lower = cho_factor(P, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            return QpSolution(np.full(n, np.nan), np.zeros(m), NUMERICAL_FAILURE, 0)
        Lf = np.tril(c)
        # L^{-1} g_i, computed only for constraints that enter the active set
        d_cache: dict[int, np.ndarray] = {}

        def D(idx):
            missing = [i for i in idx if i not in d_cache]
            if missing:
                cols = solve_triangular(Lf, G[missing].T, lower=True, check_finite=False)
                for k, i in enumerate(missing):
                    d_cache[i] = cols[:, k]
            return np.column_stack([d_cache[i] for i in idx])

        Lq = solve_triangular(Lf, q, lower=True, check_finite=False)

        def back(v):
            return solve_triangular(Lf, v, lower=True, trans="T", check_finite=False)

        history = []
        iters = 0
        active: list[int] = []
        u = np.zeros(0)

        def manifold_solution(idx):
            """Minimiser with constraints ``idx`` as equalities and its multipliers."""
            if not idx:
                return -back(Lq), np.zeros(0)
            if len(idx) > n:
                raise np.linalg.LinAlgError("more warm-start constraints than variables")
            Q1, R = np.linalg.qr(D(idx))
            if np.min(np.abs(np.diag(R))) < DEP_TOL * max(1.0, np.max(np.abs(R))):
                raise np.linalg.LinAlgError("dependent warm-start constraints")
            # y = L'x solves min 0.5|y|^2 + (L^{-1}q)'y s.t. D'y = h
            y0 = -Lq
            lam = solve_triangular(R, Q1.T @ y0 - solve_triangular(R.T, h[idx], lower=True, check_finite=False),
                                   lower=False, check_finite=False)
            y = y0 - Q1 @ (R @ lam)
            return back(y), lam

        x, _ = manifold_solution([])
        if warm_start is not None:
            idx = []
            for i in warm_start:
                i = int(i)
                if 0 <= i < m and i not in idx:
                    idx.append(i)
            while idx:
                iters += 1
                try:
                    xw, lam = manifold_solution(idx)
                except np.linalg.LinAlgError:
                    idx.pop()
                    continue
                k = int(np.argmin(lam))
                if lam[k] >= 0:
                    x, active, u = xw, idx, lam
                    break
                idx.pop(k)
            else:
                x = -back(Lq)
        history.append(problem.objective(x))

        status = None
        Q1 = R = None

        def factor(idx):
            if not idx:
                return None, None
            return np.linalg.qr(D(idx))

        Q1, R = factor(active)
        while status is None:
            if iters >= cap:
                status = MAX_ITER
                break
            if m == 0:
                status = OPTIMAL
                break
            viol = G @ x - h
            tol = self.feas_tol * (1.0 + np.abs(h))
            score = np.where(viol > tol, viol, -np.inf)
            score[active] = -np.inf
            p = int(np.argmax(score))
            if not np.isfinite(score[p]):
                status = OPTIMAL
                break
            # GI works with n'x >= b; here n = -g_p, b = -h_p
            d = -D([p])[:, 0]
            u_plus = np.append(u, 0.0)
            while True:
                iters += 1
                if Q1 is None:
                    w = d
                    r = np.zeros(0)
                else:
                    qd = Q1.T @ d
                    w = d - Q1 @ qd
                    r = -solve_triangular(R, qd, lower=False, check_finite=False)
                z = back(w)
                nz = -G[p] @ z
                # partial step length keeps dual feasibility
                t1, k = math.inf, -1
                if r.size:
                    pos = r > DEP_TOL
                    if np.any(pos):
                        ratios = np.where(pos, u_plus[:-1] / np.where(pos, r, 1.0), math.inf)
                        k = int(np.argmin(ratios))
                        t1 = float(ratios[k])
                full = np.linalg.norm(w) > DEP_TOL * max(1.0, np.linalg.norm(d))
                t2 = (G[p] @ x - h[p]) / nz if full and nz > 0 else math.inf
                t = min(t1, t2)
                if not math.isfinite(t):
                    status = INFEASIBLE
                    break
                if not math.isfinite(t2):
                    # dependent constraint: shift multipliers, drop a blocking one
                    u_plus = u_plus + t * np.append(-r, 1.0)
                    active.pop(k)
                    u_plus = np.delete(u_plus, k)
                    Q1, R = factor(active)
                    if iters >= cap:
                        status = MAX_ITER
                        break
                    continue
                x = x + t * z
                u_plus = u_plus + t * np.append(-r, 1.0)
                history.append(problem.objective(x))
                if t == t2:
                    active.append(p)
                    u = np.maximum(u_plus, 0.0)
                    Q1, R = factor(active)
                    break
                active.pop(k)
                u_plus = np.delete(u_plus, k)
                Q1, R = factor(active)
                if iters >= cap:
                    status = MAX_ITER
                    break

        lam = np.zeros(m)
        if status == OPTIMAL and active:
            lam[active] = u
        if not np.all(np.isfinite(x)):
            status = NUMERICAL_FAILURE
        kkt = kkt_residuals(problem, x, lam) if np.all(np.isfinite(x)) else (math.inf,) * 3
        return QpSolution(x, lam, status, iters, kkt, list(active), history)


def solve(problem: QpProblem, warm_start=None) -> QpSolution:
    return QpSolver().solve(problem, warm_start)


def dumps(problem: QpProblem) -> str:
    """Plain-text matrix format; floats are written with round-trip precision.

    Layout::

        qp n m
        P            (n lines of n numbers)
        q            (1 line of n numbers)
        G            (m lines of n numbers)
        h            (1 line of m numbers)
    """
    def row(v):
        return " ".join(repr(float(a)) for a in v)

    lines = [f"qp {problem.n} {problem.m}", "P"]
    lines += [row(r) for r in problem.P]
    lines += ["q", row(problem.q), "G"]
    lines += [row(r) for r in problem.G]
    lines += ["h", row(problem.h)]
    return "\n".join(lines) + "\n"


def loads(text: str) -> QpProblem:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    head = lines[0].split()
    if len(head) != 3 or head[0] != "qp":
        raise ValueError("not a QP dump: missing 'qp n m' header")
    n, m = int(head[1]), int(head[2])

    def read(start, label, count):
        if lines[start] != label:
            raise ValueError(f"expected section {label!r}, found {lines[start]!r}")
        rows = [[float(a) for a in lines[start + 1 + i].split()] if lines[start + 1 + i] else [] for i in range(count)]
        return rows, start + 1 + count

    pos = 1
    P, pos = read(pos, "P", n)
    q, pos = read(pos, "q", 1)
    G, pos = read(pos, "G", m)
    h, pos = read(pos, "h", 1)
    return QpProblem(np.array(P).reshape(n, n), np.array(q[0]), np.array(G).reshape(m, n), np.array(h[0]))
