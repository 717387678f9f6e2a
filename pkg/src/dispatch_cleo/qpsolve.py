"""Dense convex-QP solver and assembly of the dispatch subproblems.

Problems are small (tens of variables), so a primal active-set method with
explicit null-space steps is used: it identifies the active set exactly,
is bitwise deterministic for identical inputs, and reports KKT residuals
on every optimal return.  The quadratic term may be singular (the DR block
of the dispatch problem is linear): descent directions in the null space
of the reduced Hessian are followed to the nearest blocking constraint.

Statuses: ``optimal`` (KKT residuals within tol), ``infeasible``
(phase 1 could not reach the feasible set), ``max_iter``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispatch import FEAS_EPS, dr_max_vector
from .netmodel import IncidenceMaps, PowerSystem


class SolverError(RuntimeError):
    """Internal solver failure (KKT check failed or unbounded ray)."""


@dataclass
class QpProblem:
    """min 0.5 x'Qx + c'x + c0  s.t.  a_ineq x <= b_ineq,  lb <= x <= ub."""

    q: np.ndarray
    c: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0

    def __post_init__(self) -> None:
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        self.q = np.asarray(self.q, dtype=float).reshape(n, n)
        self.a_ineq = np.asarray(self.a_ineq, dtype=float).reshape(-1, n)
        self.b_ineq = np.atleast_1d(np.asarray(self.b_ineq, dtype=float))
        self.lb = np.atleast_1d(np.asarray(self.lb, dtype=float))
        self.ub = np.atleast_1d(np.asarray(self.ub, dtype=float))
        if self.b_ineq.size != self.a_ineq.shape[0]:
            raise ValueError("a_ineq and b_ineq sizes disagree")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the variable count")

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self) -> None:
        if not np.allclose(self.q, self.q.T, atol=1e-9):
            raise ValueError("quadratic term must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.q + self.q.T))
        if eigs.min(initial=0.0) < -1e-8 * max(1.0, abs(eigs).max(initial=0.0)):
            raise ValueError("quadratic term must be positive semidefinite")
        if (self.lb > self.ub + 1e-12).any():
            raise ValueError("lb must not exceed ub")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.q @ x + self.c @ x + self.c0)


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    kkt_residual: float = 0.0


def _null_space(a_rows: np.ndarray, n: int, tol: float) -> np.ndarray:
    """Orthonormal basis of the null space of a_rows (k x n)."""
    if a_rows.shape[0] == 0:
        return np.eye(n)
    q_full, r = np.linalg.qr(a_rows.T, mode="complete")
    diag = np.abs(np.diag(r)) if min(r.shape) else np.array([])
    scale = max(1.0, diag.max(initial=0.0))
    rank = int((diag > tol * scale).sum())
    return q_full[:, rank:]


def _core(
    q: np.ndarray,
    c: np.ndarray,
    g_mat: np.ndarray,
    h: np.ndarray,
    x: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, list[int], np.ndarray, str, int]:
    """Primal active-set loop from a feasible point.

    Returns (x, working set, multipliers for the working set, status, iters).
    """
    m, n = g_mat.shape
    slack = h - g_mat @ x
    work = sorted(np.nonzero(slack <= tol)[0].tolist())
    lam = np.zeros(0)

    for it in range(1, max_iter + 1):
        grad = q @ x + c
        a_w = g_mat[work]
        z = _null_space(a_w, n, tol)

        ray = False
        if z.shape[1] == 0:
            p = np.zeros(n)
        else:
            h_red = z.T @ q @ z
            g_red = z.T @ grad
            eigval, eigvec = np.linalg.eigh(h_red)
            scale = max(1.0, eigval.max(initial=0.0))
            null_mask = eigval <= tol * scale
            comp = eigvec.T @ g_red
            null_part = eigvec[:, null_mask] @ comp[null_mask]
            if np.linalg.norm(null_part) > tol * (1.0 + np.linalg.norm(g_red)):
                # Model is linear and decreasing along this direction.
                u = -null_part
                ray = True
            else:
                inv = np.where(null_mask, 0.0, 1.0 / np.where(null_mask, 1.0, eigval))
                u = -(eigvec @ (inv * comp))
            p = z @ u

        if not ray and np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.linalg.norm(x)):
            if not work:
                return x, work, np.zeros(0), "optimal", it
            lam, *_ = np.linalg.lstsq(a_w.T, -grad, rcond=None)
            if lam.min(initial=0.0) >= -tol * (1.0 + np.linalg.norm(grad)):
                return x, work, lam, "optimal", it
            worst = int(np.argmin(lam))
            work.pop(worst)
            continue

        # Step length to the nearest blocking constraint.
        denom = g_mat @ p
        slack = np.maximum(h - g_mat @ x, 0.0)
        in_work = np.zeros(m, dtype=bool)
        in_work[work] = True
        blockers = (~in_work) & (denom > tol)
        alpha_block = np.inf
        block_idx = -1
        if blockers.any():
            idx = np.nonzero(blockers)[0]
            ratios = slack[idx] / denom[idx]
            alpha_block = ratios.min()
            block_idx = int(idx[np.nonzero(ratios <= alpha_block + tol)[0][0]])
        if ray:
            if not np.isfinite(alpha_block):
                raise SolverError("descent ray is unbounded")
            alpha = alpha_block
        else:
            alpha = min(1.0, alpha_block)
        x = x + alpha * p
        if alpha < 1.0 - 1e-15 or ray:
            work.append(block_idx)
            work.sort()

    return x, work, lam, "max_iter", max_iter


def _stack_constraints(
    p: QpProblem, free: np.ndarray
) -> tuple[np.ndarray, np.ndarray, int]:
    """General rows plus finite box rows over the free variables."""
    a = p.a_ineq[:, free]
    rows = [a]
    rhs = [p.b_ineq]
    n_free = int(free.sum())
    eye = np.eye(n_free)
    ub = p.ub[free]
    lb = p.lb[free]
    fin_ub = np.isfinite(ub)
    fin_lb = np.isfinite(lb)
    rows.append(eye[fin_ub])
    rhs.append(ub[fin_ub])
    rows.append(-eye[fin_lb])
    rhs.append(-lb[fin_lb])
    g_mat = np.vstack(rows)
    h = np.concatenate(rhs)
    return g_mat, h, p.a_ineq.shape[0]


def solve(p: QpProblem, tol: float = 1e-8, x0: np.ndarray | None = None) -> QpResult:
    """Solve a convex QP; never silently clamps an infeasible problem."""
    n = p.n
    fixed = (p.ub - p.lb) <= 1e-14
    free = ~fixed
    x_full = np.where(fixed, p.lb, 0.0)

    if not free.any():
        # Everything pinned by the box; just check the general rows.
        resid = p.a_ineq @ x_full - p.b_ineq if p.a_ineq.size else np.zeros(0)
        if resid.size and resid.max(initial=0.0) > 10 * FEAS_EPS:
            return QpResult(x=x_full, objective=np.inf, status="infeasible")
        return QpResult(x=x_full, objective=p.objective(x_full), status="optimal")

    # Reduce out fixed variables.
    q_ff = p.q[np.ix_(free, free)]
    c_f = p.c[free] + p.q[np.ix_(free, fixed)] @ p.lb[fixed]
    g_mat, h, n_general = _stack_constraints(p, free)
    if fixed.any() and p.a_ineq.size:
        h = h.copy()
        h[:n_general] -= p.a_ineq[:, fixed] @ p.lb[fixed]

    lb_f, ub_f = p.lb[free], p.ub[free]
    if x0 is not None:
        x = np.clip(np.asarray(x0, dtype=float)[free], lb_f, ub_f)
    else:
        mid = np.where(
            np.isfinite(lb_f) & np.isfinite(ub_f),
            0.5 * (lb_f + ub_f),
            np.clip(0.0, lb_f, ub_f),
        )
        x = mid

    m = g_mat.shape[0]
    max_iter = 10 * (g_mat.shape[1] + m + 1)
    iters = 0

    # Phase 1: drive the worst general-row violation to zero.
    viol = g_mat @ x - h
    if viol.size and viol.max(initial=0.0) > tol:
        t0 = viol.max() + 1.0
        n_f = g_mat.shape[1]
        g1 = np.hstack([g_mat, np.zeros((m, 1))])
        g1[:n_general, -1] = -1.0
        g1 = np.vstack([g1, np.append(np.zeros(n_f), -1.0)])
        h1 = np.append(h, 0.0)
        q1 = np.zeros((n_f + 1, n_f + 1))
        c1 = np.append(np.zeros(n_f), 1.0)
        x1 = np.append(x, t0)
        x1, _, _, status1, it1 = _core(q1, c1, g1, h1, x1, tol, max_iter + 10)
        iters += it1
        if x1[-1] > 1e3 * tol * (1.0 + abs(t0)):
            return QpResult(
                x=x_full, objective=np.inf, status="infeasible", iterations=iters
            )
        x = x1[:-1]

    x, work, lam, status, it2 = _core(q_ff, c_f, g_mat, h, x, tol, max_iter)
    iters += it2
    x_full[free] = x
    if status != "optimal":
        return QpResult(
            x=x_full, objective=p.objective(x_full), status=status, iterations=iters
        )

    kkt = _kkt_residual(q_ff, c_f, g_mat, h, x, work, lam)
    scale = 1.0 + max(
        np.abs(q_ff @ x + c_f).max(initial=0.0), np.abs(h).max(initial=0.0)
    )
    if kkt > tol * scale:
        raise SolverError(f"KKT residual {kkt:.3e} exceeds tolerance")
    return QpResult(
        x=x_full,
        objective=p.objective(x_full),
        status="optimal",
        iterations=iters,
        kkt_residual=kkt,
    )


def _kkt_residual(
    q: np.ndarray,
    c: np.ndarray,
    g_mat: np.ndarray,
    h: np.ndarray,
    x: np.ndarray,
    work: list[int],
    lam: np.ndarray,
) -> float:
    grad = q @ x + c
    mu = np.zeros(g_mat.shape[0])
    if work:
        mu[work] = lam
    stat = np.abs(grad + g_mat.T @ mu).max(initial=0.0)
    resid = g_mat @ x - h
    prim = max(0.0, resid.max(initial=0.0))
    dual = max(0.0, -mu.min(initial=0.0))
    comp = np.abs(mu * resid).max(initial=0.0)
    return max(stat, prim, dual, comp)


def assemble_sed_qp(
    sys: PowerSystem,
    alpha: np.ndarray,
    a_prime: np.ndarray,
    ptdf: np.ndarray,
    maps: IncidenceMaps,
    model=None,
    center: np.ndarray | None = None,
    delta: float | None = None,
    *,
    margin: float = 0.0,
    include_variance: bool = True,
) -> QpProblem:
    """Build the dispatch QP over x = [generation; accepted DR].

    ``model`` supplies the affine response mean (a1, a0) used in the
    objective and the adequacy row; None means the identity response.
    The flow rows carry accepted DR directly.  With ``center``/``delta``
    set, the DR block is additionally boxed to the trust ball; otherwise
    only the commitment ceiling applies.  Deviations enter at their zero
    mean; the variance term and the response intercept are constants,
    folded into c0 for reporting.
    """
    n_g, n_d = sys.n_g, sys.n_drp
    if model is None:
        a1 = np.eye(n_d)
        a0 = np.zeros(n_d)
    else:
        a1 = np.asarray(model.a1, dtype=float).reshape(n_d, n_d)
        a0 = np.asarray(model.a0, dtype=float).reshape(n_d)
    pi_dr = sys.drp_pi_dr

    q = np.zeros((n_g + n_d, n_g + n_d))
    q[:n_g, :n_g] = np.diag(2.0 * sys.gen_a)
    c = np.concatenate([sys.gen_b, a1 @ pi_dr if n_d else np.zeros(0)])
    c0 = float(pi_dr @ a0) if n_d else 0.0
    if include_variance:
        c0 += float(np.sum(a_prime * alpha**2))

    rows = []
    rhs = []
    # Energy adequacy, enforced strictly via a small offset.
    adequacy = np.concatenate([-np.ones(n_g), -(a1 @ np.ones(n_d)) if n_d else np.zeros(0)])
    floor = sys.total_load + margin + FEAS_EPS - sys.res_nominal.sum() - a0.sum()
    rows.append(adequacy)
    rhs.append(-floor)
    # Two-sided line-flow limits at zero deviation.
    if sys.n_l:
        m_g = ptdf @ maps.gen
        m_d = ptdf @ maps.drp if n_d else np.zeros((sys.n_l, 0))
        base = ptdf @ (
            (maps.res @ sys.res_nominal if sys.n_r else 0.0)
            - maps.load @ np.array([ld.p for ld in sys.loads])
        )
        limits = np.array([ln.flow_limit for ln in sys.lines])
        block = np.hstack([m_g, m_d])
        rows.extend([block, -block])
        rhs.extend([limits - base, limits + base])

    a_ineq = np.vstack([np.atleast_2d(r) for r in rows])
    b_ineq = np.concatenate([np.atleast_1d(r) for r in rhs])

    cap = dr_max_vector(sys) if n_d else np.zeros(0)
    lb_rd = np.zeros(n_d)
    ub_rd = cap.copy()
    if center is not None and delta is not None and n_d:
        center = np.asarray(center, dtype=float)
        lb_rd = np.maximum(lb_rd, center - delta)
        ub_rd = np.minimum(ub_rd, center + delta)
    lb = np.concatenate([sys.gen_p_min, lb_rd])
    ub = np.concatenate([sys.gen_p_max, ub_rd])
    return QpProblem(q=q, c=c, a_ineq=a_ineq, b_ineq=b_ineq, lb=lb, ub=ub, c0=c0)


def dump_qp(p: QpProblem) -> str:
    """Serialize a QpProblem as a plain text matrix block for debugging."""
    out = []

    def block(name: str, arr: np.ndarray) -> None:
        arr = np.atleast_2d(arr)
        out.append(f"# {name} {arr.shape[0]}x{arr.shape[1]}")
        for row in arr:
            out.append(" ".join(repr(float(v)) for v in row))

    block("q", p.q)
    block("c", p.c)
    block("a_ineq", p.a_ineq)
    block("b_ineq", p.b_ineq)
    block("lb", p.lb)
    block("ub", p.ub)
    out.append(f"# c0\n{p.c0!r}")
    return "\n".join(out) + "\n"
