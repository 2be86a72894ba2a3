"""Small dense LP / mixed-binary LP solving.

Two interchangeable engines sit behind one interface:

  * ``dense`` — a self-contained two-phase tableau simplex with Bland's
    rule as an anti-cycling fallback, plus a depth-first branch-and-bound
    wrapper for problems with binary variables. Slow but dependency-free
    and easy to audit; it doubles as the oracle for the fast path.
  * ``highs`` — scipy's HiGHS interface with sparse constraint matrices,
    used by default in production runs.

Problems are stated as: optimize c.x subject to rows A_k x (<= | = | >=) b_k
and box bounds lb <= x <= ub. Lower bounds must be finite (every model in
this package has them); upper bounds may be +inf.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
_PIV_TOL = 1e-9
_BLAND_AFTER = 60  # stalled iterations before switching pivot rules


@dataclass
class LpProblem:
    c: np.ndarray
    a: np.ndarray  # (m, n)
    rel: Sequence[str]  # '<=', '=', '>=' per row
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    sense: str = "min"

    def __post_init__(self) -> None:
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if sp.issparse(self.a):
            self.a = self.a.tocsr()
        else:
            self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        self.lb = np.atleast_1d(np.asarray(self.lb, dtype=float))
        self.ub = np.atleast_1d(np.asarray(self.ub, dtype=float))
        a_size = self.a.shape[0] * self.a.shape[1] if sp.issparse(self.a) else self.a.size
        m, n = self.a.shape if a_size else (0, self.c.size)
        if self.c.size != n or self.lb.size != n or self.ub.size != n:
            raise ValueError("inconsistent variable dimensions")
        if len(self.rel) != m or self.rhs.size != m:
            raise ValueError("inconsistent row dimensions")
        bad = [r for r in self.rel if r not in ("<=", "=", ">=")]
        if bad:
            raise ValueError(f"unknown relations {bad}")
        if np.any(self.lb > self.ub):
            raise ValueError("bounds must satisfy lb <= ub")
        if not np.all(np.isfinite(self.lb)):
            raise ValueError("lower bounds must be finite")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.rhs.size


@dataclass
class MbLpProblem:
    lp: LpProblem
    binary: Sequence[int] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.binary = tuple(int(i) for i in self.binary)
        n = self.lp.num_vars
        if any(not 0 <= i < n for i in self.binary):
            raise ValueError("binary index out of range")


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded | pivot_limit | node_limit
    x: Optional[np.ndarray] = None
    obj: Optional[float] = None
    dual: Optional[np.ndarray] = None  # per original row, min-sense convention

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class LpError(RuntimeError):
    pass


def dump(problem: LpProblem) -> str:
    """Plain-text rendition of an instance, for bug reports and replays."""
    lines = [f"sense {problem.sense}", "c " + " ".join(f"{v:.12g}" for v in problem.c)]
    a = problem.a.toarray() if sp.issparse(problem.a) else problem.a
    for row, rel, rhs in zip(a, problem.rel, problem.rhs):
        lines.append(" ".join(f"{v:.12g}" for v in row) + f" {rel} {rhs:.12g}")
    lines.append("lb " + " ".join(f"{v:.12g}" for v in problem.lb))
    lines.append("ub " + " ".join(f"{v:.12g}" for v in problem.ub))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Dense two-phase simplex
# ---------------------------------------------------------------------------

def _pivot(t: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    t[row] /= t[row, col]
    factors = t[:, col].copy()
    factors[row] = 0.0
    t -= np.outer(factors, t[row])
    basis[row] = col


def _run_simplex(t: np.ndarray, basis: np.ndarray, ncols_allowed: int,
                 pivot_limit: int) -> str:
    """Minimize the cost row (last row) in place. Returns a status string."""
    m = t.shape[0] - 1
    stalled = 0
    last_obj = t[-1, -1]
    for _ in range(pivot_limit):
        costs = t[-1, :ncols_allowed]
        if stalled < _BLAND_AFTER:
            col = int(np.argmin(costs))
            if costs[col] >= -OPT_TOL:
                return "optimal"
        else:  # Bland: first improving column, guarantees termination
            neg = np.flatnonzero(costs < -OPT_TOL)
            if neg.size == 0:
                return "optimal"
            col = int(neg[0])
        ratios = np.full(m, np.inf)
        pos = t[:m, col] > _PIV_TOL
        ratios[pos] = t[:m, -1][pos] / t[:m, col][pos]
        row = int(np.argmin(ratios))
        if not np.isfinite(ratios[row]):
            return "unbounded"
        if stalled >= _BLAND_AFTER:  # Bland tie-break: lowest basis index
            best = ratios[row]
            ties = np.flatnonzero(np.abs(ratios - best) <= 1e-12)
            row = int(ties[np.argmin(basis[ties])])
        _pivot(t, basis, row, col)
        obj = t[-1, -1]
        stalled = stalled + 1 if obj >= last_obj - 1e-12 else 0
        last_obj = obj
    return "pivot_limit"


def _standardize(problem: LpProblem):
    """Shift to x' = x - lb >= 0, fold finite upper bounds in as rows."""
    n = problem.num_vars
    c = problem.c if problem.sense == "min" else -problem.c
    shift_obj = float(c @ problem.lb)
    a_dense = problem.a.toarray() if sp.issparse(problem.a) else problem.a
    rows, rels, rhs = [], [], []
    for arow, rel, b in zip(a_dense, problem.rel, problem.rhs):
        rows.append(arow.copy())
        rels.append(rel)
        rhs.append(b - float(arow @ problem.lb))
    n_orig_rows = len(rows)
    for j in range(n):
        if np.isfinite(problem.ub[j]) and problem.ub[j] > problem.lb[j]:
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rels.append("<=")
            rhs.append(problem.ub[j] - problem.lb[j])
        elif problem.ub[j] == problem.lb[j]:
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rels.append("=")
            rhs.append(0.0)
    return c, shift_obj, np.array(rows), rels, np.array(rhs), n_orig_rows


def solve_lp_dense(problem: LpProblem, pivot_limit: int = 20000) -> LpResult:
    """Two-phase tableau simplex; exact for the desk-scale instances here."""
    n = problem.num_vars
    c, shift_obj, a, rels, b, n_orig = _standardize(problem)
    m = len(rels)
    if m == 0:
        # pure box problem: optimum at a bound
        x = np.where(c >= 0, problem.lb, problem.ub)
        if np.any(~np.isfinite(x)):
            return LpResult("unbounded")
        obj = float(problem.c @ x)
        return LpResult("optimal", x=x, obj=obj, dual=np.zeros(0))

    # orient rows so rhs >= 0, then append slack/surplus and artificials
    row_sign = np.where(b < 0, -1.0, 1.0)
    a = a * row_sign[:, None]
    b = b * row_sign
    rels = [
        {"<=": ">=", ">=": "<=", "=": "="}[r] if s < 0 else r
        for r, s in zip(rels, row_sign)
    ]
    slack_cols = sum(1 for r in rels if r != "=")
    total = n + slack_cols + m  # artificials for every row keep B^-1 readable
    t = np.zeros((m + 1, total + 1))
    t[:m, :n] = a
    t[:m, -1] = b
    sj = n
    for i, r in enumerate(rels):
        if r == "<=":
            t[i, sj] = 1.0
            sj += 1
        elif r == ">=":
            t[i, sj] = -1.0
            sj += 1
    art0 = n + slack_cols
    basis = np.zeros(m, dtype=int)
    for i in range(m):
        t[i, art0 + i] = 1.0
        basis[i] = art0 + i

    # Phase 1: minimize the sum of artificials
    t[-1, :] = -t[:m].sum(axis=0)
    t[-1, art0:total] = 0.0
    status = _run_simplex(t, basis, art0, pivot_limit)
    if status == "pivot_limit":
        return LpResult("pivot_limit")
    if -t[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
        return LpResult("infeasible")
    # pivot leftover artificials out (or recognize redundant rows)
    for i in range(m):
        if basis[i] >= art0:
            nz = np.flatnonzero(np.abs(t[i, :art0]) > _PIV_TOL)
            if nz.size:
                _pivot(t, basis, i, int(nz[0]))

    # Phase 2: original costs over structural + slack columns
    cost = np.zeros(total + 1)
    cost[:n] = c
    for i in range(m):
        j = basis[i]
        if cost[j] != 0.0:
            cost -= cost[j] * t[i]
    t[-1] = cost
    status = _run_simplex(t, basis, art0, pivot_limit)
    if status != "optimal":
        return LpResult(status)

    x_shift = np.zeros(total)
    x_shift[basis] = t[:m, -1]
    x = problem.lb + x_shift[:n]
    obj_min = float(c @ x_shift[:n]) + shift_obj
    obj = obj_min if problem.sense == "min" else -obj_min
    # dual of row i: y = c_B B^-1 read off the artificial columns (whose
    # phase-2 reduced cost is -y_i), with the rhs sign flip undone
    y = -t[-1, art0:art0 + m] * row_sign[:m]
    if problem.sense == "max":
        y = -y
    return LpResult("optimal", x=x, obj=obj, dual=y[:n_orig])


def _solve_lp_highs(problem: LpProblem) -> LpResult:
    c = problem.c if problem.sense == "min" else -problem.c
    rel = np.asarray(problem.rel)
    a = sp.csr_matrix(problem.a)
    le, ge, eq = rel == "<=", rel == ">=", rel == "="
    kw = {}
    n_ub = int(le.sum() + ge.sum())
    if n_ub:
        kw["A_ub"] = sp.vstack([a[le], -a[ge]], format="csr")
        kw["b_ub"] = np.concatenate([problem.rhs[le], -problem.rhs[ge]])
    if eq.any():
        kw["A_eq"] = a[eq]
        kw["b_eq"] = problem.rhs[eq]
    res = sopt.linprog(c, bounds=list(zip(problem.lb, problem.ub)),
                       method="highs", **kw)
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded")
    if not res.success:
        return LpResult("pivot_limit")
    obj = float(res.fun) if problem.sense == "min" else -float(res.fun)
    # reassemble duals in original row order (min-sense convention)
    y = np.zeros(problem.num_rows)
    idx_le, idx_ge, idx_eq = map(np.flatnonzero, (le, ge, eq))
    if n_ub:
        marg = res.ineqlin.marginals
        y[idx_le] = marg[:idx_le.size]
        y[idx_ge] = -marg[idx_le.size:]
    if idx_eq.size:
        y[idx_eq] = res.eqlin.marginals
    if problem.sense == "max":
        y = -y
    return LpResult("optimal", x=res.x.copy(), obj=obj, dual=y)


def solve_lp(problem: LpProblem, pivot_limit: int = 20000,
             backend: str = "highs") -> LpResult:
    if backend == "dense":
        return solve_lp_dense(problem, pivot_limit)
    if backend == "highs":
        return _solve_lp_highs(problem)
    raise ValueError(f"unknown LP backend {backend!r}")


# ---------------------------------------------------------------------------
# Mixed-binary branch-and-bound
# ---------------------------------------------------------------------------

def _solve_mblp_highs(problem: MbLpProblem, node_limit: int) -> LpResult:
    lp = problem.lp
    c = lp.c if lp.sense == "min" else -lp.c
    integrality = np.zeros(lp.num_vars)
    lb = lp.lb.copy()
    ub = lp.ub.copy()
    for j in problem.binary:
        integrality[j] = 1
        lb[j] = max(lb[j], 0.0)
        ub[j] = min(ub[j], 1.0)
    constraints = []
    if lp.num_rows:
        lo = np.where(np.asarray(lp.rel) == "<=", -np.inf, lp.rhs)
        hi = np.where(np.asarray(lp.rel) == ">=", np.inf, lp.rhs)
        constraints.append(
            sopt.LinearConstraint(sp.csr_matrix(lp.a), lo, hi)
        )
    res = sopt.milp(c, constraints=constraints,
                    bounds=sopt.Bounds(lb, ub), integrality=integrality,
                    options={"node_limit": node_limit})
    if res.status == 2:
        return LpResult("infeasible")
    if not res.success or res.x is None:
        return LpResult("node_limit")
    obj = float(res.fun) if lp.sense == "min" else -float(res.fun)
    return LpResult("optimal", x=res.x.copy(), obj=obj)


def solve_mblp(problem: MbLpProblem, node_limit: int = 100000,
               pivot_limit: int = 20000, backend: str = "highs") -> LpResult:
    """Global optimum of an LP with some variables restricted to {0, 1}."""
    if backend == "highs":
        return _solve_mblp_highs(problem, node_limit)
    if backend != "dense":
        raise ValueError(f"unknown MBLP backend {backend!r}")

    lp = problem.lp
    sense_flip = 1.0 if lp.sense == "min" else -1.0
    base_lb = lp.lb.copy()
    base_ub = lp.ub.copy()
    for j in problem.binary:
        base_lb[j] = max(base_lb[j], 0.0)
        base_ub[j] = min(base_ub[j], 1.0)

    best_obj = np.inf  # in min-sense units
    best_x = None
    nodes = 0
    stack = [(base_lb, base_ub)]
    hit_limit = False
    while stack:
        lb, ub = stack.pop()
        nodes += 1
        if nodes > node_limit:
            hit_limit = True
            break
        sub = LpProblem(c=lp.c, a=lp.a, rel=lp.rel, rhs=lp.rhs,
                        lb=lb, ub=ub, sense=lp.sense)
        res = solve_lp_dense(sub, pivot_limit)
        if res.status in ("infeasible", "unbounded", "pivot_limit"):
            continue
        bound = sense_flip * res.obj
        if bound >= best_obj - 1e-9:
            continue
        fracs = np.array([
            abs(res.x[j] - round(res.x[j])) for j in problem.binary
        ])
        if fracs.size == 0 or fracs.max() <= 1e-6:
            best_obj = bound
            best_x = res.x.copy()
            for j in problem.binary:
                best_x[j] = round(best_x[j])
            continue
        j = problem.binary[int(np.argmax(fracs))]
        near = round(res.x[j])
        for val in (1 - near, near):  # explore the nearer branch last = first popped
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[j] = ub2[j] = float(val)
            stack.append((lb2, ub2))

    if best_x is None:
        return LpResult("node_limit" if hit_limit else "infeasible")
    obj = sense_flip * best_obj
    status = "node_limit" if hit_limit else "optimal"
    return LpResult(status, x=best_x, obj=obj)
