"""LP/MBLP engines: the dependency-free simplex against the HiGHS path,
plus enumeration oracles for the branch-and-bound."""
import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from edgetwin.lp import (
    LpProblem,
    MbLpProblem,
    dump,
    solve_lp,
    solve_lp_dense,
    solve_mblp,
)


def _random_feasible_lp(seed, sense="min", binary_at=()):
    """Random bounded LP with a known interior feasible point."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    m = int(rng.integers(1, 4))
    x0 = rng.uniform(0.1, 0.9, n)
    for j in binary_at:
        x0[j] = float(rng.integers(0, 2))
    a = rng.normal(size=(m, n))
    rel = [str(r) for r in rng.choice(["<=", "=", ">="], m)]
    rhs = a @ x0
    for k, r in enumerate(rel):
        if r == "<=":
            rhs[k] += rng.uniform(0.1, 1.0)
        elif r == ">=":
            rhs[k] -= rng.uniform(0.1, 1.0)
    c = rng.normal(size=n)
    return LpProblem(c=c, a=a, rel=rel, rhs=rhs, lb=np.zeros(n),
                     ub=np.ones(n), sense=sense), x0


def _feasible(problem, x, tol=1e-7):
    a = problem.a.toarray() if sp.issparse(problem.a) else problem.a
    ax = a @ x
    for v, r, b in zip(ax, problem.rel, problem.rhs):
        if r == "<=" and v > b + tol:
            return False
        if r == ">=" and v < b - tol:
            return False
        if r == "=" and abs(v - b) > tol:
            return False
    return bool(np.all(x >= problem.lb - tol) and np.all(x <= problem.ub + tol))


@pytest.mark.parametrize("sense", ["min", "max"])
def test_dense_and_highs_agree_on_random_lps(sense):
    for seed in range(30):
        prob, _ = _random_feasible_lp(seed, sense=sense)
        d = solve_lp(prob, backend="dense")
        h = solve_lp(prob, backend="highs")
        assert d.ok and h.ok, dump(prob)
        scale = max(1.0, abs(h.obj))
        assert abs(d.obj - h.obj) <= 1e-7 * scale, dump(prob)
        assert _feasible(prob, d.x) and _feasible(prob, h.x)


def test_duals_agree_between_backends():
    for seed in range(20):
        prob, _ = _random_feasible_lp(seed + 100)
        d = solve_lp(prob, backend="dense")
        h = solve_lp(prob, backend="highs")
        assert d.ok and h.ok
        assert np.allclose(d.dual, h.dual, rtol=1e-6, atol=1e-6), dump(prob)


def test_dual_hand_value():
    # min x1 + 2 x2 s.t. x1 + x2 >= 1: optimum (1, 0), row dual 1
    prob = LpProblem(c=[1.0, 2.0], a=[[1.0, 1.0]], rel=[">="], rhs=[1.0],
                     lb=np.zeros(2), ub=np.full(2, 10.0))
    for backend in ("dense", "highs"):
        res = solve_lp(prob, backend=backend)
        assert res.ok
        assert res.obj == pytest.approx(1.0, abs=1e-9)
        assert res.dual[0] == pytest.approx(1.0, abs=1e-7)


def test_dual_predicts_rhs_sensitivity():
    prob = LpProblem(c=[3.0, 1.0], a=[[2.0, 1.0], [1.0, 3.0]],
                     rel=[">=", ">="], rhs=[4.0, 6.0],
                     lb=np.zeros(2), ub=np.full(2, 100.0))
    base = solve_lp(prob, backend="dense")
    assert base.ok
    for row in range(2):
        rhs2 = prob.rhs.copy()
        rhs2[row] += 1e-4
        pert = LpProblem(c=prob.c, a=prob.a, rel=prob.rel, rhs=rhs2,
                         lb=prob.lb, ub=prob.ub)
        res = solve_lp(pert, backend="dense")
        assert res.obj - base.obj == pytest.approx(base.dual[row] * 1e-4,
                                                   rel=1e-4, abs=1e-9)


def test_infeasible_and_unbounded_detection():
    infeas = LpProblem(c=[1.0], a=[[1.0]], rel=["<="], rhs=[-1.0],
                       lb=np.zeros(1), ub=np.ones(1))
    unbnd = LpProblem(c=[-1.0], a=np.zeros((0, 1)), rel=[], rhs=np.zeros(0),
                      lb=np.zeros(1), ub=np.array([np.inf]))
    for backend in ("dense", "highs"):
        assert solve_lp(infeas, backend=backend).status == "infeasible"
        assert solve_lp(unbnd, backend=backend).status == "unbounded"


def test_sparse_input_matches_dense_input():
    prob, _ = _random_feasible_lp(7)
    a_sparse = sp.csr_matrix(prob.a)
    prob2 = LpProblem(c=prob.c, a=a_sparse, rel=prob.rel, rhs=prob.rhs,
                      lb=prob.lb, ub=prob.ub)
    for backend in ("dense", "highs"):
        r1 = solve_lp(prob, backend=backend)
        r2 = solve_lp(prob2, backend=backend)
        assert r1.ok and r2.ok
        assert r1.obj == pytest.approx(r2.obj, abs=1e-9)


def test_problem_validation():
    with pytest.raises(ValueError):
        LpProblem(c=[1.0], a=[[1.0, 2.0]], rel=["<="], rhs=[1.0],
                  lb=[0.0], ub=[1.0])
    with pytest.raises(ValueError):
        LpProblem(c=[1.0], a=[[1.0]], rel=["<"], rhs=[1.0],
                  lb=[0.0], ub=[1.0])
    with pytest.raises(ValueError):
        LpProblem(c=[1.0], a=[[1.0]], rel=["<="], rhs=[1.0],
                  lb=[-np.inf], ub=[1.0])
    with pytest.raises(ValueError):
        MbLpProblem(LpProblem(c=[1.0], a=[[1.0]], rel=["<="], rhs=[1.0],
                              lb=[0.0], ub=[1.0]), binary=[3])


def _mblp_oracle(problem):
    """Best objective over all binary assignments, each fixed and LP-solved."""
    lp = problem.lp
    best = None
    for combo in itertools.product((0.0, 1.0), repeat=len(problem.binary)):
        lb = lp.lb.copy()
        ub = lp.ub.copy()
        for j, v in zip(problem.binary, combo):
            lb[j] = ub[j] = v
        res = solve_lp_dense(LpProblem(c=lp.c, a=lp.a, rel=lp.rel, rhs=lp.rhs,
                                       lb=lb, ub=ub, sense=lp.sense))
        if not res.ok:
            continue
        key = res.obj if lp.sense == "min" else -res.obj
        if best is None or key < best[0]:
            best = (key, res.obj)
    return None if best is None else best[1]


@pytest.mark.parametrize("backend", ["dense", "highs"])
def test_mblp_matches_enumeration(backend):
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        binary_at = tuple(rng.choice(2, size=2, replace=False))
        lp, _ = _random_feasible_lp(2000 + seed, binary_at=binary_at)
        prob = MbLpProblem(lp, binary=binary_at)
        oracle = _mblp_oracle(prob)
        res = solve_mblp(prob, backend=backend)
        if oracle is None:
            assert res.status == "infeasible"
            continue
        assert res.ok
        assert res.obj == pytest.approx(oracle, abs=1e-6)
        for j in binary_at:
            assert abs(res.x[j] - round(res.x[j])) <= 1e-6
