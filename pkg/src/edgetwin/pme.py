"""Frame-scale solver: access selection and knowledge granularity.

With the slot-scale decision held fixed, the drift-plus-penalty objective
is linear in the access flags a_{i,m}, the granularity x_i, and their
products u_{i,m} = a_{i,m}*x_i — except for the accuracy reward, which is
a concave function of the placed knowledge volume and is handled by an
epigraph variable with tangent cuts (a valid under-estimator, so the
relaxation ordering survives).

The bilinear products are relaxed with McCormick envelopes, optionally
partitioned into N slices of the granularity range with one indicator
binary per slice (the envelopes are built per slice and disaggregated, so
inactive slices contribute nothing). Slice bounds can be tightened by
auxiliary LPs carrying an incumbent cut before the mixed-binary solve.
The fractional access rows are finally rounded to the best ES per PT.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mobility, queues
from .costs import LargeDecision, SmallDecision
from .lp import LpProblem, MbLpProblem, solve_lp, solve_mblp
from .queues import QueuePair
from .scenario import Scenario, SlotState

_ATTACH_THRESHOLD = 0.1  # below this relaxed access value, skip the ES
_N_TANGENTS = 9


class NoFeasibleAccess(RuntimeError):
    """No rounding of the relaxed access satisfies the capacity rows."""


@dataclass
class P4Coefficients:
    """Linearized frame-scale objective: k_a.a + k_u.u + psi(sum u) + const."""

    k_a: np.ndarray  # (I, M) coefficient of the access flag
    k_u: np.ndarray  # (I, M) coefficient of the placed-knowledge product
    const: float  # decision-independent part of the slot objective
    usable: np.ndarray  # (I, M) False where access would need a dead link
    z_eff: np.ndarray  # (I,) offload flags actually enforceable this frame
    psi_scale: np.ndarray  # (I,) V * z_eff
    psi_e0: np.ndarray  # (I,) 1 - y*S/(D+S), accuracy deficit at w = 0
    psi_slope: np.ndarray  # (I,) D/(D+S), accuracy-deficit decay per unit w


@dataclass
class LargeSolveReport:
    relaxed_obj: float = np.nan
    mblp_obj: float = np.nan
    rounded_obj: float = np.nan  # surrogate objective at the rounded point
    final_obj: float = np.nan  # true objective at the rounded point
    lps_solved: int = 0
    partitions_pruned: int = 0
    contract_iterations: int = 0
    rounding_changes: int = 0
    status: str = "ok"


def build_p4(q: QueuePair, sc: Scenario, state: SlotState,
             small: SmallDecision, capacity_mode: str = "provisional",
             ) -> P4Coefficients:
    """Assemble the coefficient form of the frame-scale objective.

    capacity_mode selects the shares used inside the access-dependent
    delay terms and the capacity rows: 'provisional' assumes uniform 1/I
    shares (the slot solver will re-divide capacity after any
    reassignment, so the current shares would wrongly veto every move);
    'fixed' uses the shares as they stand.
    """
    i_n = sc.num_pts
    if capacity_mode == "provisional":
        b_hat = np.full(i_n, 1.0 / i_n)
        f_hat = np.full(i_n, 1.0 / i_n)
    elif capacity_mode == "fixed":
        b_hat, f_hat = small.b, small.f
    else:
        raise ValueError("capacity_mode must be 'provisional' or 'fixed'")

    c_im = mobility.snr_coefficients(sc, state)
    r_hat = mobility.rate_from_share(sc, c_im, b_hat[:, None])
    usable = (r_hat > 0) & mobility.link_usable(sc, state)
    z_eff = small.z * usable.any(axis=1)

    d_bits = state.knowledge_bits
    s_up = small.y * state.personalized_bits
    lam = state.task_bits
    k = sc.slots_per_frame
    ces, fes = sc.cycles_per_bit_es, sc.cpu_es

    # placed knowledge: download + installation, delay and energy, per slot
    k_u = (
        q.h[:, None] * (d_bits[:, None] / sc.cloud_rate
                        + d_bits[:, None] * ces / (f_hat[:, None] * fes))
        + q.e * (d_bits[:, None] * sc.tx_power_cloud / sc.cloud_rate
                 + sc.kappa_es * fes**2 * d_bits[:, None] * ces)
    ) / k
    k_u = np.broadcast_to(k_u, (i_n, sc.num_ess)).copy()

    # access-gated slot costs: upload+offload over the link, ES cycles, energy
    traffic = (s_up + lam)[:, None]
    inv_r = np.divide(1.0, r_hat, out=np.zeros_like(r_hat), where=usable)
    k_a = z_eff[:, None] * (
        q.h[:, None] * (traffic * inv_r + traffic * ces / (f_hat[:, None] * fes))
        + q.e * (traffic * sc.tx_power_pt * inv_r
                 + sc.kappa_es * fes**2 * traffic * ces)
    )

    t_budget, e_budget = queues.slot_budgets(sc)
    local_t = (1 - z_eff) * lam * sc.cycles_per_bit_pt / sc.cpu_pt
    local_e = (1 - z_eff) * sc.kappa_pt * sc.cpu_pt**2 * lam * sc.cycles_per_bit_pt
    const = float(
        np.dot(q.h, local_t - t_budget)
        + q.e * (np.sum(local_e) - e_budget)
        - sc.lyapunov_v * np.sum((1 - z_eff) * sc.g_local)
    )

    q_bits = d_bits + state.personalized_bits
    return P4Coefficients(
        k_a=k_a, k_u=k_u, const=const, usable=usable, z_eff=np.asarray(z_eff),
        psi_scale=sc.lyapunov_v * z_eff.astype(float),
        psi_e0=1.0 - s_up / q_bits,
        psi_slope=d_bits / q_bits,
    )


def psi_true(co: P4Coefficients, w: np.ndarray) -> np.ndarray:
    """Exact accuracy penalty -V*z*g_edge per PT at placed volume w = a*x."""
    e = np.clip(co.psi_e0 - co.psi_slope * w, 0.0, 1.0)
    return -co.psi_scale * (1.0 - e**2)


def _psi_tangents(co: P4Coefficients, i: int) -> list[tuple[float, float]]:
    """(slope, intercept) of tangent under-estimators of psi_i on [0, 1]."""
    cuts = []
    for wk in np.linspace(0.0, 1.0, _N_TANGENTS):
        e = max(co.psi_e0[i] - co.psi_slope[i] * wk, 0.0)
        val = -co.psi_scale[i] * (1.0 - e**2)
        slope = -2.0 * co.psi_scale[i] * e * co.psi_slope[i]
        cuts.append((slope, val - slope * wk))
    return cuts


def psi_surrogate(co: P4Coefficients, w: np.ndarray) -> np.ndarray:
    """Piecewise-linear under-estimator of psi (max over tangent cuts)."""
    out = np.zeros(len(w))
    for i in range(len(w)):
        if co.psi_scale[i] == 0:
            continue
        out[i] = max(s * w[i] + t for s, t in _psi_tangents(co, i))
    return out


def p4_objective(co: P4Coefficients, a: np.ndarray, x: np.ndarray,
                 surrogate: bool = False) -> float:
    """Frame-scale objective at a concrete (a, x); u is the exact product."""
    u = a * x[:, None]
    w = u.sum(axis=1)
    psi = psi_surrogate(co, w) if surrogate else psi_true(co, w)
    return float(np.sum(co.k_a * a) + np.sum(co.k_u * u) + np.sum(psi) + co.const)


def mccormick_envelope(a_lo: float, a_hi: float, x_lo: float, x_hi: float):
    """Four (ca, cx, cu, rhs) rows meaning ca*a + cx*x + cu*u <= rhs.

    The under/over-estimators of u = a*x on the box; tight at every corner.
    """
    return [
        (x_lo, a_lo, -1.0, a_lo * x_lo),    # u >= aL*x + xL*a - aL*xL
        (x_hi, a_hi, -1.0, a_hi * x_hi),    # u >= aU*x + xU*a - aU*xU
        (-x_lo, -a_hi, 1.0, -a_hi * x_lo),  # u <= aU*x + xL*a - aU*xL
        (-x_hi, -a_lo, 1.0, -a_lo * x_hi),  # u <= aL*x + xU*a - aL*xU
    ]


@dataclass
class _HullModel:
    """Index bookkeeping for the partitioned-envelope LP over all PTs."""

    sc: Scenario
    co: P4Coefficients
    n_part: int
    a_lo: np.ndarray  # (I, M, N) per-slice access bounds
    a_hi: np.ndarray
    x_edges: np.ndarray  # (N+1,) slice boundaries of the granularity range
    active: np.ndarray  # (I, N) slice alive flags
    per_pt: int = field(init=False)

    def __post_init__(self) -> None:
        m, n = self.sc.num_ess, self.n_part
        # layout per PT: xhat(N) | y(N) | ahat(M*N) | uhat(M*N) | s
        self.per_pt = 2 * n + 2 * m * n + 1

    def xhat(self, i, n):
        return i * self.per_pt + n

    def yvar(self, i, n):
        return i * self.per_pt + self.n_part + n

    def ahat(self, i, m, n):
        return i * self.per_pt + 2 * self.n_part + m * self.n_part + n

    def uhat(self, i, m, n):
        base = i * self.per_pt + 2 * self.n_part + self.sc.num_ess * self.n_part
        return base + m * self.n_part + n

    def svar(self, i):
        return (i + 1) * self.per_pt - 1


def _assemble(model: _HullModel, small: SmallDecision, capacity_mode: str,
              relax_binaries: bool, force_partition: tuple[int, int] | None = None,
              incumbent: float | None = None,
              extra_obj: np.ndarray | None = None) -> MbLpProblem:
    sc, co = model.sc, model.co
    i_n, m_n, n_p = sc.num_pts, sc.num_ess, model.n_part
    nv = i_n * model.per_pt
    cvec = np.zeros(nv)
    lb = np.zeros(nv)
    ub = np.zeros(nv)
    r_idx, c_idx, vals, rels, rhs = [], [], [], [], []

    def add(coefs: dict, rel: str, b: float) -> None:
        row = len(rhs)
        for j, v in coefs.items():
            r_idx.append(row)
            c_idx.append(j)
            vals.append(v)
        rels.append(rel)
        rhs.append(b)

    binaries = []
    for i in range(i_n):
        s_i = model.svar(i)
        if co.psi_scale[i] > 0:
            lb[s_i] = -co.psi_scale[i]
            ub[s_i] = 0.0
            cvec[s_i] = 1.0
        for n in range(n_p):
            yv = model.yvar(i, n)
            alive = model.active[i, n]
            if force_partition is not None and force_partition[0] == i:
                alive = alive and (n == force_partition[1])
            ub[yv] = 1.0 if alive else 0.0
            if not relax_binaries and alive:
                binaries.append(yv)
            xl, xu = model.x_edges[n], model.x_edges[n + 1]
            ub[model.xhat(i, n)] = xu if alive else 0.0
            # slice box, switched by the indicator
            add({model.xhat(i, n): 1.0, yv: -xu}, "<=", 0.0)
            add({model.xhat(i, n): -1.0, yv: xl}, "<=", 0.0)
            for m in range(m_n):
                al = model.a_lo[i, m, n]
                ah = model.a_hi[i, m, n] if co.usable[i, m] else 0.0
                av = model.ahat(i, m, n)
                uv = model.uhat(i, m, n)
                ub[av] = ah if alive else 0.0
                ub[uv] = (ah * xu) if alive else 0.0
                cvec[av] += co.k_a[i, m]
                cvec[uv] += co.k_u[i, m]
                add({av: 1.0, yv: -ah}, "<=", 0.0)
                add({av: -1.0, yv: al}, "<=", 0.0)
                for ca, cx, cu, cb in mccormick_envelope(al, ah, xl, xu):
                    add({model.ahat(i, m, n): ca, model.xhat(i, n): cx,
                         uv: cu, yv: -cb}, "<=", 0.0)
        # exactly one slice
        add({model.yvar(i, n): 1.0 for n in range(n_p)}, "=", 1.0)
        # single access per PT; mandatory when the task must be offloaded
        a_row = {model.ahat(i, m, n): 1.0
                 for m in range(m_n) for n in range(n_p)}
        add(a_row, "=" if co.z_eff[i] else "<=", 1.0)
        # epigraph tangents on the placed volume w = sum of u
        if co.psi_scale[i] > 0:
            for slope, intercept in _psi_tangents(co, i):
                row = {model.uhat(i, m, n): slope
                       for m in range(m_n) for n in range(n_p)}
                row[s_i] = -1.0
                add(row, "<=", -intercept)
    if capacity_mode == "fixed":
        for m in range(m_n):
            for share in (small.b, small.f):
                add({model.ahat(i, m, n): share[i]
                     for i in range(i_n) for n in range(n_p)}, "<=", 1.0)
    if incumbent is not None and np.isfinite(incumbent):
        row = len(rhs)
        nz = np.flatnonzero(cvec)
        r_idx.extend([row] * nz.size)
        c_idx.extend(nz.tolist())
        vals.extend(cvec[nz].tolist())
        rels.append("<=")
        rhs.append(incumbent - model.co.const)
    if extra_obj is not None:
        cvec = extra_obj
    a_mat = sp.coo_matrix((vals, (r_idx, c_idx)),
                          shape=(len(rhs), nv)).tocsr()
    lp = LpProblem(c=cvec, a=a_mat, rel=rels, rhs=np.array(rhs),
                   lb=lb, ub=ub)
    return MbLpProblem(lp, binary=binaries)


def _aggregate(model: _HullModel, xv: np.ndarray):
    """Recover per-PT access rows, granularity, and placed volume."""
    sc = model.sc
    i_n, m_n, n_p = sc.num_pts, sc.num_ess, model.n_part
    a_rel = np.zeros((i_n, m_n))
    x = np.zeros(i_n)
    for i in range(i_n):
        x[i] = sum(xv[model.xhat(i, n)] for n in range(n_p))
        for m in range(m_n):
            a_rel[i, m] = sum(xv[model.ahat(i, m, n)] for n in range(n_p))
    return a_rel, np.clip(x, 0.0, 1.0)


def _heuristic_incumbent(co: P4Coefficients, sc: Scenario, state: SlotState):
    """Nearest-usable-ES access with mid-range granularity; surrogate value."""
    dist = mobility.distances(sc, state)
    a = np.zeros((sc.num_pts, sc.num_ess), dtype=int)
    for i in range(sc.num_pts):
        order = np.argsort(dist[i], kind="stable")
        for m in order:
            if co.usable[i, m]:
                a[i, m] = 1
                break
    x = np.where(a.any(axis=1), 0.5, 0.0)
    return a, x, p4_objective(co, a, x, surrogate=True)


def contract_bounds(model: _HullModel, small: SmallDecision,
                    capacity_mode: str, incumbent: float, sc: Scenario,
                    report: LargeSolveReport) -> None:
    """Tighten per-slice access bounds with min/max LPs under the incumbent cut.

    A slice whose restriction is infeasible under the cut cannot contain
    the optimum and is removed. Bounds only ever shrink.
    """
    i_n, m_n, n_p = sc.num_pts, sc.num_ess, model.n_part
    nv = i_n * model.per_pt
    for i in range(i_n):
        for n in range(n_p):
            if not model.active[i, n]:
                continue
            removed = False
            for m in range(m_n):
                if not model.co.usable[i, m]:
                    continue
                obj = np.zeros(nv)
                obj[model.ahat(i, m, n)] = 1.0
                lo_p = _assemble(model, small, capacity_mode, True,
                                 force_partition=(i, n), incumbent=incumbent,
                                 extra_obj=obj)
                res_lo = solve_lp(lo_p.lp, pivot_limit=sc.pivot_limit,
                                  backend=sc.lp_backend)
                report.lps_solved += 1
                if res_lo.status == "infeasible":
                    model.active[i, n] = False
                    report.partitions_pruned += 1
                    removed = True
                    break
                hi_p = _assemble(model, small, capacity_mode, True,
                                 force_partition=(i, n), incumbent=incumbent,
                                 extra_obj=-obj)
                res_hi = solve_lp(hi_p.lp, pivot_limit=sc.pivot_limit,
                                  backend=sc.lp_backend)
                report.lps_solved += 1
                if res_lo.ok:
                    model.a_lo[i, m, n] = max(model.a_lo[i, m, n], res_lo.obj)
                if res_hi.ok:
                    model.a_hi[i, m, n] = min(model.a_hi[i, m, n], -res_hi.obj)
            if removed:
                continue


def solve_relaxed(co: P4Coefficients, sc: Scenario, small: SmallDecision,
                  capacity_mode: str):
    """Plain single-box McCormick relaxation (no binaries)."""
    model = _HullModel(sc, co, 1,
                       a_lo=np.zeros((sc.num_pts, sc.num_ess, 1)),
                       a_hi=np.ones((sc.num_pts, sc.num_ess, 1)),
                       x_edges=np.array([0.0, 1.0]),
                       active=np.ones((sc.num_pts, 1), dtype=bool))
    prob = _assemble(model, small, capacity_mode, relax_binaries=True)
    res = solve_lp(prob.lp, pivot_limit=sc.pivot_limit, backend=sc.lp_backend)
    return model, res


def _round_access(co: P4Coefficients, a_rel: np.ndarray, x: np.ndarray,
                  report: LargeSolveReport) -> LargeDecision:
    """Argmax rounding: z-forced PTs always attach; weak rows stay local."""
    i_n, m_n = a_rel.shape
    a = np.zeros((i_n, m_n), dtype=int)
    x_out = x.copy()
    for i in range(i_n):
        row = np.where(co.usable[i], a_rel[i], -np.inf)
        m_star = int(np.argmax(row))  # argmax takes the lowest index on ties
        best = row[m_star]
        if co.z_eff[i]:
            if np.isfinite(best):
                a[i, m_star] = 1
        elif best >= _ATTACH_THRESHOLD:
            a[i, m_star] = 1
        if a[i].sum() == 0:
            x_out[i] = 0.0
        if np.isfinite(best) and abs(best - a[i, m_star]) > 1e-9:
            report.rounding_changes += 1
    return LargeDecision(a, x_out)


def repair_shares(sc: Scenario, large: LargeDecision,
                  small: SmallDecision) -> SmallDecision:
    """Renormalize b and f within any ES whose rounded load exceeds 1."""
    out = small.copy()
    for share in (out.b, out.f):
        load = (large.a * share[:, None]).sum(axis=0)
        over = load > 1.0
        if np.any(over):
            att = large.attached > 0
            scale = np.ones_like(load)
            np.divide(1.0, load, out=scale, where=over)
            share[att] *= scale[large.es_index[att]]
    np.clip(out.b, sc.share_floor, 1.0, out=out.b)
    np.clip(out.f, sc.share_floor, 1.0, out=out.f)
    return out


def solve_large(
    q: QueuePair, sc: Scenario, state: SlotState, small: SmallDecision,
    capacity_mode: str = "provisional",
) -> tuple[LargeDecision, SmallDecision, LargeSolveReport]:
    """Full frame-scale solve: relax, partition, contract, solve, round."""
    report = LargeSolveReport()
    co = build_p4(q, sc, state, small, capacity_mode)

    _, relaxed = solve_relaxed(co, sc, small, capacity_mode)
    report.lps_solved += 1
    if relaxed.ok:
        report.relaxed_obj = relaxed.obj + co.const

    a_heur, x_heur, incumbent = _heuristic_incumbent(co, sc, state)
    n_p = sc.partitions
    model = _HullModel(
        sc, co, n_p,
        a_lo=np.zeros((sc.num_pts, sc.num_ess, n_p)),
        a_hi=np.ones((sc.num_pts, sc.num_ess, n_p)),
        x_edges=np.linspace(0.0, 1.0, n_p + 1),
        active=np.ones((sc.num_pts, n_p), dtype=bool),
    )
    for _ in range(sc.contract_rounds):
        report.contract_iterations += 1
        contract_bounds(model, small, capacity_mode, incumbent, sc, report)

    prob = _assemble(model, small, capacity_mode,
                     relax_binaries=(n_p == 1))
    res = solve_mblp(prob, node_limit=sc.node_limit,
                     pivot_limit=sc.pivot_limit, backend=sc.lp_backend)
    report.lps_solved += 1
    if not res.ok or res.x is None:
        # fall back to the heuristic incumbent; never leave the frame unsolved
        report.status = "fallback_heuristic" if np.isfinite(incumbent) else "fallback_local"
        if np.isfinite(incumbent):
            large = LargeDecision(a_heur, x_heur)
        else:
            large = LargeDecision(np.zeros((sc.num_pts, sc.num_ess), int),
                                  np.zeros(sc.num_pts))
        report.final_obj = p4_objective(co, large.a, large.x)
        return large, repair_shares(sc, large, small), report

    report.mblp_obj = res.obj + co.const
    a_rel, x_sol = _aggregate(model, res.x)
    large = _round_access(co, a_rel, x_sol, report)
    report.rounded_obj = p4_objective(co, large.a, large.x, surrogate=True)
    report.final_obj = p4_objective(co, large.a, large.x)
    repaired = repair_shares(sc, large, small)
    return large, repaired, report
