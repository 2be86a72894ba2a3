"""Slot-scale solver: cyclic exact minimization over the four decision blocks.

For a fixed frame-scale decision (access + granularity) the per-slot
drift-plus-penalty objective is convex in each block separately:

  y — update fraction: convex quadratic per PT, closed-form stationary point;
  b — bandwidth shares: per-ES water-filling via KKT on the multiplier;
  f — compute shares: sum of v_i/f_i terms, sqrt-proportional closed form;
  z — offload flags: linear in the relaxed variable, endpoint thresholding.

The cycle repeats until the objective change falls below epsilon. The
objective is nonincreasing by construction; a measurable increase aborts
with a diagnostic, since it can only mean a block solver is wrong.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costs, mobility, queues
from .costs import LargeDecision, SmallDecision
from .queues import QueuePair
from .scenario import Scenario, SlotState

_TIE_TOL = 1e-12


@dataclass
class BcdReport:
    """Convergence record of one slot-scale solve."""

    iterations: int = 0
    objective: float = np.nan
    converged: bool = False
    trace: list = field(default_factory=list)  # objective after each cycle


def p5_objective(
    sc: Scenario, state: SlotState, q: QueuePair,
    large: LargeDecision, small: SmallDecision,
    frame_placement=None,
) -> float:
    """Drift-plus-penalty value of a candidate slot decision."""
    bd = costs.evaluate_slot(sc, state, large, small, frame_placement)
    return queues.drift_plus_penalty(q, bd.t_tol, bd.e_tol, bd.accuracy, sc)


def _own_snr(sc: Scenario, state: SlotState, large: LargeDecision) -> np.ndarray:
    """Share-free SNR coefficient of each PT on its accessed ES (0 if none)."""
    return (mobility.snr_coefficients(sc, state) * large.a).sum(axis=1)


def solve_y(q: QueuePair, sc: Scenario, state: SlotState,
            large: LargeDecision, small: SmallDecision) -> np.ndarray:
    """Optimal update fraction per PT with the other blocks held fixed.

    Writing d = x*D + y*S and qb = D + S, the y-dependent objective is
    L*y - V*(1 - (1 - d/qb)^2) with L collecting the queue-weighted
    upload/update delay and energy rates; the stationary point is
    y* = (qb - x*D)/S - L*qb^2 / (2*V*S^2), clamped to [0, 1].
    PTs that do not offload this slot pay nothing for freshness and get 0.
    """
    s_bits = state.personalized_bits
    d_bits = state.knowledge_bits
    q_bits = s_bits + d_bits
    rate = costs.pt_rates(sc, state, large, small)
    live = (small.z > 0) & (large.attached > 0) & (rate > 0)
    y = np.zeros(sc.num_pts)
    if not np.any(live) or sc.lyapunov_v == 0:
        return y
    es_cycle_rate = small.f * sc.cpu_es / sc.cycles_per_bit_es
    lin = s_bits * (
        q.h * (np.divide(1.0, rate, out=np.zeros_like(rate), where=rate > 0)
               + 1.0 / es_cycle_rate)
        + q.e * (sc.tx_power_pt
                 * np.divide(1.0, rate, out=np.zeros_like(rate), where=rate > 0)
                 + sc.kappa_es * sc.cpu_es**2 * sc.cycles_per_bit_es)
    )
    y_star = (q_bits - large.x * d_bits) / s_bits \
        - lin * q_bits**2 / (2.0 * sc.lyapunov_v * s_bits**2)
    y[live] = np.clip(y_star[live], 0.0, 1.0)
    return y


def _psi(w, c, b, bw):
    """KKT function w*R'(b)/R(b)^2 for R(b) = b*bw*log2(1+c/b); decreasing."""
    ell = np.log1p(c / b)
    r = b * bw * ell / mobility.LOG2
    r1 = bw / mobility.LOG2 * (ell - c / (b + c))
    return w * r1 / r**2


def _psi_logderiv(w, c, b, bw):
    """d ln psi / d ln b (negative)."""
    ell = np.log1p(c / b)
    r = b * bw * ell / mobility.LOG2
    r1 = bw / mobility.LOG2 * (ell - c / (b + c))
    r2 = -bw / mobility.LOG2 * c**2 / (b * (b + c) ** 2)
    return b * (r2 / r1 - 2.0 * r1 / r)


def solve_b(q: QueuePair, sc: Scenario, state: SlotState,
            large: LargeDecision, small: SmallDecision,
            outer_iters: int = 34, inner_iters: int = 2) -> np.ndarray:
    """Optimal bandwidth shares per ES with the other blocks held fixed.

    Each offloading PT contributes w_i / R(b_i) with weight
    w_i = z*(y*S + lambda)*(H_i + E*p_i); minimizing over the simplex gives
    the water-filling condition w_i R'(b_i)/R(b_i)^2 = mu_m on every ES.
    mu_m is found by bisection (in log space) with warm-started Newton
    steps recovering b_i(mu); PTs with zero weight keep a floor share.
    """
    floor = sc.share_floor
    i_n, m_n = sc.num_pts, sc.num_ess
    b = np.full(i_n, floor)
    att = large.attached.astype(bool)
    es = large.es_index
    c = _own_snr(sc, state, large)
    w = small.z * (small.y * state.personalized_bits + state.task_bits) \
        * (q.h + q.e * sc.tx_power_pt)
    claim = att & (w > 0) & (c > 0)

    es_att = np.where(att, es, m_n)  # route unattached to a scratch bin
    n_att = np.bincount(es_att, minlength=m_n + 1)[:m_n]
    n_claim = np.bincount(np.where(claim, es, m_n), minlength=m_n + 1)[:m_n]

    # ESs without any claimant: objective is constant, split evenly
    no_claim = att & (n_claim[es_att.clip(max=m_n - 1)] == 0)
    no_claim &= att
    if np.any(no_claim):
        b[no_claim] = 1.0 / n_att[es[no_claim]]
    cap = 1.0 - floor * np.maximum(n_att - n_claim, 0)

    single = claim & (n_claim[es] == 1)
    b[single] = cap[es[single]]
    multi = claim & (n_claim[es] >= 2)
    if not np.any(multi):
        return b

    wj, cj, ej = w[multi], c[multi], es[multi]
    bw = sc.bandwidth_per_es
    target = cap  # per-ES budget for claimants
    b_hi = target[ej]  # one claimant could take the whole budget
    b_lo = np.minimum(b_hi / n_claim[ej], b_hi) * 1e-4
    # monotone psi: bracket the multiplier by its extremes on each ES
    lo_mu = np.full(m_n, np.inf)
    hi_mu = np.zeros(m_n)
    np.minimum.at(lo_mu, ej, _psi(wj, cj, b_hi, bw))
    np.maximum.at(hi_mu, ej, _psi(wj, cj, b_lo, bw))
    lo_t = np.log(np.where(lo_mu > 0, lo_mu, 1e-300))
    hi_t = np.log(np.where(hi_mu > 0, hi_mu, 1.0))
    bj = b_hi / n_claim[ej]
    tj = np.log(bj)
    log_lo, log_hi = np.log(b_lo), np.log(b_hi)
    for _ in range(outer_iters):
        mu_t = 0.5 * (lo_t + hi_t)
        mu_j = np.exp(mu_t[ej])
        for _ in range(inner_iters):  # Newton on ln psi(e^t) = ln mu
            bj = np.exp(tj)
            resid = np.log(_psi(wj, cj, bj, bw)) - mu_t[ej]
            tj = np.clip(tj - resid / _psi_logderiv(wj, cj, bj, bw),
                         log_lo, log_hi)
        bj = np.exp(tj)
        tot = np.bincount(ej, weights=bj, minlength=m_n)
        over = tot > target  # shares too big -> raise the multiplier
        lo_t = np.where(over, mu_t, lo_t)
        hi_t = np.where(over, hi_t, mu_t)
    # exact budget: a final proportional correction is within solver noise
    tot = np.bincount(ej, weights=bj, minlength=m_n)
    scale = np.where(tot > 0, target / np.maximum(tot, 1e-300), 1.0)
    b[multi] = np.clip(bj * scale[ej], floor, 1.0)
    return b


def solve_f(q: QueuePair, sc: Scenario, state: SlotState,
            large: LargeDecision, small: SmallDecision,
            frame_start: bool = False,
            placement_bits: np.ndarray | None = None) -> np.ndarray:
    """Optimal compute shares per ES: f_i proportional to sqrt(v_i).

    v_i collects the H_i-weighted ES cycle demands: the update and edge
    execution bits every offloaded slot, plus the knowledge-installation
    work where the share in force fixes the installation speed — on the
    frame's first slot only, at 1/K weight, matching its appearance in the
    slot totals. ``placement_bits`` overrides that weighting for
    single-timescale policies that re-install every slot. ES energy is
    share-free and drops out. Zero-demand PTs get a floor share.
    """
    floor = sc.share_floor
    b_out = np.full(sc.num_pts, floor)
    att = large.attached.astype(bool)
    es = large.es_index
    bits = small.z * (small.y * state.personalized_bits + state.task_bits)
    if placement_bits is not None:
        bits = bits + placement_bits
    elif frame_start:
        bits = bits + large.x * state.knowledge_bits / sc.slots_per_frame
    v = q.h * bits * sc.cycles_per_bit_es / sc.cpu_es
    v = np.where(att, v, 0.0)
    root = np.sqrt(v)
    m_n = sc.num_ess
    es_att = np.where(att, es, m_n)
    n_att = np.bincount(es_att, minlength=m_n + 1)[:m_n]
    claim = att & (root > 0)
    n_claim = np.bincount(np.where(claim, es, m_n), minlength=m_n + 1)[:m_n]
    denom = np.bincount(np.where(claim, es, m_n), weights=root,
                        minlength=m_n + 1)[:m_n]
    no_claim = att & (n_claim[es_att.clip(max=m_n - 1)] == 0)
    if np.any(no_claim):
        b_out[no_claim] = 1.0 / n_att[es[no_claim]]
    if np.any(claim):
        cap = 1.0 - floor * np.maximum(n_att - n_claim, 0)
        b_out[claim] = cap[es[claim]] * root[claim] / denom[es[claim]]
    return b_out


def offload_coefficient(q: QueuePair, sc: Scenario, state: SlotState,
                        large: LargeDecision, small: SmallDecision) -> np.ndarray:
    """Linear coefficient of the relaxed offload flag per PT.

    kappa_i = (queue-weighted edge-path delay + energy) minus the local
    equivalents minus V times the accuracy gain of edge execution; the
    relaxed LP's optimum sits at z_i = 0 or 1 according to its sign.
    PTs with no access or a dead link get +inf (offloading impossible).
    """
    rate = costs.pt_rates(sc, state, large, small)
    att = large.attached.astype(bool)
    admitted = (mobility.link_usable(sc, state) & large.a.astype(bool)).any(axis=1)
    usable = att & (rate > 0) & admitted
    lam = state.task_bits
    up = small.y * state.personalized_bits
    kappa = np.full(sc.num_pts, np.inf)
    if not np.any(usable):
        return kappa
    r = rate[usable]
    f = small.f[usable]
    upl = up[usable]
    lamu = lam[usable]
    t_edge_path = (upl + lamu) / r \
        + (upl + lamu) * sc.cycles_per_bit_es / (f * sc.cpu_es)
    t_local = lamu * sc.cycles_per_bit_pt / sc.cpu_pt
    e_edge_path = (upl + lamu) * sc.tx_power_pt / r \
        + sc.kappa_es * sc.cpu_es**2 * (upl + lamu) * sc.cycles_per_bit_es
    e_local = sc.kappa_pt * sc.cpu_pt**2 * lamu * sc.cycles_per_bit_pt
    d_bits = large.x[usable] * state.knowledge_bits[usable] + upl
    gain = costs.g_edge(d_bits, state.knowledge_bits[usable]
                        + state.personalized_bits[usable]) - sc.g_local
    kappa[usable] = q.h[usable] * (t_edge_path - t_local) \
        + q.e * (e_edge_path - e_local) \
        - sc.lyapunov_v * gain
    return kappa


def solve_z(q: QueuePair, sc: Scenario, state: SlotState,
            large: LargeDecision, small: SmallDecision,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Offload flags: threshold the linear coefficient at zero.

    Deterministic by default (ties resolve to local execution). With
    round_z='prob' the relaxed value is rounded by a Bernoulli draw, which
    differs from thresholding only at exact ties.
    """
    kappa = offload_coefficient(q, sc, state, large, small)
    z = (kappa < -_TIE_TOL).astype(int)
    if sc.round_z == "prob" and rng is not None:
        tie = np.isfinite(kappa) & (np.abs(kappa) <= _TIE_TOL)
        z[tie] = (rng.random(int(tie.sum())) < 0.5).astype(int)
    return z


def sanitize(sc: Scenario, state: SlotState, large: LargeDecision,
             small: SmallDecision) -> SmallDecision:
    """Project a warm start into the feasible region of the current slot.

    Offloading needs access and a live link; shares must form sub-simplexes
    per ES. Violations come from inherited decisions under mobility, not
    from solver bugs, so they are repaired silently.
    """
    out = small.copy()
    rate = costs.pt_rates(sc, state, large, out)
    admitted = (mobility.link_usable(sc, state) & large.a.astype(bool)).any(axis=1)
    out.z = np.where((large.attached > 0) & (rate > 0) & admitted, out.z, 0)
    out.y = np.where(out.z > 0, np.clip(out.y, 0.0, 1.0), 0.0)
    out.b = np.clip(out.b, sc.share_floor, 1.0)
    out.f = np.clip(out.f, sc.share_floor, 1.0)
    for share in (out.b, out.f):
        load = (large.a * share[:, None]).sum(axis=0)
        over = load > 1.0
        if np.any(over):
            scale = np.ones_like(load)
            np.divide(1.0, load, out=scale, where=over)
            att = large.attached > 0
            share[att] *= scale[large.es_index[att]]
    return out


def solve_small(
    q: QueuePair,
    sc: Scenario,
    state: SlotState,
    large: LargeDecision,
    warm_start: SmallDecision,
    frame_placement=None,
    rng: np.random.Generator | None = None,
) -> tuple[SmallDecision, BcdReport]:
    """Cycle y -> b -> f -> z to a fixed point of the slot objective.

    ``frame_placement`` is the cached placement-cost tuple for mid-frame
    slots; None marks the frame's first slot, where the compute shares
    still steer the installation delay.
    """
    frame_start = frame_placement is None
    small = sanitize(sc, state, large, warm_start)
    obj = p5_objective(sc, state, q, large, small, frame_placement)
    report = BcdReport(objective=obj, trace=[obj])
    for it in range(1, sc.w_max + 1):
        small.y = solve_y(q, sc, state, large, small)
        small.b = solve_b(q, sc, state, large, small)
        small.f = solve_f(q, sc, state, large, small, frame_start=frame_start)
        small.z = solve_z(q, sc, state, large, small, rng=rng)
        small = sanitize(sc, state, large, small)
        new_obj = p5_objective(sc, state, q, large, small, frame_placement)
        report.iterations = it
        report.trace.append(new_obj)
        if new_obj > obj + 1e-6 * max(1.0, abs(obj)):
            raise RuntimeError(
                "slot objective increased during block descent "
                f"({obj!r} -> {new_obj!r}); decision state: y={small.y} "
                f"b={small.b} f={small.f} z={small.z}"
            )
        if abs(new_obj - obj) <= sc.epsilon:
            obj = new_obj
            report.converged = True
            break
        obj = new_obj
    report.objective = obj
    small.check_capacity(large)
    return small, report
