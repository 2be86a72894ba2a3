"""Comparison policies, brute-force oracles, and run metrics.

The two single-timescale baselines re-decide everything every slot and pay
the full placement cost each time:

  * lot — places the generic model but never uploads personalized data
    (update fraction pinned to zero);
  * cro — like lot but also optimizes the update fraction.

Both pick the nearest reachable ES and reuse this package's closed-form
block solvers for shares and offloading; granularity is chosen on a small
grid since the envelope machinery is specific to the two-timescale method.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import bcd, costs, mobility, pme, queues
from .costs import LargeDecision, SmallDecision
from .queues import QueuePair
from .scenario import Scenario, SlotState, draw_slot


class OracleBudgetError(RuntimeError):
    """The requested enumeration exceeds the evaluation budget."""


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def _nearest_access(sc: Scenario, state: SlotState) -> LargeDecision:
    dist = mobility.distances(sc, state)
    c = mobility.snr_coefficients(sc, state)
    a = np.zeros((sc.num_pts, sc.num_ess), dtype=int)
    for i in range(sc.num_pts):
        order = np.argsort(dist[i], kind="stable")
        for m in order:
            if c[i, m] > 0:
                a[i, m] = 1
                break
    return LargeDecision(a, np.zeros(sc.num_pts))


def _grid_x(q: QueuePair, sc: Scenario, state: SlotState,
            large: LargeDecision, small: SmallDecision) -> np.ndarray:
    """Granularity by 1-D grid search on the slot objective, full placement
    charge (single-timescale policies re-place every slot)."""
    xs = np.linspace(0.0, 1.0, sc.x_grid_points)
    d_bits = state.knowledge_bits
    att = large.attached
    per_bit = (
        q.h * (1.0 / sc.cloud_rate
               + sc.cycles_per_bit_es / (np.maximum(small.f, sc.share_floor)
                                         * sc.cpu_es))
        + q.e * (sc.tx_power_cloud / sc.cloud_rate
                 + sc.kappa_es * sc.cpu_es**2 * sc.cycles_per_bit_es)
    )
    lin = att * d_bits * per_bit  # cost of x = 1, linear in between
    q_bits = d_bits + state.personalized_bits
    d_grid = xs[None, :] * d_bits[:, None] \
        + (small.y * state.personalized_bits)[:, None]
    acc = small.z[:, None] * costs.g_edge(d_grid, q_bits[:, None])
    obj = lin[:, None] * xs[None, :] - sc.lyapunov_v * acc
    x = xs[np.argmin(obj, axis=1)]
    return np.where(att > 0, x, 0.0)


def _full_charge_placement(sc: Scenario, state: SlotState,
                           large: LargeDecision, small: SmallDecision):
    """Placement tuple pre-scaled so the 1/K spread yields the full cost."""
    k = sc.slots_per_frame
    return tuple(k * part for part in
                 costs.placement_costs(sc, state, large, small.f))


def _single_timescale(q: QueuePair, sc: Scenario, state: SlotState,
                      prev: SmallDecision | None, with_update: bool):
    large = _nearest_access(sc, state)
    n_att = np.maximum((large.a.sum(axis=0) * large.a).sum(axis=1), 1)
    small = SmallDecision(
        y=np.zeros(sc.num_pts),
        b=1.0 / n_att,
        f=1.0 / n_att,
        z=large.attached.copy(),
    )
    small = bcd.sanitize(sc, state, large, small)
    large.x = _grid_x(q, sc, state, large, small)
    if with_update:
        small.y = bcd.solve_y(q, sc, state, large, small)
    small.b = bcd.solve_b(q, sc, state, large, small)
    small.f = bcd.solve_f(q, sc, state, large, small,
                          placement_bits=large.x * state.knowledge_bits)
    small.z = bcd.solve_z(q, sc, state, large, small)
    small = bcd.sanitize(sc, state, large, small)
    large.x = np.where(small.z > 0, large.x, 0.0)  # no point placing unused VTs
    return large, small, _full_charge_placement(sc, state, large, small)


def policy_lot(q: QueuePair, sc: Scenario, state: SlotState,
               prev: SmallDecision | None):
    """Nearest-ES placement each slot, no customized update."""
    return _single_timescale(q, sc, state, prev, with_update=False)


def policy_cro(q: QueuePair, sc: Scenario, state: SlotState,
               prev: SmallDecision | None):
    """Nearest-ES placement each slot, update fraction optimized too."""
    return _single_timescale(q, sc, state, prev, with_update=True)


def policy_all_local(q: QueuePair, sc: Scenario, state: SlotState,
                     prev: SmallDecision | None):
    """Every task runs on its PT; nothing is placed or uploaded."""
    large = LargeDecision(np.zeros((sc.num_pts, sc.num_ess), int),
                          np.zeros(sc.num_pts))
    small = SmallDecision(
        y=np.zeros(sc.num_pts),
        b=np.full(sc.num_pts, sc.share_floor),
        f=np.full(sc.num_pts, sc.share_floor),
        z=np.zeros(sc.num_pts, dtype=int),
    )
    return large, small, None


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def oracle_p4(q: QueuePair, sc: Scenario, state: SlotState,
              small: SmallDecision, x_resolution: float = 1e-2):
    """Exhaustive frame-scale optimum: enumerate the access choice and a
    granularity grid per PT.

    Valid because the frame-scale objective separates across PTs when the
    capacity rows use provisional uniform shares (the default).
    """
    co = pme.build_p4(q, sc, state, small, capacity_mode="provisional")
    xs = np.arange(0.0, 1.0 + x_resolution / 2, x_resolution)
    a = np.zeros((sc.num_pts, sc.num_ess), dtype=int)
    x = np.zeros(sc.num_pts)
    total = co.const
    for i in range(sc.num_pts):
        # staying unattached costs nothing unless offloading demands a link
        best = np.inf if co.z_eff[i] else 0.0
        best_m, best_x = -1, 0.0
        for m in range(sc.num_ess):
            if not co.usable[i, m]:
                continue
            e = np.clip(co.psi_e0[i] - co.psi_slope[i] * xs, 0.0, 1.0)
            psi = -co.psi_scale[i] * (1.0 - e**2)
            vals = co.k_a[i, m] + co.k_u[i, m] * xs + psi
            j = int(np.argmin(vals))
            if vals[j] < best:
                best, best_m, best_x = float(vals[j]), m, float(xs[j])
        if best_m >= 0:
            a[i, best_m] = 1
            x[i] = best_x
        total += best if np.isfinite(best) else 0.0
    return LargeDecision(a, x), total


def _share_combos(n: int, grid_points: int):
    """Feasible share vectors for n PTs on one ES (sum at most 1)."""
    if n == 1:
        return [np.array([1.0])]
    levels = np.linspace(1.0 / grid_points, 1.0, grid_points)
    combos = [np.array(c) for c in itertools.product(levels, repeat=n)
              if sum(c) <= 1.0 + 1e-9]
    return combos


def oracle_enumerate(sc: Scenario, grid_points: int = 5,
                     max_evals: int = 2_000_000):
    """Exhaustive search over discretized decision sequences on a tiny run.

    Enumerates frame decisions (per-PT ES choice and gridded granularity)
    and slot decisions (gridded update fraction, offload flag, gridded
    shares where an ES is contested), simulating queues forward along each
    branch; returns the smallest summed drift-plus-penalty and its mean.
    Sole claimants of an ES get the whole share (weakly dominant since
    every cost falls with the share). Raises OracleBudgetError when the
    tree exceeds ``max_evals`` cost evaluations.
    """
    states = []
    st = None
    for tau in range(sc.total_slots):
        st = draw_slot(sc, tau, st)
        states.append(st)
    xs = np.linspace(0.0, 1.0, grid_points)
    ys = np.linspace(0.0, 1.0, grid_points)

    def frame_options(state: SlotState):
        per_pt = []
        c = mobility.snr_coefficients(sc, state)
        for i in range(sc.num_pts):
            opts = [(-1, 0.0)]
            for m in range(sc.num_ess):
                if c[i, m] > 0:
                    opts.extend((m, float(xv)) for xv in xs)
            per_pt.append(opts)
        out = []
        for combo in itertools.product(*per_pt):
            a = np.zeros((sc.num_pts, sc.num_ess), dtype=int)
            x = np.zeros(sc.num_pts)
            for i, (m, xv) in enumerate(combo):
                if m >= 0:
                    a[i, m] = 1
                    x[i] = xv
            out.append(LargeDecision(a, x))
        return out

    def slot_options(large: LargeDecision):
        att = large.attached
        per_pt = []
        for i in range(sc.num_pts):
            if att[i]:
                opts = [(0.0, 0)] + [(float(yv), 1) for yv in ys]
            else:
                opts = [(0.0, 0)]
            per_pt.append(opts)
        es = large.es_index
        share_sets = []
        for m in range(sc.num_ess):
            members = np.flatnonzero(es == m)
            if members.size:
                share_sets.append((members, _share_combos(members.size,
                                                          grid_points)))
        out = []
        for yz in itertools.product(*per_pt):
            y = np.array([v[0] for v in yz])
            z = np.array([v[1] for v in yz], dtype=int)
            for shares in itertools.product(*(s for _, s in share_sets)):
                b = np.full(sc.num_pts, sc.share_floor)
                for (members, _), vec in zip(share_sets, shares):
                    b[members] = vec
                for fshares in itertools.product(*(s for _, s in share_sets)):
                    f = np.full(sc.num_pts, sc.share_floor)
                    for (members, _), vec in zip(share_sets, fshares):
                        f[members] = vec
                    out.append(SmallDecision(y.copy(), b.copy(), f, z.copy()))
        return out

    evals = 0
    best = {"obj": np.inf, "seq": None}
    k = sc.slots_per_frame

    def recurse(tau: int, q: QueuePair, large, placement, acc_obj, seq):
        nonlocal evals
        if tau == sc.total_slots:
            if acc_obj < best["obj"]:
                best["obj"] = acc_obj
                best["seq"] = list(seq)
            return
        state = states[tau]
        if tau % k == 0:
            for lg in frame_options(state):
                for sm in slot_options(lg):
                    evals += 1
                    if evals > max_evals:
                        raise OracleBudgetError(
                            f"enumeration exceeded {max_evals} evaluations")
                    try:
                        pl = costs.placement_costs(sc, state, lg, sm.f)
                        bd = costs.evaluate_slot(sc, state, lg, sm, pl)
                    except costs.InfeasibleSlotError:
                        continue
                    obj = queues.drift_plus_penalty(q, bd.t_tol, bd.e_tol,
                                                    bd.accuracy, sc)
                    q2 = queues.update_queues(q, bd.t_tol, bd.e_tol, sc)
                    seq.append((lg, sm))
                    recurse(tau + 1, q2, lg, pl, acc_obj + obj, seq)
                    seq.pop()
        else:
            for sm in slot_options(large):
                evals += 1
                if evals > max_evals:
                    raise OracleBudgetError(
                        f"enumeration exceeded {max_evals} evaluations")
                try:
                    bd = costs.evaluate_slot(sc, state, large, sm, placement)
                except costs.InfeasibleSlotError:
                    continue
                obj = queues.drift_plus_penalty(q, bd.t_tol, bd.e_tol,
                                                bd.accuracy, sc)
                q2 = queues.update_queues(q, bd.t_tol, bd.e_tol, sc)
                seq.append((large, sm))
                recurse(tau + 1, q2, large, placement, acc_obj + obj, seq)
                seq.pop()

    recurse(0, QueuePair.zeros(sc.num_pts), None, None, 0.0, [])
    if best["seq"] is None:
        raise RuntimeError("no feasible decision sequence found")
    return best["obj"] / sc.total_slots, best["seq"]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsSummary:
    policy: str
    mean_accuracy: float
    mean_response_delay: float  # s, per PT per slot
    mean_energy: float  # J, system, per slot
    placement_delay: float  # s, per PT per slot
    updating_delay: float  # s, per PT per slot
    mean_objective: float  # time-averaged drift-plus-penalty
    h_trajectory: np.ndarray  # per-slot mean delay backlog
    e_trajectory: np.ndarray  # per-slot energy backlog
    total_alternations: int = 0
    mean_bcd_iterations: float = 0.0
    fallback_slots: int = 0
    counters: dict = field(default_factory=dict)


def summarize(trace) -> MetricsSummary:
    """Reduce a run trace to the reported figure metrics.

    Placement and updating delays are normalized per PT per slot; the
    placement components are divided by K so that a frame's single
    placement contributes its full cost once per frame (single-timescale
    policies pre-scale their placement tuples and so report the full cost
    every slot).
    """
    recs = trace.records
    n = len(recs)
    i_n = trace.scenario.num_pts
    k = trace.scenario.slots_per_frame
    acc = np.mean([r.breakdown.accuracy.mean() for r in recs])
    t_resp = np.mean([r.breakdown.t_tol.mean() for r in recs])
    energy = np.mean([r.breakdown.e_tol for r in recs])
    place = np.mean([((r.breakdown.t_dl + r.breakdown.t_pl) / k).mean()
                     for r in recs])
    upd = np.mean([(r.small.z * (r.breakdown.t_ul + r.breakdown.t_ud)).mean()
                   for r in recs])
    obj = np.mean([r.objective for r in recs])
    return MetricsSummary(
        policy=trace.policy,
        mean_accuracy=float(acc),
        mean_response_delay=float(t_resp),
        mean_energy=float(energy),
        placement_delay=float(place),
        updating_delay=float(upd),
        mean_objective=float(obj),
        h_trajectory=np.array([r.queues.h.mean() for r in recs]),
        e_trajectory=np.array([r.queues.e for r in recs]),
        total_alternations=int(sum(trace.frame_alternations)),
        mean_bcd_iterations=float(np.mean([r.bcd_iterations for r in recs])),
        fallback_slots=int(sum(r.fallback for r in recs)),
        counters={"slots": n, "pts": i_n},
    )
