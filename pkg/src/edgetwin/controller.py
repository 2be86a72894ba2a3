"""Two-timescale online control loop.

Each frame opens with an alternation phase: the frame-scale solver picks
access and granularity for the slot-scale decision currently in force, the
slot-scale solver re-optimizes against the new placement, and the pair
iterates until the slot objective stops moving (or the round budget runs
out). The accepted placement is then frozen for the frame, its
download/installation costs cached, and the remaining slots run the
slot-scale solver alone. Queues absorb each slot's realized totals.

A slot whose solve fails for any reason falls back to all-local execution
for that slot; the record is flagged, never dropped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bcd, costs, mobility, pme, queues
from .costs import LargeDecision, SmallDecision
from .queues import QueuePair
from .scenario import _STREAM_SOLVER, Scenario, SlotState, draw_slot, substream

log = logging.getLogger(__name__)

POLICIES = ("taco", "lot", "cro", "all_local")


@dataclass
class SlotRecord:
    tau: int
    frame: int
    large: LargeDecision
    small: SmallDecision
    breakdown: costs.CostBreakdown
    queues: QueuePair  # state after this slot's update
    objective: float  # drift-plus-penalty realized this slot
    alternations: int = 0  # frame-start slots only
    bcd_iterations: int = 0
    fallback: bool = False
    pme_report: Optional[pme.LargeSolveReport] = None
    slots_per_frame: int = 1

    @property
    def energy_share(self) -> np.ndarray:
        """Per-PT slice of this slot's system energy."""
        bd = self.breakdown
        z = self.small.z  # the same gating used in the slot totals
        return (bd.e_dl + bd.e_pl) / self.slots_per_frame \
            + z * (bd.e_ul + bd.e_ud + bd.e_ofld) + bd.e_exec


@dataclass
class RunTrace:
    policy: str
    scenario: Scenario
    records: list = field(default_factory=list)
    frame_alternations: list = field(default_factory=list)

    @property
    def num_slots(self) -> int:
        return len(self.records)


def initial_small(sc: Scenario, state: SlotState) -> SmallDecision:
    """Feasible slot decision before any access exists: uniform shares,
    mid-range update fraction, offload wherever some link could carry it."""
    share = 1.0 / sc.num_pts
    usable = mobility.link_usable(sc, state)
    return SmallDecision(
        y=np.full(sc.num_pts, 0.5),
        b=np.full(sc.num_pts, share),
        f=np.full(sc.num_pts, share),
        z=usable.any(axis=1).astype(int),
    )


def _fallback_small(sc: Scenario, small: SmallDecision) -> SmallDecision:
    out = small.copy()
    out.z = np.zeros(sc.num_pts, dtype=int)
    out.y = np.zeros(sc.num_pts)
    return out


def _local_large(sc: Scenario) -> LargeDecision:
    return LargeDecision(np.zeros((sc.num_pts, sc.num_ess), int),
                         np.zeros(sc.num_pts))


def _record(trace: RunTrace, sc: Scenario, state: SlotState, q: QueuePair,
            large: LargeDecision, small: SmallDecision,
            bd: costs.CostBreakdown, **kw) -> QueuePair:
    q_next = queues.update_queues(q, bd.t_tol, bd.e_tol, sc)
    slack = queues.check_per_step_drift_inequality(q, q_next, bd.t_tol,
                                                   bd.e_tol, sc)
    # the inequality is exact algebra; only rounding noise, which scales
    # with the squared backlogs, may push the slack below zero
    scale = max(1.0, float(np.max(q_next.h)) ** 2, q_next.e**2)
    if slack < -1e-9 * scale:
        raise AssertionError(f"queue-update drift inequality violated "
                             f"(slack {slack}) at slot {state.tau}")
    rec = SlotRecord(
        tau=state.tau, frame=state.frame, large=large.copy(),
        small=small.copy(), breakdown=bd, queues=q_next.copy(),
        objective=queues.drift_plus_penalty(q, bd.t_tol, bd.e_tol,
                                            bd.accuracy, sc),
        slots_per_frame=sc.slots_per_frame,
        **kw,
    )
    trace.records.append(rec)
    return q_next


def _alternate(q: QueuePair, sc: Scenario, state: SlotState,
               warm: SmallDecision, rng) -> tuple[LargeDecision, SmallDecision,
                                                  int, pme.LargeSolveReport]:
    """Frame-start alternation between the two solvers.

    The slot objective at the accepted pair is nonincreasing across rounds
    by construction: a round whose refreshed placement would raise it is
    rejected and the previous pair kept.
    """
    best = None  # (large, small, obj, report)
    small = warm
    prev_obj = None
    rounds = 0
    for _ in range(sc.r_max):
        large, small_warm, report = pme.solve_large(q, sc, state, small)
        small_new, brep = bcd.solve_small(q, sc, state, large, small_warm,
                                          frame_placement=None, rng=rng)
        rounds += 1
        obj = brep.objective
        if best is not None and obj > best[2] + 1e-9 * max(1.0, abs(best[2])):
            break  # the refreshed placement made things worse; keep the old one
        converged = prev_obj is not None and abs(obj - prev_obj) <= sc.epsilon
        best = (large, small_new, obj, report)
        small = small_new
        prev_obj = obj
        if converged:
            break
    large, small, _, report = best
    return large, small, rounds, report


def run_taco(sc: Scenario) -> RunTrace:
    trace = RunTrace(policy="taco", scenario=sc)
    rng = substream(sc.rng_seed, _STREAM_SOLVER)
    q = QueuePair.zeros(sc.num_pts)
    state: Optional[SlotState] = None
    small: Optional[SmallDecision] = None
    frame_large = _local_large(sc)
    cached_placement = None
    k = sc.slots_per_frame
    for tau in range(sc.total_slots):
        state = draw_slot(sc, tau, state)
        if tau % k == 0:
            warm = initial_small(sc, state) if small is None else small.copy()
            if small is not None and sc.frame_z_init == "optimistic":
                # give every reachable PT a chance to re-enter offloading;
                # pure inheritance can freeze a PT at z=0/no-access forever
                usable = mobility.link_usable(sc, state)
                warm.z = usable.any(axis=1).astype(int)
            try:
                frame_large, small, alts, report = _alternate(
                    q, sc, state, warm, rng)
                fallback = False
            except (costs.InfeasibleSlotError, RuntimeError) as exc:
                log.warning("frame %d alternation failed: %s", tau // k, exc)
                frame_large = _local_large(sc)
                small = _fallback_small(sc, warm)
                alts, report, fallback = 0, None, True
            trace.frame_alternations.append(alts)
            cached_placement = costs.placement_costs(sc, state, frame_large,
                                                     small.f)
            bd = costs.evaluate_slot(sc, state, frame_large, small,
                                     cached_placement)
            q = _record(trace, sc, state, q, frame_large, small, bd,
                        alternations=alts, pme_report=report,
                        fallback=fallback)
        else:
            try:
                small, brep = bcd.solve_small(q, sc, state, frame_large,
                                              small, cached_placement, rng)
                bd = costs.evaluate_slot(sc, state, frame_large, small,
                                         cached_placement)
                q = _record(trace, sc, state, q, frame_large, small, bd,
                            bcd_iterations=brep.iterations)
            except (costs.InfeasibleSlotError, RuntimeError) as exc:
                log.warning("slot %d solve failed: %s", tau, exc)
                small = _fallback_small(sc, small)
                bd = costs.evaluate_slot(sc, state, frame_large, small,
                                         cached_placement)
                q = _record(trace, sc, state, q, frame_large, small, bd,
                            fallback=True)
    return trace


def run_slotwise(sc: Scenario, name: str,
                 decide: Callable) -> RunTrace:
    """Shared loop for single-timescale policies.

    ``decide(q, sc, state, prev_small)`` returns (large, small,
    placement_override) where the override replaces the cached frame
    placement in the slot totals (baselines re-place every slot and pay
    the full cost; the all-local policy pays none).
    """
    trace = RunTrace(policy=name, scenario=sc)
    q = QueuePair.zeros(sc.num_pts)
    state: Optional[SlotState] = None
    prev_small: Optional[SmallDecision] = None
    for tau in range(sc.total_slots):
        state = draw_slot(sc, tau, state)
        try:
            large, small, placement = decide(q, sc, state, prev_small)
            bd = costs.evaluate_slot(sc, state, large, small, placement)
            q = _record(trace, sc, state, q, large, small, bd)
            fallback = False
        except (costs.InfeasibleSlotError, RuntimeError) as exc:
            log.warning("%s slot %d failed: %s", name, tau, exc)
            large = _local_large(sc)
            small = _fallback_small(
                sc, prev_small if prev_small is not None
                else initial_small(sc, state))
            bd = costs.evaluate_slot(sc, state, large, small)
            q = _record(trace, sc, state, q, large, small, bd, fallback=True)
        prev_small = small
        if tau % sc.slots_per_frame == 0:
            trace.frame_alternations.append(0)
    return trace


def run_policy(sc: Scenario, policy: str) -> RunTrace:
    from . import baselines

    if policy == "taco":
        return run_taco(sc)
    if policy == "lot":
        return run_slotwise(sc, "lot", baselines.policy_lot)
    if policy == "cro":
        return run_slotwise(sc, "cro", baselines.policy_cro)
    if policy == "all_local":
        return run_slotwise(sc, "all_local", baselines.policy_all_local)
    raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
