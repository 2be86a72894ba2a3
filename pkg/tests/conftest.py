"""Shared builders for randomized solver instances.

Instances are always seeded; anything a test compares against is either
computed by an independent oracle in the test itself or asserted as an
exact property of the construction.
"""
from __future__ import annotations

import numpy as np
import pytest

from edgetwin.costs import LargeDecision, SmallDecision
from edgetwin.queues import QueuePair
from edgetwin.scenario import Scenario, draw_slot


def make_block_instance(seed, num_pts=None, num_ess=None, h_lo=0.5):
    """One slot-solve instance: scenario, state, queues, frame decision,
    and a feasible warm small decision with every reachable PT offloading.

    h_lo > 0 keeps every delay backlog strictly positive so all block
    solvers see nonzero weights.
    """
    rng = np.random.default_rng(seed)
    i_n = int(rng.integers(2, 5)) if num_pts is None else num_pts
    m_n = int(rng.integers(1, 3)) if num_ess is None else num_ess
    sc = Scenario(
        num_pts=i_n, num_ess=m_n, frames=2, slots_per_frame=4,
        delay_budget=8.0, energy_budget=400.0,
        lyapunov_v=float(rng.uniform(1e3, 1e5)),
        rng_seed=int(rng.integers(0, 1 << 16)),
    )
    state = draw_slot(sc, int(rng.integers(0, sc.total_slots)))
    a = np.zeros((i_n, m_n), dtype=int)
    a[np.arange(i_n), rng.integers(0, m_n, i_n)] = 1
    large = LargeDecision(a, rng.uniform(0.1, 0.9, i_n))
    q = QueuePair(rng.uniform(h_lo, 5.0, i_n), float(rng.uniform(0.0, 50.0)))

    # per-ES feasible shares for the attached PTs
    b = np.empty(i_n)
    f = np.empty(i_n)
    for m in range(m_n):
        members = np.flatnonzero(a[:, m])
        if members.size:
            raw = rng.uniform(0.2, 1.0, members.size)
            b[members] = raw / raw.sum()
            raw = rng.uniform(0.2, 1.0, members.size)
            f[members] = raw / raw.sum()
    small = SmallDecision(
        y=rng.uniform(0.1, 0.9, i_n), b=b, f=f,
        z=np.ones(i_n, dtype=int),
    )
    return sc, state, q, large, small


# ---------------------------------------------------------------------------
# Grid-search oracles for the block solvers. Independent of the closed forms:
# they scan the full slot objective at fixed other blocks.
# ---------------------------------------------------------------------------

def grid_best_y(sc, state, q, large, small, pt, points=1001):
    """Best objective over a y-grid for one PT, other blocks fixed."""
    from edgetwin.bcd import p5_objective

    best = np.inf
    cand = small.copy()
    for yv in np.linspace(0.0, 1.0, points):
        cand.y[pt] = yv
        best = min(best, p5_objective(sc, state, q, large, cand))
    return best


def grid_best_pair_share(sc, state, q, large, small, attr, points=1001,
                         floor=1e-4):
    """Best objective over a 1-D grid of two shares summing to 1 on one ES.

    Valid for two-claimant instances: the objective is strictly decreasing
    in each share, so the optimum lies on the simplex boundary. Evaluates
    frame-start slots (placement cost live), matching solve_f's
    frame_start=True weighting.
    """
    from edgetwin.bcd import p5_objective

    best = np.inf
    cand = small.copy()
    for s1 in np.linspace(floor, 1.0 - floor, points):
        getattr(cand, attr)[:] = (s1, 1.0 - s1)
        best = min(best, p5_objective(sc, state, q, large, cand))
    return best


def grid_best_z(sc, state, q, large, small):
    """Best objective over all offload-flag combinations, other blocks fixed."""
    import itertools

    from edgetwin import costs
    from edgetwin.bcd import p5_objective

    best = np.inf
    cand = small.copy()
    for combo in itertools.product((0, 1), repeat=sc.num_pts):
        cand.z = np.array(combo, dtype=int)
        try:
            best = min(best, p5_objective(sc, state, q, large, cand))
        except costs.InfeasibleSlotError:
            continue
    return best


@pytest.fixture
def tiny_scenario():
    """Fast end-to-end scenario: 2 PTs, 2 ESs, 2 frames of 3 slots."""
    return Scenario(
        num_pts=2, num_ess=2, frames=2, slots_per_frame=3,
        delay_budget=15.0, energy_budget=600.0,
        partitions=1, contract_rounds=0, epsilon=1.0,
        rng_seed=7,
    )
