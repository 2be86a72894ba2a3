"""Virtual-queue dynamics and the drift-plus-penalty objective.

Two backlogs turn the long-term budget constraints into per-slot signals:
one delay-overflow queue H_i per PT and one global energy-deficit queue E.
Each slot both queues absorb the excess of the realized totals over their
per-slot budget share (frame budget / K) and never go negative.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mobility
from .scenario import Scenario


@dataclass
class QueuePair:
    """Delay-overflow backlogs H (per PT) and the energy-deficit backlog E."""

    h: np.ndarray  # (I,), seconds of accumulated delay overflow
    e: float  # joules of accumulated energy deficit

    def __post_init__(self) -> None:
        self.h = np.asarray(self.h, dtype=float)
        if np.any(self.h < 0) or self.e < 0:
            raise ValueError("queue backlogs must be nonnegative")

    @classmethod
    def zeros(cls, num_pts: int) -> "QueuePair":
        return cls(h=np.zeros(num_pts), e=0.0)

    def copy(self) -> "QueuePair":
        return QueuePair(self.h.copy(), self.e)


@dataclass(frozen=True)
class DriftBoundConstants:
    """Worst-case slot totals and the quadratic drift constant built from them."""

    worst_t_tol: np.ndarray  # (I,) worst-case per-slot response delay
    worst_e_tol: float  # worst-case per-slot system energy
    g_slot: float  # excesses measured against the per-slot budgets (budget/K)
    g_frame: float  # same form against the raw frame budgets, for reference

    def __post_init__(self) -> None:
        if self.g_slot < 0 or self.g_frame < 0:
            raise ValueError("drift constants are sums of squares and cannot be negative")


def slot_budgets(sc: Scenario) -> tuple[float, float]:
    """Per-slot shares of the frame delay and energy budgets."""
    k = sc.slots_per_frame
    return sc.delay_budget / k, sc.energy_budget / k


def update_queues(q: QueuePair, t_tol: np.ndarray, e_tol: float,
                  sc: Scenario) -> QueuePair:
    """One-slot backlog update: absorb the excess, floor at zero."""
    t_budget, e_budget = slot_budgets(sc)
    return QueuePair(
        h=np.maximum(q.h + t_tol - t_budget, 0.0),
        e=max(q.e + e_tol - e_budget, 0.0),
    )


def drift_plus_penalty(q: QueuePair, t_tol: np.ndarray, e_tol: float,
                       acc: np.ndarray, sc: Scenario) -> float:
    """Per-slot surrogate objective: queue-weighted excesses minus V*accuracy."""
    t_budget, e_budget = slot_budgets(sc)
    return float(
        np.dot(q.h, t_tol - t_budget)
        + q.e * (e_tol - e_budget)
        - sc.lyapunov_v * np.sum(acc)
    )


def compute_G(sc: Scenario, fading_percentile: float = 0.01) -> DriftBoundConstants:
    """Bound the one-slot drift by a constant from worst-case totals.

    Worst case: full-granularity placement and update (x=y=1), every task
    offloaded, uniform minimum shares b=f=1/I, the link at the largest
    possible distance with fading at the given lower percentile. The true
    fading infimum is zero (which would make the constant infinite), so a
    small percentile stands in for it; this is an approximation, logged
    as such.
    """
    i, k = sc.num_pts, sc.slots_per_frame
    d_max = sc.knowledge_bits[1]
    s_max = sc.personalized_bits[1]
    lam_max = sc.task_bits[1]
    share = 1.0 / i
    dist = sc.area_side * np.sqrt(2.0)
    gain = float(mobility.path_gain(sc, np.array(dist)))
    h2 = -np.log1p(-fading_percentile)  # percentile of the unit-mean exponential
    c = gain * sc.tx_power_pt * h2 / (sc.noise_psd * sc.bandwidth_per_es)
    rate = float(mobility.rate_from_share(sc, c, share))
    rate = max(rate, 1e-12)

    t_place = d_max / sc.cloud_rate + d_max * sc.cycles_per_bit_es / (share * sc.cpu_es)
    e_place = (d_max * sc.tx_power_cloud / sc.cloud_rate
               + sc.kappa_es * sc.cpu_es**2 * d_max * sc.cycles_per_bit_es)
    t_small = ((s_max + lam_max) / rate
               + (s_max + lam_max) * sc.cycles_per_bit_es / (share * sc.cpu_es))
    e_small = ((s_max + lam_max) * sc.tx_power_pt / rate
               + sc.kappa_es * sc.cpu_es**2 * (s_max + lam_max) * sc.cycles_per_bit_es)

    worst_t = np.full(i, t_place / k + t_small)
    worst_e = i * (e_place / k + e_small)
    t_budget, e_budget = slot_budgets(sc)
    g_slot = 0.5 * float(np.sum((worst_t - t_budget) ** 2)) \
        + 0.5 * (worst_e - e_budget) ** 2
    g_frame = 0.5 * float(np.sum((worst_t - sc.delay_budget) ** 2)) \
        + 0.5 * (worst_e - sc.energy_budget) ** 2
    return DriftBoundConstants(worst_t_tol=worst_t, worst_e_tol=worst_e,
                               g_slot=g_slot, g_frame=g_frame)


def check_per_step_drift_inequality(
    q: QueuePair, q_next: QueuePair, t_tol: np.ndarray, e_tol: float,
    sc: Scenario,
) -> float:
    """Slack of the per-step squared-backlog inequality; negative = bug.

    For each queue with arrival c and budget share d the update
    Q' = max(Q + c - d, 0) satisfies (Q'^2 - Q^2)/2 <= (c-d)^2/2 + Q(c-d).
    Returns the smallest slack across the delay queues and the energy queue.
    """
    t_budget, e_budget = slot_budgets(sc)
    ht = t_tol - t_budget
    lhs_h = 0.5 * (q_next.h**2 - q.h**2)
    rhs_h = 0.5 * ht**2 + q.h * ht
    et = e_tol - e_budget
    lhs_e = 0.5 * (q_next.e**2 - q.e**2)
    rhs_e = 0.5 * et**2 + q.e * et
    return float(min(np.min(rhs_h - lhs_h), rhs_e - lhs_e))
