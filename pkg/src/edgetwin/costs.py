"""Delay, energy, and accuracy bookkeeping for one slot.

Conventions used throughout:
  * placement costs (knowledge download + installation on the ES) accrue
    once per frame and are spread evenly over the frame's K slots;
  * customized-update and offloading costs are charged only on slots where
    the task is actually offloaded (the z factor);
  * ES energy terms are f-free: kappa*f*F^3 * (bits*C/(f*F)) collapses to
    kappa*F^2*bits*C, which the tests assert numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mobility
from .scenario import Scenario, SlotState


class InfeasibleSlotError(RuntimeError):
    """A decision demands transmission over a zero-rate link."""


@dataclass
class LargeDecision:
    """Frame-scale decision: ES access matrix a (I x M) and granularity x."""

    a: np.ndarray  # (I, M) binary
    x: np.ndarray  # (I,) in [0, 1]

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=int)
        self.x = np.asarray(self.x, dtype=float)
        if np.any(self.a.sum(axis=1) > 1):
            raise ValueError("each PT may access at most one ES")
        if np.any((self.x < 0) | (self.x > 1)):
            raise ValueError("granularity x must lie in [0, 1]")

    def copy(self) -> "LargeDecision":
        return LargeDecision(self.a.copy(), self.x.copy())

    @property
    def attached(self) -> np.ndarray:
        """Row sums of a: 1 where the PT has an ES, else 0."""
        return self.a.sum(axis=1)

    @property
    def es_index(self) -> np.ndarray:
        """Accessed ES per PT (-1 when unattached)."""
        idx = np.argmax(self.a, axis=1)
        idx[self.attached == 0] = -1
        return idx


@dataclass
class SmallDecision:
    """Slot-scale decision: update fraction y, shares b/f, offload flag z."""

    y: np.ndarray  # (I,) in [0, 1]
    b: np.ndarray  # (I,) in (0, 1]
    f: np.ndarray  # (I,) in (0, 1]
    z: np.ndarray  # (I,) binary

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.z = np.asarray(self.z, dtype=int)

    def copy(self) -> "SmallDecision":
        return SmallDecision(self.y.copy(), self.b.copy(), self.f.copy(), self.z.copy())

    def check_capacity(self, large: LargeDecision, tol: float = 1e-9) -> None:
        """Verify the per-ES share budgets (sum of a*b and a*f at most 1)."""
        for name, share in (("bandwidth", self.b), ("compute", self.f)):
            load = (large.a * share[:, None]).sum(axis=0)
            if np.any(load > 1 + tol):
                raise ValueError(f"{name} shares exceed capacity on ES "
                                 f"{int(np.argmax(load))}: {load.max():.6f}")


@dataclass
class CostBreakdown:
    """Every per-PT cost component for one slot, plus the slot totals."""

    t_dl: np.ndarray
    t_pl: np.ndarray
    e_dl: np.ndarray
    e_pl: np.ndarray
    t_ul: np.ndarray
    t_ud: np.ndarray
    e_ul: np.ndarray
    e_ud: np.ndarray
    t_ofld: np.ndarray
    t_exec: np.ndarray
    e_ofld: np.ndarray
    e_exec: np.ndarray
    accuracy: np.ndarray
    t_tol: np.ndarray = field(default=None)  # (I,) per-slot response delay
    e_tol: float = 0.0  # scalar per-slot system energy


def pt_rates(sc: Scenario, state: SlotState, large: LargeDecision,
             small: SmallDecision) -> np.ndarray:
    """Uplink rate of each PT on its accessed ES (0 when unattached)."""
    c = mobility.snr_coefficients(sc, state)
    c_own = (c * large.a).sum(axis=1)
    return mobility.rate_from_share(sc, c_own, small.b) * large.attached


def _safe_div(num: np.ndarray, rate: np.ndarray, active: np.ndarray,
              what: str) -> np.ndarray:
    """num/rate where the numerator is live; infeasible if its rate is 0."""
    out = np.zeros_like(num)
    live = (num > 0) & (active > 0)
    bad = live & (rate <= 0)
    if np.any(bad):
        raise InfeasibleSlotError(
            f"{what} requested over a zero-rate link for PT(s) "
            f"{np.flatnonzero(bad).tolist()}"
        )
    out[live] = num[live] / rate[live]
    return out


def placement_costs(sc: Scenario, state: SlotState, large: LargeDecision,
                    f_frame: np.ndarray) -> tuple[np.ndarray, ...]:
    """Knowledge download + ES installation costs for one frame.

    Uses the compute share in force at the frame's first slot. The ES
    installation energy is independent of that share (see module docstring).
    """
    bits = large.attached * large.x * state.knowledge_bits
    t_dl = bits / sc.cloud_rate
    e_dl = t_dl * sc.tx_power_cloud
    t_pl = bits * sc.cycles_per_bit_es / (np.maximum(f_frame, 1e-12) * sc.cpu_es)
    t_pl = np.where(bits > 0, t_pl, 0.0)
    e_pl = sc.kappa_es * sc.cpu_es**2 * bits * sc.cycles_per_bit_es
    return t_dl, t_pl, e_dl, e_pl


def update_costs(sc: Scenario, state: SlotState, large: LargeDecision,
                 small: SmallDecision) -> tuple[np.ndarray, ...]:
    """Personalized-data upload and VT-update costs for the current slot."""
    rate = pt_rates(sc, state, large, small)
    up_bits = small.y * state.personalized_bits
    t_ul = _safe_div(up_bits, rate, small.z, "personalized-data upload")
    e_ul = t_ul * sc.tx_power_pt
    attached_bits = large.attached * up_bits
    t_ud = attached_bits * sc.cycles_per_bit_es / (np.maximum(small.f, 1e-12) * sc.cpu_es)
    t_ud = np.where(attached_bits > 0, t_ud, 0.0)
    e_ud = sc.kappa_es * sc.cpu_es**2 * attached_bits * sc.cycles_per_bit_es
    return t_ul, t_ud, e_ul, e_ud


def task_costs(sc: Scenario, state: SlotState, large: LargeDecision,
               small: SmallDecision) -> tuple[np.ndarray, ...]:
    """Task offloading and execution costs (edge branch vs. local branch)."""
    rate = pt_rates(sc, state, large, small)
    lam = state.task_bits
    t_ofld = _safe_div(small.z * lam.astype(float), rate, small.z, "task offloading")
    e_ofld = t_ofld * sc.tx_power_pt
    edge_bits = large.attached * small.z * lam
    t_edge = edge_bits * sc.cycles_per_bit_es / (np.maximum(small.f, 1e-12) * sc.cpu_es)
    t_edge = np.where(edge_bits > 0, t_edge, 0.0)
    t_local = (1 - small.z) * lam * sc.cycles_per_bit_pt / sc.cpu_pt
    e_edge = sc.kappa_es * sc.cpu_es**2 * edge_bits * sc.cycles_per_bit_es
    e_local = (1 - small.z) * sc.kappa_pt * sc.cpu_pt**2 * lam * sc.cycles_per_bit_pt
    return t_ofld, t_edge + t_local, e_ofld, e_edge + e_local


def g_edge(d_bits, total_bits) -> np.ndarray:
    """Edge-execution accuracy as a function of the VT's data volume."""
    frac = np.clip(np.asarray(d_bits, dtype=float) / total_bits, 0.0, 1.0)
    return 1.0 - (1.0 - frac) ** 2


def accuracy(sc: Scenario, state: SlotState, large: LargeDecision,
             small: SmallDecision) -> np.ndarray:
    """Per-PT task accuracy: edge accuracy when offloaded, floor otherwise."""
    d = large.x * state.knowledge_bits + small.y * state.personalized_bits
    total = state.knowledge_bits + state.personalized_bits
    return small.z * g_edge(d, total) + (1 - small.z) * sc.g_local


def evaluate_slot(
    sc: Scenario,
    state: SlotState,
    large: LargeDecision,
    small: SmallDecision,
    frame_placement: tuple[np.ndarray, ...] | None = None,
) -> CostBreakdown:
    """Full cost breakdown for one slot.

    ``frame_placement`` is the cached (t_dl, t_pl, e_dl, e_pl) tuple computed
    at the frame's first slot; pass None to compute it from the current
    compute shares (frame-start slots and single-timescale baselines).
    """
    if frame_placement is None:
        frame_placement = placement_costs(sc, state, large, small.f)
    t_dl, t_pl, e_dl, e_pl = frame_placement
    t_ul, t_ud, e_ul, e_ud = update_costs(sc, state, large, small)
    t_ofld, t_exec, e_ofld, e_exec = task_costs(sc, state, large, small)
    acc = accuracy(sc, state, large, small)
    k = sc.slots_per_frame
    z = small.z
    t_tol = (t_dl + t_pl) / k + z * (t_ul + t_ud + t_ofld) + t_exec
    e_tol = float(np.sum((e_dl + e_pl) / k + z * (e_ul + e_ud + e_ofld) + e_exec))
    return CostBreakdown(
        t_dl=t_dl, t_pl=t_pl, e_dl=e_dl, e_pl=e_pl,
        t_ul=t_ul, t_ud=t_ud, e_ul=e_ul, e_ud=e_ud,
        t_ofld=t_ofld, t_exec=t_exec, e_ofld=e_ofld, e_exec=e_exec,
        accuracy=acc, t_tol=t_tol, e_tol=e_tol,
    )


def per_slot_totals(
    sc: Scenario,
    state: SlotState,
    large: LargeDecision,
    small: SmallDecision,
    frame_placement: tuple[np.ndarray, ...] | None = None,
) -> tuple[np.ndarray, float]:
    """(per-PT response delay, system energy) for the slot."""
    bd = evaluate_slot(sc, state, large, small, frame_placement)
    return bd.t_tol, bd.e_tol
