"""Property suites: runnable invariant checks shared by the CLI and tests.

Each suite returns (violations, checks, detail) so callers can decide how
to report. The suites cover the queue-update inequality, the analytic
block derivatives against finite differences, the envelope machinery, and
the enumeration-oracle optimality envelope on a tiny instance.
"""
from __future__ import annotations

import numpy as np

from . import baselines, bcd, controller, costs, mobility, pme, queues
from .costs import LargeDecision, SmallDecision
from .queues import QueuePair
from .scenario import Scenario, draw_slot


# ---------------------------------------------------------------------------
# Relaxed-offload objective (continuous z), used for gradient checks
# ---------------------------------------------------------------------------

def relaxed_objective(sc: Scenario, state, q: QueuePair,
                      large: LargeDecision, y, b, f, z,
                      frame_start: bool = True) -> float:
    """Slot objective with the offload flag allowed to be fractional.

    Coincides with the production evaluator at binary z; linear in z, which
    is what makes endpoint thresholding exact.
    """
    y = np.asarray(y, float)
    b = np.asarray(b, float)
    f = np.asarray(f, float)
    z = np.asarray(z, float)
    att = large.attached
    c = (mobility.snr_coefficients(sc, state) * large.a).sum(axis=1)
    rate = mobility.rate_from_share(sc, c, b) * att
    inv_r = np.divide(1.0, rate, out=np.zeros_like(rate), where=rate > 0)
    s_up = y * state.personalized_bits
    lam = state.task_bits
    d_pl = large.x * state.knowledge_bits * att
    k = sc.slots_per_frame
    ces, fes = sc.cycles_per_bit_es, sc.cpu_es

    t_place = d_pl / sc.cloud_rate + d_pl * ces / (f * fes)
    e_place = d_pl * sc.tx_power_cloud / sc.cloud_rate \
        + sc.kappa_es * fes**2 * d_pl * ces
    if not frame_start:
        # mid-frame slots carry a cached placement cost; the gradient
        # suites always evaluate frame-start slots, where f still matters
        pass
    t_link = (s_up + lam) * inv_r
    t_es = att * (s_up + lam) * ces / (f * fes)
    t_loc = lam * sc.cycles_per_bit_pt / sc.cpu_pt
    e_link = t_link * sc.tx_power_pt
    e_es = sc.kappa_es * fes**2 * att * (s_up + lam) * ces
    e_loc = sc.kappa_pt * sc.cpu_pt**2 * lam * sc.cycles_per_bit_pt

    t_tol = t_place / k + z * (t_link + t_es) + (1.0 - z) * t_loc
    e_tol = float(np.sum(e_place / k + z * (e_link + e_es) + (1.0 - z) * e_loc))
    q_bits = state.knowledge_bits + state.personalized_bits
    acc = z * costs.g_edge(large.x * state.knowledge_bits + s_up, q_bits) \
        + (1.0 - z) * sc.g_local
    return queues.drift_plus_penalty(q, t_tol, e_tol, acc, sc)


def analytic_gradients(sc: Scenario, state, q: QueuePair,
                       large: LargeDecision, y, b, f, z):
    """Closed-form partial derivatives of the relaxed slot objective.

    Returns (d/dy, d/db, d/df, d/dz) per PT: the same expressions the
    block solvers set to zero (or threshold, for z).
    """
    y = np.asarray(y, float)
    b = np.asarray(b, float)
    f = np.asarray(f, float)
    z = np.asarray(z, float)
    att = large.attached
    c = (mobility.snr_coefficients(sc, state) * large.a).sum(axis=1)
    rate = mobility.rate_from_share(sc, c, b) * att
    inv_r = np.divide(1.0, rate, out=np.zeros_like(rate), where=rate > 0)
    s_bits = state.personalized_bits
    lam = state.task_bits
    q_bits = state.knowledge_bits + s_bits
    ces, fes = sc.cycles_per_bit_es, sc.cpu_es
    e_def = 1.0 - (large.x * state.knowledge_bits + y * s_bits) / q_bits

    d_y = z * s_bits * (
        q.h * (inv_r + att * ces / (f * fes))
        + q.e * (sc.tx_power_pt * inv_r + sc.kappa_es * fes**2 * ces * att)
    ) - sc.lyapunov_v * z * 2.0 * e_def * s_bits / q_bits

    r1, _ = mobility.rate_derivatives(sc, np.maximum(c, 1e-300), b)
    w = z * (y * s_bits + lam) * (q.h + q.e * sc.tx_power_pt)
    d_b = np.where(rate > 0, -w * r1 * inv_r**2 * att, 0.0)

    v = q.h * att * ces / fes * (
        z * (y * s_bits + lam)
        + large.x * state.knowledge_bits / sc.slots_per_frame
    )
    d_f = -v / f**2

    t_link = (y * s_bits + lam) * inv_r
    t_es = att * (y * s_bits + lam) * ces / (f * fes)
    t_loc = lam * sc.cycles_per_bit_pt / sc.cpu_pt
    e_link = t_link * sc.tx_power_pt
    e_es = sc.kappa_es * fes**2 * att * (y * s_bits + lam) * ces
    e_loc = sc.kappa_pt * sc.cpu_pt**2 * lam * sc.cycles_per_bit_pt
    gain = costs.g_edge(large.x * state.knowledge_bits + y * s_bits, q_bits) \
        - sc.g_local
    d_z = q.h * (t_link + t_es - t_loc) + q.e * (e_link + e_es - e_loc) \
        - sc.lyapunov_v * gain
    return d_y, d_b, d_f, d_z


def _random_interior_instance(seed: int):
    rng = np.random.default_rng(seed)
    i_n, m_n = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    sc = Scenario(num_pts=i_n, num_ess=m_n, frames=2, slots_per_frame=4,
                  delay_budget=5.0, energy_budget=200.0,
                  lyapunov_v=float(rng.uniform(1e3, 1e5)),
                  rng_seed=int(rng.integers(0, 1 << 16)))
    state = draw_slot(sc, int(rng.integers(0, 4)))
    a = np.zeros((i_n, m_n), dtype=int)
    a[np.arange(i_n), rng.integers(0, m_n, i_n)] = 1
    large = LargeDecision(a, rng.uniform(0.1, 0.9, i_n))
    q = QueuePair(rng.uniform(0.0, 5.0, i_n), float(rng.uniform(0.0, 50.0)))
    y = rng.uniform(0.1, 0.9, i_n)
    b = rng.uniform(0.1, 0.9, i_n)
    f = rng.uniform(0.1, 0.9, i_n)
    z = rng.uniform(0.1, 0.9, i_n)
    return sc, state, q, large, y, b, f, z


def suite_gradients(points: int = 100, h: float = 1e-5,
                    tol: float = 1e-4):
    """Central finite differences vs. the analytic block derivatives."""
    worst = 0.0
    violations = 0
    for seed in range(points):
        sc, state, q, large, y, b, f, z = _random_interior_instance(seed)
        grads = analytic_gradients(sc, state, q, large, y, b, f, z)
        vecs = [y, b, f, z]
        i = seed % sc.num_pts
        for block, (gv, vec) in enumerate(zip(grads, vecs)):
            up = vec.copy()
            dn = vec.copy()
            step = h * max(1.0, abs(vec[i]))
            up[i] += step
            dn[i] -= step
            args_u = [y, b, f, z]
            args_d = [y, b, f, z]
            args_u[block] = up
            args_d[block] = dn
            fd = (relaxed_objective(sc, state, q, large, *args_u)
                  - relaxed_objective(sc, state, q, large, *args_d)) / (2 * step)
            denom = max(abs(gv[i]), abs(fd), 1e-9)
            rel = abs(gv[i] - fd) / denom
            worst = max(worst, rel)
            if rel > tol:
                violations += 1
    return violations, points * 4, {"max_rel_err": worst}


def suite_drift(steps: int = 10_000, seed: int = 0, tol: float = -1e-9):
    """Fuzz the queue-update inequality with random moderate magnitudes."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst = np.inf
    sc = Scenario(num_pts=4, num_ess=2, frames=1, slots_per_frame=2,
                  delay_budget=1.0, energy_budget=1.0)
    for _ in range(steps):
        q = QueuePair(rng.uniform(0.0, 100.0, 4), float(rng.uniform(0.0, 100.0)))
        t_tol = rng.uniform(0.0, 10.0, 4)
        e_tol = float(rng.uniform(0.0, 10.0))
        q2 = queues.update_queues(q, t_tol, e_tol, sc)
        slack = queues.check_per_step_drift_inequality(q, q2, t_tol, e_tol, sc)
        worst = min(worst, slack)
        if slack < tol:
            violations += 1
    return violations, steps, {"min_slack": worst}


def suite_envelopes(points: int = 10_000, seed: int = 0):
    """Envelope validity fuzz plus the relaxation ordering on small solves."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(points):
        a_lo = rng.uniform(0.0, 0.5)
        a_hi = rng.uniform(a_lo, 1.0)
        x_lo = rng.uniform(0.0, 0.5)
        x_hi = rng.uniform(x_lo, 1.0)
        a = float(rng.integers(0, 2))
        if not a_lo <= a <= a_hi:
            continue
        x = rng.uniform(x_lo, x_hi)
        u = a * x
        for ca, cx, cu, rhs in pme.mccormick_envelope(a_lo, a_hi, x_lo, x_hi):
            if ca * a + cx * x + cu * u > rhs + 1e-9:
                violations += 1
    checks = points
    sandwich_fail = 0
    for seed2 in range(10):
        rng2 = np.random.default_rng(1000 + seed2)
        sc = Scenario(num_pts=2, num_ess=2, frames=1, slots_per_frame=2,
                      delay_budget=5.0, energy_budget=100.0,
                      lyapunov_v=1e6, partitions=4, contract_rounds=1,
                      rng_seed=seed2)
        state = draw_slot(sc, 0)
        q = QueuePair(rng2.uniform(0.0, 5.0, 2), float(rng2.uniform(0.0, 20.0)))
        small = SmallDecision(np.full(2, 0.5), np.full(2, 0.5),
                              np.full(2, 0.5), np.ones(2, int))
        _, _, rep = pme.solve_large(q, sc, state, small)
        checks += 1
        scale = max(1.0, abs(rep.mblp_obj))
        if not (rep.relaxed_obj <= rep.mblp_obj + 1e-6 * scale
                <= rep.rounded_obj + 2e-6 * scale):
            sandwich_fail += 1
    return violations + sandwich_fail, checks, {}


def suite_oracle(v_values=(1e5, 1e6), seed: int = 0):
    """Optimality envelope: on a tiny instance the enumeration oracle's mean
    objective can undercut the online controller's by at most G/V plus the
    terminal backlog term."""
    violations = 0
    details = {}
    for v in v_values:
        sc = Scenario(num_pts=1, num_ess=1, frames=1, slots_per_frame=2,
                      delay_budget=8.0, energy_budget=4000.0,
                      lyapunov_v=float(v), partitions=2, contract_rounds=0,
                      rng_seed=seed)
        oracle_mean, _ = baselines.oracle_enumerate(sc, grid_points=5)
        trace = controller.run_taco(sc)
        taco_mean = float(np.mean([r.objective for r in trace.records]))
        g = queues.compute_G(sc).g_slot
        final_q = trace.records[-1].queues
        lyap_end = 0.5 * float(np.sum(final_q.h**2)) + 0.5 * final_q.e**2
        bound = g / v + lyap_end / (v * sc.total_slots)
        gap = oracle_mean - taco_mean
        details[f"V={v:g}"] = {"gap": gap, "bound": bound}
        if gap > bound + 1e-9:
            violations += 1
    return violations, len(v_values), details
