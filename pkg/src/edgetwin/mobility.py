"""Random-waypoint movement and the PT-to-ES uplink rate model.

The uplink follows the Shannon-Hartley form: a PT holding a fraction b of
its server's band B sees rate b*B*log2(1 + gain*p*|h|^2 / (N0*b*B)). We
collapse everything except the share into a single dimensionless SNR
coefficient c = gain*p*|h|^2 / (N0*B) so the rate is b*B*log2(1 + c/b);
that form is what the bandwidth-allocation solver differentiates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, SlotState

LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class ChannelSample:
    """One PT-ES link: geometry plus the realized fading draw."""

    distance: float
    fading_power: float
    path_gain: float
    snr_coefficient: float  # gain * p_i * |h|^2 / (N0 * B), share-free

    def __post_init__(self) -> None:
        if self.distance < 0 or self.fading_power < 0 or self.snr_coefficient < 0:
            raise ValueError("channel sample fields must be nonnegative")


def step_rwp(
    positions: np.ndarray,
    waypoints: np.ndarray,
    speeds: np.ndarray,
    dt: float,
    sc: Scenario,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance every PT by one step of the random-waypoint process.

    Each PT moves toward its waypoint at its drawn speed. A PT reaching the
    waypoint within dt is clamped there and draws a fresh uniform waypoint
    and speed (zero pause time); the leftover fraction of dt is dropped, so
    at most one leg is traversed per step. dt=0 consumes no randomness.
    """
    if dt == 0.0:
        return positions.copy(), waypoints.copy(), speeds.copy()
    pos = positions.copy()
    wps = waypoints.copy()
    spd = speeds.copy()
    delta = wps - pos
    dist = np.linalg.norm(delta, axis=1)
    travel = spd * dt
    arrived = travel >= dist
    moving = ~arrived & (dist > 0)
    if np.any(moving):
        step = (travel[moving] / dist[moving])[:, None] * delta[moving]
        pos[moving] += step
    if np.any(arrived):
        pos[arrived] = wps[arrived]
        n = int(arrived.sum())
        wps[arrived] = rng.uniform(0.0, sc.area_side, size=(n, 2))
        spd[arrived] = rng.uniform(*sc.rwp_speed, size=n)
    np.clip(pos, 0.0, sc.area_side, out=pos)
    return pos, wps, spd


def distances(sc: Scenario, state: SlotState) -> np.ndarray:
    """Pairwise PT-ES distances, shape (I, M), metres."""
    diff = state.pt_positions[:, None, :] - sc.es_positions[None, :, :]
    return np.linalg.norm(diff, axis=2)


def path_gain(sc: Scenario, distance: np.ndarray) -> np.ndarray:
    """Distance-based gain with a minimum-distance clamp.

    The default is the physical d^(-theta) law; the 'literal' switch flips
    the exponent's sign to reproduce the alternative reading for audits.
    """
    d = np.maximum(np.asarray(distance, dtype=float), sc.min_distance)
    exp = -sc.pathloss_exp if sc.pathloss_sign == "physical" else sc.pathloss_exp
    return d**exp


def snr_coefficients(sc: Scenario, state: SlotState) -> np.ndarray:
    """Share-free SNR coefficient c for every PT-ES pair, shape (I, M)."""
    gain = path_gain(sc, distances(sc, state))
    return gain * sc.tx_power_pt * state.fading_power / (sc.noise_psd * sc.bandwidth_per_es)


def rate_from_share(sc: Scenario, c, b) -> np.ndarray:
    """Rate b*B*log2(1 + c/b) in bit/s; zero where the share or SNR is zero."""
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(np.broadcast_shapes(c.shape, b.shape))
    ok = (b > 0) & (c > 0)
    bb = np.broadcast_to(b, out.shape)[ok]
    cc = np.broadcast_to(c, out.shape)[ok]
    out[ok] = bb * sc.bandwidth_per_es * np.log1p(cc / bb) / LOG2
    return out


def link_usable(sc: Scenario, state: SlotState) -> np.ndarray:
    """(I, M) link-admission mask for offload traffic this slot.

    A link qualifies when its full-share capacity clears the configured
    floor; with the floor at zero this reduces to "the link is alive".
    Deep-fade links would otherwise be chosen while the delay backlog is
    still empty, stranding a single slot with an astronomically long
    transmission.
    """
    c = snr_coefficients(sc, state)
    cap = sc.bandwidth_per_es * np.log1p(np.maximum(c, 0.0)) / LOG2
    return cap > max(sc.min_offload_rate, 0.0)


def channel_sample(sc: Scenario, state: SlotState, pt: int, es: int) -> ChannelSample:
    d = float(distances(sc, state)[pt, es])
    h2 = float(state.fading_power[pt, es])
    gain = float(path_gain(sc, np.array(d)))
    c = gain * sc.tx_power_pt * h2 / (sc.noise_psd * sc.bandwidth_per_es)
    return ChannelSample(distance=d, fading_power=h2, path_gain=gain, snr_coefficient=c)


def uplink_rate(sc: Scenario, channel: ChannelSample, a_im: int, b_i: float) -> float:
    """Achievable uplink rate for one PT on one ES; zero without access."""
    if a_im == 0:
        return 0.0
    return float(rate_from_share(sc, channel.snr_coefficient, b_i))


def rate_derivatives(sc: Scenario, c, b) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of R(b) = b*B*log2(1+c/b) w.r.t. b.

    R'(b)  = (B/ln2) * [ln(1+c/b) - c/(b+c)]          (positive, decreasing)
    R''(b) = -(B/ln2) * c^2 / (b*(b+c)^2)             (negative: R concave)
    """
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = sc.bandwidth_per_es / LOG2
    d1 = scale * (np.log1p(c / b) - c / (b + c))
    d2 = -scale * c**2 / (b * (b + c) ** 2)
    return d1, d2
