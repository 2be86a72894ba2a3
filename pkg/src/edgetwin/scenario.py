"""Experiment configuration, deterministic randomness, and trace ingestion.

All sizes are stored in bits internally; config files use Mbit for data
sizes, MHz/GHz for rates and clock speeds, and dBm/Hz for noise density.
Every random quantity in a run flows from ``rng_seed`` through named
substreams, so replaying a scenario is bit-exact and the fading, mobility,
and data-size draws are mutually independent.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MBIT = 1e6

# Substream tags. Keeping them distinct guarantees that e.g. consuming more
# fading draws never shifts the mobility sequence.
_STREAM_ES = 0
_STREAM_INIT = 1
_STREAM_MOBILITY = 2
_STREAM_FADING = 3
_STREAM_SIZES = 4
_STREAM_KNOWLEDGE = 5
_STREAM_SOLVER = 6


class ConfigError(ValueError):
    """Raised for unparsable or invalid configuration documents."""


class TraceError(ValueError):
    """Raised for malformed or inconsistent external trace files."""


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Deterministic generator for one (stream, index) cell of a run."""
    return np.random.default_rng(np.random.SeedSequence((seed, stream, index)))


@dataclass(frozen=True)
class Scenario:
    """Immutable experiment configuration (SI units throughout)."""

    # [system]
    num_pts: int = 40
    num_ess: int = 10
    frames: int = 200
    slots_per_frame: int = 10
    area_side: float = 1000.0
    slot_duration: float = 1.0
    knowledge_bits: tuple[float, float] = (73.2 * MBIT, 97.6 * MBIT)
    personalized_bits: tuple[float, float] = (6.1 * MBIT, 12.2 * MBIT)
    task_bits: tuple[float, float] = (10.0 * MBIT, 20.0 * MBIT)
    rwp_speed: tuple[float, float] = (1.0, 2.0)

    # [radio]
    bandwidth_per_es: float = 5e6
    tx_power_pt: float = 0.5
    tx_power_cloud: float = 5.0
    cloud_rate: float = 50e6
    noise_psd: float = 10 ** (-174.0 / 10.0) * 1e-3
    pathloss_exp: float = 4.0
    pathloss_sign: str = "physical"  # "literal" reproduces the printed SNR form
    min_distance: float = 1.0
    # link admission: full-share capacity below this disables offloading
    # over that link for the slot (0 = admit any live link)
    min_offload_rate: float = 0.0

    # [compute]
    cpu_es: float = 20e9
    cpu_pt: float = 1e9
    cycles_per_bit_es: float = 300.0
    cycles_per_bit_pt: float = 300.0
    kappa_es: float = 1e-27
    kappa_pt: float = 1e-27

    # [budgets]
    delay_budget: float = 0.0  # s per frame; 0.0 in config means "auto"
    energy_budget: float = 0.0  # J per frame; 0.0 in config means "auto"
    budget_margin: float = 1.25
    delay_margin: float = 0.0  # 0 -> reuse budget_margin for the delay budget
    budget_reference: str = "local"  # "local" or "mixed"
    lyapunov_v: float = 1e6
    g_local: float = 0.5

    # [solver]
    partitions: int = 4
    epsilon: float = 1e-6
    r_max: int = 4
    w_max: int = 50
    pivot_limit: int = 20000
    node_limit: int = 100000
    contract_rounds: int = 1
    share_floor: float = 1e-6
    x_grid_points: int = 32
    round_z: str = "det"  # "prob" reproduces probabilistic rounding
    frame_z_init: str = "optimistic"  # or "inherit"
    lp_backend: str = "highs"  # or "dense"

    # [rng]
    rng_seed: int = 0

    # resolved at build time
    es_positions: Optional[np.ndarray] = None  # (M, 2)
    pt_trace: Optional[np.ndarray] = None  # (I, frames*K, 2) overrides RWP

    def __post_init__(self) -> None:
        _validate(self)
        if self.es_positions is None:
            rng = substream(self.rng_seed, _STREAM_ES)
            pos = rng.uniform(0.0, self.area_side, size=(self.num_ess, 2))
            object.__setattr__(self, "es_positions", pos)
        self.es_positions.setflags(write=False)
        if self.pt_trace is not None:
            self.pt_trace.setflags(write=False)

    @property
    def total_slots(self) -> int:
        return self.frames * self.slots_per_frame


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be strictly positive, got {value!r}")


def _range_ok(name: str, rng: tuple[float, float]) -> None:
    lo, hi = rng
    if not (0 <= lo <= hi):
        raise ConfigError(f"{name} range must satisfy 0 <= low <= high, got {rng!r}")


def _validate(sc: Scenario) -> None:
    for name in ("num_pts", "num_ess", "frames", "slots_per_frame"):
        if getattr(sc, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    for name in (
        "area_side",
        "slot_duration",
        "bandwidth_per_es",
        "tx_power_pt",
        "tx_power_cloud",
        "cloud_rate",
        "noise_psd",
        "cpu_es",
        "cpu_pt",
        "cycles_per_bit_es",
        "cycles_per_bit_pt",
        "kappa_es",
        "kappa_pt",
        "min_distance",
        "budget_margin",
    ):
        _positive(name, getattr(sc, name))
    if sc.pathloss_exp < 2:
        raise ConfigError(f"pathloss_exp < 2 (got {sc.pathloss_exp})")
    if sc.pathloss_sign not in ("physical", "literal"):
        raise ConfigError("pathloss_sign must be 'physical' or 'literal'")
    if not 0.0 <= sc.g_local <= 1.0:
        raise ConfigError("g_local must lie in [0, 1]")
    if sc.lyapunov_v < 0:
        raise ConfigError("lyapunov_v must be >= 0")
    if sc.delay_budget < 0 or sc.energy_budget < 0:
        raise ConfigError("budgets must be >= 0 (0 selects automatic derivation)")
    for name in ("knowledge_bits", "personalized_bits", "task_bits", "rwp_speed"):
        _range_ok(name, getattr(sc, name))
    if sc.budget_reference not in ("local", "mixed"):
        raise ConfigError("budget_reference must be 'local' or 'mixed'")
    if sc.round_z not in ("det", "prob"):
        raise ConfigError("round_z must be 'det' or 'prob'")
    if sc.frame_z_init not in ("optimistic", "inherit"):
        raise ConfigError("frame_z_init must be 'optimistic' or 'inherit'")
    if sc.lp_backend not in ("highs", "dense"):
        raise ConfigError("lp_backend must be 'highs' or 'dense'")
    if sc.partitions < 1:
        raise ConfigError("partitions must be >= 1")


@dataclass
class SlotState:
    """Realized randomness for one slot (plus the mobility carry-over state)."""

    tau: int
    frame: int
    pt_positions: np.ndarray  # (I, 2), metres
    fading_power: np.ndarray  # (I, M), |h|^2, unit-mean exponential
    personalized_bits: np.ndarray  # (I,), S_i
    task_bits: np.ndarray  # (I,), lambda_i
    knowledge_bits: np.ndarray  # (I,), D_i, constant within a frame
    waypoints: np.ndarray  # (I, 2) RWP targets
    speeds: np.ndarray  # (I,) current RWP speeds


def _draw_sizes(sc: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    s = rng.uniform(*sc.personalized_bits, size=sc.num_pts)
    lam = rng.uniform(*sc.task_bits, size=sc.num_pts)
    return s, lam


def _frame_knowledge(sc: Scenario, frame: int) -> np.ndarray:
    rng = substream(sc.rng_seed, _STREAM_KNOWLEDGE, frame)
    return rng.uniform(*sc.knowledge_bits, size=sc.num_pts)


def draw_slot(sc: Scenario, tau: int, prev: Optional[SlotState] = None) -> SlotState:
    """Produce the slot-tau state; ``prev`` carries the mobility chain.

    Fading and data sizes come from per-slot hashed substreams, so the result
    for a given tau is reproducible independently of how many draws other
    streams consumed. D_i is a pure function of (seed, frame) and therefore
    constant within a frame by construction.
    """
    from . import mobility  # local import to avoid a cycle

    frame = tau // sc.slots_per_frame
    if sc.pt_trace is not None:
        pos = sc.pt_trace[:, tau, :].copy()
        wps = pos.copy()
        speeds = np.zeros(sc.num_pts)
    elif prev is None:
        rng = substream(sc.rng_seed, _STREAM_INIT)
        pos = rng.uniform(0.0, sc.area_side, size=(sc.num_pts, 2))
        wps = rng.uniform(0.0, sc.area_side, size=(sc.num_pts, 2))
        speeds = rng.uniform(*sc.rwp_speed, size=sc.num_pts)
    else:
        rng = substream(sc.rng_seed, _STREAM_MOBILITY, tau)
        pos, wps, speeds = mobility.step_rwp(
            prev.pt_positions, prev.waypoints, prev.speeds, sc.slot_duration, sc, rng
        )
    fading = substream(sc.rng_seed, _STREAM_FADING, tau).exponential(
        1.0, size=(sc.num_pts, sc.num_ess)
    )
    s_bits, lam_bits = _draw_sizes(sc, substream(sc.rng_seed, _STREAM_SIZES, tau))
    return SlotState(
        tau=tau,
        frame=frame,
        pt_positions=pos,
        fading_power=fading,
        personalized_bits=s_bits,
        task_bits=lam_bits,
        knowledge_bits=_frame_knowledge(sc, frame),
        waypoints=wps,
        speeds=speeds,
    )


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "system": {
        "num_pts": ("num_pts", int),
        "num_ess": ("num_ess", int),
        "frames": ("frames", int),
        "slots_per_frame": ("slots_per_frame", int),
        "area_side_m": ("area_side", float),
        "slot_duration_s": ("slot_duration", float),
        "knowledge_mbit": ("knowledge_bits", "range_mbit"),
        "personalized_mbit": ("personalized_bits", "range_mbit"),
        "task_mbit": ("task_bits", "range_mbit"),
        "rwp_speed_ms": ("rwp_speed", "range"),
    },
    "radio": {
        "bandwidth_mhz": ("bandwidth_per_es", "mega"),
        "tx_power_pt_w": ("tx_power_pt", float),
        "tx_power_cloud_w": ("tx_power_cloud", float),
        "cloud_rate_mbps": ("cloud_rate", "mega"),
        "noise_psd_dbm_hz": ("noise_psd", "dbm"),
        "pathloss_exp": ("pathloss_exp", float),
        "pathloss_sign": ("pathloss_sign", str),
        "min_distance_m": ("min_distance", float),
        "min_offload_rate_mbps": ("min_offload_rate", "mega"),
    },
    "compute": {
        "cpu_es_ghz": ("cpu_es", "giga"),
        "cpu_pt_ghz": ("cpu_pt", "giga"),
        "cycles_per_bit_es": ("cycles_per_bit_es", float),
        "cycles_per_bit_pt": ("cycles_per_bit_pt", float),
        "kappa_es": ("kappa_es", float),
        "kappa_pt": ("kappa_pt", float),
    },
    "budgets": {
        "delay_budget_s": ("delay_budget", float),
        "energy_budget_j": ("energy_budget", float),
        "budget_margin": ("budget_margin", float),
        "delay_margin": ("delay_margin", float),
        "budget_reference": ("budget_reference", str),
        "lyapunov_v": ("lyapunov_v", float),
        "g_local": ("g_local", float),
    },
    "solver": {
        "partitions": ("partitions", int),
        "epsilon": ("epsilon", float),
        "r_max": ("r_max", int),
        "w_max": ("w_max", int),
        "pivot_limit": ("pivot_limit", int),
        "node_limit": ("node_limit", int),
        "contract_rounds": ("contract_rounds", int),
        "share_floor": ("share_floor", float),
        "x_grid_points": ("x_grid_points", int),
        "round_z": ("round_z", str),
        "frame_z_init": ("frame_z_init", str),
        "lp_backend": ("lp_backend", str),
    },
    "rng": {
        "seed": ("rng_seed", int),
    },
}


def _convert(kind, raw: str):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw.strip()
    if kind == "mega":
        return float(raw) * 1e6
    if kind == "giga":
        return float(raw) * 1e9
    if kind == "dbm":
        return 10 ** (float(raw) / 10.0) * 1e-3
    if kind in ("range", "range_mbit"):
        parts = raw.split()
        if len(parts) != 2:
            raise ValueError(f"expected two values, got {raw!r}")
        lo, hi = float(parts[0]), float(parts[1])
        if kind == "range_mbit":
            lo, hi = lo * MBIT, hi * MBIT
        return (lo, hi)
    raise AssertionError(kind)


def build_scenario(config_text: str) -> Scenario:
    """Parse a key=value document into a validated Scenario.

    Unknown sections or keys are rejected with their names listed; budgets
    left unset are derived from a seeded warmup (see resolve_budgets).
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(config_text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    overrides: dict = {}
    unknown = []
    for section in parser.sections():
        if section not in _SECTIONS:
            unknown.append(section)
            continue
        known = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in known:
                unknown.append(f"{section}.{key}")
                continue
            field_name, kind = known[key]
            try:
                overrides[field_name] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))

    scenario = Scenario(**overrides)
    return resolve_budgets(scenario)


def reference_frame_costs(sc: Scenario, frames: int = 10) -> tuple[float, float, float, float]:
    """Per-frame (delay, energy) of the all-local and the half-offload policies.

    Averages over a seeded ``frames``-frame warmup. The all-local numbers use
    Eq.-style local execution only; the half-offload reference attaches each
    PT to its nearest ES with uniform shares, x = y = 0.5, and offloads every
    task. Used to anchor budgets that the source material leaves unspecified.
    """
    from . import mobility

    k = sc.slots_per_frame
    local_t = np.zeros(0)
    tot_local_t = 0.0
    tot_local_e = 0.0
    tot_mix_t = 0.0
    tot_mix_e = 0.0
    state = None
    n_share = max(1.0, sc.num_pts / sc.num_ess)
    for tau in range(frames * k):
        state = draw_slot(sc, tau, state)
        lam = state.task_bits
        t_loc = lam * sc.cycles_per_bit_pt / sc.cpu_pt
        e_loc = sc.kappa_pt * sc.cpu_pt**2 * lam * sc.cycles_per_bit_pt
        tot_local_t += float(t_loc.mean())
        tot_local_e += float(e_loc.sum())
        # half-offload reference
        snr = mobility.snr_coefficients(sc, state)
        nearest = np.argmin(mobility.distances(sc, state), axis=1)
        c = snr[np.arange(sc.num_pts), nearest]
        b = f = 1.0 / n_share
        rate = mobility.rate_from_share(sc, c, np.full(sc.num_pts, b))
        x = y = 0.5
        d_bits = x * state.knowledge_bits
        u_bits = y * state.personalized_bits
        t_mix = (
            (d_bits / sc.cloud_rate + d_bits * sc.cycles_per_bit_es / (f * sc.cpu_es)) / k
            + (u_bits + lam) / np.maximum(rate, 1e-9)
            + u_bits * sc.cycles_per_bit_es / (f * sc.cpu_es)
            + lam * sc.cycles_per_bit_es / (f * sc.cpu_es)
        )
        e_mix = (
            (d_bits * sc.tx_power_cloud / sc.cloud_rate
             + sc.kappa_es * sc.cpu_es**2 * d_bits * sc.cycles_per_bit_es) / k
            + (u_bits + lam) * sc.tx_power_pt / np.maximum(rate, 1e-9)
            + sc.kappa_es * sc.cpu_es**2 * (u_bits + lam) * sc.cycles_per_bit_es
        )
        tot_mix_t += float(t_mix.mean())
        tot_mix_e += float(e_mix.sum())
    inv = 1.0 / frames
    return tot_local_t * inv, tot_local_e * inv, tot_mix_t * inv, tot_mix_e * inv


def resolve_budgets(sc: Scenario) -> Scenario:
    """Fill in automatic delay/energy budgets from a seeded warmup."""
    if sc.delay_budget > 0 and sc.energy_budget > 0:
        return sc
    loc_t, loc_e, mix_t, mix_e = reference_frame_costs(sc)
    if sc.budget_reference == "local":
        ref_t, ref_e = loc_t, loc_e
    else:
        ref_t, ref_e = 0.5 * (loc_t + mix_t), 0.5 * (loc_e + mix_e)
    updates = {}
    if sc.delay_budget == 0:
        margin = sc.delay_margin if sc.delay_margin > 0 else sc.budget_margin
        updates["delay_budget"] = margin * ref_t
    if sc.energy_budget == 0:
        updates["energy_budget"] = sc.budget_margin * ref_e
    return dataclasses.replace(sc, **updates)


# ---------------------------------------------------------------------------
# Trace ingestion
# ---------------------------------------------------------------------------

def _read_csv(path: str, expected_header: list[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != expected_header:
        raise TraceError(
            f"{path}: expected header {','.join(expected_header)!r}, "
            f"got {','.join(rows[0]) if rows else '<empty>'!r}"
        )
    return rows[1:]


def ingest_traces(
    sc: Scenario, es_positions_csv: str, pt_trace_csv: Optional[str] = None
) -> Scenario:
    """Override ES positions (and optionally PT mobility) from CSV files."""
    rows = _read_csv(es_positions_csv, ["es_id", "x_m", "y_m"])
    if len(rows) != sc.num_ess:
        raise TraceError(
            f"{es_positions_csv}: expected {sc.num_ess} ES rows, got {len(rows)}"
        )
    es_pos = np.zeros((sc.num_ess, 2))
    for lineno, row in enumerate(rows, start=2):
        try:
            idx, x, y = int(row[0]), float(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise TraceError(f"{es_positions_csv}:{lineno}: malformed row {row!r}") from exc
        if not 0 <= idx < sc.num_ess:
            raise TraceError(f"{es_positions_csv}:{lineno}: es_id {idx} out of range")
        es_pos[idx] = (x, y)

    pt_trace = None
    if pt_trace_csv is not None:
        rows = _read_csv(pt_trace_csv, ["pt_id", "slot", "x_m", "y_m"])
        need = sc.total_slots
        pt_trace = np.full((sc.num_pts, need, 2), np.nan)
        for lineno, row in enumerate(rows, start=2):
            try:
                pt, slot, x, y = int(row[0]), int(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{pt_trace_csv}:{lineno}: malformed row {row!r}") from exc
            if not 0 <= pt < sc.num_pts:
                raise TraceError(f"{pt_trace_csv}:{lineno}: pt_id {pt} out of range")
            if 0 <= slot < need:
                if not (0 <= x <= sc.area_side and 0 <= y <= sc.area_side):
                    raise TraceError(
                        f"{pt_trace_csv}:{lineno}: PT {pt} slot {slot} position "
                        f"({x}, {y}) outside the area"
                    )
                pt_trace[pt, slot] = (x, y)
        missing = np.argwhere(np.isnan(pt_trace[:, :, 0]))
        if missing.size:
            pt, slot = missing[0]
            raise TraceError(
                f"{pt_trace_csv}: trace shorter than {need} slots "
                f"(first gap: pt {pt}, slot {slot})"
            )

    return dataclasses.replace(sc, es_positions=es_pos, pt_trace=pt_trace)
