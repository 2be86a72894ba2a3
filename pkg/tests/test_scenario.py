"""Configuration parsing, seeded randomness, and trace ingestion."""
import numpy as np
import pytest

from edgetwin.scenario import (
    ConfigError,
    Scenario,
    TraceError,
    build_scenario,
    draw_slot,
    ingest_traces,
    resolve_budgets,
    substream,
)


def test_default_dimensions():
    sc = Scenario()
    assert sc.num_pts == 40
    assert sc.num_ess == 10
    assert sc.slots_per_frame == 10
    assert sc.total_slots == sc.frames * sc.slots_per_frame
    assert sc.bandwidth_per_es == 5e6
    assert sc.knowledge_bits == (73.2e6, 97.6e6)
    assert sc.personalized_bits == (6.1e6, 12.2e6)


def test_config_unit_conversions():
    sc = build_scenario(
        """
        [system]
        num_pts = 3
        num_ess = 2
        frames = 1
        knowledge_mbit = 50 60
        [radio]
        bandwidth_mhz = 2.5
        cloud_rate_mbps = 80
        noise_psd_dbm_hz = -174
        [compute]
        cpu_es_ghz = 10
        [budgets]
        delay_budget_s = 5
        energy_budget_j = 100
        [rng]
        seed = 3
        """
    )
    assert sc.bandwidth_per_es == 2.5e6
    assert sc.cloud_rate == 80e6
    assert sc.cpu_es == 10e9
    assert sc.knowledge_bits == (50e6, 60e6)
    assert np.isclose(sc.noise_psd, 10 ** (-17.4) * 1e-3)
    assert sc.rng_seed == 3


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError, match="radio.bandwitdh_mhz"):
        build_scenario("[radio]\nbandwitdh_mhz = 5\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="wireless"):
        build_scenario("[wireless]\nbandwidth_mhz = 5\n")


def test_bad_value_reports_key():
    with pytest.raises(ConfigError, match="system.num_pts"):
        build_scenario("[system]\nnum_pts = many\n")


def test_validation_rejects_bad_fields():
    with pytest.raises(ConfigError):
        Scenario(pathloss_exp=1.5)
    with pytest.raises(ConfigError):
        Scenario(g_local=1.5)
    with pytest.raises(ConfigError):
        Scenario(num_pts=0)
    with pytest.raises(ConfigError):
        Scenario(pathloss_sign="upside_down")
    with pytest.raises(ConfigError):
        Scenario(delay_budget=-1.0)


def test_substream_independence():
    a = substream(1, 3, 5).random(4)
    b = substream(1, 3, 5).random(4)
    c = substream(1, 3, 6).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_draw_slot_deterministic_and_frame_constant_knowledge():
    sc = Scenario(num_pts=4, num_ess=2, frames=2, slots_per_frame=3,
                  delay_budget=5.0, energy_budget=100.0, rng_seed=11)
    s1 = draw_slot(sc, 0)
    s2 = draw_slot(sc, 0)
    assert np.array_equal(s1.fading_power, s2.fading_power)
    assert np.array_equal(s1.pt_positions, s2.pt_positions)

    # knowledge volume is a pure function of (seed, frame)
    prev = s1
    for tau in range(1, sc.total_slots):
        st = draw_slot(sc, tau, prev)
        if st.frame == prev.frame:
            assert np.array_equal(st.knowledge_bits, prev.knowledge_bits)
        prev = st
    first = draw_slot(sc, 0)
    last = draw_slot(sc, sc.total_slots - 1, prev)
    assert not np.array_equal(first.knowledge_bits, last.knowledge_bits)


def test_fading_independent_of_mobility_chain():
    sc = Scenario(num_pts=3, num_ess=2, frames=1, slots_per_frame=4,
                  delay_budget=5.0, energy_budget=100.0, rng_seed=2)
    chain = draw_slot(sc, 0)
    chain = draw_slot(sc, 1, chain)
    chain = draw_slot(sc, 2, chain)
    solo = draw_slot(sc, 2)  # no mobility history consumed
    assert np.array_equal(chain.fading_power, solo.fading_power)
    assert np.array_equal(chain.task_bits, solo.task_bits)


def test_resolve_budgets_fills_only_zeros():
    sc = Scenario(num_pts=3, num_ess=2, frames=1, delay_budget=7.0,
                  energy_budget=0.0, rng_seed=5)
    out = resolve_budgets(sc)
    assert out.delay_budget == 7.0
    assert out.energy_budget > 0

    both = resolve_budgets(Scenario(num_pts=3, num_ess=2, frames=1,
                                    delay_budget=7.0, energy_budget=9.0))
    assert (both.delay_budget, both.energy_budget) == (7.0, 9.0)


def test_resolve_budgets_margin_scaling():
    base = dict(num_pts=3, num_ess=2, frames=1, rng_seed=5)
    one = resolve_budgets(Scenario(budget_margin=1.0, **base))
    two = resolve_budgets(Scenario(budget_margin=2.0, **base))
    assert np.isclose(two.delay_budget, 2.0 * one.delay_budget)
    assert np.isclose(two.energy_budget, 2.0 * one.energy_budget)
    # delay_margin overrides the shared margin for the delay budget only
    dm = resolve_budgets(Scenario(budget_margin=1.0, delay_margin=3.0, **base))
    assert np.isclose(dm.delay_budget, 3.0 * one.delay_budget)
    assert np.isclose(dm.energy_budget, one.energy_budget)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_ingest_traces_roundtrip(tmp_path):
    sc = Scenario(num_pts=2, num_ess=2, frames=1, slots_per_frame=2,
                  delay_budget=5.0, energy_budget=100.0)
    es_csv = _write(tmp_path, "es.csv",
                    "es_id,x_m,y_m\n0,100,200\n1,300,400\n")
    pt_rows = ["pt_id,slot,x_m,y_m"]
    for i in range(2):
        for t in range(2):
            pt_rows.append(f"{i},{t},{10 * i + t},{5 * i}")
    pt_csv = _write(tmp_path, "pt.csv", "\n".join(pt_rows) + "\n")
    out = ingest_traces(sc, es_csv, pt_csv)
    assert np.array_equal(out.es_positions, [[100, 200], [300, 400]])
    st = draw_slot(out, 1)
    assert np.array_equal(st.pt_positions, [[1, 0], [11, 5]])


def test_ingest_traces_errors(tmp_path):
    sc = Scenario(num_pts=1, num_ess=1, frames=1, slots_per_frame=2,
                  delay_budget=5.0, energy_budget=100.0)
    bad_header = _write(tmp_path, "bad.csv", "id,x,y\n0,1,2\n")
    with pytest.raises(TraceError, match="header"):
        ingest_traces(sc, bad_header)
    out_of_range = _write(tmp_path, "oor.csv", "es_id,x_m,y_m\n3,1,2\n")
    with pytest.raises(TraceError, match="out of range"):
        ingest_traces(sc, out_of_range)
    es_ok = _write(tmp_path, "es.csv", "es_id,x_m,y_m\n0,1,2\n")
    short = _write(tmp_path, "short.csv", "pt_id,slot,x_m,y_m\n0,0,1,1\n")
    with pytest.raises(TraceError, match="shorter"):
        ingest_traces(sc, es_ok, short)
