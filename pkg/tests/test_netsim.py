import json

import numpy as np
import pytest

from gazestream import netsim, scene, scheduler, vision
from gazestream.errors import ConfigError, TraceError
from gazestream.netsim import (PROFILES, Arrival, NetworkProfile, SimParams,
                               fixation_trace, load_profile, saccade_trace,
                               simulate_session, sweep_trace, transmit)
from gazestream.perception import classify_gaze
from gazestream.scheduler import PlanEntry, UnitSensitivity, UpdatePlan

DISPLAY = vision.DisplayParams(width=64, height=64, pixels_per_degree=4.0)


def toy_asset(step_bytes, levels):
    verts = np.array([[0.0, 0.0, 5.0, 0.5, 0.5, 0.5],
                      [1.0, 0.0, 5.0, 0.5, 0.5, 0.5],
                      [0.0, 1.0, 5.0, 0.5, 0.5, 0.5]])
    tri = np.array([[0, 1, 2]], dtype=np.int32)
    units = []
    for u, steps in enumerate(step_bytes):
        cum = np.cumsum([50, *steps]).astype(np.int64)
        units.append(scene.Unit(id=u, tris=(tri,) * levels,
                                bytes_per_level=cum))
    return scene.SceneAsset(kind=scene.MESH, levels=levels, vertices=verts,
                            units=tuple(units))


class StubBackend:
    """Constant sensitivity table; keeps channel tests free of rendering."""

    name = "stub"

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def table(self, camera, gaze_state):
        return UnitSensitivity(values=self.values,
                               pixels=np.zeros_like(self.values,
                                                    dtype=np.int64),
                               mode=gaze_state.mode)


def ramp_values(units, levels):
    values = np.zeros((units, levels))
    for u in range(units):
        for k in range(1, levels):
            values[u, k] = (units - u) / k
    return values


def single_entry_plan(nbytes):
    entry = PlanEntry(unit=0, from_level=0, to_level=1, bytes=nbytes,
                      weight=1.0)
    return UpdatePlan(entries=(entry,), budget=nbytes)


# -- profiles -------------------------------------------------------------------

def test_profile_validation():
    with pytest.raises(ConfigError):
        NetworkProfile(bandwidth=0.0)
    with pytest.raises(ConfigError):
        NetworkProfile(bandwidth=1e6, uplink_latency=-1.0)
    with pytest.raises(ConfigError):
        NetworkProfile(bandwidth=1e6, packet_size=0)
    assert NetworkProfile(bandwidth=1e6).packet_size == 100 * 1024


def test_named_profiles():
    assert PROFILES["3g"].bandwidth == 2e6
    assert PROFILES["4g"].bandwidth == 40e6
    assert PROFILES["5g"].bandwidth == 67e6


def test_load_profile(tmp_path):
    path = tmp_path / "link.cfg"
    path.write_text("base = 4g\nuplink_ms = 50\npacket_kb = 10\n")
    prof = load_profile(str(path))
    assert prof.bandwidth == 40e6
    assert prof.uplink_latency == 50.0
    assert prof.packet_size == 10 * 1024
    path.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        load_profile(str(path))


# -- transmit -------------------------------------------------------------------

def test_transmit_single_packet_delay():
    prof = NetworkProfile(bandwidth=2e6)
    events = transmit(single_entry_plan(100 * 1024), prof, send_time=0.0)
    assert len(events) == 1
    assert events[0].time == pytest.approx(0.4096, abs=1e-12)


def test_transmit_zero_plan_no_events():
    prof = NetworkProfile(bandwidth=2e6)
    assert transmit(UpdatePlan(entries=(), budget=0), prof, 0.0) == ()


def test_transmit_bandwidth_linearity():
    plan = single_entry_plan(77777)
    slow = transmit(plan, NetworkProfile(bandwidth=2e6), 0.0)[0].time
    fast = transmit(plan, NetworkProfile(bandwidth=4e6), 0.0)[0].time
    assert fast == pytest.approx(slow / 2)


def test_transmit_entries_map_to_their_packets():
    prof = NetworkProfile(bandwidth=8e6, packet_size=1000,
                          downlink_latency=20.0)
    entries = (PlanEntry(unit=0, from_level=0, to_level=1, bytes=1500,
                         weight=1.0),
               PlanEntry(unit=1, from_level=0, to_level=1, bytes=800,
                         weight=0.5))
    plan = UpdatePlan(entries=entries, budget=2300)
    first, second = transmit(plan, prof, send_time=1.0)
    # first entry ends at byte 1500, inside full packet 2 of the stream
    assert first.time == pytest.approx(1.0 + 0.020 + 2000 * 8 / 8e6)
    # second ends at byte 2300, in the final packet, which carries only
    # its actual 300 bytes instead of a padded 1000
    assert second.time == pytest.approx(1.0 + 0.020 + 2300 * 8 / 8e6)
    # entries ending in the same packet land together
    plan2 = UpdatePlan(entries=(entries[0],
                                PlanEntry(unit=1, from_level=0, to_level=1,
                                          bytes=500, weight=0.5)), budget=2000)
    a, b = transmit(plan2, prof, send_time=0.0)
    assert a.time == pytest.approx(0.020 + 2000 * 8 / 8e6)
    assert b.time == a.time


def test_transmit_causality():
    prof = NetworkProfile(bandwidth=5e6, downlink_latency=35.0)
    for nbytes in (1, 999, 102400, 250000):
        for event in transmit(single_entry_plan(nbytes), prof, 2.5):
            assert event.time >= 2.5 + 0.035


# -- session loop ---------------------------------------------------------------

def session_fixture(bandwidth=2e6, uplink=0.0, downlink=0.0, duration=0.5,
                    trace=None, sim=SimParams(), units=8, levels=3):
    asset = toy_asset([[600, 1800]] * units, levels)
    backend = StubBackend(ramp_values(units, levels))
    prof = NetworkProfile(bandwidth=bandwidth, uplink_latency=uplink,
                          downlink_latency=downlink)
    if trace is None:
        trace = fixation_trace((0.0, 0.0), duration)
    return simulate_session(trace, asset, prof, backend, DISPLAY, sim=sim)


def test_session_conservation():
    tl = session_fixture()
    assert tl.bytes_arrived[-1] <= tl.bytes_sent[-1] <= tl.budget.sum()
    assert np.all(np.diff(tl.bytes_sent) >= 0)
    assert np.all(np.diff(tl.bytes_arrived) >= 0)
    assert np.all(tl.planned_bytes <= tl.budget)


def test_session_causality_of_events():
    tl = session_fixture(downlink=40.0)
    down = 0.040
    for ev in tl.events:
        assert ev.time >= tl.time[0] + down


def test_session_zero_latency_lockstep():
    tl = session_fixture()
    asset_levels = tl.levels
    sent = np.zeros(asset_levels.shape[1], dtype=np.int64)
    plan_iter = iter(tl.plans)
    for i in range(tl.ticks):
        if i > 0:
            assert np.array_equal(asset_levels[i], sent), f"tick {i}"
        if tl.planned_bytes[i] > 0:
            for e in next(plan_iter).entries:
                sent[e.unit] = e.to_level


def test_session_determinism(tmp_path):
    a = session_fixture(uplink=30.0, downlink=20.0)
    b = session_fixture(uplink=30.0, downlink=20.0)
    assert np.array_equal(a.levels, b.levels)
    assert np.array_equal(a.bytes_sent, b.bytes_sent)
    assert np.array_equal(a.quality_proxy, b.quality_proxy)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_csv(str(pa))
    b.write_csv(str(pb))
    assert pa.read_bytes() == pb.read_bytes()


def test_session_ample_bandwidth_maxes_in_one_hop():
    tl = session_fixture(bandwidth=1e12, duration=0.1)
    assert np.all(tl.levels[0] == 0)
    assert np.all(tl.levels[1] == tl.levels.shape[1] * 0 + 2)
    assert tl.stalled.sum() == 0


def test_session_less_bandwidth_streams_less():
    # 80 units x 2400 bytes will not fit through the slow link in 0.5 s
    fast = session_fixture(bandwidth=4e6, units=80)
    slow = session_fixture(bandwidth=2e6, units=80)
    assert slow.bytes_sent[-1] < fast.bytes_sent[-1]
    assert slow.levels[-1].mean() <= fast.levels[-1].mean()
    assert slow.quality_proxy[-1] >= fast.quality_proxy[-1]


def test_session_uplink_delays_cloud_gaze():
    # 95 ms sits strictly between 8 and 9 tick periods, so the newest
    # sample old enough to have reached the cloud is always i - 9
    trace = sweep_trace((0.0, 0.0), (9.0, 0.0), duration=1.0)
    tl = session_fixture(uplink=95.0, trace=trace)
    for i in range(tl.ticks):
        j = max(0, i - 9)
        assert np.allclose(tl.gaze_cloud[i], tl.gaze_true[j])


def test_session_stall_recorded_not_crashed(monkeypatch):
    oversized = UpdatePlan(
        entries=(PlanEntry(unit=0, from_level=0, to_level=1,
                           bytes=10_000_000, weight=1.0),),
        budget=10_000_000)
    calls = {"n": 0}

    def fake_plan(table, asset, state, budget):
        calls["n"] += 1
        if calls["n"] == 1:
            return oversized
        return UpdatePlan(entries=(), budget=budget)

    monkeypatch.setattr(netsim, "plan_update", fake_plan)
    tl = session_fixture(sim=SimParams(stall_cap_bytes=100_000))
    assert tl.stalled.sum() > 0
    assert calls["n"] == 1                 # stalled ticks skip planning
    assert tl.bytes_sent[-1] == 10_000_000


def test_session_empty_trace_rejected():
    asset = toy_asset([[100, 200]], 3)
    with pytest.raises(TraceError):
        simulate_session([], asset, PROFILES["4g"],
                         StubBackend(ramp_values(1, 3)), DISPLAY)


def test_session_proxy_cadence_holds_value():
    tl = session_fixture(sim=SimParams(proxy_every=5))
    for i in range(tl.ticks):
        if i % 5 != 0:
            assert tl.quality_proxy[i] == tl.quality_proxy[i - 1]


def test_session_outputs(tmp_path):
    tl = session_fixture(duration=0.2)
    csv = tmp_path / "timeline.csv"
    summ = tmp_path / "summary.json"
    tl.write_csv(str(csv))
    tl.write_summary(str(summ))
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("# config: {")
    assert lines[1] == tl.CSV_COLUMNS
    assert len(lines) == tl.ticks + 2
    data = json.loads(summ.read_text())
    assert data["bytes_sent"] == int(tl.bytes_sent[-1])
    assert data["config"]["profile"]["bandwidth_bps"] == 2e6
    assert data["config"]["scene_hash"]


def test_session_popping_tally_fires_on_visible_upgrades():
    asset = scene.heightfield_asset((4, 4), 2, seed=3)
    backend = StubBackend(ramp_values(asset.unit_count, asset.levels))
    prof = NetworkProfile(bandwidth=1e6)
    trace = fixation_trace((0.0, 0.0), 0.3)
    tl = simulate_session(trace, asset, prof, backend, DISPLAY,
                          sim=SimParams(track_popping=True))
    assert np.all(tl.popping >= 0.0)
    assert tl.popping.sum() > 0.0
    assert tl.arrivals_applied.sum() > 0


# -- synthetic traces -----------------------------------------------------------

def test_fixation_trace_is_fixation():
    trace = fixation_trace((1.0, -2.0), 0.5)
    states = classify_gaze(trace)
    assert all(s.mode == "fixation" for s in states)
    times = [s.time for s in trace]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_sweep_trace_stays_below_threshold():
    trace = sweep_trace((-5.0, 0.0), (5.0, 0.0), duration=1.0)
    states = classify_gaze(trace)
    assert all(s.mode == "fixation" for s in states)
    assert states[45].speed == pytest.approx(10.0, rel=0.05)


def test_saccade_trace_jumps_register():
    trace = saccade_trace([(-8.0, 0.0), (8.0, 0.0), (-8.0, 0.0)], dwell=0.2)
    states = classify_gaze(trace)
    modes = [s.mode for s in states]
    assert modes.count("saccade") >= 2
    assert modes[0] == "fixation" and modes[-1] == "fixation"
