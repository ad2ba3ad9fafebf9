"""Deterministic cloud-edge streaming simulation.

The simulator replays a gaze/camera trace through a three-stage channel:

  * uplink: the cloud plans from the newest trace sample that is at least
    ``uplink_latency`` old, so a moving gaze is analyzed late;
  * wire: each tick the cloud emits an update plan sized to the byte budget
    ``bandwidth * tick - backlog`` and appends it to a FIFO serializer that
    drains at the link rate, chopped into fixed-size packets (the final
    packet of a plan carries only its actual bytes, so serialization time
    matches payload, not padding);
  * downlink: every packet lands ``downlink_latency`` after its
    serialization completes, and a planned upgrade applies at the edge only
    once the packet holding its last byte has landed.

The cloud never recalls in-flight data, so it plans against its *sent*
state (everything committed to the wire) while the edge trails behind by
the serialization and downlink delay.  With zero latency the two states
coincide at every tick boundary.

Two evaluation signals ride along for experiments: a per-tick quality
proxy (the sensitivity mass of the upgrades the edge is still missing,
scored at the true, undelayed gaze in fixation mode) and an optional
popping tally that renders the edge frame before and after each tick's
arrivals and sums popping intensity over the changed pixels during
fixation ticks.  Both go down as streaming catches up with the viewer.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .configio import read_config, write_json
from .constants import BITS_PER_BYTE, KB, MBPS, TICK_HZ
from .contrast import BandSpec
from .errors import ConfigError, TraceError
from .perception import (GazeSample, GazeState, PerceptionParams,
                         classify_gaze, popping_field)
from .scene import Camera, LoDState, SceneAsset, rasterize
from .scheduler import UpdatePlan, apply_plan, plan_update
from .vision import DisplayParams, RetinaParams


@dataclass(frozen=True)
class NetworkProfile:
    """Link parameters of the simulated cloud-edge channel."""

    bandwidth: float                 # bits/s
    uplink_latency: float = 0.0      # ms, gaze sample -> cloud
    downlink_latency: float = 0.0    # ms, packet -> edge
    packet_size: int = 100 * KB      # bytes
    name: str = "custom"

    def __post_init__(self):
        if not self.bandwidth > 0 or not math.isfinite(self.bandwidth):
            raise ConfigError("bandwidth must be positive and finite")
        if self.uplink_latency < 0 or self.downlink_latency < 0:
            raise ConfigError("latencies cannot be negative")
        if self.packet_size <= 0:
            raise ConfigError("packet size must be positive")

    @property
    def bytes_per_second(self) -> float:
        return self.bandwidth / BITS_PER_BYTE

    def tick_budget(self, dt: float) -> int:
        return int(self.bytes_per_second * dt)

    def as_dict(self) -> dict:
        return {"name": self.name, "bandwidth_bps": self.bandwidth,
                "uplink_ms": self.uplink_latency,
                "downlink_ms": self.downlink_latency,
                "packet_bytes": self.packet_size}


# Cellular-class presets; bandwidths follow commonly measured averages.
PROFILES = {
    "3g": NetworkProfile(bandwidth=2 * MBPS, name="3g"),
    "4g": NetworkProfile(bandwidth=40 * MBPS, name="4g"),
    "5g": NetworkProfile(bandwidth=67 * MBPS, name="5g"),
}


def load_profile(path: str) -> NetworkProfile:
    """Read a key-value profile file.

    Recognized keys: bandwidth_mbps, uplink_ms, downlink_ms, packet_kb,
    name.  A ``base`` key starts from one of the named presets.
    """
    values = read_config(path)
    base = PROFILES.get(str(values.pop("base", "")).lower(),
                        NetworkProfile(bandwidth=1 * MBPS))
    kwargs = {
        "bandwidth": base.bandwidth, "uplink_latency": base.uplink_latency,
        "downlink_latency": base.downlink_latency,
        "packet_size": base.packet_size,
        "name": str(values.pop("name", base.name)),
    }
    if "bandwidth_mbps" in values:
        kwargs["bandwidth"] = float(values.pop("bandwidth_mbps")) * MBPS
    if "uplink_ms" in values:
        kwargs["uplink_latency"] = float(values.pop("uplink_ms"))
    if "downlink_ms" in values:
        kwargs["downlink_latency"] = float(values.pop("downlink_ms"))
    if "packet_kb" in values:
        kwargs["packet_size"] = int(float(values.pop("packet_kb")) * KB)
    if values:
        raise ConfigError(f"unknown profile keys: {sorted(values)}")
    return NetworkProfile(**kwargs)


@dataclass(frozen=True)
class Arrival:
    """One planned upgrade landing at the edge."""

    time: float
    unit: int
    from_level: int
    to_level: int
    bytes: int


def transmit(plan: UpdatePlan, profile: NetworkProfile,
             send_time: float) -> tuple[Arrival, ...]:
    """Schedule a plan's upgrades as packet arrival events.

    The plan's bytes serialize in entry order at the link rate, chopped
    into ``packet_size`` chunks; the last chunk carries only the leftover
    bytes.  An upgrade arrives with the packet that completes it, one
    downlink latency after that packet leaves the wire.
    """
    total = plan.total_bytes
    if total == 0:
        return ()
    down = profile.downlink_latency / 1000.0
    packet = profile.packet_size

    def packet_done(cum_bytes: int) -> float:
        k = math.ceil(cum_bytes / packet)
        served = min(k * packet, total)
        return send_time + down + served * BITS_PER_BYTE / profile.bandwidth

    events = []
    cum = 0
    for e in plan.entries:
        cum += e.bytes
        events.append(Arrival(time=packet_done(cum), unit=e.unit,
                              from_level=e.from_level, to_level=e.to_level,
                              bytes=e.bytes))
    return tuple(events)


@dataclass(frozen=True)
class SimParams:
    """Knobs of the session loop that are not channel physics."""

    initial_level: int = 0
    stall_cap_bytes: int = 1 << 20   # wire backlog that counts as a stall
    proxy_every: int = 1             # quality proxy cadence, in ticks
    track_popping: bool = False      # render-and-diff popping tally

    def __post_init__(self):
        if self.proxy_every < 1:
            raise ConfigError("proxy cadence must be at least one tick")
        if self.stall_cap_bytes <= 0:
            raise ConfigError("stall cap must be positive")


@dataclass
class SessionTimeline:
    """Per-tick record of one simulated streaming session."""

    time: np.ndarray                 # (n,) s
    gaze_true: np.ndarray            # (n, 2) deg
    gaze_cloud: np.ndarray           # (n, 2) deg, uplink-delayed
    cloud_mode: list[str]            # gaze mode the planner saw
    budget: np.ndarray               # (n,) bytes offered to the planner
    planned_bytes: np.ndarray        # (n,) bytes actually committed
    backlog: np.ndarray              # (n,) unserialized bytes at tick start
    stalled: np.ndarray              # (n,) bool
    arrivals_applied: np.ndarray     # (n,) upgrade count landed this tick
    bytes_sent: np.ndarray           # (n,) cumulative
    bytes_arrived: np.ndarray        # (n,) cumulative
    levels: np.ndarray               # (n, units) edge state after arrivals
    quality_proxy: np.ndarray        # (n,) remaining sensitivity mass
    popping: np.ndarray              # (n,) fixation popping tally
    plans: list[UpdatePlan]
    events: list[Arrival]
    config: dict = field(default_factory=dict)

    @property
    def ticks(self) -> int:
        return self.time.shape[0]

    def mean_level(self) -> np.ndarray:
        return self.levels.mean(axis=1)

    def time_to_threshold(self, fraction: float = 0.5) -> float | None:
        """First time the quality proxy drops to ``fraction`` of its
        starting value; None if it never does within the session."""
        if not 0.0 < fraction <= 1.0:
            raise ConfigError("threshold fraction must be in (0, 1]")
        start = float(self.quality_proxy[0])
        if start <= 0.0:
            return float(self.time[0])
        hits = np.flatnonzero(self.quality_proxy <= fraction * start)
        return float(self.time[hits[0]]) if hits.size else None

    def summary(self, threshold: float = 0.5) -> dict:
        return {
            "ticks": int(self.ticks),
            "duration_s": float(self.time[-1] - self.time[0]),
            "bytes_sent": int(self.bytes_sent[-1]),
            "bytes_arrived": int(self.bytes_arrived[-1]),
            "stall_ticks": int(self.stalled.sum()),
            "upgrades_applied": int(self.arrivals_applied.sum()),
            "final_mean_level": float(self.levels[-1].mean()),
            "quality_proxy_final": float(self.quality_proxy[-1]),
            "quality_proxy_mean": float(self.quality_proxy.mean()),
            "quality_proxy_curve": [float(v) for v in self.quality_proxy],
            "threshold_fraction": threshold,
            "time_to_threshold_s": self.time_to_threshold(threshold),
            "popping_total": float(self.popping.sum()),
            "config": self.config,
        }

    CSV_COLUMNS = ("tick,time,gaze_x,gaze_y,cloud_gaze_x,cloud_gaze_y,"
                   "cloud_mode,budget,planned_bytes,backlog,stalled,"
                   "arrivals,bytes_sent,bytes_arrived,mean_level,"
                   "quality_proxy,popping")

    def write_csv(self, path: str) -> None:
        mean_level = self.mean_level()
        with open(path, "w") as fh:
            fh.write("# config: " + json.dumps(self.config, sort_keys=True)
                     + "\n")
            fh.write(self.CSV_COLUMNS + "\n")
            for i in range(self.ticks):
                fh.write(
                    f"{i},{self.time[i]!r},{self.gaze_true[i, 0]!r},"
                    f"{self.gaze_true[i, 1]!r},{self.gaze_cloud[i, 0]!r},"
                    f"{self.gaze_cloud[i, 1]!r},{self.cloud_mode[i]},"
                    f"{self.budget[i]},{self.planned_bytes[i]},"
                    f"{self.backlog[i]},{int(self.stalled[i])},"
                    f"{self.arrivals_applied[i]},{self.bytes_sent[i]},"
                    f"{self.bytes_arrived[i]},{mean_level[i]!r},"
                    f"{self.quality_proxy[i]!r},{self.popping[i]!r}\n")

    def write_summary(self, path: str, threshold: float = 0.5) -> None:
        write_json(path, self.summary(threshold))


def _camera_of(sample: GazeSample) -> Camera:
    return Camera(position=sample.cam_pos, forward=sample.cam_forward,
                  up=sample.cam_up)


def _remaining_mass(values: np.ndarray, levels: np.ndarray) -> float:
    slots = np.arange(values.shape[1])[None, :] > levels[:, None]
    return float(values[slots].sum())


def simulate_session(trace: list[GazeSample], asset: SceneAsset,
                     profile: NetworkProfile, backend,
                     display: DisplayParams,
                     evaluator=None, sim: SimParams = SimParams(),
                     bands: BandSpec | None = None,
                     retina: RetinaParams = RetinaParams(),
                     perception: PerceptionParams = PerceptionParams()
                     ) -> SessionTimeline:
    """Replay a trace through the streaming loop and record everything.

    ``backend`` supplies the planner's sensitivity tables via
    ``table(camera, gaze_state)``; ``evaluator`` scores the quality proxy
    the same way and defaults to the backend (comparisons between planners
    should share one analytic evaluator instead).
    """
    if not trace:
        raise TraceError("cannot simulate an empty trace")
    if evaluator is None:
        evaluator = backend
    states = classify_gaze(trace, threshold=perception.saccade_threshold)
    times = np.array([s.time for s in trace])
    n = len(trace)
    dts = np.empty(n)
    if n > 1:
        dts[:-1] = np.diff(times)
        dts[-1] = dts[-2] if n > 2 else dts[0]
    else:
        dts[0] = 1.0 / TICK_HZ

    uplink = profile.uplink_latency / 1000.0
    rate = profile.bytes_per_second
    edge = LoDState.uniform(asset, sim.initial_level)
    sent = edge.copy()
    wire_until = times[0]
    pending: list[tuple[float, int, Arrival]] = []
    seq = 0

    rec = {name: np.zeros(n, dtype=dtype) for name, dtype in [
        ("budget", np.int64), ("planned_bytes", np.int64),
        ("backlog", np.int64), ("arrivals", np.int64),
        ("bytes_sent", np.int64), ("bytes_arrived", np.int64),
        ("quality", np.float64), ("popping", np.float64)]}
    stalled = np.zeros(n, dtype=bool)
    levels_log = np.zeros((n, asset.unit_count), dtype=np.int16)
    gaze_cloud = np.zeros((n, 2))
    cloud_modes: list[str] = []
    plans: list[UpdatePlan] = []
    events: list[Arrival] = []
    sent_total = 0
    arrived_total = 0

    for i in range(n):
        now = float(times[i])
        cam_true = _camera_of(trace[i])

        # 1) land every packet due by now, oldest first
        due: list[Arrival] = []
        while pending and pending[0][0] <= now:
            due.append(heapq.heappop(pending)[2])
        state_before = edge
        for a in due:
            if int(edge.levels[a.unit]) == a.from_level:
                edge = edge.with_unit(a.unit, a.to_level)
            arrived_total += a.bytes
        rec["arrivals"][i] = len(due)

        if (sim.track_popping and due and states[i].mode == "fixation"
                and np.any(state_before.levels != edge.levels)):
            before = rasterize(asset, state_before, cam_true, display)
            after = rasterize(asset, edge, cam_true, display)
            changed = before.luminance != after.luminance
            if changed.any():
                pop = popping_field(states[i].gaze, before.image(),
                                    after.image(), display, spec=bands,
                                    retina=retina, params=perception)
                rec["popping"][i] = float(pop[changed].sum())

        # 2) cloud side: delayed sample, budget, plan, transmit
        j = int(np.searchsorted(times, now - uplink, side="right")) - 1
        j = max(j, 0)
        cloud_state = states[j]
        gaze_cloud[i] = cloud_state.gaze
        cloud_modes.append(cloud_state.mode)

        backlog = max(0, math.ceil((wire_until - now) * rate))
        rec["backlog"][i] = backlog
        budget = profile.tick_budget(float(dts[i])) - backlog
        rec["budget"][i] = max(budget, 0)
        if backlog > sim.stall_cap_bytes:
            stalled[i] = True
        elif budget > 0:
            table = backend.table(_camera_of(trace[j]), cloud_state)
            plan = plan_update(table, asset, sent, budget)
            if plan.entries:
                start = max(now, wire_until)
                for a in transmit(plan, profile, start):
                    heapq.heappush(pending, (a.time, seq, a))
                    seq += 1
                    events.append(a)
                wire_until = (start + plan.total_bytes * BITS_PER_BYTE
                              / profile.bandwidth)
                sent = apply_plan(sent, plan)
                sent_total += plan.total_bytes
                rec["planned_bytes"][i] = plan.total_bytes
                plans.append(plan)

        # 3) bookkeeping at the true (undelayed) viewpoint
        rec["bytes_sent"][i] = sent_total
        rec["bytes_arrived"][i] = arrived_total
        levels_log[i] = edge.levels
        if i % sim.proxy_every == 0:
            probe = GazeState(gaze=states[i].gaze, mode="fixation", speed=0.0)
            truth = evaluator.table(cam_true, probe)
            rec["quality"][i] = _remaining_mass(truth.values, edge.levels)
        else:
            rec["quality"][i] = rec["quality"][i - 1]

    config = {
        "profile": profile.as_dict(),
        "sim": {"initial_level": sim.initial_level,
                "stall_cap_bytes": sim.stall_cap_bytes,
                "proxy_every": sim.proxy_every,
                "track_popping": sim.track_popping},
        "backend": getattr(backend, "name", type(backend).__name__),
        "display": {"width": display.width, "height": display.height,
                    "ppd": display.pixels_per_degree,
                    "luminance": display.luminance},
        "units": int(asset.unit_count), "levels": int(asset.levels),
        "scene_hash": asset.scene_hash(),
        "ticks": n,
    }
    return SessionTimeline(
        time=times, gaze_true=np.array([s.gaze for s in trace]),
        gaze_cloud=gaze_cloud, cloud_mode=cloud_modes,
        budget=rec["budget"], planned_bytes=rec["planned_bytes"],
        backlog=rec["backlog"], stalled=stalled,
        arrivals_applied=rec["arrivals"], bytes_sent=rec["bytes_sent"],
        bytes_arrived=rec["bytes_arrived"], levels=levels_log,
        quality_proxy=rec["quality"], popping=rec["popping"],
        plans=plans, events=events, config=config)


# -- synthetic traces ----------------------------------------------------------

def fixation_trace(gaze: tuple[float, float], duration: float,
                   camera: Camera = Camera(), hz: float = TICK_HZ
                   ) -> list[GazeSample]:
    """Steady gaze at one screen point, constant camera."""
    count = max(2, int(round(duration * hz)))
    return [GazeSample(time=k / hz, gaze=gaze, cam_pos=camera.position,
                       cam_forward=camera.forward, cam_up=camera.up)
            for k in range(count)]


def sweep_trace(start: tuple[float, float], end: tuple[float, float],
                duration: float, camera: Camera = Camera(),
                hz: float = TICK_HZ) -> list[GazeSample]:
    """Smooth linear gaze sweep; speeds stay below the saccade threshold
    when the sweep covers less than 2 deg per ms of duration."""
    count = max(2, int(round(duration * hz)))
    s = np.asarray(start, dtype=float)
    e = np.asarray(end, dtype=float)
    out = []
    for k in range(count):
        frac = k / (count - 1)
        g = s + (e - s) * frac
        out.append(GazeSample(time=k / hz, gaze=(float(g[0]), float(g[1])),
                              cam_pos=camera.position,
                              cam_forward=camera.forward, cam_up=camera.up))
    return out


def saccade_trace(points: list[tuple[float, float]], dwell: float,
                  camera: Camera = Camera(), hz: float = TICK_HZ
                  ) -> list[GazeSample]:
    """Fixate each point for ``dwell`` seconds with instant jumps between;
    every jump larger than ~2 deg registers as a saccade at 90 Hz."""
    if not points:
        raise TraceError("need at least one fixation point")
    per = max(2, int(round(dwell * hz)))
    out = []
    k = 0
    for p in points:
        for _ in range(per):
            out.append(GazeSample(time=k / hz, gaze=p,
                                  cam_pos=camera.position,
                                  cam_forward=camera.forward,
                                  cam_up=camera.up))
            k += 1
    return out


def synthetic_trace(seed: int, duration: float, display: DisplayParams,
                    camera: Camera = Camera(), hz: float = TICK_HZ
                    ) -> list[GazeSample]:
    """Seeded gaze path mixing smooth pursuits and saccadic jumps.

    Waypoints are drawn inside the central 80% of the viewport; each leg
    is either a pursuit at 15-60 deg/s or a saccade traversing at
    300-500 deg/s (a few samples long, like real saccades) followed by a
    0.2-0.5 s dwell, so the trace exercises both planner modes.  The same
    seed always yields the same trace.
    """
    rng = np.random.default_rng(seed)
    half_w = 0.4 * display.horizontal_fov
    half_h = 0.4 * display.vertical_fov

    def point():
        return (float(rng.uniform(-half_w, half_w)),
                float(rng.uniform(-half_h, half_h)))

    out = []
    gaze = point()
    k = 0
    count = max(2, int(round(duration * hz)))

    def emit(g, ticks):
        nonlocal k
        for _ in range(ticks):
            if k >= count:
                return
            out.append(GazeSample(time=k / hz, gaze=g,
                                  cam_pos=camera.position,
                                  cam_forward=camera.forward,
                                  cam_up=camera.up))
            k += 1

    def glide(target, speed, min_ticks):
        dist = float(np.hypot(target[0] - gaze[0], target[1] - gaze[1]))
        ticks = max(min_ticks, int(round(dist / speed * hz)))
        s = np.asarray(gaze)
        d = np.asarray(target) - s
        for i in range(1, ticks + 1):
            g = s + d * (i / ticks)
            emit((float(g[0]), float(g[1])), 1)
            if k >= count:
                break

    emit(gaze, max(2, int(round(0.2 * hz))))
    while k < count:
        target = point()
        if rng.uniform() < 0.5:
            glide(target, float(rng.uniform(15.0, 60.0)), min_ticks=2)
        else:
            glide(target, float(rng.uniform(300.0, 500.0)), min_ticks=1)
            emit(target, max(2, int(round(rng.uniform(0.2, 0.5) * hz))))
        gaze = target
    return out
