"""Command-line driver tying the pipeline together.

Commands
    build      import a mesh (.obj) or heightmap (.pgm) and write the
               level-of-detail scene container plus its manifest
    simulate   replay a gaze trace through the streaming loop; writes
               timeline.csv, summary.json and config.json
    train      fit the sensitivity surrogate on analytic sweeps of
               synthetic capture sequences; writes model.bin, dataset/,
               report.json and config.json
    eval       score a trained model on its held-out sequence; writes
               report.json and slot_mse.csv (timing goes to stdout)
    heatmap    export E / P / fixation-A / saccade-A maps for one trace
               tick as PGM images

Every command writes its fully resolved configuration to config.json
(next to its outputs; build uses <out>.config.json).  Rerunning with
``--config <that file>`` reproduces the outputs byte for byte; the
output location itself is not part of the configuration.  Wall-clock
timings are printed to stdout only, never into output files.

Exit codes
    0  success
    1  unexpected package error
    2  usage or configuration error
    3  argument outside its mathematical domain
    4  scene or asset error
    5  gaze trace error
    6  model file error
    7  dataset error
    8  stale update plan
    9  filesystem error
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .backends import (AnalyticBackend, EccOnlyBackend, NeuralBackend,
                       UniformBackend)
from .configio import read_json, write_json
from .constants import KB, MBPS
from .contrast import BandSpec
from .errors import (AssetError, ConfigError, DatasetError, DomainError,
                     GazestreamError, ModelError, StalenessError, TraceError)
from .imaging import normalized, write_pgm
from .netsim import (PROFILES, NetworkProfile, SimParams, load_profile,
                     simulate_session, synthetic_trace)
from .neural import (TrainParams, check_scene, denormalize_targets,
                     generate_dataset, init_model, load_dataset, load_model,
                     predict, save_dataset, save_model, train)
from .perception import (GazeState, PerceptionParams, adaptive_field,
                         classify_gaze, load_trace, popping_field,
                         static_importance_field)
from .scene import (Camera, LoDState, dolly_cameras, import_heightmap,
                    import_obj, load_scene, rasterize, save_scene)
from .sweep import SceneSweep
from .vision import DisplayParams, RetinaParams

_EXIT_CODES = (
    (ConfigError, 2),
    (DomainError, 3),
    (AssetError, 4),
    (TraceError, 5),
    (ModelError, 6),
    (DatasetError, 7),
    (StalenessError, 8),
)

_DISPLAY_DEFAULTS = {
    "width": 64, "height": 64, "ppd": 4.0, "luminance": 100.0,
}
_PERCEPTION_DEFAULTS = {
    "lam": 3.0, "omega": 10.0, "pedestal": 2.0, "bands": 6,
}

_DEFAULTS = {
    "build": {
        "scene": None, "levels": 4, "base_resolution": 8, "spacing": 1.0,
    },
    "simulate": {
        "scene": None, "trace": None, "duration": 5.0, "seed": 0,
        "profile": "4g", "bandwidth_mbps": None, "latency_ms": None,
        "downlink_ms": None, "packet_kb": None,
        "backend": "analytic", "model": None, "gaze_snap": 0.25,
        "proxy_every": 1, "threshold": 0.5, "initial_level": 0,
        "track_popping": False,
        **_DISPLAY_DEFAULTS, **_PERCEPTION_DEFAULTS,
    },
    "train": {
        "scene": None, "seed": 0, "sequences": 16, "spread": 60.0,
        "duration": 31.0, "rate_hz": 4.0, "holdout": None,
        "epochs": 100, "batch_size": 128, "learning_rate": 1e-3,
        "momentum": 0.9,
        **_DISPLAY_DEFAULTS, **_PERCEPTION_DEFAULTS,
    },
    "eval": {
        "scene": None, "model": None, "dataset": None, "holdout": None,
        "timing_samples": 5,
        **_PERCEPTION_DEFAULTS,
    },
    "heatmap": {
        "scene": None, "trace": None, "duration": 5.0, "seed": 0,
        "tick": 0, "level_before": 0, "level_after": None,
        **_DISPLAY_DEFAULTS, **_PERCEPTION_DEFAULTS,
    },
}


class _Parser(argparse.ArgumentParser):
    """Usage problems raise ConfigError so every path exits through the
    same code table."""

    def error(self, message):
        raise ConfigError(message)


def _add_display_flags(p):
    p.add_argument("--width", type=int, help="display width, pixels")
    p.add_argument("--height", type=int, help="display height, pixels")
    p.add_argument("--ppd", type=float, help="pixels per degree")
    p.add_argument("--luminance", type=float, help="peak luminance, cd/m^2")


def _add_perception_flags(p):
    p.add_argument("--lambda", dest="lam", type=float,
                   help="popping penalty weight during fixation")
    p.add_argument("--omega", type=float, help="Weber denominator pedestal")
    p.add_argument("--pedestal", type=float, help="static importance floor")
    p.add_argument("--bands", type=int, help="number of octave bands")


def build_parser() -> _Parser:
    parser = _Parser(prog="gazestream", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config echoed by a prior run; "
                                        "explicit flags override it")
        p.add_argument("--out", help="output location (default 'out', or "
                                     "GAZESTREAM_OUT)")
        return p

    p = add("build", "import a mesh or heightmap into a scene container")
    p.add_argument("--scene", help="source .obj mesh or .pgm heightmap")
    p.add_argument("--levels", type=int, help="levels in the ladder")
    p.add_argument("--base-resolution", type=int,
                   help="coarsest clustering grid for meshes")
    p.add_argument("--spacing", type=float, help="heightmap grid spacing")

    p = add("simulate", "replay a trace through the streaming loop")
    p.add_argument("--scene", help="scene container from build")
    p.add_argument("--trace", help="gaze trace CSV; omit for a synthetic "
                                   "trace from --seed")
    p.add_argument("--duration", type=float,
                   help="synthetic trace length, seconds")
    p.add_argument("--seed", type=int, help="synthetic trace seed")
    p.add_argument("--profile", help="3g | 4g | 5g or a profile file")
    p.add_argument("--bandwidth-mbps", type=float,
                   help="override profile bandwidth")
    p.add_argument("--latency-ms", type=float,
                   help="override profile uplink latency")
    p.add_argument("--downlink-ms", type=float,
                   help="override profile downlink latency")
    p.add_argument("--packet-kb", type=float,
                   help="override profile packet size")
    p.add_argument("--backend",
                   choices=["analytic", "neural", "uniform", "ecc-only"],
                   help="planner strategy")
    p.add_argument("--model", help="surrogate model for --backend neural")
    p.add_argument("--gaze-snap", type=float,
                   help="fixation table cache cell, degrees")
    p.add_argument("--proxy-every", type=int,
                   help="quality proxy cadence, ticks")
    p.add_argument("--threshold", type=float,
                   help="quality threshold as a fraction of the initial "
                        "proxy")
    p.add_argument("--initial-level", type=int,
                   help="edge starting level for every unit")
    p.add_argument("--track-popping", action=argparse.BooleanOptionalAction,
                   default=None, help="render frames to tally popping")
    _add_display_flags(p)
    _add_perception_flags(p)

    p = add("train", "fit the sensitivity surrogate for one scene")
    p.add_argument("--scene", help="scene container from build")
    p.add_argument("--seed", type=int, help="dataset and init seed")
    p.add_argument("--sequences", type=int, help="capture sequence count")
    p.add_argument("--spread", type=float, help="camera arc, degrees")
    p.add_argument("--duration", type=float,
                   help="seconds of trace per sequence")
    p.add_argument("--rate-hz", type=float, help="dataset sampling rate")
    p.add_argument("--holdout", type=int,
                   help="sequence id held out (default: the last)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    _add_display_flags(p)
    _add_perception_flags(p)

    p = add("eval", "score a trained surrogate against its dataset")
    p.add_argument("--scene", help="scene container from build")
    p.add_argument("--model", help="model file from train")
    p.add_argument("--dataset", help="dataset directory from train")
    p.add_argument("--holdout", type=int,
                   help="sequence id held out (default: the last)")
    p.add_argument("--timing-samples", type=int,
                   help="tables timed for the stdout speedup report")
    _add_perception_flags(p)

    p = add("heatmap", "export perceptual field images for one tick")
    p.add_argument("--scene", help="scene container from build")
    p.add_argument("--trace", help="gaze trace CSV; omit for a synthetic "
                                   "trace from --seed")
    p.add_argument("--duration", type=float,
                   help="synthetic trace length, seconds")
    p.add_argument("--seed", type=int, help="synthetic trace seed")
    p.add_argument("--tick", type=int, help="trace sample to visualize")
    p.add_argument("--level-before", type=int,
                   help="uniform level of the before frame")
    p.add_argument("--level-after", type=int,
                   help="uniform level of the after frame (default: top)")
    _add_display_flags(p)
    _add_perception_flags(p)

    return parser


def _resolve(args) -> tuple[str, dict, str]:
    """Merge explicit flags over config-file values over defaults."""
    command = args.command
    defaults = _DEFAULTS[command]
    cfg = dict(defaults)
    if args.config:
        loaded = read_json(args.config)
        if loaded.get("command", command) != command:
            raise ConfigError(f"{args.config} was written by "
                              f"'{loaded['command']}', not '{command}'")
        unknown = set(loaded) - set(defaults) - {"command"}
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys "
                              f"{sorted(unknown)}")
        cfg.update({k: loaded[k] for k in loaded if k in defaults})
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    out = args.out or os.environ.get("GAZESTREAM_OUT") or "out"
    return command, cfg, out


def _require(cfg, key, flag):
    if not cfg[key]:
        raise ConfigError(f"{flag} is required (flag or config file)")
    return cfg[key]


def _display_of(cfg) -> DisplayParams:
    return DisplayParams(width=int(cfg["width"]), height=int(cfg["height"]),
                         pixels_per_degree=float(cfg["ppd"]),
                         luminance=float(cfg["luminance"]))


def _perception_of(cfg) -> PerceptionParams:
    return PerceptionParams(lambda_popping=float(cfg["lam"]),
                            omega=float(cfg["omega"]),
                            pedestal=float(cfg["pedestal"]))


def _profile_of(cfg) -> NetworkProfile:
    name = cfg["profile"]
    base = PROFILES[name] if name in PROFILES else load_profile(name)
    bw = cfg["bandwidth_mbps"]
    up = cfg["latency_ms"]
    down = cfg["downlink_ms"]
    pkt = cfg["packet_kb"]
    return NetworkProfile(
        bandwidth=bw * MBPS if bw is not None else base.bandwidth,
        uplink_latency=up if up is not None else base.uplink_latency,
        downlink_latency=down if down is not None else base.downlink_latency,
        packet_size=int(pkt * KB) if pkt is not None else base.packet_size,
        name=base.name)


def _backend_of(cfg, asset, sweep):
    kind = cfg["backend"]
    if kind == "analytic":
        return AnalyticBackend(sweep, float(cfg["gaze_snap"]))
    if kind == "neural":
        model = load_model(_require(cfg, "model", "--model"))
        check_scene(model, asset)
        return NeuralBackend(model, sweep)
    if kind == "uniform":
        return UniformBackend(asset)
    if kind == "ecc-only":
        return EccOnlyBackend(sweep, float(cfg["gaze_snap"]))
    raise ConfigError(f"unknown backend {kind!r}")


def _echo_config(path, command, cfg):
    write_json(path, {"command": command, **cfg})


# -- commands ---------------------------------------------------------------------

def cmd_build(cfg, out) -> int:
    src = _require(cfg, "scene", "--scene")
    levels = int(cfg["levels"])
    lower = src.lower()
    if lower.endswith(".obj"):
        asset = import_obj(src, levels,
                           base_resolution=int(cfg["base_resolution"]))
    elif lower.endswith(".pgm"):
        asset = import_heightmap(src, levels, spacing=float(cfg["spacing"]))
    else:
        raise AssetError(f"unsupported scene source {src!r}: "
                         "expected a .obj mesh or .pgm heightmap")
    save_scene(asset, out)
    _echo_config(out + ".config.json", "build", cfg)
    total = int(asset.level_bytes()[-1])
    print(f"wrote {out}: {asset.unit_count} units x {asset.levels} levels, "
          f"{total} bytes at full detail")
    return 0


def cmd_simulate(cfg, out) -> int:
    display = _display_of(cfg)
    params = _perception_of(cfg)
    bands = BandSpec.octaves(display, int(cfg["bands"]))
    asset = load_scene(_require(cfg, "scene", "--scene"))
    trace = (load_trace(cfg["trace"]) if cfg["trace"]
             else synthetic_trace(int(cfg["seed"]), float(cfg["duration"]),
                                  display))
    profile = _profile_of(cfg)
    sweep = SceneSweep(asset, display, bands=bands, params=params)
    backend = _backend_of(cfg, asset, sweep)
    evaluator = (backend if isinstance(backend, AnalyticBackend)
                 else AnalyticBackend(sweep, float(cfg["gaze_snap"])))
    sim = SimParams(initial_level=int(cfg["initial_level"]),
                    proxy_every=int(cfg["proxy_every"]),
                    track_popping=bool(cfg["track_popping"]))
    timeline = simulate_session(trace, asset, profile, backend, display,
                                evaluator=evaluator, sim=sim, bands=bands,
                                perception=params)
    os.makedirs(out, exist_ok=True)
    timeline.write_csv(os.path.join(out, "timeline.csv"))
    timeline.write_summary(os.path.join(out, "summary.json"),
                           threshold=float(cfg["threshold"]))
    _echo_config(os.path.join(out, "config.json"), "simulate", cfg)
    t3 = timeline.time_to_threshold(float(cfg["threshold"]))
    reached = f"{t3:.3f} s" if t3 is not None else "never"
    print(f"{timeline.ticks} ticks on {backend.name}/{profile.name}: "
          f"{int(timeline.bytes_sent[-1])} bytes sent, "
          f"proxy {timeline.quality_proxy[-1]:.4g} "
          f"(threshold reached: {reached}), "
          f"popping {timeline.popping.sum():.4g}")
    return 0


def cmd_train(cfg, out) -> int:
    display = _display_of(cfg)
    params = _perception_of(cfg)
    bands = BandSpec.octaves(display, int(cfg["bands"]))
    asset = load_scene(_require(cfg, "scene", "--scene"))
    count = int(cfg["sequences"])
    seed = int(cfg["seed"])
    cameras = dolly_cameras(asset, count, float(cfg["spread"]))
    traces = [synthetic_trace(seed + s, float(cfg["duration"]), display,
                              camera=cameras[s]) for s in range(count)]
    sweep = SceneSweep(asset, display, bands=bands, params=params,
                       max_cameras=count)
    dataset = generate_dataset(asset, traces, sweep,
                               rate_hz=float(cfg["rate_hz"]), params=params)
    holdout = (int(cfg["holdout"]) if cfg["holdout"] is not None
               else count - 1)
    train_idx, test_idx = dataset.split(holdout)
    model0 = init_model(asset.slot_count, asset.scene_hash(),
                        dataset.bounds, seed=seed)
    model, history = train(
        dataset.features[train_idx], dataset.targets[train_idx], model0,
        TrainParams(epochs=int(cfg["epochs"]),
                    batch_size=int(cfg["batch_size"]),
                    learning_rate=float(cfg["learning_rate"]),
                    momentum=float(cfg["momentum"]), seed=seed),
        holdout=(dataset.features[test_idx], dataset.targets[test_idx]))
    os.makedirs(out, exist_ok=True)
    save_dataset(os.path.join(out, "dataset"), dataset)
    save_model(os.path.join(out, "model.bin"), model)
    write_json(os.path.join(out, "report.json"), {
        "samples": int(dataset.samples),
        "train_samples": int(train_idx.size),
        "holdout_sequence": holdout,
        "holdout_samples": int(test_idx.size),
        "slots": int(model.output_dim),
        "parameters": int(model.parameter_count()),
        "final_train_l1": history["train_l1"][-1],
        "final_holdout_mae": history["holdout_mae"][-1],
        "train_l1": history["train_l1"],
        "holdout_mae": history["holdout_mae"],
        "bounds": list(dataset.bounds),
        "scene_hash": dataset.scene_hash,
    })
    _echo_config(os.path.join(out, "config.json"), "train", cfg)
    print(f"trained on {train_idx.size} samples "
          f"({dataset.samples} total, sequence {holdout} held out): "
          f"train L1 {history['train_l1'][-1]:.5f}, "
          f"holdout MAE {history['holdout_mae'][-1]:.5f}")
    return 0


def _camera_from_features(f) -> Camera:
    fwd = np.array(f[3:6], dtype=np.float64)
    fwd /= np.linalg.norm(fwd)
    up = np.array(f[6:9], dtype=np.float64)
    up -= (up @ fwd) * fwd
    up /= np.linalg.norm(up)
    return Camera(position=(float(f[0]), float(f[1]), float(f[2])),
                  forward=tuple(fwd), up=tuple(up))


def _state_from_features(f, display) -> GazeState:
    gaze = ((float(f[9]) - 0.5) * display.horizontal_fov,
            (float(f[10]) - 0.5) * display.vertical_fov)
    if f[11] > 0.5:
        return GazeState(gaze=gaze, mode="saccade", speed=400.0)
    return GazeState(gaze=gaze, mode="fixation", speed=0.0)


def cmd_eval(cfg, out) -> int:
    model = load_model(_require(cfg, "model", "--model"))
    dataset = load_dataset(_require(cfg, "dataset", "--dataset"))
    asset = load_scene(_require(cfg, "scene", "--scene"))
    check_scene(model, asset)
    if dataset.scene_hash != model.scene_hash:
        raise DatasetError("dataset and model disagree on the scene")
    if tuple(dataset.bounds) != tuple(model.bounds):
        raise DatasetError("dataset and model disagree on bounds")
    holdout = (int(cfg["holdout"]) if cfg["holdout"] is not None
               else int(dataset.sequence.max()))
    _, test_idx = dataset.split(holdout)

    w, h, ppd = dataset.meta["display"]
    display = DisplayParams(width=int(w), height=int(h),
                            pixels_per_degree=float(ppd))
    preds = predict(model, dataset.features[test_idx])
    pred_v = np.stack([
        denormalize_targets(preds[i].astype(np.float64),
                            dataset.pixels[test_idx[i]], model.bounds)
        for i in range(test_idx.size)])
    true_v = np.stack([
        denormalize_targets(dataset.targets[test_idx[i]].astype(np.float64),
                            dataset.pixels[test_idx[i]], model.bounds)
        for i in range(test_idx.size)])
    err = pred_v - true_v
    power = float((true_v ** 2).mean())
    overall = float((err ** 2).mean()) / power if power > 0 \
        else float((err ** 2).mean())

    # per-slot error over the held-out samples
    slot_mse = (err ** 2).mean(axis=0)
    slot_power = (true_v ** 2).mean(axis=0)
    with_power = slot_power > 0
    slot_rel = np.where(with_power, slot_mse / np.where(with_power,
                                                        slot_power, 1.0),
                        slot_mse)

    os.makedirs(out, exist_ok=True)
    units, levels = slot_rel.shape
    with open(os.path.join(out, "slot_mse.csv"), "w") as fh:
        fh.write("unit,level,rel_mse,mean_square_true\n")
        for u in range(units):
            for k in range(levels):
                fh.write(f"{u},{k},{slot_rel[u, k]!r},"
                         f"{slot_power[u, k]!r}\n")
    write_json(os.path.join(out, "report.json"), {
        "holdout_sequence": holdout,
        "holdout_samples": int(test_idx.size),
        "relative_mse": overall,
        "relative_mse_percent": overall * 100.0,
        "worst_slot_relative_mse": float(slot_rel[with_power].max())
        if with_power.any() else 0.0,
        "mean_absolute_error": float(np.abs(preds - dataset.targets[test_idx]
                                            ).mean()),
        "bounds": list(model.bounds),
        "scene_hash": model.scene_hash,
    })
    _echo_config(os.path.join(out, "config.json"), "eval", cfg)

    # timing comparison, stdout only: wall clock must never enter outputs
    params = _perception_of(cfg)
    bands = BandSpec.octaves(display, int(cfg["bands"]))
    sweep = SceneSweep(asset, display, bands=bands, params=params)
    k = min(int(cfg["timing_samples"]), test_idx.size)
    t_analytic = t_neural = 0.0
    for i in range(k):
        feats = dataset.features[test_idx[i]]
        camera = _camera_from_features(feats)
        state = _state_from_features(feats, display)
        sweep.table(camera, state)            # warm the camera cache
        t0 = time.perf_counter()
        sweep.table(camera, state)
        t_analytic += time.perf_counter() - t0
        t0 = time.perf_counter()
        predict(model, feats)
        t_neural += time.perf_counter() - t0
    speedup = t_analytic / t_neural if t_neural > 0 else float("inf")
    print(f"relative MSE {overall * 100.0:.3f}% over {test_idx.size} "
          f"held-out samples (sequence {holdout})")
    print(f"analytic {t_analytic / k * 1e3:.2f} ms/table, surrogate "
          f"{t_neural / k * 1e3:.3f} ms/table, speedup {speedup:.1f}x")
    return 0


def cmd_heatmap(cfg, out) -> int:
    display = _display_of(cfg)
    params = _perception_of(cfg)
    retina = RetinaParams()
    bands = BandSpec.octaves(display, int(cfg["bands"]))
    asset = load_scene(_require(cfg, "scene", "--scene"))
    trace = (load_trace(cfg["trace"]) if cfg["trace"]
             else synthetic_trace(int(cfg["seed"]), float(cfg["duration"]),
                                  display))
    tick = int(cfg["tick"])
    if not 0 <= tick < len(trace):
        raise TraceError(f"tick {tick} outside trace of {len(trace)} samples")
    sample = trace[tick]
    camera = Camera(position=sample.cam_pos, forward=sample.cam_forward,
                    up=sample.cam_up)
    lb = int(cfg["level_before"])
    la = (int(cfg["level_after"]) if cfg["level_after"] is not None
          else asset.levels - 1)
    for lev in (lb, la):
        if not 0 <= lev < asset.levels:
            raise ConfigError(f"level {lev} outside 0..{asset.levels - 1}")
    before = rasterize(asset, LoDState.uniform(asset, lb), camera,
                       display).image()
    after = rasterize(asset, LoDState.uniform(asset, la), camera,
                      display).image()
    gaze = sample.gaze
    e = static_importance_field(gaze, display, retina, params)
    p = popping_field(gaze, before, after, display, bands, retina, params)
    a_fix = adaptive_field(GazeState(gaze, "fixation", 0.0), before, after,
                           display, bands, retina, params).values
    a_sac = adaptive_field(GazeState(gaze, "saccade", 400.0), before, after,
                           display, bands, retina, params).values
    os.makedirs(out, exist_ok=True)
    for name, field in (("e", e), ("p", p), ("a_fixation", a_fix),
                        ("a_saccade", a_sac)):
        write_pgm(os.path.join(out, name + ".pgm"), normalized(field))
    _echo_config(os.path.join(out, "config.json"), "heatmap", cfg)
    print(f"wrote e/p/a_fixation/a_saccade maps for tick {tick} "
          f"(levels {lb} -> {la}, gaze {gaze[0]:.2f},{gaze[1]:.2f} deg)")
    return 0


_HANDLERS = {
    "build": cmd_build,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        command, cfg, out = _resolve(args)
        return _HANDLERS[command](cfg, out)
    except GazestreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                return code
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 9


if __name__ == "__main__":
    sys.exit(main())
