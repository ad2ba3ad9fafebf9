"""MLP surrogate for per-slot sensitivities.

The analytic sweep renders and filters images to score every (unit, level)
slot; the surrogate replaces that with a single forward pass so a server
can plan updates without rendering anything.  One network is trained per
scene: inputs are the 12 numbers a streaming server knows without pixels
(camera pose, gaze, saccade flag), outputs are all slot sensitivities,
normalized per slot by footprint pixel count and squashed into [0, 1]
with the analytic importance bounds so a sigmoid head can represent them.

Architecture and recipe: hidden layers (100, 1000, 1000) with rectified
linear activations, sigmoid output, L1 loss, plain SGD with momentum 0.9,
learning rate 1e-3, batch size 128, 100 epochs.  Weights initialize from
a fan-in-scaled uniform distribution, seeded, so training is reproducible
bit for bit.

Model files are a small versioned binary (layer sizes, float32 row-major
weights, the scene hash, and the normalization bounds); datasets are flat
binary tensors next to a JSON manifest.  Both formats live entirely in
this module.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .configio import write_json
from .errors import DatasetError, ModelError
from .perception import (GazeSample, GazeState, PerceptionParams,
                         classify_gaze, importance_bounds)
from .scene import Camera, SceneAsset
from .scheduler import UnitSensitivity
from .vision import DisplayParams

HIDDEN_SIZES = (100, 1000, 1000)
FEATURE_DIM = 12

MODEL_MAGIC = b"GZNN"
MODEL_VERSION = 1
DATASET_MANIFEST = "manifest.json"


# -- features -------------------------------------------------------------------

def _pack_features(pos, forward, up, gaze, saccade: bool,
                   display: DisplayParams) -> np.ndarray:
    gx = gaze[0] / display.horizontal_fov + 0.5
    gy = gaze[1] / display.vertical_fov + 0.5
    return np.array([*pos, *forward, *up, gx, gy,
                     1.0 if saccade else 0.0], dtype=np.float64)


def featurize(sample: GazeSample, state: GazeState,
              display: DisplayParams) -> np.ndarray:
    """Pack one trace sample into the 12-component input vector.

    Component order: camera position xyz, camera forward xyz, camera up
    xyz, gaze mapped to [0,1]^2 by the viewport extent, saccade flag.
    """
    return _pack_features(sample.cam_pos, sample.cam_forward, sample.cam_up,
                          sample.gaze, state.mode == "saccade", display)


def features_from(camera: Camera, state: GazeState,
                  display: DisplayParams) -> np.ndarray:
    """Same packing as featurize for a camera object plus gaze state."""
    return _pack_features(camera.position, camera.forward, camera.up,
                          state.gaze, state.mode == "saccade", display)


# -- target normalization ---------------------------------------------------------

def normalize_targets(table: UnitSensitivity,
                      bounds: tuple[float, float]) -> np.ndarray:
    """Flatten a slot table into per-slot [0,1] training targets.

    Each slot's sensitivity is divided by its footprint pixel count, then
    mapped affinely from the analytic (lower, upper) per-pixel importance
    bounds onto [0,1].  Slots with no footprint map to exactly 0.
    """
    lo, hi = bounds
    if not hi > lo:
        raise DatasetError("normalization bounds must satisfy lower < upper")
    px = np.maximum(table.pixels, 1)
    t = (table.values / px - lo) / (hi - lo)
    t = np.where(table.pixels > 0, t, 0.0)
    return t.reshape(-1)


def denormalize_targets(flat: np.ndarray, pixels: np.ndarray,
                        bounds: tuple[float, float]) -> np.ndarray:
    """Exact inverse of normalize_targets given the slot pixel counts."""
    lo, hi = bounds
    t = np.asarray(flat, dtype=np.float64).reshape(pixels.shape)
    values = (t * (hi - lo) + lo) * np.maximum(pixels, 1)
    return np.where(pixels > 0, values, 0.0)


# -- model ----------------------------------------------------------------------

@dataclass(frozen=True)
class MlpModel:
    """Fully connected network with ReLU hidden layers and a sigmoid head."""

    weights: tuple[np.ndarray, ...]   # each (fan_in, fan_out) float32
    biases: tuple[np.ndarray, ...]    # each (fan_out,) float32
    scene_hash: str
    bounds: tuple[float, float]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ModelError("layer shape mismatch")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ModelError("consecutive layers disagree on width")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],
                *(w.shape[1] for w in self.weights))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(weights=tuple(w.astype(dtype) for w in self.weights),
                        biases=tuple(b.astype(dtype) for b in self.biases),
                        scene_hash=self.scene_hash, bounds=self.bounds)


def init_model(output_dim: int, scene_hash: str, bounds: tuple[float, float],
               seed: int = 0, hidden: tuple[int, ...] = HIDDEN_SIZES,
               input_dim: int = FEATURE_DIM) -> MlpModel:
    """Seeded uniform fan-in initialization: U(-1/sqrt(n_in), 1/sqrt(n_in))."""
    rng = np.random.default_rng(seed)
    sizes = (input_dim, *hidden, output_dim)
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        scale = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-scale, scale,
                                   size=(n_in, n_out)).astype(np.float32))
        biases.append(rng.uniform(-scale, scale,
                                  size=n_out).astype(np.float32))
    return MlpModel(weights=tuple(weights), biases=tuple(biases),
                    scene_hash=scene_hash, bounds=bounds)


def _forward(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer; last entry is the sigmoid output."""
    acts = [x]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        if i == last:
            acts.append(1.0 / (1.0 + np.exp(-z)))
        else:
            acts.append(np.maximum(z, 0.0))
    return acts


def predict(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Forward pass; accepts one feature vector or a batch."""
    x = np.asarray(features, dtype=model.weights[0].dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ModelError(f"feature dimension {x.shape[1]} does not match "
                         f"model input {model.input_dim}")
    out = _forward(model, x)[-1]
    return out[0] if single else out


def _l1_gradients(model: MlpModel, x: np.ndarray, t: np.ndarray):
    """Per-sample L1 loss (summed over slots, batch-averaged) and its
    gradients.  Summing over the output keeps the gradient scale
    independent of the slot count, so one learning rate works for any
    scene size."""
    acts = _forward(model, x)
    out = acts[-1]
    diff = out - t
    loss = float(np.abs(diff).sum(axis=1).mean())
    # d|e|/de through the sigmoid, averaged over the batch
    delta = np.sign(diff) / diff.shape[0]
    delta = delta * out * (1.0 - out)
    grads_w, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    grads_w.reverse()
    grads_b.reverse()
    return loss, grads_w, grads_b


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0


def train(features: np.ndarray, targets: np.ndarray, model: MlpModel,
          params: TrainParams = TrainParams(),
          holdout: tuple[np.ndarray, np.ndarray] | None = None):
    """SGD-with-momentum training loop.

    Returns the trained model and a history dict with the per-epoch mean
    L1 loss (and held-out mean absolute error when a holdout is given).
    Shuffling is seeded, so identical inputs give identical models.
    """
    x = np.asarray(features, dtype=np.float32)
    t = np.asarray(targets, dtype=np.float32)
    if x.ndim != 2 or t.ndim != 2 or x.shape[0] != t.shape[0]:
        raise DatasetError("features and targets must be matching 2-D arrays")
    if x.shape[0] == 0:
        raise DatasetError("cannot train on an empty dataset")
    if x.shape[1] != model.input_dim or t.shape[1] != model.output_dim:
        raise DatasetError("dataset dimensions do not match the model")

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    rng = np.random.default_rng(params.seed)
    history = {"train_l1": [], "holdout_mae": []}
    current = model

    for _ in range(params.epochs):
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        batches = 0
        for a in range(0, x.shape[0], params.batch_size):
            idx = order[a:a + params.batch_size]
            current = MlpModel(weights=tuple(weights), biases=tuple(biases),
                               scene_hash=model.scene_hash,
                               bounds=model.bounds)
            loss, gw, gb = _l1_gradients(current, x[idx], t[idx])
            epoch_loss += loss
            batches += 1
            for i in range(len(weights)):
                vel_w[i] = params.momentum * vel_w[i] \
                    - params.learning_rate * gw[i]
                vel_b[i] = params.momentum * vel_b[i] \
                    - params.learning_rate * gb[i]
                weights[i] += vel_w[i]
                biases[i] += vel_b[i]
        history["train_l1"].append(epoch_loss / batches)
        final = MlpModel(weights=tuple(weights), biases=tuple(biases),
                         scene_hash=model.scene_hash, bounds=model.bounds)
        if holdout is not None:
            pred = predict(final, holdout[0].astype(np.float32))
            history["holdout_mae"].append(
                float(np.abs(pred - holdout[1]).mean()))
        current = final
    return current, history


def gradient_check(model: MlpModel, features: np.ndarray,
                   targets: np.ndarray, probes: int = 10,
                   eps: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference
    gradients on randomly probed parameters, in float64."""
    m64 = model.astype(np.float64)
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    _, gw, gb = _l1_gradients(m64, x, t)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_with(weights, biases):
        probe = MlpModel(weights=tuple(weights), biases=tuple(biases),
                         scene_hash=model.scene_hash, bounds=model.bounds)
        out = _forward(probe, x)[-1]
        return float(np.abs(out - t).sum(axis=1).mean())

    for _ in range(probes):
        layer = int(rng.integers(0, len(m64.weights)))
        use_bias = bool(rng.integers(0, 2))
        arr = m64.biases[layer] if use_bias else m64.weights[layer]
        flat = int(rng.integers(0, arr.size))
        analytic = (gb if use_bias else gw)[layer].reshape(-1)[flat]

        def perturbed(sign):
            ws = [w.copy() for w in m64.weights]
            bs = [b.copy() for b in m64.biases]
            target = bs[layer] if use_bias else ws[layer]
            target.reshape(-1)[flat] += sign * eps
            return loss_with(ws, bs)

        numeric = (perturbed(+1) - perturbed(-1)) / (2 * eps)
        scale = max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def relative_mse(predicted: np.ndarray, reference: np.ndarray) -> float:
    """Mean squared error normalized by the reference signal power."""
    ref = np.asarray(reference, dtype=np.float64)
    err = np.asarray(predicted, dtype=np.float64) - ref
    power = float((ref ** 2).mean())
    if power == 0.0:
        return float((err ** 2).mean())
    return float((err ** 2).mean()) / power


# -- model file -------------------------------------------------------------------

def save_model(path: str, model: MlpModel) -> None:
    """Versioned little-endian binary: sizes, bounds, scene hash, weights."""
    sizes = model.sizes
    hash_bytes = model.scene_hash.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<dd", *model.bounds))
        fh.write(struct.pack("<I", len(hash_bytes)))
        fh.write(hash_bytes)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path: str) -> MlpModel:
    if not os.path.isfile(path):
        raise ModelError(f"model file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MODEL_MAGIC:
        raise ModelError(f"{path}: not a model file")
    version, n_sizes = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {version}")
    off = 12
    sizes = struct.unpack_from(f"<{n_sizes}I", raw, off)
    off += 4 * n_sizes
    lo, hi = struct.unpack_from("<dd", raw, off)
    off += 16
    (hash_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    scene_hash = raw[off:off + hash_len].decode("ascii")
    off += hash_len
    expected = off + 4 * sum(n_in * n_out + n_out
                             for n_in, n_out in zip(sizes, sizes[1:]))
    if len(raw) != expected:
        raise ModelError(f"{path}: expected {expected} bytes, got {len(raw)}")
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        w = np.frombuffer(raw, dtype="<f4", count=n_in * n_out, offset=off)
        off += 4 * n_in * n_out
        b = np.frombuffer(raw, dtype="<f4", count=n_out, offset=off)
        off += 4 * n_out
        weights.append(w.reshape(n_in, n_out).copy())
        biases.append(b.copy())
    return MlpModel(weights=tuple(weights), biases=tuple(biases),
                    scene_hash=scene_hash, bounds=(lo, hi))


def check_scene(model: MlpModel, asset: SceneAsset) -> None:
    """Refuse to use a model trained for a different scene."""
    if model.scene_hash != asset.scene_hash():
        raise ModelError("model was trained for a different scene "
                         f"({model.scene_hash[:12]}... vs "
                         f"{asset.scene_hash()[:12]}...)")
    if model.output_dim != asset.slot_count:
        raise ModelError("model output does not match the scene's slots")


# -- datasets ---------------------------------------------------------------------

@dataclass
class TrainingSet:
    """Feature/target tensors plus the metadata needed to reuse them."""

    features: np.ndarray      # (N, 12) float32
    targets: np.ndarray       # (N, slots) float32 in [0, 1]
    sequence: np.ndarray      # (N,) int32 source-trace id
    pixels: np.ndarray        # (N, units, levels) int32 footprint sizes
    scene_hash: str
    bounds: tuple[float, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.features.shape[0]
        if self.targets.shape[0] != n or self.sequence.shape[0] != n \
                or self.pixels.shape[0] != n:
            raise DatasetError("dataset tensors disagree on sample count")
        if n and (self.targets.min() < 0.0 or self.targets.max() > 1.0):
            raise DatasetError("targets must lie in [0, 1]")

    @property
    def samples(self) -> int:
        return self.features.shape[0]

    def split(self, holdout_sequence: int):
        """(train_idx, test_idx) sample indices; the holdout sequence is
        the test side, everything else trains."""
        test = self.sequence == holdout_sequence
        if not test.any() or test.all():
            raise DatasetError(f"holdout sequence {holdout_sequence} would "
                               "leave an empty split")
        return np.flatnonzero(~test), np.flatnonzero(test)


def generate_dataset(asset: SceneAsset, traces: list[list[GazeSample]],
                     sweep, rate_hz: float = 4.0,
                     params: PerceptionParams = PerceptionParams()
                     ) -> TrainingSet:
    """Sample traces at a fixed rate and score every slot analytically.

    ``sweep`` is the analytic table source (a SceneSweep built for the
    same asset); each sampled frame contributes one (features, targets)
    pair labeled with its trace index for sequence-based splits.
    """
    if not traces:
        raise DatasetError("no traces given")
    if sweep.asset is not asset and sweep.asset.scene_hash() != asset.scene_hash():
        raise DatasetError("sweep was built for a different asset")
    display = sweep.display
    bounds = importance_bounds(sweep.spec, display, sweep.retina, sweep.params)
    feats, targs, seq_ids, pix = [], [], [], []
    for s, trace in enumerate(traces):
        states = classify_gaze(trace, threshold=params.saccade_threshold)
        times = np.array([smp.time for smp in trace])
        probe_times = np.arange(times[0], times[-1] + 0.5 / rate_hz,
                                1.0 / rate_hz)
        picks = np.unique(np.searchsorted(times, probe_times, side="left")
                          .clip(0, len(trace) - 1))
        for i in picks:
            sample, state = trace[i], states[i]
            camera = _sample_camera(sample)
            table = sweep.table(camera, state)
            feats.append(featurize(sample, state, display))
            targs.append(normalize_targets(table, bounds))
            seq_ids.append(s)
            pix.append(table.pixels)
    return TrainingSet(
        features=np.array(feats, dtype=np.float32),
        targets=np.array(targs, dtype=np.float32),
        sequence=np.array(seq_ids, dtype=np.int32),
        pixels=np.array(pix, dtype=np.int32),
        scene_hash=asset.scene_hash(), bounds=bounds,
        meta={"rate_hz": rate_hz, "traces": len(traces),
              "display": [display.width, display.height,
                          display.pixels_per_degree]})


def _sample_camera(sample: GazeSample) -> Camera:
    return Camera(position=sample.cam_pos, forward=sample.cam_forward,
                  up=sample.cam_up)


def save_dataset(dirpath: str, ts: TrainingSet) -> None:
    """Flat little-endian tensors plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    tensors = {
        "features.f32": np.ascontiguousarray(ts.features, dtype="<f4"),
        "targets.f32": np.ascontiguousarray(ts.targets, dtype="<f4"),
        "sequence.i32": np.ascontiguousarray(ts.sequence, dtype="<i4"),
        "pixels.i32": np.ascontiguousarray(ts.pixels, dtype="<i4"),
    }
    for name, arr in tensors.items():
        with open(os.path.join(dirpath, name), "wb") as fh:
            fh.write(arr.tobytes())
    write_json(os.path.join(dirpath, DATASET_MANIFEST), {
        "samples": int(ts.samples),
        "feature_dim": int(ts.features.shape[1]),
        "slots": int(ts.targets.shape[1]),
        "pixels_shape": list(ts.pixels.shape),
        "scene_hash": ts.scene_hash,
        "bounds": list(ts.bounds),
        "meta": ts.meta,
        "byte_order": "little",
    })


def load_dataset(dirpath: str) -> TrainingSet:
    manifest_path = os.path.join(dirpath, DATASET_MANIFEST)
    if not os.path.isfile(manifest_path):
        raise DatasetError(f"no dataset manifest in {dirpath}")
    with open(manifest_path) as fh:
        man = json.load(fh)

    def tensor(name, dtype, shape):
        path = os.path.join(dirpath, name)
        if not os.path.isfile(path):
            raise DatasetError(f"dataset tensor missing: {path}")
        data = np.fromfile(path, dtype=dtype)
        try:
            return data.reshape(shape)
        except ValueError as exc:
            raise DatasetError(f"{path}: wrong element count") from exc

    n, d = man["samples"], man["feature_dim"]
    slots = man["slots"]
    return TrainingSet(
        features=tensor("features.f32", "<f4", (n, d)),
        targets=tensor("targets.f32", "<f4", (n, slots)),
        sequence=tensor("sequence.i32", "<i4", (n,)),
        pixels=tensor("pixels.i32", "<i4", tuple(man["pixels_shape"])),
        scene_hash=man["scene_hash"], bounds=tuple(man["bounds"]),
        meta=man.get("meta", {}))
