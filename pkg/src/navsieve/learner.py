"""Fully connected network over a normalised depth scan with four output heads,
trained with hand-written backpropagation and Adam."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetStats, EmptyDatasetError, normalize_scan
from .trajectory import TrajectoryConfig

log = logging.getLogger(__name__)

MODEL_MAGIC = "navsieve-model"
MODEL_VERSION = "v1"
DEFAULT_HIDDEN = (256, 128)


class HeadKind(str, enum.Enum):
    REGRESS_ANGLE = "regress-angle"
    REGRESS_ANGLE_GOAL = "regress-angle-goal"
    BEST_ANGLE = "best-angle"
    COLLISION_FREE = "collision-free"

    @property
    def is_regression(self) -> bool:
        return self in (HeadKind.REGRESS_ANGLE, HeadKind.REGRESS_ANGLE_GOAL)

    def output_size(self, angle_count: int) -> int:
        if self.is_regression:
            return 1
        if self is HeadKind.BEST_ANGLE:
            return angle_count
        return 2 * angle_count

    def input_size(self, beam_count: int) -> int:
        return beam_count + (1 if self is HeadKind.REGRESS_ANGLE_GOAL else 0)


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> ModelParams:
        n = len(arrays) // 2
        return cls(list(arrays[:n]), list(arrays[n:]))

    def copy(self) -> ModelParams:
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __eq__(self, other):
        return isinstance(other, ModelParams) and len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class Model:
    head: HeadKind
    params: ModelParams
    stats: DatasetStats
    angle_range: float = 0.4
    angle_count: int = 51
    threshold: float = 4.0

    @property
    def angles(self) -> np.ndarray:
        i = np.arange(self.angle_count)
        return self.angle_range * (2.0 * i / (self.angle_count - 1) - 1.0)


def init_params(sizes, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def architecture(head: HeadKind, beam_count: int = 140, angle_count: int = 51, hidden=DEFAULT_HIDDEN) -> list[int]:
    return [head.input_size(beam_count), *hidden, head.output_size(angle_count)]


# forward / backward --------------------------------------------------------


def _activations(params: ModelParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def _check_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"feature length {x.shape[-1]} != network input {params.weights[0].shape[0]}")
    return x


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def logits(params: ModelParams, features) -> np.ndarray:
    return _activations(params, _check_features(params, features))[-1]


def forward(params: ModelParams, features, head: HeadKind) -> np.ndarray:
    """Head output: angle (regression), class probabilities (best-angle) or
    per-angle positive-class probability (collision-free)."""
    x = _check_features(params, features)
    single = x.ndim == 1
    z = _activations(params, np.atleast_2d(x))[-1]
    if head.is_regression:
        if z.shape[-1] != 1:
            raise ValueError("regression head expects a single output")
        out = z[:, 0]
    elif head is HeadKind.BEST_ANGLE:
        out = _softmax(z)
    else:
        if z.shape[-1] % 2:
            raise ValueError("collision-free head expects an even output width")
        out = _softmax(z.reshape(len(z), -1, 2))[..., 0]
    return out[0] if single else out


def loss_and_gradients(params: ModelParams, features, targets, head: HeadKind):
    """Mean batch loss and gradients (same structure as ``params``).

    Targets: radians for regression, class index for best-angle, boolean
    per-angle matrix for collision-free.
    """
    x = _check_features(params, features)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyDatasetError("loss needs a non-empty batch")
    n = len(x)
    acts = _activations(params, x)
    z = acts[-1]
    targets = np.asarray(targets)

    if head.is_regression:
        err = z[:, 0] - targets
        loss = float(np.mean(err**2))
        dz = (2.0 * err / n)[:, None]
    elif head is HeadKind.BEST_ANGLE:
        logp = _log_softmax(z)
        idx = targets.astype(int)
        loss = float(-np.mean(logp[np.arange(n), idx]))
        dz = np.exp(logp)
        dz[np.arange(n), idx] -= 1.0
        dz /= n
    else:
        pairs = z.reshape(n, -1, 2)
        a = pairs.shape[1]
        logp = _log_softmax(pairs)
        cls = np.where(targets.astype(bool), 0, 1)  # index 0 = non-colliding
        picked = np.take_along_axis(logp, cls[..., None], axis=-1)[..., 0]
        loss = float(-np.mean(picked))
        dpairs = np.exp(logp)
        np.put_along_axis(dpairs, cls[..., None], np.take_along_axis(dpairs, cls[..., None], axis=-1) - 1.0, axis=-1)
        dz = dpairs.reshape(n, -1) / (n * a)

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    delta = dz
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return loss, ModelParams(grad_w, grad_b)


# Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(state: AdamState, params: ModelParams, gradients: ModelParams, learning_rate: float = 1e-3):
    """One bias-corrected Adam step. Returns (new_params, new_state)."""
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), gradients.arrays(), state.first, state.second):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        new_p.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return ModelParams.from_arrays(new_p), AdamState(new_m, new_v, step, b1, b2, state.eps)


# data plumbing -------------------------------------------------------------


def goal_feature(goal_angles, angle_range: float) -> np.ndarray:
    g = np.asarray(goal_angles, dtype=float)
    return np.clip(np.nan_to_num(g, nan=0.0), -angle_range, angle_range) / angle_range


def make_features(scans, stats: DatasetStats, head: HeadKind, goal_angles=None, angle_range: float = 0.4) -> np.ndarray:
    x = normalize_scan(scans, stats)
    if head is HeadKind.REGRESS_ANGLE_GOAL:
        x = np.atleast_2d(x)
        g = np.zeros(len(x)) if goal_angles is None else np.broadcast_to(goal_angles, (len(x),))
        x = np.column_stack([x, goal_feature(g, angle_range)])
    return x


def goal_informed_index(distances: np.ndarray, goal_angles: np.ndarray, angles: np.ndarray, threshold: float) -> np.ndarray:
    """Longest (threshold-capped) clear angle, ties broken toward the goal."""
    capped = np.minimum(distances, threshold)
    best = capped.max(axis=1, keepdims=True)
    tied = capped >= best - 1e-12
    g = np.nan_to_num(goal_angles, nan=0.0)
    gap = np.where(tied, np.abs(angles[None, :] - g[:, None]), np.inf)
    return np.argmin(gap, axis=1)


def make_targets(distances, head: HeadKind, angles: np.ndarray, threshold: float = 4.0, goal_angles=None):
    d = np.atleast_2d(np.asarray(distances, dtype=float))
    if head is HeadKind.COLLISION_FREE:
        return d >= threshold
    if head is HeadKind.BEST_ANGLE:
        return np.argmax(d, axis=1)
    if head is HeadKind.REGRESS_ANGLE:
        return angles[np.argmax(d, axis=1)]
    g = np.zeros(len(d)) if goal_angles is None else np.asarray(goal_angles, dtype=float)
    return angles[goal_informed_index(d, g, angles, threshold)]


# training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 60
    plateau_tolerance: float = 1e-3
    plateau_window: int = 5
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    model: Model
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def _arrays_for(dataset: Dataset, head: HeadKind, stats: DatasetStats):
    tc: TrajectoryConfig = dataset.trajectory
    x = make_features(dataset.scans, stats, head, dataset.goal_angles, tc.angle_range)
    y = make_targets(dataset.distances, head, tc.angles, tc.label_threshold, dataset.goal_angles)
    return x, y


def plateaued(curve: list[float], window: int, tolerance: float) -> bool:
    if len(curve) <= window:
        return False
    old, new = curve[-window - 1], curve[-1]
    return (old - new) / max(abs(old), 1e-12) < tolerance


def train(dataset: Dataset, head: HeadKind | str, config: TrainConfig = TrainConfig(),
          test: Dataset | None = None) -> TrainResult:
    """Mini-batch Adam; stops when the monitored loss (held-out if given)
    improves by less than ``plateau_tolerance`` over ``plateau_window`` epochs."""
    head = HeadKind(head)
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    stats = dataset.stats
    tc = dataset.trajectory
    x, y = _arrays_for(dataset, head, stats)
    xt, yt = _arrays_for(test, head, stats) if test is not None else (None, None)

    params = init_params(architecture(head, dataset.sensor.beam_count, tc.angle_count, config.hidden), config.seed)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(Model(head, params, stats, tc.angle_range, tc.angle_count, tc.label_threshold))
    n = len(x)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(params, x[idx], y[idx], head)
            params, state = adam_update(state, params, grads, config.learning_rate)
            total += loss * len(idx)
        result.train_loss.append(total / n)
        if xt is not None:
            result.test_loss.append(loss_and_gradients(params, xt, yt, head)[0])
        log.info("epoch %d train %.5f test %s", epoch + 1, result.train_loss[-1],
                 f"{result.test_loss[-1]:.5f}" if result.test_loss else "-")
        monitored = result.test_loss if xt is not None else result.train_loss
        if plateaued(monitored, config.plateau_window, config.plateau_tolerance):
            break
    result.model.params = params
    return result


def evaluate(model: Model, dataset: Dataset) -> dict[str, float]:
    """Held-out loss plus a head-appropriate quality figure."""
    x, y = _arrays_for(dataset, model.head, model.stats)
    loss, _ = loss_and_gradients(model.params, x, y, model.head)
    out = forward(model.params, x, model.head)
    metrics = {"loss": loss, "samples": float(len(x))}
    if model.head is HeadKind.COLLISION_FREE:
        metrics["accuracy"] = float(np.mean((out >= 0.5) == y))
    elif model.head is HeadKind.BEST_ANGLE:
        metrics["accuracy"] = float(np.mean(np.argmax(out, axis=1) == y))
    else:
        metrics["rmse"] = float(np.sqrt(np.mean((out - y) ** 2)))
    return metrics


# inference -----------------------------------------------------------------


def predict_confidences(model: Model, scan, stats: DatasetStats | None = None) -> np.ndarray:
    """Per-angle confidence in [0, 1] from a classification head."""
    if model.head.is_regression:
        raise ValueError(f"{model.head.value} head does not produce per-angle confidences")
    x = normalize_scan(scan, stats or model.stats)
    return forward(model.params, x, model.head)


def predict_angle(model: Model, scan, goal_angle: float = 0.0, stats: DatasetStats | None = None) -> float:
    """Departure angle from a regression head, clamped to the trained range."""
    if not model.head.is_regression:
        raise ValueError(f"{model.head.value} head does not regress an angle")
    x = make_features(scan, stats or model.stats, model.head, goal_angle, model.angle_range)
    out = float(np.ravel(forward(model.params, x, model.head))[0])
    return float(np.clip(out, -model.angle_range, model.angle_range))


# model files ---------------------------------------------------------------


class ModelFormatError(ValueError):
    pass


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps_model(model: Model) -> str:
    sizes = ",".join(str(s) for s in model.params.sizes)
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION} head={model.head.value} layers={sizes} "
        f"angle_range={model.angle_range!r} angle_count={model.angle_count} threshold={model.threshold!r}"
    ]
    for w, b in zip(model.params.weights, model.params.biases):
        lines.extend(_row(r) for r in w)
        lines.append(_row(b))
    lines.append("mean " + _row(model.stats.mean))
    lines.append("std " + _row(model.stats.std_dev))
    return "\n".join(lines) + "\n"


def save_model(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model))


def loads_model(text: str) -> Model:
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError("line 1: empty model file")
    header = lines[0].split()
    if len(header) < 2 or header[0] != MODEL_MAGIC or header[1] != MODEL_VERSION:
        raise ModelFormatError(f"line 1: not a {MODEL_MAGIC} {MODEL_VERSION} file")
    try:
        meta = dict(item.split("=", 1) for item in header[2:])
        head = HeadKind(meta["head"])
        sizes = [int(s) for s in meta["layers"].split(",")]
        angle_range = float(meta.get("angle_range", 0.4))
        angle_count = int(meta.get("angle_count", 51))
        threshold = float(meta.get("threshold", 4.0))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"line 1: bad header ({exc})") from exc

    pos = 1
    weights, biases = [], []

    def take(expected: int) -> np.ndarray:
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"line {pos + 1}: unexpected end of file")
        try:
            row = np.array(lines[pos].split(), dtype=float)
        except ValueError as exc:
            raise ModelFormatError(f"line {pos + 1}: {exc}") from exc
        if row.shape != (expected,):
            raise ModelFormatError(f"line {pos + 1}: expected {expected} values, got {row.shape[0]}")
        pos += 1
        return row

    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(np.stack([take(fan_out) for _ in range(fan_in)]))
        biases.append(take(fan_out))

    def keyed(key: str) -> np.ndarray:
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(key + " "):
            raise ModelFormatError(f"line {pos + 1}: expected {key!r} line")
        lines[pos] = lines[pos][len(key) + 1:]
        return take(sizes[0] - (1 if head is HeadKind.REGRESS_ANGLE_GOAL else 0))

    stats = DatasetStats(keyed("mean"), keyed("std"))
    return Model(head, ModelParams(weights, biases), stats, angle_range, angle_count, threshold)


def load_model(path) -> Model:
    return loads_model(Path(path).read_text())
