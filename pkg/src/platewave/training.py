"""Losses, optimiser, learning-rate schedule and the train/evaluate loops.

Localisation regresses the load centre with a loss that behaves like squared
distance far from the target and like an overlap penalty near it.  Detection
is binary classification with cross-entropy on a logit.  At test time every
location is seen through all of its baseline-subtracted variants and the model
outputs are averaged.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models
from .autodiff import Tensor, _sigmoid
from .models import Model, ModelSpec
from .signals import dataset as dsmod
from .signals.dataset import Dataset, DetectionSet

log = logging.getLogger(__name__)

LAMBDA_A0 = 6.70      # mm
FACE_SIDE = 40.0      # mm
OVERLAPS = ("face", "iou")


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite."""


# losses

def square_overlap(delta: np.ndarray, side: float = FACE_SIDE, kind: str = "face") -> np.ndarray:
    """Overlap of two axis-aligned squares whose centres differ by ``delta`` (..., 2).

    ``face`` divides the intersection by one face area, ``iou`` by the union.
    """
    if kind not in OVERLAPS:
        raise ValueError(f"unknown overlap {kind!r}; choose from {OVERLAPS}")
    o = np.clip(side - np.abs(delta), 0.0, None)
    inter = o[..., 0] * o[..., 1]
    if kind == "face":
        return inter / side ** 2
    return inter / (2 * side ** 2 - inter)


def locate_error(pred: np.ndarray, target: np.ndarray, lam: float = LAMBDA_A0,
                 side: float = FACE_SIDE, overlap: str = "face") -> np.ndarray:
    """Per-example loss in mm^2: max(|d|^2, (lam/2)^2) * (1 - A)."""
    delta = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    d2 = (delta * delta).sum(-1)
    return np.maximum(d2, (0.5 * lam) ** 2) * (1.0 - square_overlap(delta, side, overlap))


def locate_loss(pred: Tensor, target, lam: float = LAMBDA_A0, side: float = FACE_SIDE,
                overlap: str = "face") -> Tensor:
    """Batch mean of ``locate_error``, differentiable in ``pred`` (B, 2) or (2,)."""
    target = np.asarray(target, dtype=np.float64)
    delta = pred.data - target
    d2 = (delta * delta).sum(-1)
    floor = (0.5 * lam) ** 2
    far = d2 > floor
    scale = np.maximum(d2, floor)
    o = np.clip(side - np.abs(delta), 0.0, None)
    inter = o[..., 0] * o[..., 1]
    if overlap == "face":
        A = inter / side ** 2
        dA_dinter = np.full_like(inter, 1.0 / side ** 2)
    elif overlap == "iou":
        union = 2 * side ** 2 - inter
        A = inter / union
        dA_dinter = 2 * side ** 2 / union ** 2
    else:
        raise ValueError(f"unknown overlap {overlap!r}; choose from {OVERLAPS}")
    E = scale * (1.0 - A)
    n = E.size

    def backward(g):
        # d(inter)/d(delta_x) = -sign(dx) * o_y while the squares overlap along x
        touch = o > 0
        dinter = np.stack([-np.sign(delta[..., 0]) * touch[..., 0] * o[..., 1],
                           -np.sign(delta[..., 1]) * touch[..., 1] * o[..., 0]], -1)
        dA = (dA_dinter[..., None] * dinter)
        dscale = 2 * delta * far[..., None]
        grad = dscale * (1.0 - A)[..., None] - scale[..., None] * dA
        return (g * grad / n,)
    return Tensor._result(np.array(E.mean()), (pred,), backward)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def detect_loss(logit: Tensor, label) -> Tensor:
    """Mean binary cross-entropy of logits against labels in {0, 1}."""
    y = np.asarray(label, dtype=np.float64)
    z = logit.data
    if z.shape != y.shape:
        raise ValueError(f"logit shape {z.shape} != label shape {y.shape}")
    value = (_softplus(z) - y * z).mean()
    n = z.size
    return Tensor._result(np.array(value), (logit,), lambda g: (g * (_sigmoid(z) - y) / n,))


def binary_cross_entropy(prob: np.ndarray, label: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(label, dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)).mean())


def perplexity(cross_entropy: float) -> float:
    return float(math.exp(cross_entropy))


# schedule

@dataclass(frozen=True)
class OneCycleSchedule:
    """Linear warm-up to a peak rate, then cosine (or linear) descent to a final rate."""
    lr_init: float = 1e-5
    lr_peak: float = 2.5e-3
    lr_final: float = 1e-3
    ramp_epochs: int = 200
    total_epochs: int = 1000
    descent: str = "cosine"

    def __post_init__(self):
        if not 0 <= self.ramp_epochs < self.total_epochs:
            raise ValueError("ramp must be shorter than the schedule")
        if self.descent not in ("cosine", "linear"):
            raise ValueError("descent must be 'cosine' or 'linear'")

    @classmethod
    def for_task(cls, task: str, epochs: int = 1000, descent: str = "cosine", **kw) -> "OneCycleSchedule":
        """Task defaults with the ramp kept at a fifth of the run."""
        final = 1e-3 if task == "locate" else 1e-7
        ramp = max(1, int(round(0.2 * epochs))) if epochs > 1 else 0
        kw.setdefault("lr_final", final)
        return cls(ramp_epochs=ramp, total_epochs=epochs, descent=descent, **kw)

    def lr_at(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch < self.ramp_epochs:
            return self.lr_init + (self.lr_peak - self.lr_init) * epoch / self.ramp_epochs
        span = self.total_epochs - 1 - self.ramp_epochs
        u = 1.0 if span == 0 else (epoch - self.ramp_epochs) / span
        if self.descent == "cosine":
            w = 0.5 * (1 + math.cos(math.pi * u))
        else:
            w = 1.0 - u
        return self.lr_final + (self.lr_peak - self.lr_final) * w


def lr_at(schedule: OneCycleSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)


# optimiser

@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with decoupled weight decay: after the moment step, p <- p * (1 - lr * decay)."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-6):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.state = OptimizerState(0, {k: np.zeros_like(p.data) for k, p in params.items()},
                                    {k: np.zeros_like(p.data) for k, p in params.items()})

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = st.m[k]
            v = st.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data = p.data * (1.0 - lr * self.weight_decay)


# configuration and data

@dataclass
class TrainConfig:
    task: str = "locate"
    epochs: int = 1000
    batch_size: int = 32
    lr_init: float = 1e-5
    lr_peak: float = 2.5e-3
    lr_final: float | None = None          # 1e-3 locate, 1e-7 detect
    descent: str = "cosine"
    weight_decay: float = 1e-6
    split_ratio: float | None = None       # train fraction: 0.8 locate, 0.2 detect
    overlap: str = "face"
    gap_metric: str = "rmse"               # or "mde"
    detect_average: str = "probability"    # or "logit"
    eval_every: int = 1
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.task not in models.TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.overlap not in OVERLAPS:
            raise ValueError(f"unknown overlap {self.overlap!r}")
        if self.gap_metric not in ("rmse", "mde"):
            raise ValueError("gap_metric must be 'rmse' or 'mde'")
        if self.detect_average not in ("probability", "logit"):
            raise ValueError("detect_average must be 'probability' or 'logit'")
        if self.split_ratio is None:
            self.split_ratio = 0.8 if self.task == "locate" else 0.2

    def schedule(self) -> OneCycleSchedule:
        kw = {"lr_init": self.lr_init, "lr_peak": self.lr_peak}
        if self.lr_final is not None:
            kw["lr_final"] = self.lr_final
        return OneCycleSchedule.for_task(self.task, self.epochs, self.descent, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaskArrays:
    """Flattened inputs with targets and the row (location or record) each came from."""
    X: np.ndarray
    y: np.ndarray
    group: np.ndarray

    def __len__(self) -> int:
        return len(self.X)


def task_arrays(data: Dataset | DetectionSet, task: str, ratio: float, seed: int
                ) -> tuple[TaskArrays, TaskArrays, np.ndarray, np.ndarray]:
    """Split by location (or detection record) and expand each side over the baselines."""
    if task == "locate":
        if not isinstance(data, Dataset):
            raise TypeError("localisation needs a Dataset")
        if len(data) < 2 or data.baselines.shape[0] == 0:
            raise ValueError("localisation needs at least two locations and one baseline")
        tr, te = dsmod.split(len(data), ratio, seed)
        return (TaskArrays(*dsmod.localization_arrays(data, tr)),
                TaskArrays(*dsmod.localization_arrays(data, te)), tr, te)
    det = data if isinstance(data, DetectionSet) else dsmod.balance_detection(data, seed)
    tr, te = dsmod.split(len(det), ratio, seed)
    return TaskArrays(*det.inputs(tr)), TaskArrays(*det.inputs(te)), tr, te


# evaluation

def _group_mean(values: np.ndarray, group: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys, inv = np.unique(group, return_inverse=True)
    sums = np.zeros((len(keys),) + values.shape[1:])
    np.add.at(sums, inv, values)
    counts = np.bincount(inv, minlength=len(keys)).reshape((-1,) + (1,) * (values.ndim - 1))
    return keys, sums / counts


def locator_metrics(pred: np.ndarray, target: np.ndarray, overlap: str = "face") -> dict:
    """MDE, variance and standard deviation of distance errors (mm), and RMSE = sqrt(mean loss)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if len(pred) == 0:
        raise ValueError("cannot evaluate on an empty set")
    dist = np.linalg.norm(pred - target, axis=1)
    return {"mde": float(dist.mean()), "var": float(dist.var()), "std": float(dist.std()),
            "rmse": float(math.sqrt(locate_error(pred, target, overlap=overlap).mean())),
            "n": int(len(pred))}


def evaluate_locator(model: Model, arrays: TaskArrays, overlap: str = "face",
                     batch_size: int = 64) -> dict:
    """Metrics on location-level predictions, each averaged over its baseline variants."""
    if len(arrays) == 0:
        raise ValueError("cannot evaluate on an empty set")
    out = model.predict(arrays.X, batch_size)
    _, pred = _group_mean(out, arrays.group)
    _, target = _group_mean(arrays.y, arrays.group)
    return locator_metrics(pred, target, overlap)


def evaluate_detector(model: Model, arrays: TaskArrays, average: str = "probability",
                      batch_size: int = 64) -> dict:
    """Accuracy and perplexity of record-level probabilities averaged over baseline variants."""
    if len(arrays) == 0:
        raise ValueError("cannot evaluate on an empty set")
    logits = model.predict(arrays.X, batch_size)
    if average == "probability":
        _, prob = _group_mean(_sigmoid(logits), arrays.group)
    else:
        _, z = _group_mean(logits, arrays.group)
        prob = _sigmoid(z)
    _, label = _group_mean(arrays.y.astype(np.float64), arrays.group)
    ce = binary_cross_entropy(prob, label)
    return {"accuracy": float(((prob > 0.5) == (label > 0.5)).mean()),
            "cross_entropy": ce, "perplexity": perplexity(ce), "n": int(len(prob))}


def evaluate(model: Model, arrays: TaskArrays, config: TrainConfig) -> dict:
    if model.spec.task == "locate":
        return evaluate_locator(model, arrays, config.overlap)
    return evaluate_detector(model, arrays, config.detect_average)


# training loop

@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    metrics: dict
    train_index: np.ndarray
    test_index: np.ndarray


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def train(model: Model, data: Dataset | DetectionSet, config: TrainConfig,
          out_dir: str | Path | None = None, checkpoint_extra: dict | None = None) -> TrainResult:
    """Train in place and return the history and final metrics.

    Shuffling and dropout draw from RNG streams keyed by ``config.seed``, so a
    run is reproducible bit for bit.  When ``out_dir`` is given the history is
    written there as ``history.jsonl`` along with checkpoints; ``checkpoint_extra``
    is merged into the metadata of the final checkpoint.
    """
    if model.spec.task != config.task:
        raise ValueError(f"model task {model.spec.task!r} != config task {config.task!r}")
    train_set, test_set, tr_idx, te_idx = task_arrays(data, config.task, config.split_ratio, config.seed)
    if train_set.X.shape[-1] != model.spec.input_length:
        raise ValueError(f"data length {train_set.X.shape[-1]} != model input length {model.spec.input_length}")
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    schedule = config.schedule()
    opt = Adam(model.params, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 3])
    dropout_rng = np.random.default_rng([config.seed, 5])
    out = Path(out_dir) if out_dir is not None else None
    hist_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        hist_file = open(out / "history.jsonl", "w")

    def loss_fn(pred, target):
        if config.task == "locate":
            return locate_loss(pred, target, overlap=config.overlap)
        return detect_loss(pred, target)

    history: list[dict] = []
    try:
        for epoch in range(config.epochs):
            lr = schedule.lr_at(epoch)
            order = shuffle_rng.permutation(len(train_set))
            total = 0.0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                opt.zero_grad()
                pred = model.forward(train_set.X[idx], training=True, rng=dropout_rng)
                loss = loss_fn(pred, train_set.y[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, "
                                          f"batch starting {start}, lr {lr:.3g}")
                loss.backward()
                opt.step(lr)
                total += value * len(idx)
            record = {"epoch": epoch, "lr": lr, "train_loss": total / len(train_set)}
            last = epoch == config.epochs - 1
            if len(test_set) and (last or (config.eval_every and (epoch + 1) % config.eval_every == 0)):
                m = evaluate(model, test_set, config)
                if config.task == "locate":
                    record.update(test_loss=m["rmse"] ** 2, test_mde=m["mde"], test_rmse=m["rmse"])
                else:
                    record.update(test_loss=m["cross_entropy"], test_accuracy=m["accuracy"],
                                  test_perplexity=m["perplexity"])
            history.append(record)
            if hist_file is not None:
                hist_file.write(_json_line(record) + "\n")
                hist_file.flush()
            if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                models.save_checkpoint(out / f"checkpoint-{epoch + 1:05d}.pwck", model,
                                       models.rng_state_to_json(shuffle_rng), {"epoch": epoch + 1})
    finally:
        if hist_file is not None:
            hist_file.close()

    metrics = {"train": evaluate(model, train_set, config)}
    if len(test_set):
        metrics["test"] = evaluate(model, test_set, config)
        if config.task == "locate":
            key = config.gap_metric
            metrics["gap"] = metrics["test"][key] - metrics["train"][key]
    if out is not None:
        models.save_checkpoint(out / "final.pwck", model, models.rng_state_to_json(shuffle_rng),
                               {"epoch": config.epochs, "train_config": config.to_dict(),
                                "test_index": te_idx.tolist(), **(checkpoint_extra or {})})
    return TrainResult(model, history, metrics, tr_idx, te_idx)


# time-window ablation

WINDOWS_MS = ((0.07, 0.40), (0.16, 0.40), (0.07, 0.24), (0.16, 0.24))


def ablate_windows(spec: ModelSpec, data: Dataset, config: TrainConfig,
                   windows=WINDOWS_MS) -> list[dict]:
    """Retrain from scratch on each time window and report test metrics per window."""
    if config.task != "locate":
        raise ValueError("the window ablation is defined for localisation")
    rows = []
    for t0, t1 in windows:
        start, stop = data.plate.window_to_samples(t0, t1)
        windowed = data if (start, stop) == (0, data.length) else data.window(start, stop)
        model = models.build(replace(spec, input_length=stop - start))
        result = train(model, windowed, config)
        rows.append({"window_ms": [t0, t1], "samples": [start, stop], **result.metrics["test"],
                     "gap": result.metrics.get("gap")})
        log.info("window %.2f-%.2f ms: MDE %.2f mm", t0, t1, rows[-1]["mde"])
    return rows
