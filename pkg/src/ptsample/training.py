"""Training regimes for task networks and the sampler, plus evaluation and timing."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import apsnet, geometry
from .diffcore import AdamState, ParamStore, Tape, Tensor, adam_step, clip_grad_norm, ops, save_checkpoint
from .errors import InvalidArgument, InvalidState
from .geometry import LossConfig
from .tasknets import (TaskNetwork, classify, init_autoencoder, init_classifier, reconstruct, soft_targets,
                       task_loss_classification, task_loss_reconstruction)

log = logging.getLogger(__name__)

DEFAULT_LR = {"classification": 0.01, "reconstruction": 0.0005}
DEFAULT_SIZES = (8, 16, 32, 64, 128)


@dataclass
class TrainConfig:
    task: str = "classification"
    mode: str = "supervised"
    m: int = 32
    sizes: tuple[int, ...] = DEFAULT_SIZES
    epochs: int = 400
    batch_size: int = 128
    lr: float | None = None
    lr_decay: float = 0.7
    decay_every: int = 20
    loss: LossConfig | None = None
    seed: int = 0
    clip_norm: float | None = 5.0
    kd_temperature: float = 1.0
    dtype: str = "float32"
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.task not in DEFAULT_LR:
            raise InvalidArgument(f"unknown task {self.task!r}")
        if self.mode not in ("supervised", "kd", "joint"):
            raise InvalidArgument(f"unknown training mode {self.mode!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.task]
        if self.loss is None:
            self.loss = LossConfig.for_task(self.task)
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidArgument("epochs, batch_size and lr must be positive")
        self.sizes = tuple(int(c) for c in self.sizes)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d


@dataclass
class TaskTrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.7
    decay_every: int = 20
    seed: int = 0
    n_out: int = 512
    dtype: str = "float32"

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class Metrics:
    """Rows of ``(epoch, split, metric, m, value)``."""

    rows: list[tuple] = field(default_factory=list)

    def add(self, epoch: int, split: str, metric: str, m: int, value: float) -> None:
        self.rows.append((int(epoch), split, metric, int(m), float(value)))

    def get(self, metric: str, m: int | None = None, split: str | None = None) -> list[float]:
        return [r[4] for r in self.rows
                if r[2] == metric and (m is None or r[3] == m) and (split is None or r[1] == split)]

    def extend(self, other: "Metrics") -> None:
        self.rows.extend(other.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "split", "metric", "m", "value"])
            for e, s, name, m, v in self.rows:
                w.writerow([e, s, name, m, repr(v)])

    def summary(self) -> dict:
        """Last recorded value per (split, metric, m)."""
        out: dict = {}
        for e, s, name, m, v in self.rows:
            out.setdefault(s, {}).setdefault(name, {})[str(m)] = v
        return out


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    bs = min(batch_size, n)
    for i in range(0, n, bs):
        yield order[i:i + bs]


def _task_output(T: TaskNetwork, x, train: bool | None = None) -> Tensor:
    return classify(x, T, train) if T.kind == "classification" else reconstruct(x, T, train)


# ---------------------------------------------------------------------------
# task networks

def train_task_net(clouds: np.ndarray, labels: np.ndarray | None, kind: str,
                   cfg: TaskTrainConfig = TaskTrainConfig(), num_classes: int | None = None,
                   metrics: Metrics | None = None) -> TaskNetwork:
    """Pre-train a classifier (needs labels) or an autoencoder; returns it frozen."""
    clouds = np.asarray(clouds)
    if clouds.ndim != 3 or clouds.shape[0] == 0:
        raise InvalidArgument("train_task_net needs a nonempty (N, n, 3) stack of clouds")
    dtype = np.dtype(cfg.dtype)
    if kind == "classification":
        if labels is None:
            raise InvalidArgument("classification pre-training needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        k = int(num_classes if num_classes is not None else labels.max() + 1)
        T = init_classifier(k, seed=cfg.seed, dtype=dtype)
    elif kind == "reconstruction":
        T = init_autoencoder(cfg.n_out, seed=cfg.seed, dtype=dtype)
    else:
        raise InvalidArgument(f"unknown task kind {kind!r}")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    data = clouds.astype(dtype)
    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        total, count = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, rng):
            if len(idx) < 2:
                continue
            x = data[idx]
            with Tape() as tape:
                out = _task_output(T, x, train=True)
                if kind == "classification":
                    loss = task_loss_classification(out, labels[idx])
                else:
                    loss = task_loss_reconstruction(out, x)
                tape.backward(loss)
            adam_step(T.params, state)
            total += float(loss.value) * len(idx)
            count += len(idx)
        if metrics is not None:
            metrics.add(epoch, "train", "task_loss", 0, total / count)
        log.info("task epoch %d loss %.5f", epoch, total / count)
    return T.freeze()


def accuracy(T: TaskNetwork, clouds: np.ndarray, labels: np.ndarray, batch_size: int = 128) -> float:
    clouds = np.asarray(clouds, dtype=T.params.dtype)
    hits = 0
    for i in range(0, len(clouds), batch_size):
        logits = classify(clouds[i:i + batch_size], T).value
        hits += int(np.sum(np.argmax(logits, axis=-1) == labels[i:i + batch_size]))
    return hits / len(clouds)


# ---------------------------------------------------------------------------
# sampler

def kd_targets(clouds: np.ndarray, T: TaskNetwork, temperature: float = 1.0,
               batch_size: int = 128) -> np.ndarray:
    """Teacher outputs on full clouds: class distributions or reconstructions."""
    clouds = np.asarray(clouds, dtype=T.params.dtype)
    outs = []
    for i in range(0, len(clouds), batch_size):
        out = _task_output(T, clouds[i:i + batch_size]).value
        outs.append(soft_targets(out, temperature) if T.kind == "classification" else out)
    return np.concatenate(outs, axis=0)


def sampler_loss(params: ParamStore, T: TaskNetwork, P: np.ndarray, target, sizes: Sequence[int],
                 loss_cfg: LossConfig, temperature: float = 1.0, mode: str = "train",
                 parts: dict | None = None) -> Tensor:
    """Sum over ``sizes`` of task loss + lambda * sampling loss on shared prefixes.

    One unroll to ``max(sizes)`` serves every size. ``target`` is a label
    array, a soft-target array or a target cloud stack depending on the task.
    """
    Q, _ = apsnet.unroll(P, max(sizes), params, mode)
    total = None
    for c in sizes:
        Qc = Q if c == Q.shape[-2] else ops.getitem(Q, (..., slice(0, c), slice(None)))
        out = _task_output(T, Qc)
        if T.kind == "classification":
            task = task_loss_classification(out, target, temperature)
        else:
            task = task_loss_reconstruction(out, target)
        samp = ops.mean(geometry.sampling_loss(Qc, Tensor(np.asarray(P, dtype=params.dtype)), loss_cfg))
        term = ops.add(task, ops.mul(samp, loss_cfg.lam))
        total = term if total is None else ops.add(total, term)
        if parts is not None:
            parts.setdefault("task", {})[c] = float(task.value)
            parts.setdefault("sample", {})[c] = float(samp.value)
    return total


def _check_sizes(sizes: Sequence[int], n: int) -> None:
    if not sizes:
        raise InvalidArgument("sample size set is empty")
    if list(sizes) != sorted(set(sizes)):
        raise InvalidArgument(f"sample sizes must be strictly ascending, got {list(sizes)}")
    if sizes[0] < 1 or sizes[-1] > n:
        raise InvalidArgument(f"sample sizes must lie in [1, {n}], got {list(sizes)}")


def _train_sampler(clouds: np.ndarray, targets: np.ndarray, T: TaskNetwork, sizes: Sequence[int],
                   cfg: TrainConfig, metrics: Metrics | None,
                   on_epoch: Callable[[int, ParamStore], None] | None) -> ParamStore:
    clouds = np.asarray(clouds)
    if clouds.ndim != 3 or clouds.shape[0] == 0:
        raise InvalidArgument("sampler training needs a nonempty (N, n, 3) stack of clouds")
    if not T.frozen:
        raise InvalidState("task network must be frozen before sampler training")
    _check_sizes(sizes, clouds.shape[1])
    dtype = np.dtype(cfg.dtype)
    if T.params.dtype != dtype:
        T = TaskNetwork(T.kind, T.params.astype(dtype), T.num_classes, T.n_out).freeze()
    before = T.checksum()
    params = apsnet.init_sampler(cfg.seed, dtype)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    data = clouds.astype(dtype)
    trainable = [t for _, t in params.trainable()]
    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        sums = {"total": 0.0, "task": 0.0, "sample": 0.0}
        count = 0
        for idx in _batches(len(data), cfg.batch_size, rng):
            if len(idx) < 2:
                continue
            parts: dict = {}
            with Tape() as tape:
                loss = sampler_loss(params, T, data[idx], targets[idx], sizes, cfg.loss,
                                    cfg.kd_temperature, "train", parts)
                tape.backward(loss)
            if cfg.clip_norm:
                clip_grad_norm(trainable, cfg.clip_norm)
            adam_step(params, state)
            k = len(idx)
            sums["total"] += float(loss.value) * k
            sums["task"] += sum(parts["task"].values()) * k
            sums["sample"] += sum(parts["sample"].values()) * k
            count += k
        if metrics is not None:
            for name, v in sums.items():
                metrics.add(epoch, "train", f"{name}_loss", max(sizes), v / count)
            metrics.add(epoch, "train", "lr", 0, state.lr)
        log.info("sampler epoch %d total %.5f", epoch, sums["total"] / count)
        if cfg.checkpoint_dir and (epoch + 1) % cfg.decay_every == 0:
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(cfg.checkpoint_dir) / f"sampler_epoch{epoch + 1:04d}.apsw", params)
        if on_epoch is not None:
            on_epoch(epoch, params)
    if T.checksum() != before:
        raise InvalidState("frozen task network changed during sampler training")
    return params


def train_sampler_supervised(clouds: np.ndarray, labels, T: TaskNetwork, m: int, cfg: TrainConfig,
                             metrics: Metrics | None = None, on_epoch=None) -> ParamStore:
    """Labels are class indices (classification); reconstruction targets the input clouds."""
    targets = np.asarray(clouds) if T.kind == "reconstruction" else np.asarray(labels, dtype=np.int64)
    return _train_sampler(clouds, targets, T, (m,), cfg, metrics, on_epoch)


def train_sampler_kd(clouds: np.ndarray, T: TaskNetwork, m: int, cfg: TrainConfig,
                     metrics: Metrics | None = None, on_epoch=None) -> ParamStore:
    """Self-supervised training against the teacher's own outputs on full clouds.

    Only the clouds are accepted, so no label can reach the loss. Teacher
    outputs are computed once up front.
    """
    targets = kd_targets(clouds, T, cfg.kd_temperature)
    return _train_sampler(clouds, targets, T, (m,), cfg, metrics, on_epoch)


def train_sampler_joint(clouds: np.ndarray, labels, T: TaskNetwork, sizes: Sequence[int], cfg: TrainConfig,
                        metrics: Metrics | None = None, on_epoch=None) -> ParamStore:
    targets = np.asarray(clouds) if T.kind == "reconstruction" else np.asarray(labels, dtype=np.int64)
    return _train_sampler(clouds, targets, T, tuple(sizes), cfg, metrics, on_epoch)


def train_sampler(clouds, labels, T: TaskNetwork, cfg: TrainConfig, metrics: Metrics | None = None,
                  on_epoch=None) -> ParamStore:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "supervised":
        return train_sampler_supervised(clouds, labels, T, cfg.m, cfg, metrics, on_epoch)
    if cfg.mode == "kd":
        return train_sampler_kd(clouds, T, cfg.m, cfg, metrics, on_epoch)
    return train_sampler_joint(clouds, labels, T, cfg.sizes, cfg, metrics, on_epoch)


# ---------------------------------------------------------------------------
# evaluation

METHODS = ("apsnet", "fps", "random", "voxel")


@dataclass
class SamplerSpec:
    """What to evaluate: a baseline by name, or the learned sampler with its params."""

    method: str
    params: ParamStore | None = None
    variant: str = "g"
    fps_start: int = 0
    seed: int = 0
    voxel_cell: float = 0.5

    @property
    def label(self) -> str:
        return f"apsnet-{self.variant}" if self.method == "apsnet" else self.method


def sample_stack(spec: SamplerSpec, clouds: np.ndarray, m: int) -> np.ndarray:
    """Sampled points (B, m, 3) for every cloud of the stack."""
    clouds = np.asarray(clouds)
    n = clouds.shape[1]
    if spec.method == "apsnet":
        if spec.params is None:
            raise InvalidArgument("apsnet evaluation needs sampler params")
        if spec.variant == "m" and m > n:
            raise InvalidArgument(f"matched variant needs m <= n, got m={m}, n={n}")
        Q = apsnet.generate(clouds, m, spec.params)
        if spec.variant == "g":
            return Q
        return np.stack([geometry.match(q, p).take(p) for q, p in zip(Q, clouds.astype(np.float64))])
    if m > n:
        raise InvalidArgument(f"{spec.method} needs m <= n, got m={m}, n={n}")
    out = []
    for i, p in enumerate(clouds.astype(np.float64)):
        if spec.method == "fps":
            sel = geometry.fps(p, m, spec.fps_start)
        elif spec.method == "random":
            sel = geometry.random_sample(p, m, spec.seed + i)
        elif spec.method == "voxel":
            sel = geometry.voxel_sample(p, m, spec.voxel_cell)
        else:
            raise InvalidArgument(f"unknown sampling method {spec.method!r}")
        out.append(sel.take(p))
    return np.stack(out)


def evaluate(spec: SamplerSpec, T: TaskNetwork, clouds: np.ndarray, labels, sizes: Sequence[int],
             split: str = "test", metrics: Metrics | None = None) -> Metrics:
    """Accuracy (classification) or mean NRE (reconstruction) per sample size."""
    metrics = Metrics() if metrics is None else metrics
    clouds = np.asarray(clouds)
    ref = None
    if T.kind == "reconstruction":
        full = clouds.astype(T.params.dtype)
        ref = geometry.chamfer(full, _batched(lambda x: reconstruct(x, T).value, full))
    for m in sizes:
        S = sample_stack(spec, clouds, m).astype(T.params.dtype)
        if T.kind == "classification":
            logits = _batched(lambda x: classify(x, T).value, S)
            acc = float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))
            metrics.add(-1, split, f"{spec.label}:accuracy", m, acc)
        else:
            recon = _batched(lambda x: reconstruct(x, T).value, S)
            num = geometry.chamfer(clouds.astype(T.params.dtype), recon)
            metrics.add(-1, split, f"{spec.label}:nre", m, float(np.mean(num / ref)))
    return metrics


def _batched(fn, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    return np.concatenate([fn(x[i:i + batch_size]) for i in range(0, len(x), batch_size)], axis=0)


def full_cloud_score(T: TaskNetwork, clouds: np.ndarray, labels) -> float:
    if T.kind == "classification":
        return accuracy(T, clouds, np.asarray(labels))
    return 1.0


def bench(params: ParamStore, clouds: np.ndarray, sizes: Sequence[int], repeats: int = 20,
          warmup: int = 3, metrics: Metrics | None = None) -> Metrics:
    """Median per-cloud wall-clock sampling time (seconds) for generate-only and matched output.

    Each timed run generates, then matches; the generate-only time is the
    first stage of the same run, the matched time covers both stages.
    """
    if repeats < 1:
        raise InvalidArgument("repeats must be >= 1")
    metrics = Metrics() if metrics is None else metrics
    clouds = np.asarray(clouds, dtype=params.dtype)
    for m in sizes:
        g_times, m_times = [], []
        for r in range(warmup + repeats):
            p = clouds[r % len(clouds)]
            t0 = time.perf_counter()
            Q, _ = apsnet.unroll(p, m, params, "eval")
            t1 = time.perf_counter()
            if m <= p.shape[0]:
                geometry.match(Q.value, p)
            t2 = time.perf_counter()
            if r >= warmup:
                g_times.append(t1 - t0)
                m_times.append(t2 - t0)
        metrics.add(-1, "bench", "apsnet-g:time_s", m, float(np.median(g_times)))
        if m <= clouds.shape[1]:
            metrics.add(-1, "bench", "apsnet-m:time_s", m, float(np.median(m_times)))
    return metrics


def write_summary(path, metrics: Metrics, extra: dict | None = None) -> None:
    payload = {"metrics": metrics.summary()}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
