"""Desk-scale experiment pipelines shared by ``scripts/`` and the acceptance tests.

Trained artifacts are cached on disk under ``$PTSAMPLE_CACHE`` (default
``~/.cache/ptsample``), keyed by a hash of the full configuration, so a
second run only re-evaluates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import apsnet, data, tasknets, training
from .geometry import LossConfig
from .training import Metrics, SamplerSpec, TaskTrainConfig, TrainConfig

log = logging.getLogger(__name__)

# bump when a code change invalidates cached checkpoints
CACHE_VERSION = 1


def cache_root() -> Path:
    return Path(os.environ.get("PTSAMPLE_CACHE", Path.home() / ".cache" / "ptsample"))


def _key(kind: str, payload: dict) -> str:
    blob = json.dumps({"v": CACHE_VERSION, "kind": kind, **payload}, sort_keys=True, default=str)
    return f"{kind}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


@dataclass(frozen=True)
class DataSetup:
    families: tuple[str, ...] = ("sphere", "cube", "cylinder", "cone")
    per_class: int = 250
    n: int = 512
    seed: int = 0
    fractions: tuple[float, float, float] = (0.8, 0.0, 0.2)
    scale_jitter: float = 0.2
    rotate_z: bool = True

    def build(self) -> data.Dataset:
        return data.generate_synthetic(self.families, self.per_class, self.n, self.seed,
                                       fractions=self.fractions, scale_jitter=self.scale_jitter,
                                       rotate_z=self.rotate_z)


# 200 train / 50 test clouds per class for classification; the 85/5/10 split for reconstruction
CLASSIFICATION_DATA = DataSetup()
RECONSTRUCTION_DATA = DataSetup(per_class=100, seed=1, fractions=(0.85, 0.05, 0.10))


@dataclass(frozen=True)
class Budget:
    """Epoch counts and learning rates for one desk-scale run."""

    task_epochs: int
    task_lr: float
    sampler_epochs: int
    sampler_lr: float
    joint_epochs: int | None = None


# joint training needs the longer schedule: at 20-40 epochs the LSTM settles into a 2-cycle after ~30 steps
CLASSIFICATION_BUDGET = Budget(task_epochs=10, task_lr=1e-3, sampler_epochs=20, sampler_lr=0.01, joint_epochs=150)
RECONSTRUCTION_BUDGET = Budget(task_epochs=40, task_lr=1e-3, sampler_epochs=40, sampler_lr=0.005)


@dataclass
class Pipeline:
    """One dataset, one frozen task network, and any number of cached samplers."""

    task: str
    setup: DataSetup
    budget: Budget
    dtype: str = "float32"
    ds: data.Dataset = field(init=False, repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ds = self.setup.build()
        self.train = self.ds.subset("train")
        self.test = self.ds.subset("test")
        self._T: tasknets.TaskNetwork | None = None

    @classmethod
    def classification(cls, **kw) -> "Pipeline":
        return cls("classification", CLASSIFICATION_DATA, CLASSIFICATION_BUDGET, **kw)

    @classmethod
    def reconstruction(cls, **kw) -> "Pipeline":
        return cls("reconstruction", RECONSTRUCTION_DATA, RECONSTRUCTION_BUDGET, **kw)

    def _base(self) -> dict:
        return {"task": self.task, "data": asdict(self.setup), "dtype": self.dtype}

    @property
    def T(self) -> tasknets.TaskNetwork:
        if self._T is None:
            cfg = TaskTrainConfig(epochs=self.budget.task_epochs, lr=self.budget.task_lr, dtype=self.dtype)
            path = cache_root() / (_key("task", {**self._base(), "cfg": asdict(cfg)}) + ".apsw")
            if not path.exists() or not Path(str(path) + ".json").exists():
                path.parent.mkdir(parents=True, exist_ok=True)
                t0 = time.perf_counter()
                labels = self.train.labels if self.task == "classification" else None
                T = training.train_task_net(self.train.clouds, labels, self.task, cfg,
                                            num_classes=len(self.ds.class_names))
                self.timings["task"] = time.perf_counter() - t0
                tasknets.save_task(path, T)
            self._T = tasknets.load_task(path, np.dtype(self.dtype))
        return self._T

    def config(self, mode: str = "supervised", m: int = 32, sizes=(8, 16, 32, 64, 128),
               loss: LossConfig | None = None, seed: int = 0) -> TrainConfig:
        epochs = self.budget.sampler_epochs
        if mode == "joint" and self.budget.joint_epochs:
            epochs = self.budget.joint_epochs
        return TrainConfig(task=self.task, mode=mode, m=m, sizes=tuple(sizes), epochs=epochs,
                           lr=self.budget.sampler_lr, loss=loss, seed=seed, dtype=self.dtype)

    def sampler(self, cfg: TrainConfig, on_epoch=None):
        """Trained (or cached) sampler params for ``cfg`` and its training metrics.

        ``on_epoch(epoch, params)`` is only called when training actually runs.
        """
        T = self.T
        key = _key("sampler", {**self._base(), "task_net": T.checksum(), "cfg": cfg.to_dict()})
        path = cache_root() / f"{key}.apsw"
        mpath = cache_root() / f"{key}.csv"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            metrics = Metrics()
            t0 = time.perf_counter()
            clouds = self.train.clouds
            if cfg.mode == "kd":
                # only clouds enter the KD path
                params = training.train_sampler_kd(clouds, T, cfg.m, cfg, metrics, on_epoch)
            else:
                params = training.train_sampler(clouds, self.train.labels, T, cfg, metrics, on_epoch)
            self.timings[key] = time.perf_counter() - t0
            metrics.write_csv(mpath)
            apsnet.save_sampler(path, params)
        return apsnet.load_sampler(path, np.dtype(self.dtype)), mpath

    def evaluate(self, spec: SamplerSpec, sizes) -> dict[int, float]:
        ev = training.evaluate(spec, self.T, self.test.clouds, self.test.labels, sizes)
        return {row[3]: row[4] for row in ev.rows}

    def full_score(self) -> float:
        return training.full_cloud_score(self.T, self.test.clouds, self.test.labels)


def baseline_table(pipe: Pipeline, sizes, methods=("random", "fps", "voxel")) -> dict[str, dict[int, float]]:
    return {m: pipe.evaluate(SamplerSpec(m), sizes) for m in methods}


def with_loss(pipe: Pipeline, **changes) -> LossConfig:
    return replace(LossConfig.for_task(pipe.task), **changes)
