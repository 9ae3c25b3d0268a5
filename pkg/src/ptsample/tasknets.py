"""Downstream task networks: a small PointNet classifier and a point-cloud autoencoder."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import ParamStore, Tensor, ops, read_checkpoint, save_checkpoint
from .diffcore.layers import add_batchnorm, add_linear, add_shared_mlp, batchnorm, linear, shared_mlp
from .errors import InvalidArgument, InvalidState
from .geometry import chamfer, coords

ENCODER_WIDTHS = (64, 128, 128)
HEAD_WIDTH = 64
DECODER_WIDTH = 256


@dataclass
class TaskNetwork:
    kind: str
    params: ParamStore
    num_classes: int = 0
    n_out: int = 0
    frozen: bool = False

    def freeze(self) -> "TaskNetwork":
        self.params.freeze()
        self.frozen = True
        return self

    def checksum(self) -> str:
        return self.params.checksum()

    def metadata(self) -> dict:
        return {"kind": self.kind, "num_classes": self.num_classes, "n_out": self.n_out}


def init_classifier(num_classes: int, seed: int = 0, dtype=np.float64) -> TaskNetwork:
    if num_classes < 2:
        raise InvalidArgument("a classifier needs at least 2 classes")
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    add_shared_mlp(store, "enc", 3, ENCODER_WIDTHS, rng)
    add_linear(store, "head.0", ENCODER_WIDTHS[-1], HEAD_WIDTH, rng)
    add_batchnorm(store, "head.bn0", HEAD_WIDTH)
    add_linear(store, "head.1", HEAD_WIDTH, num_classes, rng)
    return TaskNetwork("classification", store, num_classes=num_classes)


def init_autoencoder(n_out: int = 512, seed: int = 0, dtype=np.float64) -> TaskNetwork:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    add_shared_mlp(store, "enc", 3, ENCODER_WIDTHS, rng)
    add_linear(store, "dec.0", ENCODER_WIDTHS[-1], DECODER_WIDTH, rng)
    add_linear(store, "dec.1", DECODER_WIDTH, 3 * n_out, rng)
    return TaskNetwork("reconstruction", store, n_out=n_out)


def _input(cloud, T: TaskNetwork) -> Tensor:
    x = coords(cloud)
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=T.params.dtype))
    return x


def _train_mode(T: TaskNetwork, train: bool | None) -> bool:
    if T.frozen:
        return False
    return bool(train)


def encode(cloud, T: TaskNetwork, train: bool | None = None) -> Tensor:
    x = _input(cloud, T)
    h = shared_mlp(T.params, "enc", x, ENCODER_WIDTHS, _train_mode(T, train))
    return ops.max_pool_points(h)


def classify(cloud, T: TaskNetwork, train: bool | None = None) -> Tensor:
    """Logits (..., num_classes). A frozen network always runs in eval mode."""
    if T.kind != "classification":
        raise InvalidState(f"classify called on a {T.kind} network")
    train = _train_mode(T, train)
    g = encode(cloud, T, train)
    h = ops.relu(batchnorm(T.params, "head.bn0", linear(T.params, "head.0", g), train))
    return linear(T.params, "head.1", h)


def reconstruct(cloud, T: TaskNetwork, train: bool | None = None) -> Tensor:
    """Reconstructed cloud (..., n_out, 3)."""
    if T.kind != "reconstruction":
        raise InvalidState(f"reconstruct called on a {T.kind} network")
    z = encode(cloud, T, train)
    h = ops.relu(linear(T.params, "dec.0", z))
    out = linear(T.params, "dec.1", h)
    return ops.reshape(out, out.shape[:-1] + (T.n_out, 3))


def soft_targets(logits, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits.value if isinstance(logits, Tensor) else logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def task_loss_classification(logits: Tensor, target, temperature: float = 1.0) -> Tensor:
    """Mean cross-entropy over the batch.

    Integer targets are class indices; float targets of shape (..., k) are
    teacher distributions, compared against ``softmax(logits / temperature)``.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(np.asarray(logits, dtype=np.float64))
    k = logits.shape[-1]
    tgt = np.asarray(target)
    if tgt.dtype.kind in "iu":
        if tgt.shape != logits.shape[:-1]:
            raise InvalidArgument(f"label shape {tgt.shape} does not match logits {logits.shape}")
        if np.any(tgt < 0) or np.any(tgt >= k):
            raise InvalidArgument(f"class index outside [0, {k})")
        onehot = np.zeros(logits.shape, dtype=logits.dtype)
        np.put_along_axis(onehot, tgt[..., None].astype(np.int64), 1.0, axis=-1)
        z = logits
    else:
        if tgt.shape != logits.shape:
            raise InvalidArgument(f"soft target shape {tgt.shape} does not match logits {logits.shape}")
        onehot = tgt.astype(logits.dtype)
        z = ops.mul(logits, 1.0 / temperature) if temperature != 1.0 else logits
    nll = ops.mul(ops.sum(ops.mul(ops.log_softmax(z), onehot), axis=-1), -1.0)
    return ops.mean(nll)


def task_loss_reconstruction(recon, target) -> Tensor:
    """Mean Chamfer distance between reconstructions and targets."""
    out = chamfer(recon, target)
    if isinstance(out, Tensor):
        return ops.mean(out) if out.ndim else out
    return Tensor(np.mean(out))


def nre(sampled, P, T: TaskNetwork, reference=None):
    """CD(P, T(sampled)) / CD(P, T(P)) per cloud."""
    p = np.asarray(coords(P), dtype=T.params.dtype)
    q = np.asarray(coords(sampled), dtype=T.params.dtype)
    num = chamfer(p, reconstruct(q, T).value)
    den = chamfer(p, reconstruct(p, T).value) if reference is None else reference
    if np.any(np.asarray(den) <= 0):
        raise InvalidState("autoencoder reproduces P exactly; NRE is undefined")
    return num / den


def save_task(path, T: TaskNetwork) -> None:
    save_checkpoint(path, T.params)
    Path(str(path) + ".json").write_text(json.dumps(T.metadata()) + "\n")


def load_task(path, dtype=np.float64) -> TaskNetwork:
    path = Path(path)
    side = Path(str(path) + ".json")
    if not path.exists():
        raise FileNotFoundError(f"task checkpoint not found: {path}")
    if not side.exists():
        raise FileNotFoundError(f"task checkpoint sidecar not found: {side}")
    meta = json.loads(side.read_text())
    if meta["kind"] == "classification":
        T = init_classifier(meta["num_classes"], dtype=dtype)
    elif meta["kind"] == "reconstruction":
        T = init_autoencoder(meta["n_out"], dtype=dtype)
    else:
        raise InvalidArgument(f"unknown task kind {meta['kind']!r} in {side}")
    arrays = read_checkpoint(path)
    if list(arrays) != list(T.params):
        raise InvalidArgument(f"{path} does not match a {meta['kind']} network")
    T.params.restore({k: v.astype(dtype) for k, v in arrays.items()})
    return T.freeze()
