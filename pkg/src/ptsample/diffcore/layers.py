"""Parameter initialisers and small layer helpers built on ``ops``."""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParamStore
from .tensor import Tensor


def add_linear(store: ParamStore, prefix: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    # Xavier-uniform weights, zero bias
    bound = np.sqrt(6.0 / (n_in + n_out))
    store.add(f"{prefix}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{prefix}.b", np.zeros(n_out))


def add_batchnorm(store: ParamStore, prefix: str, d: int) -> None:
    store.add(f"{prefix}.gamma", np.ones(d))
    store.add(f"{prefix}.beta", np.zeros(d))
    store.add(f"{prefix}.running_mean", np.zeros(d), trainable=False)
    store.add(f"{prefix}.running_var", np.ones(d), trainable=False)


def add_lstm(store: ParamStore, prefix: str, n_in: int, hidden: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(n_in + hidden)
    store.add(f"{prefix}.Wx", rng.uniform(-bound, bound, size=(n_in, 4 * hidden)))
    store.add(f"{prefix}.Wh", rng.uniform(-bound, bound, size=(hidden, 4 * hidden)))
    store.add(f"{prefix}.b", rng.uniform(-bound, bound, size=(4 * hidden,)))


def linear(store: ParamStore, prefix: str, x) -> Tensor:
    return ops.linear(x, store[f"{prefix}.W"], store[f"{prefix}.b"])


def batchnorm(store: ParamStore, prefix: str, x: Tensor, train: bool) -> Tensor:
    return ops.batchnorm(
        x, store[f"{prefix}.gamma"], store[f"{prefix}.beta"],
        store[f"{prefix}.running_mean"].value, store[f"{prefix}.running_var"].value,
        train=train,
    )


def shared_mlp(store: ParamStore, prefix: str, x, widths, train: bool) -> Tensor:
    """Per-point stack of linear -> batchnorm -> relu layers."""
    h = x
    for i in range(len(widths)):
        h = linear(store, f"{prefix}.{i}", h)
        h = batchnorm(store, f"{prefix}.bn{i}", h, train)
        h = ops.relu(h)
    return h


def add_shared_mlp(store: ParamStore, prefix: str, n_in: int, widths, rng: np.random.Generator) -> None:
    prev = n_in
    for i, w in enumerate(widths):
        add_linear(store, f"{prefix}.{i}", prev, w, rng)
        add_batchnorm(store, f"{prefix}.bn{i}", w)
        prev = w
