"""Simplified PointNet stem: shared per-point MLP followed by feature-wise max pooling."""

from __future__ import annotations

import numpy as np

from .diffcore import ParamStore, Tensor, as_tensor, ops
from .diffcore.layers import add_shared_mlp, shared_mlp
from .errors import InvalidArgument
from .geometry import coords

FEATURE_WIDTHS = (64, 64, 64, 128, 128)


def init_feature_params(store: ParamStore, rng: np.random.Generator, prefix: str = "feat",
                        widths=FEATURE_WIDTHS) -> ParamStore:
    add_shared_mlp(store, prefix, 3, widths, rng)
    return store


def extract_features(P, params: ParamStore, mode: str = "eval", prefix: str = "feat",
                     widths=FEATURE_WIDTHS) -> tuple[Tensor, Tensor]:
    """Per-point features ``X`` (..., n, d) and global feature ``g`` (..., d).

    ``mode="train"`` normalises with batch statistics (over every point of
    every cloud in the batch) and updates the running statistics.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgument(f"mode must be 'train' or 'eval', got {mode!r}")
    x = coords(P)
    x = x if isinstance(x, Tensor) else as_tensor(np.asarray(x, dtype=params.dtype))
    if x.shape[-1] != 3 or x.ndim < 2:
        raise InvalidArgument(f"expected (..., n, 3) points, got {x.shape}")
    if mode == "train" and int(np.prod(x.shape[:-1])) < 2:
        raise InvalidArgument("train-mode feature extraction needs at least 2 points")
    X = shared_mlp(params, prefix, x, widths, train=(mode == "train"))
    return X, ops.max_pool_points(X)
