"""Point-cloud value types, nearest-neighbour losses and non-learned samplers.

Loss functions accept ``PointCloud``/``GeneratedCloud`` objects, plain
``(..., k, 3)`` arrays or diffcore ``Tensor``s. With tensor inputs the result
is a ``Tensor`` on the active tape; otherwise a float (or an array when
batched). All distances are squared Euclidean; ties go to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, ops
from .errors import InvalidArgument


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidArgument(f"expected an (n, 3) coordinate array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        arr = np.array(self.points, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise InvalidArgument(f"PointCloud needs shape (n, 3), got {arr.shape}")
        if arr.shape[0] < 1:
            raise InvalidArgument("PointCloud must contain at least one point")
        if not np.isfinite(arr).all():
            raise InvalidArgument("PointCloud coordinates must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class GeneratedCloud:
    """Soft points produced by a sampler; not necessarily members of the parent."""

    points: np.ndarray
    parent_n: int

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.m


@dataclass(frozen=True)
class MatchedCloud:
    """An index subset of a parent cloud."""

    indices: tuple[int, ...]
    parent_n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise InvalidArgument("MatchedCloud indices must be distinct")
        if any(i < 0 or i >= self.parent_n for i in idx):
            raise InvalidArgument(f"MatchedCloud index out of range [0, {self.parent_n})")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return self.m

    def take(self, P) -> np.ndarray:
        return coords(P)[list(self.indices)]


@dataclass(frozen=True)
class LossConfig:
    """Weights of the sampling loss and of the sampling term in the total loss."""

    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 0.0
    lam: float = 30.0

    def __post_init__(self):
        for k in ("beta", "gamma", "delta", "lam"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise InvalidArgument(f"LossConfig.{k} must be a nonnegative finite number, got {v}")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "LossConfig":
        lam = {"classification": 30.0, "reconstruction": 0.01}[task]
        return cls(**{"lam": lam, **overrides})


def coords(x):
    """Raw coordinates of a cloud-like object (Tensor passes through)."""
    if isinstance(x, (PointCloud, GeneratedCloud)):
        return x.points
    if isinstance(x, Tensor):
        return x
    return np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x


def _result(t: Tensor, differentiable: bool):
    if differentiable:
        return t
    return float(t.value) if t.value.ndim == 0 else t.value


def _differentiable(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def nearest_neighbor(q, S) -> tuple[int, float]:
    """Index of the point of ``S`` closest to ``q`` and its squared distance."""
    pts = coords(S)
    pts = pts.value if isinstance(pts, Tensor) else np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InvalidArgument("nearest_neighbor needs a nonempty (n, 3) cloud")
    q = np.asarray(q, dtype=pts.dtype).reshape(3)
    diff = pts - q
    d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    i = int(np.argmin(d))
    return i, float(d[i])


def avg_nn_loss(S1, S2):
    """Mean over ``S1`` of the squared distance to the nearest point of ``S2``."""
    a, b = coords(S1), coords(S2)
    return _result(ops.mean(ops.nn_sqdist(a, b), axis=-1), _differentiable(a, b))


def max_nn_loss(S1, S2):
    """Max over ``S1`` of the squared distance to the nearest point of ``S2``."""
    a, b = coords(S1), coords(S2)
    return _result(ops.max(ops.nn_sqdist(a, b), axis=-1), _differentiable(a, b))


def chamfer(S1, S2):
    a, b = coords(S1), coords(S2)
    out = ops.add(ops.mean(ops.nn_sqdist(a, b), axis=-1), ops.mean(ops.nn_sqdist(b, a), axis=-1))
    return _result(out, _differentiable(a, b))


def sampling_loss(Q, P, cfg: LossConfig = LossConfig()):
    """avg(Q->P) + beta * max(Q->P) + (gamma + delta * |Q|) * avg(P->Q)."""
    if not isinstance(cfg, LossConfig):
        raise InvalidArgument("cfg must be a LossConfig")
    q, p = coords(Q), coords(P)
    d_qp = ops.nn_sqdist(q, p)
    m = q.shape[-2]
    out = ops.mean(d_qp, axis=-1)
    if cfg.beta:
        out = ops.add(out, ops.mul(ops.max(d_qp, axis=-1), cfg.beta))
    cover = cfg.gamma + cfg.delta * m
    if cover:
        out = ops.add(out, ops.mul(ops.mean(ops.nn_sqdist(p, q), axis=-1), cover))
    return _result(out, _differentiable(q, p))


# ---------------------------------------------------------------------------
# samplers

def _plain(P) -> np.ndarray:
    pts = coords(P)
    if isinstance(pts, Tensor):
        pts = pts.value
    return _as_points(pts)


def _sq_to(pts: np.ndarray, p: np.ndarray) -> np.ndarray:
    diff = pts - p
    return diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]


def _fps_extend(pts: np.ndarray, selected: list[int], m: int) -> list[int]:
    """Greedily add points maximising the distance to ``selected`` until ``m`` are chosen."""
    n = pts.shape[0]
    chosen = list(selected)
    mind = np.full(n, np.inf)
    for i in chosen:
        np.minimum(mind, _sq_to(pts, pts[i]), out=mind)
    taken = np.zeros(n, dtype=bool)
    taken[chosen] = True
    while len(chosen) < m:
        cand = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        taken[nxt] = True
        np.minimum(mind, _sq_to(pts, pts[nxt]), out=mind)
    return chosen


def fps(P, m: int, start_index: int = 0) -> MatchedCloud:
    """Farthest point sampling starting from ``start_index``."""
    pts = _plain(P)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgument(f"fps needs 1 <= m <= n, got m={m}, n={n}")
    if not 0 <= start_index < n:
        raise InvalidArgument(f"start_index {start_index} outside [0, {n})")
    return MatchedCloud(tuple(_fps_extend(pts, [start_index], m)), n)


def random_sample(P, m: int, seed: int) -> MatchedCloud:
    pts = _plain(P)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgument(f"random_sample needs 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return MatchedCloud(tuple(rng.choice(n, size=m, replace=False).tolist()), n)


def _voxel_survivors(pts: np.ndarray, cell: float) -> list[int]:
    cells = np.floor((pts - pts.min(axis=0)) / cell).astype(np.int64)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    keep = []
    for c in range(inverse.max() + 1):
        members = np.flatnonzero(inverse == c)
        centroid = pts[members].mean(axis=0)
        keep.append(int(members[np.argmin(_sq_to(pts[members], centroid))]))
    return sorted(keep)


def voxel_sample(P, m: int, initial_cell_size: float, max_refinements: int = 20) -> MatchedCloud:
    """Grid sampling: one representative per occupied cell.

    The representative is the member nearest the cell centroid. Too many
    survivors are thinned by FPS (starting at the lowest survivor index); too
    few trigger halving of the cell size, and after ``max_refinements``
    halvings the remainder is filled by FPS over the whole cloud.
    """
    pts = _plain(P)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgument(f"voxel_sample needs 1 <= m <= n, got m={m}, n={n}")
    if not initial_cell_size > 0:
        raise InvalidArgument(f"cell size must be positive, got {initial_cell_size}")
    cell = float(initial_cell_size)
    survivors: list[int] = []
    for _ in range(max_refinements + 1):
        survivors = _voxel_survivors(pts, cell)
        if len(survivors) >= m:
            break
        cell /= 2.0
    if len(survivors) > m:
        sub = _fps_extend(pts[survivors], [0], m)
        return MatchedCloud(tuple(survivors[i] for i in sub), n)
    if len(survivors) < m:
        survivors = _fps_extend(pts, survivors, m)
    return MatchedCloud(tuple(survivors), n)


def match(Q, P) -> MatchedCloud:
    """Project generated points onto their nearest input points.

    Duplicate targets keep their first occurrence; the deficit is filled by
    FPS over ``P`` continuing from the unique matched set.
    """
    pts = _plain(P)
    q = coords(Q)
    q = q.value if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    q = q.reshape(-1, 3)
    n, m = pts.shape[0], q.shape[0]
    if m > n:
        raise InvalidArgument(f"cannot match {m} points into a cloud of {n}")
    if m == 0:
        raise InvalidArgument("match needs at least one generated point")
    nearest = np.argmin(ops.pairwise_sqdist(q, pts), axis=-1)
    unique: list[int] = []
    seen = set()
    for j in nearest.tolist():
        if j not in seen:
            seen.add(j)
            unique.append(j)
    return MatchedCloud(tuple(_fps_extend(pts, unique, m)), n)
