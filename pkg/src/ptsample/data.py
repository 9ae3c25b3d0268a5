"""Synthetic shape datasets and the "APSB" point-cloud file format.

APSB layout (little-endian): magic ``b"APSB"``, u16 version (1), u32 cloud
count, then per cloud: u32 n, i32 label (-1 = unlabeled), 3n float32
coordinates. Class names and split assignment live in a JSON sidecar
``<path>.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

MAGIC = b"APSB"
VERSION = 1
FAMILIES = ("sphere", "cube", "cylinder", "cone", "torus")
SPLITS = ("train", "val", "test")

# cone: radius 1, height 2, apex up; lateral slant length sqrt(5)
_CONE_LATERAL = np.pi * np.sqrt(5.0)
_CONE_BASE = np.pi
_CONE_ZBAR = (_CONE_LATERAL * 2.0 / 3.0) / (_CONE_LATERAL + _CONE_BASE)
_TORUS_R, _TORUS_r = 1.0, 0.4


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    jitter: float = 0.02
    n: int = 512
    seed: int = 0
    scale_jitter: float = 0.0
    rotate_z: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown shape family {self.family!r}; choose from {FAMILIES}")
        if self.n < 8:
            raise InvalidArgument(f"shape needs n >= 8 points, got {self.n}")
        if self.jitter < 0 or self.scale_jitter < 0:
            raise InvalidArgument("jitter amounts must be nonnegative")


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def _cylinder(rng, n):
    # radius 1, z in [-1, 1]: lateral area 4*pi, caps 2*pi
    part = rng.choice(3, size=n, p=[2 / 3, 1 / 6, 1 / 6])
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(part == 0, 1.0, np.sqrt(rng.uniform(size=n)))
    z = np.where(part == 0, rng.uniform(-1, 1, size=n), np.where(part == 1, -1.0, 1.0))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(rng, n):
    lateral = rng.uniform(size=n) < _CONE_LATERAL / (_CONE_LATERAL + _CONE_BASE)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    s = np.sqrt(rng.uniform(size=n))  # area grows linearly with distance from apex / center
    r = s
    z = np.where(lateral, 2.0 * (1.0 - s), 0.0)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z - _CONE_ZBAR], axis=1)
    return pts


def _torus(rng, n):
    out = np.empty((0, 3))
    while out.shape[0] < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        w = rng.uniform(size=2 * n)
        keep = w < (_TORUS_R + _TORUS_r * np.cos(v)) / (_TORUS_R + _TORUS_r)
        u, v = u[keep], v[keep]
        ring = _TORUS_R + _TORUS_r * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u), _TORUS_r * np.sin(v)], axis=1)])
    return out[:n]


_SAMPLERS = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def sample_shape(spec: ShapeSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Area-uniform surface samples, centred on the surface centroid and scaled to max norm 1."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    pts = _SAMPLERS[spec.family](rng, spec.n)
    if spec.scale_jitter:
        pts = pts * rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter, size=3)
    if spec.rotate_z:
        a = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(a), np.sin(a)
        pts = pts @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    if spec.jitter:
        pts = pts + rng.normal(scale=spec.jitter, size=pts.shape)
    return pts / np.max(np.linalg.norm(pts, axis=1))


@dataclass(eq=False)
class Dataset:
    clouds: np.ndarray          # (N, n, 3) float32
    labels: np.ndarray          # (N,) int32, -1 when unlabeled
    class_names: tuple[str, ...]
    split: np.ndarray           # (N,) uint8 index into SPLITS

    def __post_init__(self):
        self.clouds = np.asarray(self.clouds, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.split = np.asarray(self.split, dtype=np.uint8)
        self.class_names = tuple(self.class_names)
        if self.clouds.ndim != 3 or self.clouds.shape[2] != 3:
            raise InvalidArgument(f"clouds must have shape (N, n, 3), got {self.clouds.shape}")
        if not (len(self.labels) == len(self.split) == len(self.clouds)):
            raise InvalidArgument("clouds, labels and split must have equal length")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def n(self) -> int:
        return self.clouds.shape[1]

    def subset(self, split: str) -> "Dataset":
        sel = self.split == SPLITS.index(split)
        return Dataset(self.clouds[sel], self.labels[sel], self.class_names, self.split[sel])

    def unlabeled(self) -> "Dataset":
        return Dataset(self.clouds, np.full(len(self), -1), self.class_names, self.split)

    def equals(self, other: "Dataset") -> bool:
        return (self.class_names == other.class_names
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.split, other.split)
                and self.clouds.shape == other.clouds.shape
                and self.clouds.tobytes() == other.clouds.tobytes())


def generate_synthetic(families=("sphere", "cube", "cylinder", "cone"), per_class: int = 100, n: int = 512,
                       seed: int = 0, jitter: float = 0.02, fractions=(0.85, 0.05, 0.10),
                       scale_jitter: float = 0.0, rotate_z: bool = False) -> Dataset:
    """Labelled synthetic dataset; each class's items are split in order by ``fractions``.

    Cloud ``i`` of class ``k`` draws from its own generator seeded with
    ``(seed, k, i)``, so items are independent of generation order.
    """
    families = tuple(families)
    if len(families) < 1 or len(set(families)) != len(families):
        raise InvalidArgument("families must be a nonempty list without repeats")
    if per_class < 1:
        raise InvalidArgument("per_class must be >= 1")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise InvalidArgument(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n_train = int(round(fractions[0] * per_class))
    n_val = int(round(fractions[1] * per_class))
    n_val = min(n_val, per_class - n_train)
    clouds, labels, split = [], [], []
    for k, fam in enumerate(families):
        spec = ShapeSpec(fam, jitter=jitter, n=n, seed=seed, scale_jitter=scale_jitter, rotate_z=rotate_z)
        for i in range(per_class):
            rng = np.random.default_rng([seed, k, i])
            clouds.append(sample_shape(spec, rng).astype(np.float32))
            labels.append(k)
            split.append(0 if i < n_train else 1 if i < n_train + n_val else 2)
    return Dataset(np.stack(clouds), np.array(labels), families, np.array(split))


def save_dataset(path, ds: Dataset) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(ds))]
    for cloud, label in zip(ds.clouds, ds.labels):
        chunks.append(struct.pack("<Ii", cloud.shape[0], int(label)))
        chunks.append(np.ascontiguousarray(cloud, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    side = {"class_names": list(ds.class_names), "split": [SPLITS[s] for s in ds.split]}
    Path(str(path) + ".json").write_text(json.dumps(side) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    buf = path.read_bytes()
    pos = 0

    def take(k: int, what: str) -> bytes:
        nonlocal pos
        if pos + k > len(buf):
            raise FormatError(f"{path}: truncated while reading {what}", pos)
        out = buf[pos:pos + k]
        pos += k
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, expected APSB", 0)
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    clouds, labels = [], []
    n_first = None
    for c in range(count):
        at = pos
        n, label = struct.unpack("<Ii", take(8, f"header of cloud {c}"))
        if n_first is None:
            n_first = n
        elif n != n_first:
            raise FormatError(f"{path}: cloud {c} has {n} points, expected {n_first}", at)
        clouds.append(np.frombuffer(take(12 * n, f"points of cloud {c}"), dtype="<f4").reshape(n, 3))
        labels.append(label)
    if pos != len(buf):
        raise FormatError(f"{path}: trailing bytes after last cloud", pos)
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        names = tuple(meta.get("class_names", ()))
        split = [SPLITS.index(s) for s in meta.get("split", ["train"] * count)]
    else:
        names, split = (), [0] * count
    arr = np.stack(clouds).astype(np.float32) if clouds else np.zeros((0, 0, 3), np.float32)
    return Dataset(arr, np.array(labels, dtype=np.int32), names, np.array(split, dtype=np.uint8))
