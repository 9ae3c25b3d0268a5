"""Sequential attention sampler.

A two-layer LSTM whose initial state is derived from the global feature of
the input cloud. At every step the top-layer hidden state scores each
point feature by dot product; the softmax of those scores weights the input
coordinates into one soft point, which becomes the next LSTM input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import ParamStore, Tensor, as_tensor, load_checkpoint, ops, save_checkpoint
from .diffcore.layers import add_linear, add_lstm, linear
from .errors import InvalidArgument
from .geometry import GeneratedCloud, MatchedCloud, coords, match
from .pointnet import FEATURE_WIDTHS, extract_features, init_feature_params

HIDDEN = 128
LAYERS = 2


@dataclass
class SamplerState:
    layers: list[tuple[Tensor, Tensor]]
    step: int = 0

    @property
    def top(self) -> Tensor:
        return self.layers[-1][0]


@dataclass
class AttentionTrace:
    """Scores and coefficients, shape (m, n) for one cloud or (B, m, n) for a batch."""

    scores: np.ndarray
    coeffs: np.ndarray


def init_sampler(seed: int = 0, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    init_feature_params(store, rng)
    d = FEATURE_WIDTHS[-1]
    for layer in range(LAYERS):
        add_linear(store, f"init.h{layer}", d, HIDDEN, rng)
        add_linear(store, f"init.c{layer}", d, HIDDEN, rng)
    add_lstm(store, "lstm0", 3, HIDDEN, rng)
    for layer in range(1, LAYERS):
        add_lstm(store, f"lstm{layer}", HIDDEN, HIDDEN, rng)
    store.add("start", np.zeros(3))
    return store


def init_state(g: Tensor, params: ParamStore) -> SamplerState:
    """h0/c0 of every layer as tanh of a learned linear map of ``g``."""
    g = as_tensor(g)
    if g.shape[-1] != params["init.h0.W"].shape[0]:
        raise InvalidArgument(f"global feature has dim {g.shape[-1]}, expected {params['init.h0.W'].shape[0]}")
    layers = []
    for layer in range(LAYERS):
        h = ops.tanh(linear(params, f"init.h{layer}", g))
        c = ops.tanh(linear(params, f"init.c{layer}", g))
        layers.append((h, c))
    return SamplerState(layers, 0)


def lstm_step(x: Tensor, state: SamplerState, params: ParamStore) -> SamplerState:
    new = []
    inp = x
    for layer, (h, c) in enumerate(state.layers):
        p = f"lstm{layer}"
        h, c = ops.lstm_cell(inp, h, c, params[f"{p}.Wx"], params[f"{p}.Wh"], params[f"{p}.b"])
        new.append((h, c))
        inp = h
    return SamplerState(new, state.step + 1)


def attention_step(X: Tensor, h_top: Tensor) -> tuple[Tensor, Tensor]:
    """Scores ``X h`` over the points and their softmax."""
    X = as_tensor(X)
    h_top = as_tensor(h_top)
    if X.shape[-1] != h_top.shape[-1]:
        raise InvalidArgument(f"feature dim {X.shape[-1]} != hidden dim {h_top.shape[-1]}")
    s = ops.SequenceScores(X).step(h_top)
    return s, ops.softmax(s)


def generate_point(coeffs, P) -> Tensor:
    """Convex combination of the input points weighted by ``coeffs`` (..., n)."""
    a = as_tensor(coeffs)
    p = coords(P)
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=a.dtype))
    if a.shape[-1] != p.shape[-2]:
        raise InvalidArgument(f"{a.shape[-1]} coefficients for a cloud of {p.shape[-2]} points")
    q = ops.matmul(ops.reshape(a, a.shape[:-1] + (1, a.shape[-1])), p)
    return ops.reshape(q, q.shape[:-2] + (q.shape[-1],))


def unroll(P, m: int, params: ParamStore, mode: str = "train") -> tuple[Tensor, AttentionTrace]:
    """Run the sampler for ``m`` steps on a cloud (n, 3) or a batch (B, n, 3).

    Returns the generated points as a tensor (..., m, 3) on the active tape
    together with the attention trace.
    """
    if m < 1:
        raise InvalidArgument(f"sample size must be >= 1, got {m}")
    p = coords(P)
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=params.dtype))
    X, g = extract_features(p, params, mode)
    state = init_state(g, params)
    scorer = ops.SequenceScores(X)
    x_in = ops.add(Tensor(np.zeros(p.shape[:-2] + (3,), dtype=params.dtype)), params["start"])
    qs, scores, coeffs = [], [], []
    for _ in range(m):
        state = lstm_step(x_in, state, params)
        s = scorer.step(state.top)
        a = ops.softmax(s)
        x_in = generate_point(a, p)
        qs.append(x_in)
        scores.append(s.value)
        coeffs.append(a.value)
    Q = ops.stack(qs, axis=-2)
    return Q, AttentionTrace(np.stack(scores, axis=-2), np.stack(coeffs, axis=-2))


def _check_bbox(Q: np.ndarray, P: np.ndarray) -> None:
    lo, hi = P.min(axis=-2, keepdims=True), P.max(axis=-2, keepdims=True)
    tol = 1e-9 * max(1.0, float(np.abs(P).max())) if P.dtype == np.float64 else 1e-5
    if np.any(Q < lo - tol) or np.any(Q > hi + tol):
        raise AssertionError("generated point left the bounding box of its cloud")


def sample(P, m: int, params: ParamStore, mode: str = "eval") -> tuple[GeneratedCloud, AttentionTrace]:
    """Generate ``m`` soft points from one cloud; no tape is required."""
    pts = np.asarray(coords(P), dtype=params.dtype)
    if pts.ndim != 2:
        raise InvalidArgument("sample expects a single (n, 3) cloud; use generate for batches")
    Q, trace = unroll(pts, m, params, mode)
    _check_bbox(Q.value, pts)
    return GeneratedCloud(Q.value.copy(), pts.shape[0]), trace


def generate(clouds: np.ndarray, m: int, params: ParamStore, batch_size: int = 64) -> np.ndarray:
    """Eval-mode generation for a stack of clouds (B, n, 3) -> (B, m, 3)."""
    clouds = np.asarray(clouds, dtype=params.dtype)
    out = []
    for i in range(0, clouds.shape[0], batch_size):
        Q, _ = unroll(clouds[i:i + batch_size], m, params, "eval")
        out.append(Q.value)
    return np.concatenate(out, axis=0)


def sample_matched(P, m: int, params: ParamStore) -> MatchedCloud:
    pts = np.asarray(coords(P), dtype=params.dtype)
    if m > pts.shape[0]:
        raise InvalidArgument(f"matched sample of {m} points from a cloud of {pts.shape[0]}")
    Q, _ = sample(pts, m, params)
    return match(Q.points, pts)


def write_attention_csv(path, trace: AttentionTrace) -> None:
    """One row per (step, point) with full-precision decimal values."""
    scores, coeffs = np.asarray(trace.scores, np.float64), np.asarray(trace.coeffs, np.float64)
    if scores.ndim != 2:
        raise InvalidArgument("attention dump takes the trace of a single cloud")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "point_index", "score", "coeff"])
        for t in range(scores.shape[0]):
            for i in range(scores.shape[1]):
                w.writerow([t + 1, i, repr(float(scores[t, i])), repr(float(coeffs[t, i]))])


def save_sampler(path, params: ParamStore) -> None:
    save_checkpoint(path, params)


def load_sampler(path, dtype=np.float64) -> ParamStore:
    if not Path(path).exists():
        raise FileNotFoundError(f"sampler checkpoint not found: {path}")
    params = load_checkpoint(path, init_sampler(0, dtype))
    params.freeze()
    return params
