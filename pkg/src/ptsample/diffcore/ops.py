"""Differentiable primitives.

All ops accept leading batch dimensions. Gradients of max/min style ops are
routed to the first (lowest-index) arg-selected entry.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument
from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.value + b.value)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.value - b.value)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    out = Tensor(av * bv)
    return record(out, (a, b), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting; both operands need ndim >= 2."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidArgument("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidArgument(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    out = Tensor(av @ bv)

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), back)


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W + b applied to the last axis of ``x`` (a shared per-point map)."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise InvalidArgument(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise InvalidArgument(f"linear: bias shape {b.shape} != ({W.shape[1]},)")
    xv, Wv = x.value, W.value
    y = xv @ Wv
    if b is not None:
        y += b.value
    out = Tensor(y)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wv.T if x.requires_grad else None
        gW = xv.reshape(-1, xv.shape[-1]).T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gW, gb

    inputs = (x, W) if b is None else (x, W, b)
    return record(out, inputs, back)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    out = Tensor(np.maximum(x.value, 0))
    return record(out, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return record(Tensor(y), (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    out = np.tanh(0.5 * v)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return record(Tensor(y), (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return record(Tensor(y), (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xv = x.value
    return record(Tensor(np.log(xv)), (x,), lambda g: (g / xv,))


def _check_nonempty(x: Tensor, axis: int, what: str) -> None:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise InvalidArgument(f"{what}: empty input")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row softmax, stabilised by subtracting the row max."""
    _check_nonempty(x, axis, "softmax")
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(Tensor(y), (x,), back)


softmax_row = softmax


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_nonempty(x, axis, "log_softmax")
    z = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record(Tensor(y), (x,), back)


def max(x: Tensor, axis: int = -1) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Max along ``axis``; the gradient goes to the first maximising entry."""
    _check_nonempty(x, axis, "max")
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.value, axis=axis), axis)
    y = np.take_along_axis(x.value, idx, axis=axis)

    def back(g):
        full = np.zeros_like(x.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return record(Tensor(np.squeeze(y, axis)), (x,), back)


def max_pool_points(X: Tensor) -> Tensor:
    """Feature-wise max over the point axis: (..., n, d) -> (..., d)."""
    return max(X, axis=-2)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    y = np.sum(x.value, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(Tensor(np.asarray(y, dtype=x.dtype)), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record(Tensor(x.value.reshape(shape)), (x,), lambda g: (g.reshape(old),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(x.value)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return record(Tensor(x.value[idx]), (x,), back)


def stack(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    y = np.stack([x.value for x in xs], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return record(Tensor(y), xs, back)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    y = np.concatenate([x.value for x in xs], axis=axis)
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(Tensor(y), xs, back)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, train: bool, momentum: float = 0.9,
              eps: float = 1e-5) -> Tensor:
    """Batch normalisation over all leading axes of ``x`` (..., d).

    In train mode the running statistics are updated in place as
    ``r <- momentum * r + (1 - momentum) * batch_stat`` (unbiased variance).
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise InvalidArgument(f"batchnorm: affine shape mismatch for {d} features")
    xv = x.value.reshape(-1, d)
    n = xv.shape[0]
    if train:
        if n < 2:
            raise InvalidArgument("batchnorm in train mode needs at least 2 rows")
        mu = xv.mean(axis=0)
        xc = xv - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        inv_std = 1.0 / np.sqrt(var + eps)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (n / (n - 1))
    else:
        xc = xv - running_mean.astype(xv.dtype, copy=False)
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(xv.dtype, copy=False)
    scale = gamma.value * inv_std
    y = xc * scale
    y += beta.value
    shape = x.shape

    def back(g):
        g2 = g.reshape(-1, d)
        dbeta = g2.sum(axis=0)
        # sum(g * xhat) with xhat = xc * inv_std
        dgamma = np.einsum("ij,ij->j", g2, xc) * inv_std
        if not x.requires_grad:
            return None, dgamma, dbeta
        dx = g2 * scale
        if train:
            dx -= xc * (scale * inv_std * dgamma / n)
            dx -= scale * dbeta / n
        return dx.reshape(shape), dgamma, dbeta

    return record(Tensor(y.reshape(shape)), (x, gamma, beta), back)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, candidate, output).

    Returns ``(h_next, c_next)``. Shapes: x (..., in), h/c (..., H),
    Wx (in, 4H), Wh (H, 4H), b (4H,).
    """
    H = h.shape[-1]
    if Wx.shape != (x.shape[-1], 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise InvalidArgument(
            f"lstm_cell: x{x.shape} h{h.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape} disagree")
    if c.shape != h.shape:
        raise InvalidArgument(f"lstm_cell: c{c.shape} != h{h.shape}")
    xv, hv, cv = x.value, h.value, c.value
    z = xv @ Wx.value + hv @ Wh.value + b.value
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c_next = f * cv + i * gg
    tc = np.tanh(c_next)
    h_next = o * tc

    def back(g):
        dh, dc_next = g[..., :H], g[..., H:]
        do = dh * tc
        dct = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dct * gg * i * (1.0 - i),
            dct * cv * f * (1.0 - f),
            dct * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ], axis=-1)
        dz2 = dz.reshape(-1, 4 * H)
        dx = dz @ Wx.value.T
        dhp = dz @ Wh.value.T
        dWx = xv.reshape(-1, xv.shape[-1]).T @ dz2
        dWh = hv.reshape(-1, H).T @ dz2
        return dx, dhp, dct * f, dWx, dWh, dz2.sum(axis=0)

    both = record(Tensor(np.concatenate([h_next, c_next], axis=-1)), (x, h, c, Wx, Wh, b), back)
    return getitem(both, (..., slice(0, H))), getitem(both, (..., slice(H, 2 * H)))


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances (..., k, l) between rows of a (..., k, 3) and b (..., l, 3).

    Summed per coordinate in x, y, z order.
    """
    d = np.zeros(np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-2]),
                 dtype=np.result_type(a, b))
    for j in range(a.shape[-1]):
        diff = a[..., :, None, j] - b[..., None, :, j]
        diff *= diff
        d += diff
    return d


def nn_sqdist(a, b) -> Tensor:
    """For each row of ``a`` the squared distance to its nearest row of ``b``.

    Shapes (..., k, 3) and (..., l, 3) -> (..., k). Gradient flows to both
    point sets through the selected pair; ties pick the lowest index in b.
    """
    a, b = _pair(a, b)
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise InvalidArgument("nearest-neighbour distance on an empty point set")
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgument(f"coordinate dims differ: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    d = pairwise_sqdist(av, bv)
    j = np.argmin(d, axis=-1)
    bsel = np.take_along_axis(np.broadcast_to(bv, d.shape[:-2] + bv.shape[-2:]), j[..., None], axis=-2)
    diff = av - bsel
    y = np.sum(diff * diff, axis=-1)

    def back(g):
        ga = 2.0 * diff * g[..., None]
        gb_full = None
        if b.requires_grad:
            batch = ga.shape[:-2]
            gb_full = np.zeros(batch + bv.shape[-2:], dtype=bv.dtype)
            rows, l = int(np.prod(batch, dtype=np.int64)), bv.shape[-2]
            flat_j = (j.reshape(rows, -1) + l * np.arange(rows)[:, None]).ravel()
            flat_ga = ga.reshape(-1, ga.shape[-1])
            flat_gb = gb_full.reshape(rows * l, -1)
            for c in range(flat_gb.shape[1]):
                flat_gb[:, c] = -np.bincount(flat_j, weights=flat_ga[:, c], minlength=rows * l)
            gb_full = _unbroadcast(gb_full, b.shape)
        return _unbroadcast(ga, a.shape), gb_full

    return record(Tensor(y), (a, b), back)


class SequenceScores:
    """Dot-product scores of a fixed key matrix against a sequence of queries.

    ``step(h)`` maps h (..., d) to X h (..., n) for X (..., n, d). Gradients
    with respect to X from all steps are gathered into one batched product
    ``G^T H`` once backward has passed every step, instead of one outer
    product per step.
    """

    def __init__(self, X: Tensor):
        self.X = X
        self._h: list[np.ndarray] = []
        self._g: dict[int, np.ndarray] = {}
        record(Tensor(np.zeros(0, dtype=X.dtype)), (X,), self._gather, always=True)

    def _gather(self, _):
        if not self._g:
            return (None,)
        Xv = self.X.value
        G = np.zeros(Xv.shape[:-2] + (len(self._h), Xv.shape[-2]), dtype=Xv.dtype)
        for t, g in self._g.items():
            G[..., t, :] = g
        H = np.stack(self._h, axis=-2)
        self._g.clear()
        return (np.swapaxes(G, -1, -2) @ H,)

    def step(self, h: Tensor) -> Tensor:
        Xv = self.X.value
        if h.shape[-1] != Xv.shape[-1]:
            raise InvalidArgument(f"query dim {h.shape[-1]} != feature dim {Xv.shape[-1]}")
        t = len(self._h)
        self._h.append(h.value)
        s = (Xv @ h.value[..., None])[..., 0]

        def back(g):
            if self.X.requires_grad:
                self._g[t] = g
            return (g[..., None, :] @ Xv)[..., 0, :], None

        return record(Tensor(s), (h, self.X), back)
