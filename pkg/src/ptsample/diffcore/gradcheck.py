"""Central finite-difference checker used as the gradient oracle in tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import InvalidState
from .params import ParamStore
from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    skipped: int = 0


def finite_diff_check(f: Callable[[], Tensor], store: ParamStore, step: float = 1e-5,
                      max_coords: int | None = None, rng=None, names=None,
                      floor: float = 1e-6, kink_tol: float | None = None) -> GradCheckResult:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from ``store`` on every call and be
    deterministic. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``. With ``max_coords`` set, that many
    coordinates per parameter are drawn at random instead of all of them.

    With ``kink_tol`` set, a coordinate whose forward and backward one-sided
    differences disagree by more than that relative amount has a ReLU, max
    or nearest-neighbour switch inside the step; it is skipped and counted
    in ``skipped`` rather than scored.
    """
    if store.dtype != np.float64:
        raise InvalidState("finite-difference checks need a float64 store")
    rng = np.random.default_rng(0) if rng is None else rng
    store.zero_grad()
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.value).all():
            raise InvalidState("loss is not finite")
        tape.backward(loss)
    targets = [(k, t) for k, t in store.trainable() if names is None or k in names]
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value)) for k, t in targets}
    store.zero_grad()

    def evaluate() -> float:
        val = float(f().value)
        if not np.isfinite(val):
            raise InvalidState("loss is not finite under perturbation")
        return val

    worst = GradCheckResult(0.0, "", (), 0.0, 0.0, 0)
    checked = skipped = 0
    base = evaluate() if kink_tol is not None else 0.0
    for k, t in targets:
        flat = t.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        ga = analytic[k].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = evaluate()
            flat[c] = orig - step
            down = evaluate()
            flat[c] = orig
            num = (up - down) / (2.0 * step)
            if kink_tol is not None:
                fwd, bwd = (up - base) / step, (base - down) / step
                if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), floor):
                    skipped += 1
                    continue
            err = abs(ga[c] - num) / max(abs(ga[c]), abs(num), floor)
            checked += 1
            if err > worst.max_rel_error or not worst.worst_param:
                worst = GradCheckResult(err, k, np.unravel_index(c, t.value.shape), float(ga[c]), num, 0)
    worst.checked = checked
    worst.skipped = skipped
    return worst
