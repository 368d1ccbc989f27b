"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Array, Tape, no_grad


def numeric_grad(fn: Callable[[], Array], param: Array, h: float = 1e-5, indices=None) -> np.ndarray:
    """d fn() / d param by central differences (optionally only at ``indices``)."""
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    todo = range(flat.size) if indices is None else indices
    with no_grad():
        for i in todo:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data.sum())
            flat[i] = orig - h
            fm = float(fn().data.sum())
            flat[i] = orig
            grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(param.shape)


def analytic_grads(fn: Callable[[], Array], params: Sequence[Array]) -> list[np.ndarray]:
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = fn()
        tape.backward(out.sum() if out.size != 1 else out)
    return [p.grad.copy() for p in params]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs deviation over the larger of the two gradients' max magnitude."""
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[[], Array], params: Sequence[Array], h: float = 1e-5,
                    max_entries: int | None = None, rng=None) -> float:
    """Worst relative error over ``params``; ``max_entries`` spot-checks randomly."""
    grads = analytic_grads(fn, params)
    worst = 0.0
    for p, g in zip(params, grads):
        idx = None
        if max_entries is not None and p.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(p.size, size=max_entries, replace=False)
        num = numeric_grad(fn, p, h, idx)
        if idx is not None:
            worst = max(worst, relative_error(g.reshape(-1)[idx], num.reshape(-1)[idx]))
        else:
            worst = max(worst, relative_error(g, num))
    return worst
