"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .core import Tensor, backward


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _analytic(fn: Callable[[], Tensor], leaves: list) -> list:
    for t in leaves:
        t.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("check_gradients needs a scalar-valued function")
    backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]


def _central(fn, t: Tensor, flat_index: int, eps: float) -> float:
    view = t.data.reshape(-1)
    orig = view[flat_index]
    view[flat_index] = orig + eps
    up = float(fn().data)
    view[flat_index] = orig - eps
    down = float(fn().data)
    view[flat_index] = orig
    return (up - down) / (2 * eps)


def check_gradients(fn: Callable[..., Tensor], x, eps: float = 1e-6,
                    coords: Optional[dict] = None) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` maps the tensor(s) in ``x`` to a scalar tensor. ``x`` is a Tensor
    or a list of Tensors (all must require grad). ``coords`` optionally maps
    a leaf position to the flat indices to probe; default probes every entry.
    """
    leaves = [x] if isinstance(x, Tensor) else list(x)
    if not leaves:
        raise ValueError("check_gradients: no tensors to check")
    for t in leaves:
        if not t.requires_grad:
            raise ValueError("check_gradients: every input must require grad")

    def call():
        return fn(*leaves) if isinstance(x, (list, tuple)) else fn(leaves[0])

    grads = _analytic(call, leaves)
    worst = 0.0
    for pos, (t, g) in enumerate(zip(leaves, grads)):
        idx = range(t.data.size) if coords is None or pos not in coords else coords[pos]
        gflat = g.reshape(-1)
        for i in idx:
            num = _central(call, t, int(i), eps)
            worst = max(worst, float(relative_error(gflat[int(i)], num)))
    return worst


def pick_coordinates(grad: np.ndarray, k_top: int = 2, k_random: int = 2,
                     rng: Optional[np.random.Generator] = None, floor: float = 1e-3) -> list:
    """Flat indices worth probing: the largest |grad| entries plus random ones of non-negligible size."""
    flat = np.abs(grad.reshape(-1))
    order = np.argsort(-flat, kind="stable")
    chosen = list(order[:k_top])
    if rng is not None and k_random and flat.size > k_top:
        big = np.flatnonzero(flat >= floor * flat.max()) if flat.max() > 0 else np.arange(flat.size)
        pool = np.setdiff1d(big, chosen)
        if pool.size:
            chosen += list(rng.choice(pool, size=min(k_random, pool.size), replace=False))
    return [int(i) for i in chosen]


def check_parameters(loss_fn: Callable[[], Tensor], params: Iterable[tuple],
                     eps: Union[float, Sequence[float]] = 1e-6, k_top: int = 2, k_random: int = 2,
                     seed: int = 0, accept: float = 0.0) -> dict:
    """Per-parameter max relative error for a loss closing over named parameters.

    ``eps`` may be a ladder of steps. Each probed coordinate keeps the smallest
    error over the ladder (stopping early once it is ``<= accept``): a large
    step resolves tiny gradients above roundoff, a small one avoids stepping
    across nearby relu/abs kinks. A wrong gradient disagrees at every step.
    """
    steps = [eps] if np.isscalar(eps) else list(eps)
    if not steps:
        raise ValueError("check_parameters: empty step ladder")
    named = list(params)
    leaves = [t for _, t in named]
    grads = _analytic(loss_fn, leaves)
    rng = np.random.default_rng(seed)
    report = {}
    for (name, t), g in zip(named, grads):
        worst = 0.0
        for i in pick_coordinates(g, k_top, k_random, rng):
            a = g.reshape(-1)[i]
            best = math.inf
            for step in steps:
                best = min(best, float(relative_error(a, _central(loss_fn, t, i, step))))
                if best <= accept:
                    break
            worst = max(worst, best)
        report[name] = worst
    return report
