"""Registry of gradient checks for every differentiable op, plus the end-to-end model check.

Each case builds small random double-precision inputs and returns the worst
relative error between backprop and central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import engine as E
from .capture import synthetic_groups
from .eafnet.config import EafnetConfig, tiny
from .eafnet.loss import hdr_loss
from .eafnet.model import Eafnet, stack_to_arrays
from .radiometry import build_input_stack

OP_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4


def _leaf(rng, *shape, lo=-1.0, hi=1.0):
    return E.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return E.Tensor(x, requires_grad=True)


def _weighted(rng, shape):
    # a random linear functional makes every output element matter
    w = E.Tensor(rng.normal(size=shape))
    return lambda y: E.sum_(E.mul(y, w))


def _unary(op, make=_leaf, shape=(3, 4)):
    def case(rng):
        x = make(rng, *shape)
        f = _weighted(rng, op(x).shape)
        return E.check_gradients(lambda t: f(op(t)), x)
    return case


def _binary(op, shape_a, shape_b):
    def case(rng):
        a, b = _leaf(rng, *shape_a), _leaf(rng, *shape_b)
        f = _weighted(rng, op(a, b).shape)
        return E.check_gradients(lambda s, t: f(op(s, t)), [a, b])
    return case


def _conv_case(stride, padding, dilation):
    def case(rng):
        x, w, b = _leaf(rng, 2, 3, 7, 7), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
        op = lambda s, t, u: E.conv2d(s, t, u, stride=stride, padding=padding, dilation=dilation)
        f = _weighted(rng, op(x, w, b).shape)
        return E.check_gradients(lambda s, t, u: f(op(s, t, u)), [x, w, b])
    return case


def _fc_case(rng):
    x, w, b = _leaf(rng, 3, 5), _leaf(rng, 4, 5), _leaf(rng, 4)
    f = _weighted(rng, (3, 4))
    return E.check_gradients(lambda s, t, u: f(E.fully_connected(s, t, u)), [x, w, b])


def _softmax_case(rng):
    x = _leaf(rng, 3, 5, lo=-3, hi=3)
    f = _weighted(rng, (3, 5))
    return E.check_gradients(lambda t: f(E.softmax(t, axis=-1)), x)


def _reduction(op):
    def case(rng):
        x = _leaf(rng, 2, 3, 4)
        return E.check_gradients(lambda t: E.mul(op(t), op(t)), x)
    return case


def _shape_op(op, shape):
    def case(rng):
        x = _leaf(rng, *shape)
        f = _weighted(rng, op(x).shape)
        return E.check_gradients(lambda t: f(op(t)), x)
    return case


def _concat_case(rng):
    a, b = _leaf(rng, 2, 2, 3), _leaf(rng, 2, 3, 3)
    f = _weighted(rng, (2, 5, 3))
    return E.check_gradients(lambda s, t: f(E.concat([s, t], axis=1)), [a, b])


def _pos(rng, *shape):
    return E.Tensor(rng.uniform(0.2, 2.0, size=shape), requires_grad=True)


OP_CASES: Dict[str, Callable[[np.random.Generator], float]] = {
    "add": _binary(E.add, (3, 4), (3, 4)),
    "add_broadcast": _binary(E.add, (2, 3, 4), (3, 1)),
    "sub": _binary(E.sub, (3, 4), (3, 4)),
    "mul": _binary(E.mul, (3, 4), (1, 4)),
    "scale": _unary(lambda x: E.scale(x, -1.7)),
    "add_scalar": _unary(lambda x: E.add_scalar(x, 0.3)),
    "relu": _unary(E.relu, _away_from_zero),
    "sigmoid": _unary(E.sigmoid, lambda rng, *s: _leaf(rng, *s, lo=-4, hi=4)),
    "softmax": _softmax_case,
    "log": _unary(E.log, _pos),
    "abs": _unary(E.abs_, _away_from_zero),
    "clip": _unary(lambda x: E.clip(x, -0.5, 0.5), _away_from_zero),
    "sum": _reduction(E.sum_),
    "mean": _reduction(E.mean),
    "global_avg_pool": _shape_op(E.global_avg_pool, (2, 3, 4, 5)),
    "reshape": _shape_op(lambda x: E.reshape(x, (4, 6)), (2, 3, 4)),
    "transpose": _shape_op(lambda x: E.transpose(x, (2, 0, 1)), (2, 3, 4)),
    "concat": _concat_case,
    "slice": _shape_op(lambda x: E.slice_(x, (slice(None), slice(1, 3))), (3, 4)),
    "matmul": _binary(E.matmul, (2, 3, 4), (2, 4, 5)),
    "matmul_shared": _binary(E.matmul, (2, 3, 4), (4, 5)),
    "fully_connected": _fc_case,
    "conv2d": _conv_case(1, "same", 1),
    "conv2d_strided": _conv_case(2, 1, 1),
    "conv2d_dilated": _conv_case(1, "same", 2),
    "unfold": _shape_op(lambda x: E.unfold(x, 2), (2, 3, 4, 6)),
    "unfold_overlapping": _shape_op(lambda x: E.unfold(x, 2, 1), (1, 2, 3, 4)),
    "fold": _shape_op(lambda x: E.fold(x, (3, 4, 6), 2), (2, 6, 12)),
    "fold_overlapping": _shape_op(lambda x: E.fold(x, (2, 3, 4), 2, 1), (1, 6, 8)),
    "pixel_shuffle_up": _shape_op(lambda x: E.pixel_shuffle_up(x, 2), (2, 8, 3, 3)),
    "bilinear_upsample": _shape_op(lambda x: E.bilinear_upsample(x, 2), (2, 2, 3, 4)),
    "haar_dwt": _shape_op(E.haar_dwt_packed, (2, 2, 4, 6)),
    "haar_iwt": _shape_op(E.haar_iwt_packed, (2, 8, 2, 3)),
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance

    def to_json(self) -> dict:
        return {"name": self.name, "max_rel_error": self.error, "tolerance": self.tolerance,
                "passed": self.passed, "seconds": self.seconds}


def run_op_checks(names: Optional[Iterable[str]] = None, cases: Optional[Dict[str, Callable]] = None,
                  seed: int = 0, tolerance: float = OP_TOLERANCE) -> List[CheckResult]:
    cases = OP_CASES if cases is None else cases
    names = list(cases) if names is None else list(names)
    if not names:
        raise ValueError("no ops selected for gradient checking")
    unknown = [n for n in names if n not in cases]
    if unknown:
        raise ValueError(f"unknown op(s) for gradient checking: {unknown}")
    results = []
    with E.precision(np.float64):
        for k, name in enumerate(names):
            rng = np.random.default_rng([seed, k])
            t0 = time.perf_counter()
            err = float(cases[name](rng))
            results.append(CheckResult(name, err, tolerance, time.perf_counter() - t0))
    return results


def end_to_end_check(cfg: Optional[EafnetConfig] = None, size: int = 16, seed: int = 0,
                     steps: Sequence[float] = (1e-4, 1e-6), jitter: float = 0.3,
                     dtype=np.longdouble) -> Dict[str, float]:
    """Per-parameter max relative error of the full loss on one ``size``-square group.

    Parameters are moved to a generic point first (uniform jitter): at the
    initialization itself zero biases put some relu inputs exactly on a kink.
    The check runs in extended precision because the query/key gradients at
    the coarse scale are around 1e-9 to 1e-12, below what double-precision
    central differences can resolve on a loss of order one.
    """
    cfg = cfg or tiny()
    group = synthetic_groups(1, size, seed=seed)[0]
    rng = np.random.default_rng([seed, 1])
    with E.precision(dtype):
        net = Eafnet(cfg, seed=seed)
        net.params = net.params.astype(dtype)
        for _, t in net.params.items():
            t.data = (t.data + rng.uniform(-jitter, jitter, size=t.shape)).astype(dtype)
        arrays, e = stack_to_arrays([build_input_stack(group, cfg.gla_variant, c=cfg.c)], cfg)
        arrays = {b: a.astype(dtype) for b, a in arrays.items()}
        e = {b: v.astype(dtype) for b, v in e.items()}
        target = E.Tensor(np.transpose(group.normalized_truth(), (2, 0, 1))[None].astype(dtype))

        def loss():
            out = net.forward_arrays(arrays, e)
            return hdr_loss(out, target, cfg.lambda_dasl, cfg.mu, cfg.dasl_dilations, cfg.output_domain)

        return E.check_parameters(loss, list(net.params.items()), eps=steps, seed=seed,
                                  accept=END_TO_END_TOLERANCE / 10)
