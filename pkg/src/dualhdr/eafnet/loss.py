"""Training loss: L1 on mu-law tonemapped images plus a dilated directional Sobel term."""

from __future__ import annotations

import math

import numpy as np

from .. import engine as E
from ..engine import Tensor
from ..radiometry import DEFAULT_MU

# 0, 45, 90 and 135 degree derivative kernels, scaled so a unit step gives a unit 0/90-degree response
SOBEL_KERNELS = np.array([
    [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
    [[0, 1, 2], [-1, 0, 1], [-2, -1, 0]],
    [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
    [[-2, -1, 0], [-1, 0, 1], [0, 1, 2]],
], dtype=np.float64) / 4.0


def mu_law(x: Tensor, mu: float = DEFAULT_MU) -> Tensor:
    """Differentiable mu-law: ``log(1 + mu * clip(x, 0, 1)) / log(1 + mu)``."""
    z = E.add_scalar(E.scale(E.clip(x, 0.0, 1.0), mu), 1.0)
    return E.scale(E.log(z), 1.0 / math.log1p(mu))


def l1(pred: Tensor, target: Tensor) -> Tensor:
    return E.mean(E.abs_(E.sub(pred, target)))


def sobel_responses(x: Tensor, dilation: int = 1) -> Tensor:
    """Directional responses of every channel: ``(N, C, H, W) -> (N*C, 4, H', W')``.

    Unpadded ("valid") correlation, so constant images respond with zero up to roundoff.
    """
    n, c, h, w = x.shape
    flat = E.reshape(x, (n * c, 1, h, w))
    k = Tensor(SOBEL_KERNELS[:, None].astype(x.dtype))
    return E.conv2d(flat, k, None, padding=0, dilation=dilation)


def asl(pred: Tensor, target: Tensor, dilation: int = 1) -> Tensor:
    """Mean absolute difference of directional Sobel responses."""
    pred, target = E.as_tensor(pred), E.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"asl: shape mismatch {pred.shape} vs {target.shape}")
    # the filter is linear, so filtering the difference equals differencing the responses
    return E.mean(E.abs_(sobel_responses(E.sub(pred, target), dilation)))


def d_asl(pred: Tensor, target: Tensor, dilations=(1, 2, 3)) -> Tensor:
    terms = [asl(pred, target, d) for d in dilations]
    total = terms[0]
    for t in terms[1:]:
        total = E.add(total, t)
    return total


def hdr_loss(pred: Tensor, target_linear: Tensor, lambda_dasl: float = 0.25,
             mu: float = DEFAULT_MU, dilations=(1, 2, 3), pred_domain: str = "linear") -> Tensor:
    """``L1(tau(pred), tau(target)) + lambda * D-ASL(tau(pred), tau(target))`` on normalized radiance.

    With ``pred_domain="mu"`` the prediction is already ``tau(pred)`` and is used as is.
    """
    pred, target_linear = E.as_tensor(pred), E.as_tensor(target_linear)
    if pred.shape != target_linear.shape:
        raise ValueError(f"loss: shape mismatch {pred.shape} vs {target_linear.shape}")
    if pred_domain not in ("linear", "mu"):
        raise ValueError(f"unknown prediction domain {pred_domain!r}")
    zp = pred if pred_domain == "mu" else mu_law(pred, mu)
    zt = mu_law(target_linear, mu)
    loss = l1(zp, zt)
    if lambda_dasl:
        loss = E.add(loss, E.scale(d_asl(zp, zt, dilations), lambda_dasl))
    return loss
