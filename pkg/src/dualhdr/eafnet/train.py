"""Minibatch Adam training with rotation augmentation and a stepped learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .. import engine as E
from ..capture import FusionGroup, rng_for
from ..metrics import psnr_mu
from ..radiometry import build_input_stack
from .config import EafnetConfig
from .loss import hdr_loss
from .model import BRANCHES, Eafnet, Trace, stack_to_arrays

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    lr: float = 1e-3                   # desk scale; the full-scale schedule starts at 1e-4
    lr_floor: float = 1e-6
    decay_factor: float = 0.5
    decay_every: Optional[int] = None  # epochs; default epochs // 10
    augment: bool = True
    seed: int = 0
    attention_check_every: int = 25  # steps between sampled softmax-normalization checks

    def lr_at(self, epoch: int) -> float:
        every = self.decay_every or max(1, self.epochs // 10)
        return self.lr * self.decay_factor ** (epoch // every)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Batchable:
    """Input stacks and normalized targets as stacked arrays."""

    arrays: dict
    exposures: dict
    targets: Optional[np.ndarray]

    def __len__(self) -> int:
        return self.arrays["m"].shape[0]

    def take(self, idx) -> "Batchable":
        return Batchable({b: a[idx] for b, a in self.arrays.items()},
                         {b: e[idx] for b, e in self.exposures.items()},
                         None if self.targets is None else self.targets[idx])


def prepare(groups: Sequence[FusionGroup], cfg: EafnetConfig) -> Batchable:
    if not groups:
        raise ValueError("dataset is empty")
    stacks = [build_input_stack(g, cfg.gla_variant, c=cfg.c) for g in groups]
    arrays, e = stack_to_arrays(stacks, cfg)
    arrays = {b: a.astype(E.default_dtype()) for b, a in arrays.items()}
    truths = [g.normalized_truth() for g in groups]
    targets = None
    if all(t is not None for t in truths):
        targets = np.stack([np.transpose(t, (2, 0, 1)) for t in truths]).astype(E.default_dtype())
    return Batchable(arrays, e, targets)


def _rotate(batch: Batchable, ks: np.ndarray) -> Batchable:
    def rot(a):
        return np.stack([np.rot90(x, k, axes=(-2, -1)) for x, k in zip(a, ks)])

    return Batchable({b: rot(a) for b, a in batch.arrays.items()}, batch.exposures, rot(batch.targets))


def batch_loss(net: Eafnet, batch: Batchable, trace: Optional[Trace] = None) -> E.Tensor:
    out = net.forward_arrays(batch.arrays, batch.exposures, trace)
    cfg = net.cfg
    return hdr_loss(out, E.Tensor(batch.targets), cfg.lambda_dasl, cfg.mu, cfg.dasl_dilations, cfg.output_domain)


def predict(net: Eafnet, data: Batchable, batch_size: int = 8) -> np.ndarray:
    """Normalized outputs ``(N, 3, H, W)``."""
    outs = []
    with E.no_grad():
        for lo in range(0, len(data), batch_size):
            part = data.take(slice(lo, lo + batch_size))
            outs.append(net.to_linear(net.forward_arrays(part.arrays, part.exposures).data))
    return np.concatenate(outs)


def dataset_loss(net: Eafnet, data: Batchable, batch_size: int = 8) -> float:
    total = 0.0
    with E.no_grad():
        for lo in range(0, len(data), batch_size):
            part = data.take(slice(lo, lo + batch_size))
            total += float(batch_loss(net, part).data) * len(part)
    return total / len(data)


def mean_psnr_mu(net: Eafnet, data: Batchable) -> float:
    pred = predict(net, data)
    return float(np.mean([psnr_mu(np.transpose(p, (1, 2, 0)), np.transpose(t, (1, 2, 0)), net.cfg.mu)
                          for p, t in zip(pred, data.targets)]))


def check_attention(trace: Trace, tol: float = 1e-6) -> None:
    for key, a in trace.attention.items():
        err = float(np.abs(a.sum(axis=-1) - 1.0).max())
        if err > tol:
            raise AssertionError(f"attention rows at {key} deviate from 1 by {err:.3g}")


@dataclass
class TrainResult:
    net: Eafnet
    history: List[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    stopped_early: bool = False


def train(groups: Sequence[FusionGroup], cfg: EafnetConfig, tcfg: TrainConfig,
          val_groups: Optional[Sequence[FusionGroup]] = None, net: Optional[Eafnet] = None,
          start_epoch: int = 0, on_epoch: Optional[Callable[[dict, Eafnet], None]] = None) -> TrainResult:
    """Train on ``groups``; pass ``net``/``start_epoch`` to resume.

    Shuffling and augmentation draw from per-epoch streams derived from the
    seed, so a resumed run follows the same trajectory as an uninterrupted one.
    """
    data = prepare(groups, cfg)
    if data.targets is None:
        raise ValueError("training groups need ground truth")
    val = prepare(val_groups, cfg) if val_groups else None
    net = net if net is not None else Eafnet(cfg, seed=tcfg.seed)
    square = data.arrays["m"].shape[-1] == data.arrays["m"].shape[-2]
    try:
        result = TrainResult(net, initial_loss=dataset_loss(net, data))
    except E.NonFiniteError as exc:
        raise TrainingDiverged(f"non-finite values before training: {exc}") from exc
    step = 0
    for epoch in range(start_epoch, tcfg.epochs):
        lr = tcfg.lr_at(epoch)
        if lr < tcfg.lr_floor:
            result.stopped_early = True
            log.info("learning rate %.3g below floor at epoch %d; stopping", lr, epoch)
            break
        rng = rng_for(tcfg.seed, f"epoch/{epoch}")
        order = rng.permutation(len(data))
        total = 0.0
        for lo in range(0, len(data), tcfg.batch_size):
            batch = data.take(order[lo:lo + tcfg.batch_size])
            if tcfg.augment:
                ks = rng.integers(0, 4, size=len(batch)) if square else 2 * rng.integers(0, 2, size=len(batch))
                batch = _rotate(batch, ks)
            trace = Trace() if tcfg.attention_check_every and step % tcfg.attention_check_every == 0 else None
            try:
                loss = batch_loss(net, batch, trace)
            except E.NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}, step {step}: {exc}") from exc
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged(f"loss became {float(loss.data)} at epoch {epoch}, step {step}")
            if trace is not None:
                check_attention(trace)
            net.params.zero_grad()
            try:
                loss.backward()
            except E.NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite gradients at epoch {epoch}, step {step}: {exc}") from exc
            E.adam_step(net.params, lr)
            total += float(loss.data) * len(batch)
            step += 1
        record = {"epoch": epoch + 1, "loss": total / len(data), "lr": lr,
                  "val_psnr_mu": mean_psnr_mu(net, val) if val is not None else None}
        result.history.append(record)
        log.debug("epoch %d loss %.5f", epoch + 1, record["loss"])
        if on_epoch is not None:
            on_epoch(record, net)
    result.final_loss = dataset_loss(net, data)
    return result
