"""Desk-scale experiments: learning efficacy, ablations and AE-vs-DCS flicker."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .capture import (CaptureConfig, FusionGroup, Scene, capture_ae, capture_dcs, default_scene, derive_seed,
                      synthetic_groups)
from .eafnet import Eafnet, EafnetConfig, TrainConfig, train
from .eafnet.train import mean_psnr_mu, prepare
from .metrics import lsd, psnr_mu
from .radiometry import gamma_to_linear

VARIANTS: Dict[str, dict] = {
    "full": {},
    "no-gla": {"use_gla": False},
    "no-efsm": {"use_efsm": False},
    "ca": {"attention": "ca"},
}


def reference_baseline(groups: Sequence[FusionGroup], mu: float = 5000.0) -> float:
    """Mean PSNR-mu of the exposure-compensated reference frame alone."""
    scores = []
    for g in groups:
        pred = gamma_to_linear(g.reference.image, g.reference.meta) / g.white_point
        scores.append(psnr_mu(pred, g.normalized_truth(), mu))
    return float(np.mean(scores))


@dataclass
class DeskResult:
    net: Eafnet
    baseline_psnr_mu: float
    heldout_psnr_mu: float
    initial_loss: float
    final_loss: float
    seconds: float
    history: List[dict] = field(default_factory=list)

    @property
    def loss_reduction(self) -> float:
        return self.initial_loss / self.final_loss

    @property
    def gain_db(self) -> float:
        return self.heldout_psnr_mu - self.baseline_psnr_mu

    def summary(self) -> dict:
        return {"baseline_psnr_mu": self.baseline_psnr_mu, "heldout_psnr_mu": self.heldout_psnr_mu,
                "gain_db": self.gain_db, "initial_loss": self.initial_loss, "final_loss": self.final_loss,
                "loss_reduction": self.loss_reduction, "seconds": self.seconds, "epochs": len(self.history)}


def desk_data(n_train: int = 64, n_val: int = 16, size: int = 32, seed: int = 0,
              capture: Optional[CaptureConfig] = None):
    tr = synthetic_groups(n_train, size, seed=derive_seed(seed, "train"), cfg=capture)
    va = synthetic_groups(n_val, size, seed=derive_seed(seed, "val"), cfg=capture)
    return tr, va


def desk_training(model: Optional[EafnetConfig] = None, training: Optional[TrainConfig] = None,
                  n_train: int = 64, n_val: int = 16, size: int = 32, data_seed: int = 0, seed: int = 0,
                  data=None, on_epoch=None) -> DeskResult:
    """Train on simulated groups and score on held-out ones against the reference-only baseline."""
    model = model or EafnetConfig()
    training = replace(training or TrainConfig(), seed=seed)
    tr, va = data if data is not None else desk_data(n_train, n_val, size, data_seed)
    t0 = time.perf_counter()
    res = train(tr, model, training, net=Eafnet(model, seed=derive_seed(seed, "init")), on_epoch=on_epoch)
    seconds = time.perf_counter() - t0
    held = mean_psnr_mu(res.net, prepare(va, model))
    return DeskResult(res.net, reference_baseline(va, model.mu), held, res.initial_loss, res.final_loss,
                      seconds, res.history)


def ablation(variants: Sequence[str] = tuple(VARIANTS), seeds: Sequence[int] = (0, 1, 2),
             training: Optional[TrainConfig] = None, n_train: int = 64, n_val: int = 16, size: int = 32,
             data_seed: int = 0, base: Optional[EafnetConfig] = None, log=None,
             known: Optional[Dict[tuple, float]] = None) -> dict:
    """Held-out PSNR-mu of each variant over several training seeds (same data for all runs).

    ``known`` maps ``(variant, seed)`` to a score already obtained with the
    same settings; those runs are skipped.
    """
    known = known or {}
    base = base or EafnetConfig()
    data = desk_data(n_train, n_val, size, data_seed)
    out = {}
    for name in variants:
        cfg = replace(base, **VARIANTS[name])
        scores = []
        for s in seeds:
            if (name, s) in known:
                scores.append(known[(name, s)])
                continue
            r = desk_training(cfg, training, seed=s, data=data)
            scores.append(r.heldout_psnr_mu)
            if log is not None:
                log(f"{name} seed={s} psnr_mu={r.heldout_psnr_mu:.3f} ({r.seconds:.0f}s)")
        out[name] = {"psnr_mu": scores, "mean": float(np.mean(scores)), "std": float(np.std(scores))}
    return out


def flicker_study(net: Optional[Eafnet] = None, scene: Optional[Scene] = None,
                  capture: Optional[CaptureConfig] = None, seed: int = 0) -> dict:
    """LSD of raw reference streams and of reconstructed sequences for both capture paradigms.

    Raw camera streams are compared on their recorded values. Reconstructions
    (the network on DCS groups, exposure compensation of every AE frame) are
    compared after the mu-law on white-point-normalized radiance.
    """
    scene = scene or default_scene()
    capture = capture or CaptureConfig()
    ref, _, groups = capture_dcs(scene, capture, derive_seed(seed, "dcs"))
    stream, _ = capture_ae(scene, capture, derive_seed(seed, "ae"))
    wp = scene.peak
    res = {
        "lsd_ae_stream": lsd([f.image for f in stream]),
        "lsd_dcs_stream": lsd([f.image for f in ref]),
        "lsd_ae_naive": lsd([gamma_to_linear(f.image, f.meta) / wp for f in stream], "mu"),
        "lsd_dcs_naive": lsd([gamma_to_linear(f.image, f.meta) / wp for f in ref], "mu"),
        "lsd_ground_truth": lsd([g.normalized_truth() for g in groups], "mu"),
        "n_frames": len(ref),
    }
    d = res["lsd_dcs_stream"]
    res["stream_ratio"] = res["lsd_ae_stream"] / d if d > 0 else float("inf")
    if net is not None:
        outs = [net.forward(g) for g in groups]
        res["lsd_dcs_reconstruction"] = lsd(outs, "mu")
        res["psnr_mu_dcs_reconstruction"] = float(np.mean([psnr_mu(o, g.normalized_truth(), net.cfg.mu)
                                                           for o, g in zip(outs, groups)]))
    return res
