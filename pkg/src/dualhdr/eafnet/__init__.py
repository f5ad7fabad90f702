"""Exposure-adaptive fusion network and its training loop."""

from .config import EafnetConfig, full_scale, tiny
from .loss import asl, d_asl, hdr_loss, mu_law
from .model import (
    Eafnet,
    Trace,
    aca,
    cross_scale_guidance,
    efsm,
    extract_features,
    fuse,
    init_params,
    restore,
)
from .train import TrainConfig, TrainingDiverged, TrainResult, train
