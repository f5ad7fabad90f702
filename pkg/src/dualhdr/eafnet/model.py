"""EAFNet: pre-alignment, asymmetric cross-feature fusion and wavelet restoration.

Branch names are ``l`` (low), ``m`` (mid, the reference) and ``h`` (high).
Scales are numbered from 1 (full resolution). All image tensors are NCHW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import engine as E
from ..engine import ParamStore, Tensor
from ..radiometry import InputStack, build_input_stack, inverse_mu_tonemap
from .config import EafnetConfig

BRANCHES = ("l", "m", "h")
NONREF = ("l", "h")
SUBBANDS = ("ll", "lh", "hl", "hh")


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv(store, rng, name, c_out, c_in, k=3):
    store.add(f"{name}.w", _uniform(rng, (c_out, c_in, k, k), c_in * k * k))
    store.add(f"{name}.b", np.zeros(c_out))


def _fc(store, rng, name, d_out, d_in):
    store.add(f"{name}.w", _uniform(rng, (d_out, d_in), d_in))
    store.add(f"{name}.b", np.zeros(d_out))


def init_params(cfg: EafnetConfig, seed: int = 0) -> ParamStore:
    """Fan-in scaled uniform weights, zero biases. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    p = ParamStore()
    c, d = cfg.base_channels, cfg.token_dim
    for b in BRANCHES:
        _conv(p, rng, f"extract.{b}", c, cfg.branch_channels)
        for s in range(2, cfg.scales + 1):
            _conv(p, rng, f"down.{b}.{s}", c, c)
    _fc(p, rng, "fsb.fc1", c, c)
    _fc(p, rng, "fsb.fc2", c, c)
    _fc(p, rng, "efsb.fc1", c, c)
    _fc(p, rng, "efsb.fc2", c, c)
    _fc(p, rng, "efsb.exp", cfg.modulation_ratio * c, 1)
    _fc(p, rng, "efsb.fc3a", c, c + cfg.modulation_ratio * c)
    _fc(p, rng, "efsb.fc3b", c, c)
    _fc(p, rng, "efsb.fc3c", c, c)
    for b in NONREF:
        for s in range(1, cfg.scales + 1):
            for w in ("wq", "wk", "wv"):
                p.add(f"aca.{b}.{s}.{w}", _uniform(rng, (d, d), d))
        for s in range(1, cfg.scales):
            if cfg.use_guidance:
                _conv(p, rng, f"guid.{b}.{s}", c, c + c // 4)
        merge_in = c + (c // 4 if cfg.scales > 1 else 0) + (c if cfg.use_guidance and cfg.scales > 1 else 0)
        _conv(p, rng, f"fuse.{b}.merge", c, merge_in)
        _conv(p, rng, f"fuse.{b}.att1", c, 2 * c)
        _conv(p, rng, f"fuse.{b}.att2", c, c)
    _conv(p, rng, "restore.in", c, 4 * c)
    _conv(p, rng, "restore.down2", c, c)
    _conv(p, rng, "restore.down4", c, c)
    if cfg.use_dwt:
        for level, blocks in zip(("x1", "x2"), cfg.lbf_blocks):
            for j in range(blocks):
                for sb in SUBBANDS:
                    _conv(p, rng, f"restore.{level}.b{j}.{sb}.c1", c, c)
                    _conv(p, rng, f"restore.{level}.b{j}.{sb}.c2", c, c)
        _conv(p, rng, "restore.x4.mix", 4 * c, 4 * c, k=1)
    _conv(p, rng, "restore.out", 3, c)
    return p


def conv(p: ParamStore, name: str, x: Tensor, stride: int = 1) -> Tensor:
    return E.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride)


def fc(p: ParamStore, name: str, x: Tensor) -> Tensor:
    return E.fully_connected(x, p[f"{name}.w"], p[f"{name}.b"])


# ---------------------------------------------------------------------------
# network stages


@dataclass
class Features:
    """Per-scale feature maps; index 0 holds scale 1."""

    l: List[Tensor]
    m: List[Tensor]
    h: List[Tensor]

    def branch(self, b: str) -> List[Tensor]:
        return getattr(self, b)


def extract_features(inputs: Dict[str, Tensor], p: ParamStore, cfg: EafnetConfig) -> Features:
    """One 3x3 conv per branch, then stride-2 convs for each coarser scale."""
    out = {}
    for b in BRANCHES:
        f = E.relu(conv(p, f"extract.{b}", inputs[b]))
        maps = [f]
        for s in range(2, cfg.scales + 1):
            f = E.relu(conv(p, f"down.{b}.{s}", f, stride=2))
            maps.append(f)
        out[b] = maps
    return Features(**out)


def _selection(p: ParamStore, prefix: str, f: Tensor) -> Tensor:
    pooled = E.global_avg_pool(f)
    return E.sigmoid(fc(p, f"{prefix}.fc2", E.relu(fc(p, f"{prefix}.fc1", pooled))))


def _per_channel(f: Tensor, v: Tensor) -> Tensor:
    n, c = v.shape
    return E.mul(f, E.reshape(v, (n, c, 1, 1)))


def reference_selection(f_ref: Tensor, p: ParamStore) -> Tensor:
    """Feature-guided coefficients for the reference branch (one per channel)."""
    return _selection(p, "fsb", f_ref)


def exposure_selection(f_nr: Tensor, e: Tensor, p: ParamStore) -> Tensor:
    """Exposure-guided coefficients for a non-reference branch; ``e`` is ``(N, 1)``."""
    v_nr = _selection(p, "efsb", f_nr)
    v_t = fc(p, "efsb.exp", e)
    z = E.relu(fc(p, "efsb.fc3a", E.concat([v_nr, v_t], axis=1)))
    z = E.relu(fc(p, "efsb.fc3b", z))
    return E.sigmoid(fc(p, "efsb.fc3c", z))


def efsm(f_nr: Tensor, f_r: Tensor, e: Tensor, p: ParamStore):
    """Modulate features channel-wise; returns ``(f_nr_hat, f_r_hat)``."""
    return _per_channel(f_nr, exposure_selection(f_nr, e, p)), _per_channel(f_r, reference_selection(f_r, p))


def aca(f_r: Tensor, f_nr: Tensor, p: ParamStore, branch: str, scale: int, cfg: EafnetConfig):
    """Patch-token attention with reference-dominated logits ``(Q + K) K^T / sqrt(d)``.

    ``attention="ca"`` drops the self term (plain cross-attention ``Q K^T``).
    Returns the folded aligned features and the attention matrix.
    """
    prefix = f"aca.{branch}.{scale}"
    t_r = E.unfold(f_r, cfg.patch_size)
    t_nr = E.unfold(f_nr, cfg.patch_size)
    q = E.matmul(t_r, p[f"{prefix}.wq"])
    k = E.matmul(t_nr, p[f"{prefix}.wk"])
    v = E.matmul(t_nr, p[f"{prefix}.wv"])
    query = E.add(q, k) if cfg.attention == "aca" else q
    logits = E.scale(E.matmul(query, E.transpose(k)), 1.0 / math.sqrt(cfg.token_dim))
    a = E.softmax(logits, axis=-1)
    aligned = E.fold(E.matmul(a, v), f_nr.shape[1:], cfg.patch_size)
    return aligned, a


def cross_scale_guidance(f_nr: Tensor, coarse: Tensor, p: ParamStore, branch: str, scale: int) -> Tensor:
    """Concatenate fine features with pixel-shuffled coarse aligned features, then 3x3 conv."""
    return conv(p, f"guid.{branch}.{scale}", E.concat([f_nr, E.pixel_shuffle_up(coarse, 2)], axis=1))


def fuse(f_r: Tensor, aligned: Sequence[Tensor], guidance: Optional[Tensor], f_m: Tensor,
         p: ParamStore, branch: str) -> Tensor:
    """Merge aligned features of one branch and gate them with a spatial attention map.

    The output is ``<s * merged, f_m>``: the reference features ride along unmodulated.
    """
    parts = [aligned[0]]
    if len(aligned) > 1:
        parts.append(E.pixel_shuffle_up(aligned[1], 2))
    if guidance is not None:
        parts.append(guidance)
    merged = conv(p, f"fuse.{branch}.merge", E.concat(parts, axis=1))
    att = E.relu(conv(p, f"fuse.{branch}.att1", E.concat([f_r, merged], axis=1)))
    s = E.sigmoid(conv(p, f"fuse.{branch}.att2", att))
    return E.concat([E.mul(s, merged), f_m], axis=1)


def _lbf_path(x: Tensor, p: ParamStore, level: str, blocks: int) -> Tensor:
    bands = E.haar_dwt(x)
    out = []
    for sb, band in zip(SUBBANDS, bands):
        for j in range(blocks):
            r = conv(p, f"restore.{level}.b{j}.{sb}.c2", E.relu(conv(p, f"restore.{level}.b{j}.{sb}.c1", band)))
            band = E.add(band, r)
        out.append(band)
    return E.haar_iwt(out)


def restore(f_out: Tensor, p: ParamStore, cfg: EafnetConfig) -> Tensor:
    """Three-scale restoration; returns ``(N, 3, H, W)`` values in (0, 1).

    The values encode tonemapped or linear normalized radiance, per ``cfg.output_domain``.
    """
    x1 = E.relu(conv(p, "restore.in", f_out))
    x2 = E.relu(conv(p, "restore.down2", x1, stride=2))
    x4 = E.relu(conv(p, "restore.down4", x2, stride=2))
    if cfg.use_dwt:
        f1 = _lbf_path(x1, p, "x1", cfg.lbf_blocks[0])
        f2 = _lbf_path(x2, p, "x2", cfg.lbf_blocks[1])
        f4 = E.haar_iwt_packed(conv(p, "restore.x4.mix", E.haar_dwt_packed(x4)))
    else:
        f1, f2, f4 = x1, x2, x4
    up = E.bilinear_upsample(E.add(E.bilinear_upsample(f4, 2), f2), 2)
    return E.sigmoid(conv(p, "restore.out", E.add(up, f1)))


# ---------------------------------------------------------------------------
# full model


@dataclass
class Trace:
    """Intermediate values recorded during a forward pass (for checks and tests)."""

    attention: Dict[tuple, np.ndarray] = field(default_factory=dict)
    fused: Dict[str, Tensor] = field(default_factory=dict)
    features: Optional[Features] = None
    reference_features: Optional[Tensor] = None


def stack_to_arrays(stacks: Sequence[InputStack], cfg: EafnetConfig):
    """Batch input stacks into ``{branch: (N, C, H, W)}`` plus ``(N, 1)`` exposures."""
    keep = slice(None) if cfg.use_gla else slice(0, 6)
    arrays = {b: np.stack([getattr(s, name)[keep] for s in stacks])
              for b, name in zip(BRANCHES, ("low", "mid", "high"))}
    e = {"l": np.array([[s.e_low] for s in stacks]), "h": np.array([[s.e_high] for s in stacks])}
    return arrays, e


def pad_to_multiple(x: np.ndarray, multiple: int):
    """Edge-pad the last two axes up to a multiple; returns the padded array and the original size."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        x = np.pad(x, pad, mode="edge")
    return x, (h, w)


class Eafnet:
    def __init__(self, cfg: EafnetConfig, params: Optional[ParamStore] = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def forward_arrays(self, arrays: Dict[str, np.ndarray], exposures: Dict[str, np.ndarray],
                       trace: Optional[Trace] = None) -> Tensor:
        """Forward on batched numpy inputs; output is cropped back to the input size."""
        cfg, p = self.cfg, self.params
        size = None
        inputs = {}
        for b in BRANCHES:
            padded, size = pad_to_multiple(arrays[b], cfg.pad_multiple)
            inputs[b] = Tensor(padded)
        feats = extract_features(inputs, p, cfg)
        ref = feats.m
        ref_hat = [reference_selection(f, p) for f in ref] if cfg.use_efsm else None
        ref_mod = [_per_channel(f, v) for f, v in zip(ref, ref_hat)] if cfg.use_efsm else ref
        outs = []
        for b in NONREF:
            e = Tensor(exposures[b])
            nr = feats.branch(b)
            nr_mod = [_per_channel(f, exposure_selection(f, e, p)) for f in nr] if cfg.use_efsm else nr
            aligned = []
            for s in range(1, cfg.scales + 1):
                f_anr, a = aca(ref_mod[s - 1], nr_mod[s - 1], p, b, s, cfg)
                aligned.append(f_anr)
                if trace is not None:
                    trace.attention[(b, s)] = a.data
            guidance = None
            if cfg.use_guidance and cfg.scales > 1:
                coarse = aligned[-1]
                for s in range(cfg.scales - 1, 0, -1):
                    coarse = cross_scale_guidance(nr_mod[s - 1], coarse, p, b, s)
                guidance = coarse
            f_out = fuse(ref_mod[0], aligned[:2], guidance, ref[0], p, b)
            if trace is not None:
                trace.fused[b] = f_out
            outs.append(f_out)
        if trace is not None:
            trace.features = feats
            trace.reference_features = ref[0]
        out = restore(E.concat(outs, axis=1), p, cfg)
        h, w = size
        if out.shape[2:] != (h, w):
            out = out[:, :, :h, :w]
        return out

    def forward_stacks(self, stacks: Sequence[InputStack], trace: Optional[Trace] = None) -> Tensor:
        arrays, e = stack_to_arrays(stacks, self.cfg)
        return self.forward_arrays(arrays, e, trace)

    def stack(self, group) -> InputStack:
        return build_input_stack(group, self.cfg.gla_variant, c=self.cfg.c)

    def to_linear(self, out: np.ndarray) -> np.ndarray:
        """Map raw network output to normalized linear radiance."""
        if self.cfg.output_domain == "mu":
            return inverse_mu_tonemap(out, self.cfg.mu)
        return np.asarray(out, dtype=np.float64)

    def forward(self, group, trace: Optional[Trace] = None) -> np.ndarray:
        """Reconstruct one group: normalized radiance ``(H, W, 3)`` in [0, 1]."""
        with E.no_grad():
            out = self.forward_stacks([self.stack(group)], trace)
        return self.to_linear(np.transpose(out.data[0], (1, 2, 0)))

    def reconstruct(self, group) -> np.ndarray:
        """Linear radiance in scene units (normalized output times the white point)."""
        st = self.stack(group)
        with E.no_grad():
            out = self.forward_stacks([st])
        return self.to_linear(np.transpose(out.data[0], (1, 2, 0))) * st.white_point
