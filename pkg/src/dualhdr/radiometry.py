"""Non-learned radiometric transforms shared by the simulator, network, loss and metrics.

Images are ``(H, W, 3)`` float arrays. LDR values live in [0, 1]; HDR values
are nonnegative linear radiance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_GAMMA = 2.2
DEFAULT_MU = 5000.0
DEFAULT_EXPOSURE_SCALE = 0.1

GLA_AS_WRITTEN = "as-written"
GLA_INVERTED = "inverted"
GLA_VARIANTS = (GLA_AS_WRITTEN, GLA_INVERTED)


class DegenerateInputError(ValueError):
    """An input whose statistics make a transform undefined (e.g. an all-black reference)."""


@dataclass(frozen=True)
class ExposureMeta:
    exposure_time: float
    ev: int = 0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.exposure_time > 0:
            raise ValueError(f"exposure_time must be > 0, got {self.exposure_time}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError(f"{what}: input contains non-finite values")
    return x


def gamma_to_linear(ldr: np.ndarray, meta: ExposureMeta) -> np.ndarray:
    """Linearize an LDR frame and divide out its exposure time: ``L**gamma / t``."""
    ldr = _finite(ldr, "gamma_to_linear")
    return np.power(ldr, meta.gamma) / meta.exposure_time


def mu_tonemap(hdr: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    """mu-law compression of normalized radiance. Inputs are clamped to [0, 1] first."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    h = np.clip(np.asarray(hdr, dtype=np.float64), 0.0, 1.0)
    return np.log1p(mu * h) / np.log1p(mu)


def inverse_mu_tonemap(z: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    z = np.clip(np.asarray(z, dtype=np.float64), 0.0, 1.0)
    return np.expm1(z * np.log1p(mu)) / mu


def global_luminance_align(ldr: np.ndarray, ref: np.ndarray, variant: str = GLA_AS_WRITTEN) -> np.ndarray:
    """Rescale a non-reference frame by a ratio of whole-image means, then clamp to [0, 1].

    ``as-written`` multiplies by ``mean(ldr) / mean(ref)``; ``inverted`` by
    ``mean(ref) / mean(ldr)``, which brings the frame to the reference's level.
    """
    ldr = _finite(ldr, "global_luminance_align")
    ref = _finite(ref, "global_luminance_align")
    m_i, m_ref = float(ldr.mean()), float(ref.mean())
    if variant == GLA_AS_WRITTEN:
        if m_ref <= 0:
            raise DegenerateInputError("reference frame has zero mean luminance")
        ratio = m_i / m_ref
    elif variant == GLA_INVERTED:
        if m_i <= 0 or m_ref <= 0:
            raise DegenerateInputError("zero mean luminance in luminance alignment")
        ratio = m_ref / m_i
    else:
        raise ValueError(f"unknown GLA variant {variant!r}; expected one of {GLA_VARIANTS}")
    return np.clip(ldr * ratio, 0.0, 1.0)


def relative_exposure(t_i: float, t_m: float, c: float = DEFAULT_EXPOSURE_SCALE) -> float:
    """Scaled log2 exposure ratio of a branch relative to the reference."""
    if not (t_i > 0 and t_m > 0):
        raise ValueError("exposure times must be positive")
    return float(np.log2(t_i / t_m) * c)


@dataclass
class InputStack:
    """Network input for one group: three 9-channel ``(9, H, W)`` planes plus relative exposures.

    Channel order inside a branch is ``[L (3), H (3), G (3)]``.
    """

    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray
    e_low: float
    e_high: float
    white_point: float

    @property
    def channels(self) -> int:
        return self.low.shape[0] + self.mid.shape[0] + self.high.shape[0]


def _chw(img: np.ndarray) -> np.ndarray:
    return np.transpose(img, (2, 0, 1))


def stack_frames(low: np.ndarray, mid: np.ndarray, high: np.ndarray,
                 metas: tuple, gla_variant: str = GLA_AS_WRITTEN,
                 white_point: Optional[float] = None,
                 c: float = DEFAULT_EXPOSURE_SCALE) -> InputStack:
    """Assemble the three ``[L, H, G]`` branches for a (low, mid, high) LDR triplet.

    ``metas`` holds the three ``ExposureMeta`` in the same order. Linear
    planes are divided by ``white_point``; when it is not given, the maximum
    linear value over the group is used.
    """
    frames = (low, mid, high)
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames in a group must share a shape, got {sorted(shapes)}")
    m_low, m_mid, m_high = metas
    if not (m_low.exposure_time < m_mid.exposure_time < m_high.exposure_time):
        raise ValueError("group exposures must be ordered low < mid < high")
    linear = [gamma_to_linear(f, m) for f, m in zip(frames, metas)]
    if white_point is None:
        white_point = max(float(h.max()) for h in linear) or 1.0
    aligned = [global_luminance_align(low, mid, gla_variant), np.asarray(mid, dtype=np.float64),
               global_luminance_align(high, mid, gla_variant)]
    branches = [np.concatenate([_chw(np.asarray(f, dtype=np.float64)), _chw(h / white_point), _chw(g)], axis=0)
                for f, h, g in zip(frames, linear, aligned)]
    return InputStack(
        low=branches[0], mid=branches[1], high=branches[2],
        e_low=relative_exposure(m_low.exposure_time, m_mid.exposure_time, c),
        e_high=relative_exposure(m_high.exposure_time, m_mid.exposure_time, c),
        white_point=float(white_point),
    )


def build_input_stack(group, gla_variant: str = GLA_AS_WRITTEN, white_point: Optional[float] = None,
                      c: float = DEFAULT_EXPOSURE_SCALE) -> InputStack:
    """``stack_frames`` for a fusion group (anything with ``low``/``reference``/``high`` frames)."""
    frames = (group.low, group.reference, group.high)
    if white_point is None:
        white_point = getattr(group, "white_point", None)
    return stack_frames(*(f.image for f in frames), tuple(f.meta for f in frames),
                        gla_variant=gla_variant, white_point=white_point, c=c)
