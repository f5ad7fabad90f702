"""Fidelity and temporal-stability metrics.

Fidelity metrics take images in [0, 1] (normalized linear radiance or its
mu-law tonemap). Sequence metrics take a list of frames and a ``domain``:
``"identity"`` uses pixel values as they are (LDR or already tonemapped),
``"mu"`` tonemaps normalized radiance first, ``"linear"`` is an alias of
identity kept for readability at call sites.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .radiometry import DEFAULT_MU, mu_tonemap

PSNR_CAP = 99.0
DOMAINS = ("identity", "linear", "mu")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _local_mean(x: np.ndarray, g: np.ndarray, norm: np.ndarray) -> np.ndarray:
    y = correlate1d(x, g, axis=0, mode="constant")
    y = correlate1d(y, g, axis=1, mode="constant")
    return y / norm


def _ssim_channel(a, b, g, c1, c2):
    ones = np.ones_like(a)
    norm = correlate1d(correlate1d(ones, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    mu_a = _local_mean(a, g, norm)
    mu_b = _local_mean(b, g, norm)
    var_a = _local_mean(a * a, g, norm) - mu_a ** 2
    var_b = _local_mean(b * b, g, norm) - mu_b ** 2
    cov = _local_mean(a * b, g, norm) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM averaged over pixels and channels.

    Windows are truncated at the image border and their weights renormalized,
    so any image size (including smaller than the window) is valid.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return float(np.mean([_ssim_channel(a[:, :, k], b[:, :, k], g, c1, c2) for k in range(a.shape[2])]))


def psnr_mu(a_linear, b_linear, mu: float = DEFAULT_MU) -> float:
    return psnr(mu_tonemap(a_linear, mu), mu_tonemap(b_linear, mu))


def ssim_mu(a_linear, b_linear, mu: float = DEFAULT_MU) -> float:
    return ssim(mu_tonemap(a_linear, mu), mu_tonemap(b_linear, mu))


def _to_domain(frame, domain: str, mu: float) -> np.ndarray:
    if domain not in DOMAINS:
        raise ValueError(f"unknown luminance domain {domain!r}")
    return mu_tonemap(frame, mu) if domain == "mu" else np.asarray(frame, dtype=np.float64)


def frame_luminance(frames: Sequence[np.ndarray], domain: str = "identity", mu: float = DEFAULT_MU) -> np.ndarray:
    """Per-frame mean over all pixels and channels."""
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    return np.array([float(_to_domain(f, domain, mu).mean()) for f in frames])


def l_avg(frames, domain: str = "identity", mu: float = DEFAULT_MU) -> float:
    return float(frame_luminance(frames, domain, mu).mean())


def lsd(frames, domain: str = "identity", mu: float = DEFAULT_MU) -> float:
    """Population standard deviation of per-frame mean luminance."""
    lum = frame_luminance(frames, domain, mu)
    if (lum == lum[0]).all():
        return 0.0  # the mean of equal values can round away from them
    return float(np.sqrt(np.mean((lum - lum.mean()) ** 2)))


def t_ssim(frames, domain: str = "identity", mu: float = DEFAULT_MU) -> Optional[float]:
    """Mean SSIM between consecutive frames; ``None`` for fewer than two frames."""
    if len(frames) < 2:
        return None
    mapped = [_to_domain(f, domain, mu) for f in frames]
    return float(np.mean([ssim(x, y) for x, y in zip(mapped[:-1], mapped[1:])]))


@dataclass
class MetricsReport:
    psnr_mu: Optional[List[float]] = None
    psnr_linear: Optional[List[float]] = None
    ssim_mu: Optional[List[float]] = None
    ssim_linear: Optional[List[float]] = None
    lsd: float = 0.0
    t_ssim: Optional[float] = None
    l_avg: float = 0.0
    n_frames: int = 0
    domain: str = "mu"
    luminance: List[float] = field(default_factory=list)

    @property
    def has_fidelity(self) -> bool:
        return self.psnr_mu is not None

    def means(self) -> dict:
        out = {}
        for key in ("psnr_mu", "psnr_linear", "ssim_mu", "ssim_linear"):
            vals = getattr(self, key)
            if vals is not None:
                out[key] = float(np.mean(vals))
        return out

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["mean"] = self.means()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["frame", "luminance"] + [k for k in ("psnr_mu", "psnr_linear", "ssim_mu", "ssim_linear")
                                          if getattr(self, k) is not None]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i in range(self.n_frames):
            w.writerow([i] + [repr(float(self.luminance[i]))] + [repr(float(getattr(self, k)[i])) for k in cols[2:]])
        return buf.getvalue()


def evaluate_sequence(outputs: Sequence[np.ndarray], ground_truths: Optional[Sequence[np.ndarray]] = None,
                      domain: str = "mu", mu: float = DEFAULT_MU) -> MetricsReport:
    """Per-frame fidelity (when ground truth is available) plus sequence stability.

    Frames are normalized linear radiance ``(H, W, 3)``.
    """
    if len(outputs) == 0:
        raise ValueError("cannot evaluate an empty sequence")
    rep = MetricsReport(n_frames=len(outputs), domain=domain)
    rep.luminance = [float(v) for v in frame_luminance(outputs, domain, mu)]
    rep.lsd = lsd(outputs, domain, mu)
    rep.l_avg = l_avg(outputs, domain, mu)
    rep.t_ssim = t_ssim(outputs, domain, mu)
    if ground_truths is not None:
        if len(ground_truths) != len(outputs):
            raise ValueError("outputs and ground truths differ in length")
        rep.psnr_mu = [psnr_mu(o, g, mu) for o, g in zip(outputs, ground_truths)]
        rep.psnr_linear = [psnr(o, g) for o, g in zip(outputs, ground_truths)]
        rep.ssim_mu = [ssim_mu(o, g, mu) for o, g in zip(outputs, ground_truths)]
        rep.ssim_linear = [ssim(o, g) for o, g in zip(outputs, ground_truths)]
    return rep
