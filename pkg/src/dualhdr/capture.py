"""Synthetic HDR scenes and the two capture paradigms.

Single-camera alternating exposure (AE) cycles EVs frame by frame. The dual
camera system (DCS) keeps the primary camera at EV 0 and lets the secondary
camera alternate low/high exposures, usually at a lower rate.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .radiometry import DEFAULT_GAMMA, ExposureMeta

MODE_AE = "AE"
MODE_DCS_PRIMARY = "DCS-primary"
MODE_DCS_SECONDARY = "DCS-secondary"
MODES = (MODE_AE, MODE_DCS_PRIMARY, MODE_DCS_SECONDARY)

PRIMARY = "primary"
SECONDARY = "secondary"


def derive_seed(seed: int, label: str) -> int:
    """Stable per-component seed: adding a new label never shifts existing streams."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Element:
    kind: str                      # "rect" or "disk"
    center: tuple                  # (x, y) in pixels at t = 0
    size: tuple                    # (w, h) for rect, (r, r) for disk
    radiance: tuple                # linear RGB
    velocity: tuple = (0.0, 0.0)   # px / s

    def __post_init__(self):
        if self.kind not in ("rect", "disk"):
            raise ValueError(f"unknown element kind {self.kind!r}")
        self.center = tuple(float(v) for v in self.center)
        self.size = tuple(float(v) for v in self.size)
        self.radiance = tuple(float(v) for v in self.radiance)
        self.velocity = tuple(float(v) for v in self.velocity)


@dataclass
class Scene:
    width: int
    height: int
    elements: List[Element] = field(default_factory=list)
    peak: float = 400.0
    dynamic_range: float = 1e4
    background_high: float = 40.0  # radiance at the bright end of the background ramp
    background_tint: tuple = (1.0, 1.0, 1.0)
    texture: float = 0.0           # relative amplitude of a static sinusoidal background texture
    duration: float = 1.0
    seed: int = 0

    @property
    def min_radiance(self) -> float:
        return self.peak / self.dynamic_range

    def to_json(self) -> dict:
        d = asdict(self)
        d["elements"] = [asdict(e) for e in self.elements]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Scene":
        d = dict(d)
        try:
            elements = [Element(**e) for e in d.pop("elements", [])]
            scene = cls(elements=elements, **d)
        except TypeError as exc:
            raise ValueError(f"invalid scene description: {exc}") from None
        if scene.width < 1 or scene.height < 1 or scene.peak <= 0 or scene.dynamic_range < 1:
            raise ValueError("invalid scene description: bad size, peak or dynamic range")
        scene.background_tint = tuple(scene.background_tint)
        return scene


def render_radiance(scene: Scene, t: float) -> np.ndarray:
    """Linear radiance ``(H, W, 3)`` at time ``t`` seconds; values in ``[peak/DR, peak]``."""
    if t < 0:
        raise ValueError("render time must be nonnegative")
    h, w = scene.height, scene.width
    lo = scene.min_radiance
    hi = min(scene.background_high, scene.peak)
    xs = (np.arange(w) + 0.5)
    ys = (np.arange(h) + 0.5)
    # log-linear ramp: darkest at the first column, brightest at the last
    frac = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    ramp = lo * (hi / lo) ** frac
    bg = np.broadcast_to(ramp[None, :], (h, w)).copy()
    if scene.texture:
        tex = np.sin(xs[None, :] * 0.9) * np.sin(ys[:, None] * 0.7)
        bg = bg * (1.0 + scene.texture * tex)
    img = bg[:, :, None] * np.asarray(scene.background_tint)[None, None, :]
    gx, gy = np.meshgrid(xs, ys)
    for e in scene.elements:
        cx = e.center[0] + e.velocity[0] * t
        cy = e.center[1] + e.velocity[1] * t
        if e.kind == "rect":
            mask = (np.abs(gx - cx) < e.size[0] / 2) & (np.abs(gy - cy) < e.size[1] / 2)
        else:
            mask = (gx - cx) ** 2 + (gy - cy) ** 2 < e.size[0] ** 2
        img[mask] = e.radiance
    return np.clip(img, lo, scene.peak)


def random_scene(seed: int, width: int = 32, height: int = 32, n_moving: int = 3,
                 n_emitters: int = 1, max_speed: float = 20.0, duration: float = 1.0,
                 peak: float = 400.0, dynamic_range: float = 1e4) -> Scene:
    """A random scene of moving rectangles/disks and static bright emitters."""
    rng = rng_for(seed, "scene")
    lo = peak / dynamic_range
    elements = []
    for _ in range(n_moving):
        kind = "rect" if rng.random() < 0.5 else "disk"
        s = rng.uniform(0.15, 0.35) * min(width, height)
        size = (s, rng.uniform(0.6, 1.4) * s) if kind == "rect" else (s / 2, s / 2)
        level = math.exp(rng.uniform(math.log(lo * 20), math.log(peak / 4)))
        tint = rng.uniform(0.5, 1.0, size=3)
        speed = rng.uniform(0.3, 1.0) * max_speed
        angle = rng.uniform(0, 2 * math.pi)
        elements.append(Element(kind, (rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height),
                                size, tuple(level * tint), (speed * math.cos(angle), speed * math.sin(angle))))
    for _ in range(n_emitters):
        s = rng.uniform(0.08, 0.18) * min(width, height)
        level = peak * rng.uniform(0.5, 1.0)
        elements.append(Element("disk", (rng.uniform(0.15, 0.85) * width, rng.uniform(0.15, 0.85) * height),
                                (s, s), (level, level, level * rng.uniform(0.7, 1.0))))
    # the brightest emitter sits exactly at peak so the scene spans the full range
    if n_emitters:
        elements[-1].radiance = (peak, peak, peak)
    return Scene(width=width, height=height, elements=elements, peak=peak, dynamic_range=dynamic_range,
                 background_high=float(rng.uniform(20.0, 80.0)), texture=float(rng.uniform(0.1, 0.3)),
                 duration=duration, seed=seed)


def default_scene(width: int = 64, height: int = 64) -> Scene:
    """The default dynamic scene used by the comparison experiments."""
    s = min(width, height)
    lo_radiance = 400.0 / 1e4
    return Scene(
        width=width, height=height, peak=400.0, dynamic_range=1e4, background_high=60.0,
        texture=0.2, duration=1.0, seed=0,
        elements=[
            Element("rect", (0.3 * width, 0.35 * height), (0.22 * s, 0.3 * s), (6.0, 3.0, 1.5), (12.0, 4.0)),
            Element("disk", (0.65 * width, 0.7 * height), (0.12 * s, 0.12 * s), (0.6, 1.2, 2.0), (-10.0, -3.0)),
            Element("rect", (0.55 * width, 0.2 * height), (0.15 * s, 0.1 * s), (lo_radiance * 40,) * 3, (0.0, 8.0)),
            Element("disk", (0.8 * width, 0.25 * height), (0.09 * s, 0.09 * s), (400.0, 400.0, 400.0)),
            Element("disk", (0.2 * width, 0.8 * height), (0.06 * s, 0.06 * s), (250.0, 220.0, 160.0)),
        ],
    )


# ---------------------------------------------------------------------------
# frames and exposure


@dataclass
class LdrFrame:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    meta: ExposureMeta
    timestamp: int             # microseconds
    camera_id: str
    frame_index: int
    bit_depth: Optional[int] = 8

    @property
    def ev(self) -> int:
        return self.meta.ev

    def manifest_entry(self) -> dict:
        return {"frame_index": self.frame_index, "timestamp_us": self.timestamp, "camera_id": self.camera_id,
                "ev": self.meta.ev, "exposure_time": self.meta.exposure_time, "gamma": self.meta.gamma,
                "bit_depth": self.bit_depth}


def quantize(x: np.ndarray, bit_depth: Optional[int]) -> np.ndarray:
    if bit_depth is None:
        return x
    levels = (1 << int(bit_depth)) - 1
    return np.round(x * levels) / levels


def expose(hdr: np.ndarray, meta: ExposureMeta, noise_sigma: float = 0.0, bit_depth: Optional[int] = 8,
           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Form an LDR image: ``quantize(clip((H*t)**(1/gamma) + noise, 0, 1))``.

    ``bit_depth=None`` disables quantization (the ideal sensor).
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    if bit_depth is not None and not 8 <= bit_depth <= 16:
        raise ValueError("bit_depth must be in 8..16 or None")
    exposed = np.power(np.maximum(np.asarray(hdr, dtype=np.float64) * meta.exposure_time, 0.0), 1.0 / meta.gamma)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        exposed = exposed + rng.normal(0.0, noise_sigma, size=exposed.shape)
    return quantize(np.clip(exposed, 0.0, 1.0), bit_depth)


@dataclass
class CaptureSchedule:
    mode: str
    ev_cycle: tuple = (-2, 0, 2)
    base_exposure: float = 0.01
    frame_rate: float = 30.0
    duration: float = 1.0
    start_offset: float = 0.0  # seconds; lets the secondary stream run asynchronously
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown capture mode {self.mode!r}")
        self.ev_cycle = tuple(int(e) for e in self.ev_cycle)
        if self.mode == MODE_DCS_PRIMARY:
            self.ev_cycle = (0,)
        if self.mode == MODE_DCS_SECONDARY and (not self.ev_cycle or 0 in self.ev_cycle):
            raise ValueError("DCS-secondary cycles non-zero EVs only")
        if self.frame_rate <= 0 or self.base_exposure <= 0 or self.duration <= 0:
            raise ValueError("frame_rate, base_exposure and duration must be positive")

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration * self.frame_rate)))

    @property
    def camera_id(self) -> str:
        return SECONDARY if self.mode == MODE_DCS_SECONDARY else PRIMARY

    def ev_at(self, k: int) -> int:
        return self.ev_cycle[k % len(self.ev_cycle)]

    def time_at(self, k: int) -> float:
        return self.start_offset + k / self.frame_rate


NoiseSpec = Union[float, dict]


def _sigma_for(noise: NoiseSpec, ev: int) -> float:
    if isinstance(noise, dict):
        return float(noise.get(ev, noise.get(str(ev), 0.0)))
    return float(noise)


def run_schedule(scene: Scene, schedule: CaptureSchedule, noise: NoiseSpec = 0.0,
                 bit_depth: Optional[int] = 8, seed: int = 0) -> List[LdrFrame]:
    """Capture a timestamped LDR stream following ``schedule``."""
    rng = rng_for(seed, f"noise/{schedule.mode}")
    frames = []
    for k in range(schedule.n_frames):
        ev = schedule.ev_at(k)
        t = schedule.time_at(k)
        meta = ExposureMeta(exposure_time=schedule.base_exposure * 2.0 ** ev, ev=ev, gamma=schedule.gamma)
        hdr = render_radiance(scene, t)
        img = expose(hdr, meta, _sigma_for(noise, ev), bit_depth, rng)
        frames.append(LdrFrame(img, meta, int(round(t * 1e6)), schedule.camera_id, k, bit_depth))
    return frames


def apply_parallax(frame: LdrFrame, disparity_px: float) -> LdrFrame:
    """Shift the frame horizontally by ``disparity_px`` (positive = right), replicating edges."""
    w = frame.image.shape[1]
    if abs(disparity_px) >= w:
        raise ValueError("disparity must be smaller than the frame width")
    if disparity_px == 0:
        return replace(frame, image=frame.image.copy())
    src = np.arange(w) - disparity_px
    lo = np.floor(src).astype(int)
    frac = (src - lo)[None, :, None]
    lo_c = np.clip(lo, 0, w - 1)
    hi_c = np.clip(lo + 1, 0, w - 1)
    img = frame.image[:, lo_c] * (1 - frac) + frame.image[:, hi_c] * frac
    return replace(frame, image=img)


# ---------------------------------------------------------------------------
# grouping


@dataclass
class FusionGroup:
    reference: LdrFrame
    low: LdrFrame
    high: LdrFrame
    ground_truth: Optional[np.ndarray] = None
    white_point: Optional[float] = None

    def __post_init__(self):
        if not self.low.ev < self.reference.ev < self.high.ev:
            raise ValueError("group EVs must satisfy low < reference < high")
        shapes = {self.reference.image.shape, self.low.image.shape, self.high.image.shape}
        if len(shapes) != 1:
            raise ValueError("group frames must share a spatial size")

    @property
    def frames(self) -> tuple:
        return self.low, self.reference, self.high

    def normalized_truth(self) -> Optional[np.ndarray]:
        if self.ground_truth is None:
            return None
        wp = self.white_point or float(self.ground_truth.max())
        return np.clip(self.ground_truth / wp, 0.0, 1.0)


def complete_pairs(nonref: Sequence[LdrFrame]) -> list:
    """Consecutive (low, high) pairs of an alternating stream, scanned left to right."""
    pairs, k = [], 0
    while k + 1 < len(nonref):
        a, b = nonref[k], nonref[k + 1]
        if a.ev < 0 < b.ev:
            pairs.append((a, b))
            k += 2
        elif b.ev < 0 < a.ev:
            pairs.append((b, a))
            k += 2
        else:
            k += 1
    return pairs


def _truth(scene: Optional[Scene], frame: LdrFrame):
    if scene is None:
        return None, None
    return render_radiance(scene, frame.timestamp / 1e6), scene.peak


def group_frames(ref_stream: Sequence[LdrFrame], nonref_stream: Sequence[LdrFrame],
                 scene: Optional[Scene] = None) -> List[FusionGroup]:
    """Attach to every reference frame the low/high pair whose midpoint is nearest in time.

    Ties go to the earlier pair. When ``scene`` is given, each group carries
    the radiance at its reference timestamp as ground truth.
    """
    pairs = complete_pairs(nonref_stream)
    if not pairs:
        raise ValueError("non-reference stream has no complete low/high pair")
    mids = np.array([(lo.timestamp + hi.timestamp) / 2.0 for lo, hi in pairs])
    groups = []
    for ref in sorted(ref_stream, key=lambda f: f.timestamp):
        j = int(np.argmin(np.abs(mids - ref.timestamp)))  # argmin keeps the first of equal distances
        lo, hi = pairs[j]
        gt, wp = _truth(scene, ref)
        groups.append(FusionGroup(ref, lo, hi, gt, wp))
    return groups


def ae_group_frames(ae_stream: Sequence[LdrFrame], scene: Optional[Scene] = None,
                    policy: str = "adjacent") -> List[FusionGroup]:
    """Group each EV-0 frame of an alternating stream with neighbouring low/high frames.

    ``adjacent``: nearest preceding low and nearest following high, falling back
    to the other direction at the stream ends. ``nearest``: closest in time.
    """
    stream = sorted(ae_stream, key=lambda f: f.timestamp)
    refs = [k for k, f in enumerate(stream) if f.ev == 0]
    if not refs:
        raise ValueError("alternating stream contains no EV-0 frames")
    lows = [k for k, f in enumerate(stream) if f.ev < 0]
    highs = [k for k, f in enumerate(stream) if f.ev > 0]
    if not lows or not highs:
        raise ValueError("alternating stream lacks low or high exposures")

    def pick(cands, k, prefer_before):
        if policy == "nearest":
            return min(cands, key=lambda c: (abs(stream[c].timestamp - stream[k].timestamp), c))
        before = [c for c in cands if c < k]
        after = [c for c in cands if c > k]
        if prefer_before:
            return before[-1] if before else after[0]
        return after[0] if after else before[-1]

    if policy not in ("adjacent", "nearest"):
        raise ValueError(f"unknown AE grouping policy {policy!r}")
    groups = []
    for k in refs:
        ref = stream[k]
        gt, wp = _truth(scene, ref)
        groups.append(FusionGroup(ref, stream[pick(lows, k, True)], stream[pick(highs, k, False)], gt, wp))
    return groups


# ---------------------------------------------------------------------------
# whole captures


@dataclass
class CaptureConfig:
    ev_low: int = -2
    ev_high: int = 2
    base_exposure: float = 0.01
    frame_rate: float = 30.0
    duration: float = 0.4
    pair_divisor: int = 4        # reference frames per low/high pair
    secondary_offset: float = 0.0
    disparity: float = 0.0
    noise: float = 0.002
    bit_depth: int = 8


def capture_dcs(scene: Scene, cfg: CaptureConfig, seed: int):
    """Reference stream, (parallax-shifted) non-reference stream and their groups."""
    ref_sched = CaptureSchedule(MODE_DCS_PRIMARY, base_exposure=cfg.base_exposure, frame_rate=cfg.frame_rate,
                                duration=cfg.duration)
    sec_rate = cfg.frame_rate * 2.0 / cfg.pair_divisor
    sec_sched = CaptureSchedule(MODE_DCS_SECONDARY, ev_cycle=(cfg.ev_low, cfg.ev_high),
                                base_exposure=cfg.base_exposure, frame_rate=sec_rate, duration=cfg.duration,
                                start_offset=cfg.secondary_offset)
    ref = run_schedule(scene, ref_sched, cfg.noise, cfg.bit_depth, derive_seed(seed, "primary"))
    sec = run_schedule(scene, sec_sched, cfg.noise, cfg.bit_depth, derive_seed(seed, "secondary"))
    if cfg.disparity:
        sec = [apply_parallax(f, cfg.disparity) for f in sec]
    return ref, sec, group_frames(ref, sec, scene)


def capture_ae(scene: Scene, cfg: CaptureConfig, seed: int):
    sched = CaptureSchedule(MODE_AE, ev_cycle=(cfg.ev_low, 0, cfg.ev_high), base_exposure=cfg.base_exposure,
                            frame_rate=cfg.frame_rate, duration=cfg.duration)
    stream = run_schedule(scene, sched, cfg.noise, cfg.bit_depth, derive_seed(seed, "ae"))
    return stream, ae_group_frames(stream, scene)


def synthetic_groups(n_groups: int, size: int = 32, seed: int = 0, cfg: Optional[CaptureConfig] = None,
                     groups_per_scene: int = 4, max_speed: float = 20.0) -> List[FusionGroup]:
    """DCS fusion groups drawn from independent random scenes (a training/validation set)."""
    cfg = cfg or CaptureConfig()
    out: List[FusionGroup] = []
    i = 0
    while len(out) < n_groups:
        scene_seed = derive_seed(seed, f"scene/{i}")
        scene = random_scene(scene_seed, size, size, max_speed=max_speed, duration=cfg.duration)
        _, _, groups = capture_dcs(scene, cfg, scene_seed)
        step = max(1, len(groups) // groups_per_scene)
        out.extend(groups[::step][:groups_per_scene])
        i += 1
    return out[:n_groups]
