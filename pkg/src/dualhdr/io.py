"""File formats: 8-bit PNG frames, PFM radiance maps, JSON manifests and datasets on disk.

A dataset directory holds one sub-directory per capture mode::

    scene.json
    dcs/manifest.json   dcs/frames/*.png   dcs/gt/*.pfm
    ae/manifest.json    ae/frames/*.png    ae/gt/*.pfm

Each manifest lists every frame (with its exposure metadata) and the fusion
groups as indices into that list, plus the path of each group's ground truth.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .capture import FusionGroup, LdrFrame, Scene
from .radiometry import ExposureMeta


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# images


def write_png(path, image: np.ndarray) -> None:
    """Store an ``(H, W, 3)`` image in [0, 1] as 8-bit RGB."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def encode_pfm(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("PFM data must be finite")
    h, w, _ = img.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    # rows are stored bottom to top
    return header + np.ascontiguousarray(img[::-1].astype("<f4")).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    parts, pos = [], 0
    while len(parts) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError("truncated PFM header")
        parts.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1  # single whitespace byte after the scale
    kind, w, h, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    if kind not in ("PF", "Pf"):
        raise ValueError(f"not a PFM file (magic {kind!r})")
    channels = 3 if kind == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(data) - pos < 4 * n:
        raise ValueError("truncated PFM payload")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(h, w, channels)[::-1]
    arr = arr.astype(np.float32)
    return arr if channels == 3 else np.repeat(arr, 3, axis=2)


def write_pfm(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pfm(image))


def read_pfm(path) -> np.ndarray:
    """Load a PFM as ``float32 (H, W, 3)``."""
    return decode_pfm(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# scenes and datasets


def load_scene(path) -> Scene:
    try:
        d = read_json(path)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid scene JSON in {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ValueError(f"invalid scene JSON in {path}: expected an object")
    return Scene.from_json(d)


def save_scene(path, scene: Scene) -> None:
    write_json(path, scene.to_json())


def _frame_name(j: int, frame: LdrFrame) -> str:
    return f"{j:04d}_{frame.camera_id}_ev{frame.ev:+d}.png"


def save_capture(root, mode: str, groups: Sequence[FusionGroup], frames: Optional[Sequence[LdrFrame]] = None,
                 extra: Optional[dict] = None) -> List[Path]:
    """Write frames, ground truths and the manifest under ``root/mode``; returns the written paths.

    ``frames`` is the full captured stream. Without it only the frames used by
    ``groups`` are stored (training sets drawn from many scenes).
    """
    root = Path(root) / mode
    if frames is None:
        seen, frames = set(), []
        for g in groups:
            for f in (g.low, g.reference, g.high):
                if id(f) not in seen:
                    seen.add(id(f))
                    frames.append(f)
    index = {id(f): j for j, f in enumerate(frames)}
    written, entries = [], []
    for j, f in enumerate(frames):
        name = _frame_name(j, f)
        write_png(root / "frames" / name, f.image)
        written.append(root / "frames" / name)
        entries.append({**f.manifest_entry(), "file": f"frames/{name}"})
    group_entries = []
    for k, g in enumerate(groups):
        try:
            item = {role: index[id(fr)] for role, fr in (("reference", g.reference), ("low", g.low), ("high", g.high))}
        except KeyError:
            raise ValueError(f"group {k} uses a frame that is not in the stream") from None
        if g.ground_truth is not None:
            gt = f"gt/{k:04d}.pfm"
            write_pfm(root / gt, g.ground_truth)
            written.append(root / gt)
            item["ground_truth"] = gt
        item["white_point"] = g.white_point
        group_entries.append(item)
    manifest = {"mode": mode, "frames": entries, "groups": group_entries, **(extra or {})}
    write_json(root / "manifest.json", manifest)
    written.append(root / "manifest.json")
    return written


def _load_frame(root: Path, entry: dict) -> LdrFrame:
    meta = ExposureMeta(exposure_time=float(entry["exposure_time"]), ev=int(entry["ev"]),
                        gamma=float(entry["gamma"]))
    return LdrFrame(read_png(root / entry["file"]), meta, int(entry["timestamp_us"]), entry["camera_id"],
                    int(entry["frame_index"]), entry.get("bit_depth", 8))


def load_capture(root, mode: Optional[str] = None):
    """Frames and fusion groups of a capture directory (``root/mode`` or ``root`` itself)."""
    root = Path(root) / mode if mode else Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = read_json(manifest_path)
    frames = [_load_frame(root, e) for e in manifest["frames"]]
    groups = []
    for item in manifest["groups"]:
        gt = read_pfm(root / item["ground_truth"]).astype(np.float64) if item.get("ground_truth") else None
        groups.append(FusionGroup(frames[item["reference"]], frames[item["low"]], frames[item["high"]],
                                  gt, item.get("white_point")))
    return frames, groups, manifest


def load_outputs(root) -> List[np.ndarray]:
    """All PFM outputs of a directory in name order."""
    paths = sorted(Path(root).glob("*.pfm"))
    if not paths:
        raise FileNotFoundError(f"no PFM outputs in {root}")
    return [read_pfm(p) for p in paths]
