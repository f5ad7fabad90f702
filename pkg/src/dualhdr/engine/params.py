"""Named parameter collection, Adam, and the single-file checkpoint format.

Checkpoint layout::

    b"DHCK"                      magic
    uint64 little-endian         header length in bytes
    header                       UTF-8 JSON: {"tensors": [{name, shape, dtype, offset}], "meta": {...}}
    payload                      contiguous little-endian float32 data
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from .core import Tensor, default_dtype

MAGIC = b"DHCK"


class ParamStore:
    """Ordered ``name -> Tensor`` map plus Adam moment buffers."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=default_dtype()), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def astype(self, dtype) -> "ParamStore":
        """Copy with every tensor cast (used to run gradient checks in float64)."""
        out = ParamStore()
        for name, t in self._params.items():
            nt = Tensor.__new__(Tensor)
            nt.data = t.data.astype(dtype)
            nt.grad = None
            nt.requires_grad = True
            nt._parents = ()
            nt._backward = None
            nt.op = "leaf"
            nt.name = name
            out._params[name] = nt
        return out

    def state_arrays(self) -> dict:
        return {name: t.data for name, t in self._params.items()}


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place. Parameters without a gradient are skipped."""
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in params.m:
            params.m[name] = np.zeros_like(p.data)
            params.v[name] = np.zeros_like(p.data)
        m, v = params.m[name], params.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.data.dtype)


def save_checkpoint(path, params: ParamStore, meta: Optional[dict] = None,
                    with_optimizer: bool = True) -> None:
    """Write parameters (and Adam state) atomically to ``path``."""
    entries, blobs, offset = [], [], 0

    def push(name, arr):
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes

    for name, t in params.items():
        push(name, t.data)
    if with_optimizer:
        for name in params:
            if name in params.m:
                push(f"adam.m/{name}", params.m[name])
                push(f"adam.v/{name}", params.v[name])
    header = {"tensors": entries, "meta": dict(meta or {}), "adam_step": params.step}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(header, {name: float32 array})``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return header, arrays


def load_into(params: ParamStore, path) -> dict:
    """Load a checkpoint into an existing store; shapes must match. Returns the header meta."""
    header, arrays = read_checkpoint(path)
    for name, t in params.items():
        if name not in arrays:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        if tuple(arrays[name].shape) != t.shape:
            raise ValueError(f"shape mismatch for {name!r}: checkpoint {arrays[name].shape} vs model {t.shape}")
    extra = [n for n in arrays if not n.startswith("adam.") and n not in params]
    if extra:
        raise ValueError(f"checkpoint has unexpected tensor {extra[0]!r}")
    for name, t in params.items():
        t.data = arrays[name].astype(t.data.dtype)
        if f"adam.m/{name}" in arrays:
            params.m[name] = arrays[f"adam.m/{name}"].astype(t.data.dtype)
            params.v[name] = arrays[f"adam.v/{name}"].astype(t.data.dtype)
    params.step = int(header.get("adam_step", 0))
    return header.get("meta", {})
