from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..radiometry import DEFAULT_EXPOSURE_SCALE, DEFAULT_GAMMA, DEFAULT_MU, GLA_AS_WRITTEN, GLA_VARIANTS


@dataclass
class EafnetConfig:
    """Architecture and loss hyper-parameters.

    The defaults are the desk-scale model (8 channels); ``full_scale()``
    gives the 64-channel configuration. The ``use_*`` and ``attention``
    switches exist for ablations.
    """

    base_channels: int = 8
    scales: int = 2
    patch_size: int = 4
    modulation_ratio: int = 2
    gla_variant: str = GLA_AS_WRITTEN
    lambda_dasl: float = 0.25
    mu: float = DEFAULT_MU
    gamma: float = DEFAULT_GAMMA
    c: float = DEFAULT_EXPOSURE_SCALE
    dasl_dilations: tuple = (1, 2, 3)
    use_gla: bool = True
    use_efsm: bool = True
    attention: str = "aca"
    use_guidance: bool = True
    use_dwt: bool = True
    lbf_blocks: tuple = (2, 1)  # residual blocks per subband at x1 and x2
    output_domain: str = "mu"   # what the final sigmoid encodes: "mu" (tonemapped) or "linear" radiance

    def __post_init__(self):
        self.dasl_dilations = tuple(int(d) for d in self.dasl_dilations)
        self.lbf_blocks = tuple(int(b) for b in self.lbf_blocks)
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.base_channels < 4 or self.base_channels % 4:
            raise ValueError("base_channels must be a positive multiple of 4 (pixel shuffle by 2)")
        if self.gla_variant not in GLA_VARIANTS:
            raise ValueError(f"gla_variant must be one of {GLA_VARIANTS}")
        if self.attention not in ("aca", "ca"):
            raise ValueError("attention must be 'aca' or 'ca'")
        if self.output_domain not in ("mu", "linear"):
            raise ValueError("output_domain must be 'mu' or 'linear'")
        if self.patch_size < 1 or self.modulation_ratio < 1:
            raise ValueError("patch_size and modulation_ratio must be positive")

    @property
    def branch_channels(self) -> int:
        return 9 if self.use_gla else 6

    @property
    def token_dim(self) -> int:
        return self.base_channels * self.patch_size ** 2

    @property
    def pad_multiple(self) -> int:
        # fusion needs whole patches at the coarsest scale; restoration needs a DWT at x4
        fusion = 2 ** (self.scales - 1) * self.patch_size
        a, b = fusion, 8
        while b:
            a, b = b, a % b
        return fusion * 8 // a

    def to_json(self) -> dict:
        d = asdict(self)
        d["dasl_dilations"] = list(self.dasl_dilations)
        d["lbf_blocks"] = list(self.lbf_blocks)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EafnetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown EafnetConfig fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EafnetConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def full_scale() -> EafnetConfig:
    return EafnetConfig(base_channels=64)


def tiny() -> EafnetConfig:
    """Smallest sensible model, used by gradient checks."""
    return EafnetConfig(base_channels=4, patch_size=2, lbf_blocks=(1, 1))
