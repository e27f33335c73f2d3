"""Multi-granular convolutional features and their patch-token sequences.

Feature maps are stored channels-first, (B, C, h, w). At reduction factor r:

    coarse  (C_coarse, H,      W)       patch P
    medium  (C_medium, H/r,    W/r)     patch P/r
    fine    (C_fine,   H/2r,   W/2r)    patch P/2r

so every granularity is cut into the same N = (H/P)(W/P) patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Conv2d, ConvTranspose2d, Module, parameter, patchify, xavier
from .tensor import Tensor

GRANULARITIES = ("fine", "medium", "coarse")


@dataclass(frozen=True)
class GranularityConfig:
    H: int = 64
    W: int = 64
    r: int = 2
    c_coarse: int = 3
    c_medium: int = 12
    c_fine: int = 48
    P: int = 8

    @classmethod
    def from_model(cls, mc) -> "GranularityConfig":
        return cls(mc.image_size, mc.image_size, mc.r, mc.c_coarse, mc.c_medium, mc.c_fine, mc.patch)

    def map_shape(self, g: str) -> tuple[int, int, int]:
        scale = {"coarse": 1, "medium": self.r, "fine": 2 * self.r}[g]
        return (self.channels(g), self.H // scale, self.W // scale)

    def channels(self, g: str) -> int:
        return {"coarse": self.c_coarse, "medium": self.c_medium, "fine": self.c_fine}[g]

    def patch_size(self, g: str) -> int:
        return {"coarse": self.P, "medium": self.P // self.r, "fine": self.P // (2 * self.r)}[g]

    def patch_length(self, g: str) -> int:
        return self.patch_size(g) ** 2 * self.channels(g)

    @property
    def num_tokens(self) -> int:
        return (self.H // self.P) * (self.W // self.P)


@dataclass
class GranularFeatures:
    fine: Tensor
    medium: Tensor
    coarse: Tensor

    def get(self, g: str) -> Tensor:
        return getattr(self, g)


def validate_shapes(features: GranularFeatures, config: GranularityConfig) -> list[str]:
    """Human-readable failures of the granularity shape contract; empty when all hold."""
    problems = []
    cfg = config
    if cfg.P % (2 * cfg.r):
        problems.append(f"patch size P={cfg.P} must be divisible by 2r={2 * cfg.r}")
    if cfg.H % cfg.P or cfg.W % cfg.P:
        problems.append(f"input {cfg.H}x{cfg.W} must be divisible by P={cfg.P}")
    token_counts = {}
    for g in GRANULARITIES:
        fmap = features.get(g)
        want = cfg.map_shape(g)
        got = tuple(fmap.shape[-3:])
        if got != want:
            problems.append(
                f"{g} map is C x h x w = {got}, expected {want} "
                f"(resolution {want[1]}x{want[2]})"
            )
        p = cfg.patch_size(g)
        if p < 1 or got[1] % p or got[2] % p:
            problems.append(f"{g} map {got[1]}x{got[2]} is not divisible into {p}x{p} patches")
        elif got == want:
            # wrong-resolution maps are already reported; only compare conforming ones
            token_counts[g] = (got[1] // p) * (got[2] // p)
        if not np.all(np.isfinite(fmap.data)):
            problems.append(f"{g} map contains non-finite values")
    if len(set(token_counts.values())) > 1:
        problems.append(f"token count N must match across granularities, got {token_counts}")
    if cfg.c_medium == cfg.c_coarse * cfg.r**2 and cfg.c_fine == cfg.c_medium * cfg.r**2:
        lengths = {g: cfg.patch_length(g) for g in GRANULARITIES}
        if len(set(lengths.values())) > 1:
            problems.append(f"flattened patch lengths differ: {lengths}")
    return problems


class GranularExtractor(Module):
    """Two-stage conv/pool encoder and two-stage transposed-conv decoder.

    Encoder stage: 3x3 conv, ReLU, r x r max-pool. The fine tap is a 1x1 conv on
    the deepest pooled map. Each decoder stage upsamples by r with a transposed
    conv, then concatenates the same-resolution encoder map; the medium tap is
    a 1x1 conv there and the coarse tap a 3x3 conv at full resolution.
    """

    def __init__(self, cfg: GranularityConfig, rng: np.random.Generator,
                 widths: tuple[int, int] = (8, 16)):
        w1, w2 = widths
        self.cfg = cfg
        r = cfg.r
        self.enc1 = Conv2d(3, w1, 3, rng, padding=1)
        self.enc2 = Conv2d(w1, w2, 3, rng, padding=1)
        self.fine_tap = Conv2d(w2, cfg.c_fine, 1, rng)
        self.up1 = ConvTranspose2d(w2, w2, r, rng, stride=r)
        self.medium_tap = Conv2d(2 * w2, cfg.c_medium, 1, rng)
        self.up2 = ConvTranspose2d(2 * w2, w1, r, rng, stride=r)
        self.coarse_tap = Conv2d(2 * w1, cfg.c_coarse, 3, rng, padding=1)

    def forward(self, images: Tensor) -> GranularFeatures:
        H, W = images.shape[-2:]
        if images.ndim != 4 or images.shape[1] != 3 or (H, W) != (self.cfg.H, self.cfg.W):
            raise DimensionError(
                f"expected (B, 3, {self.cfg.H}, {self.cfg.W}) images, got {images.shape}"
            )
        r = self.cfg.r
        e1 = T.relu(self.enc1(images))
        e2 = T.relu(self.enc2(T.max_pool2d(e1, r)))
        bottom = T.max_pool2d(e2, r)
        fine = self.fine_tap(bottom)
        d1 = T.concat([T.relu(self.up1(bottom)), e2], axis=1)
        medium = self.medium_tap(d1)
        d2 = T.concat([T.relu(self.up2(d1)), e1], axis=1)
        coarse = self.coarse_tap(d2)
        return GranularFeatures(fine=fine, medium=medium, coarse=coarse)


class PatchEmbed(Module):
    """Patch tokens of one granularity: [class; patches @ E] + positions."""

    def __init__(self, channels: int, patch: int, num_tokens: int, dim: int,
                 rng: np.random.Generator):
        self.patch = patch
        self.proj = parameter(xavier(rng, patch * patch * channels, dim))
        self.cls = parameter(rng.normal(0.0, 0.02, (1, 1, dim)))
        self.pos = parameter(rng.normal(0.0, 0.02, (num_tokens + 1, dim)))

    def tokens(self, fmap: Tensor) -> Tensor:
        """Projected patches without class token or positions."""
        patches = patchify(fmap, self.patch)
        if patches.shape[1] + 1 != self.pos.shape[0]:
            raise DimensionError(
                f"map {fmap.shape} gives {patches.shape[1]} patches, expected {self.pos.shape[0] - 1}"
            )
        if patches.shape[2] != self.proj.shape[0]:
            raise DimensionError(
                f"flattened patch length {patches.shape[2]} != projection input {self.proj.shape[0]}"
            )
        return T.matmul(patches, self.proj)

    def forward(self, fmap: Tensor) -> Tensor:
        tok = self.tokens(fmap)
        B = tok.shape[0]
        cls = self.cls + Tensor(np.zeros((B, 1, tok.shape[2])))
        return T.concat([cls, tok], axis=1) + self.pos
