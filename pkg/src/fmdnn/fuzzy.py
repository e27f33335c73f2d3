"""Fuzzy membership maps over grayscale intensity and their learnable fusion.

Three membership functions are applied per pixel of a grayscale image in
[0, 1]: a Gaussian around the image's own mean, a sigmoid, and a trapezoid.
The three maps are fused by a convex weighting plus a scalar offset, and the
fused map is cut into patches to form guidance tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError, ParameterError
from .nn import Module, parameter, patchify, xavier
from .tensor import Tensor

_LUMA_MILLI = np.array([299.0, 587.0, 114.0])
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class MembershipParams:
    """Shape parameters of the three membership functions plus fusion weights.

    ``gaussian_mode`` is ``"peak"`` (rescaled so the Gaussian peaks at 1) or
    ``"raw"`` (the unnormalised density).
    """

    alpha: float = 10.0
    beta: float = 0.5
    a: float = 0.1
    b: float = 0.3
    c: float = 0.7
    d: float = 0.9
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    bias: float = 0.0
    gaussian_mode: str = "peak"

    def __post_init__(self):
        check_trapezoid(self.a, self.b, self.c, self.d)
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ParameterError(f"fusion weights must sum to 1, got {sum(self.weights)!r}")
        if self.gaussian_mode not in ("peak", "raw"):
            raise ParameterError(f"gaussian_mode must be 'peak' or 'raw', got {self.gaussian_mode!r}")


@dataclass
class FuzzyFeature:
    I_mu: np.ndarray
    I_sigma: np.ndarray
    I_T: np.ndarray
    z_fuzzy: np.ndarray
    image_mu: float
    image_sigma: float
    params: MembershipParams = field(default_factory=MembershipParams)


def to_grayscale(image, scale: float = 255.0) -> np.ndarray:
    """Luma of an (H, W, 3) raster, divided by ``scale`` (255 for 8-bit input)."""
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise InputError("cannot convert an empty image to grayscale")
    if image.ndim != 3 or image.shape[-1] != 3:
        raise InputError(f"expected an (H, W, 3) RGB raster, got shape {image.shape}")
    # integer weights keep pure white at exactly 1.0
    return np.clip(image @ _LUMA_MILLI / (1000.0 * scale), 0.0, 1.0)


def image_stats(gray) -> tuple[float, float]:
    """Mean and population standard deviation of the pixel intensities."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.size == 0:
        raise InputError("image has no pixels")
    mu = float(gray.mean())
    return mu, float(np.sqrt(np.mean((gray - mu) ** 2)))


def gaussian_membership(gray, mu: float, sigma: float, normalize: bool = True) -> np.ndarray:
    """Gaussian degree of each pixel around ``mu``.

    With ``normalize`` the density is multiplied by sigma*sqrt(2*pi) so the map
    lies in (0, 1] and equals 1 at ``mu``. A zero ``sigma`` gives an indicator
    of ``gray == mu``.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if sigma == 0:
        return (gray == mu).astype(np.float64)
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    peak = np.exp(-((gray - mu) ** 2) / (2.0 * sigma * sigma))
    return peak if normalize else peak / (sigma * SQRT_2PI)


def sigmoid_membership(gray, alpha: float, beta: float) -> np.ndarray:
    gray = np.asarray(gray, dtype=np.float64)
    # tanh form: no overflow for large |alpha|, and exactly 0.5 at gray == beta
    return 0.5 * (1.0 + np.tanh(0.5 * alpha * (gray - beta)))


def check_trapezoid(a: float, b: float, c: float, d: float) -> None:
    if not (a < b <= c < d):
        raise ParameterError(f"trapezoid needs a < b <= c < d, got ({a}, {b}, {c}, {d})")


def trapezoid_membership(gray, a: float, b: float, c: float, d: float) -> np.ndarray:
    """Trapezoid: 0 up to a, ramp up on (a, b], 1 on (b, c], ramp down on (c, d), 0 from d."""
    check_trapezoid(a, b, c, d)
    x = np.asarray(gray, dtype=np.float64)
    # every branch is evaluated; ramps over tiny widths may overflow where unselected
    with np.errstate(over="ignore"):
        return np.select(
            [x <= a, x <= b, x <= c, x < d],
            [0.0, (x - a) / (b - a), 1.0, (d - x) / (d - c)],
            default=0.0,
        )


def membership_maps(gray, params: MembershipParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """The Gaussian, sigmoid and trapezoid maps of one image, plus its (mu, sigma)."""
    mu, sigma = image_stats(gray)
    I_mu = gaussian_membership(gray, mu, sigma, normalize=params.gaussian_mode == "peak")
    I_sigma = sigmoid_membership(gray, params.alpha, params.beta)
    I_T = trapezoid_membership(gray, params.a, params.b, params.c, params.d)
    return I_mu, I_sigma, I_T, mu, sigma


def fuse_fuzzy(I_mu, I_sigma, I_T, weights, bias: float = 0.0, clamp: bool = True) -> np.ndarray:
    """Weighted sum of the three maps plus ``bias``, clamped to [0, 1]."""
    maps = [np.asarray(m, dtype=np.float64) for m in (I_mu, I_sigma, I_T)]
    if not maps[0].shape == maps[1].shape == maps[2].shape:
        raise DimensionError(f"membership maps differ in shape: {[m.shape for m in maps]}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ParameterError(f"fusion weights must sum to 1, got {sum(weights)!r}")
    z = weights[0] * maps[0] + weights[1] * maps[1] + weights[2] * maps[2] + bias
    return np.clip(z, 0.0, 1.0) if clamp else z


def extract_fuzzy(gray, params: MembershipParams | None = None) -> FuzzyFeature:
    params = params or MembershipParams()
    I_mu, I_sigma, I_T, mu, sigma = membership_maps(gray, params)
    z = fuse_fuzzy(I_mu, I_sigma, I_T, params.weights, params.bias)
    return FuzzyFeature(I_mu, I_sigma, I_T, z, mu, sigma, params)


def membership_stack(images: np.ndarray, params: MembershipParams) -> np.ndarray:
    """(B, 3, H, W) RGB batch in [0, 1] -> (B, 3, H, W) stack of membership maps."""
    out = np.empty(images.shape, dtype=np.float64)
    for i, img in enumerate(images):
        gray = np.clip(np.tensordot(_LUMA_MILLI, img, axes=1) / 1000.0, 0.0, 1.0)
        out[i, 0], out[i, 1], out[i, 2], _, _ = membership_maps(gray, params)
    return out


class FuzzyFusion(Module):
    """Learnable convex fusion of the membership maps.

    Weights are the softmax of three free logits, so they sum to one by
    construction; equal logits start them at 1/3 each.
    """

    def __init__(self, bias: float = 0.0, clamp: bool = True):
        self.logits = parameter(np.zeros(3))
        self.bias = parameter(np.array([bias]))
        self.clamp = clamp

    def weights(self) -> Tensor:
        return T.softmax(self.logits)

    def forward(self, maps: Tensor) -> Tensor:
        """(B, 3, H, W) maps -> (B, 1, H, W) fused map."""
        if maps.ndim != 4 or maps.shape[1] != 3:
            raise DimensionError(f"expected (B, 3, H, W) membership maps, got {maps.shape}")
        w = self.weights().reshape(1, 3, 1, 1)
        z = (maps * w).sum(axis=1, keepdims=True) + self.bias
        return T.clip(z, 0.0, 1.0) if self.clamp else z


class FuzzyPatchEmbed(Module):
    """Cut the fused map into P x P patches, project each to D, add positions.

    No class token is prepended; the output has N = (H/P)(W/P) rows.
    """

    def __init__(self, patch: int, num_tokens: int, dim: int, rng: np.random.Generator):
        self.patch = patch
        self.proj = parameter(xavier(rng, patch * patch, dim))
        self.pos = parameter(rng.normal(0.0, 0.02, (num_tokens, dim)))

    def forward(self, z: Tensor) -> Tensor:
        tokens = patchify(z, self.patch)
        if tokens.shape[1] != self.pos.shape[0]:
            raise DimensionError(
                f"fuzzy map yields {tokens.shape[1]} patches, expected {self.pos.shape[0]}"
            )
        return T.matmul(tokens, self.proj) + self.pos
