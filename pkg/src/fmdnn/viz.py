"""Heatmaps of feature and fuzzy maps, and gradient-weighted class activation maps.

Rasters are written as binary PPM (P6). Every raster gets a text sidecar
(``<path>.txt``) recording the source and the value range that was mapped
onto the colour ramp.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .data import write_ppm
from .errors import InputError
from .tensor import Tensor

SOURCES = ("fine", "medium", "coarse", "fuzzy", "cam")

# anchor colours of a dark-to-bright ramp; luma rises strictly between anchors
_ANCHORS = np.array([
    [0, 0, 4],
    [87, 16, 110],
    [188, 55, 84],
    [249, 142, 9],
    [252, 255, 164],
], dtype=np.float64)


def _build_ramp(n: int = 256) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    pos = np.linspace(0.0, 1.0, len(_ANCHORS))
    ramp = np.stack([np.interp(t, pos, _ANCHORS[:, c]) for c in range(3)], axis=1)
    return np.round(ramp).astype(np.uint8)


RAMP = _build_ramp()


def reduce_channels(values) -> np.ndarray:
    """(C, h, w) -> channel mean; (h, w) passes through."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    if arr.ndim != 2 or arr.size == 0:
        raise InputError(f"expected a non-empty 2-D map or (C, h, w) stack, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("map contains non-finite values")
    return arr


def rescale(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine map of [min, max] onto [0, 1]; a constant map goes to 0.5."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 0.5), lo, hi
    return (values - lo) / (hi - lo), lo, hi


def upscale_nearest(values: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = values.shape[:2]
    H, W = size
    rows = (np.arange(H) * h) // H
    cols = (np.arange(W) * w) // W
    return values[rows][:, cols]


def colorize(unit: np.ndarray) -> np.ndarray:
    """[0, 1] map -> (h, w, 3) uint8 through the ramp."""
    idx = np.round(np.clip(unit, 0.0, 1.0) * (len(RAMP) - 1)).astype(np.int64)
    return RAMP[idx]


def _write_sidecar(path: Path, fields: dict) -> Path:
    side = path.with_name(path.name + ".txt")
    side.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return side


def emit_heatmap(values, path, source: str = "fine", upscale_to: tuple[int, int] | None = None,
                 extra: dict | None = None) -> np.ndarray:
    """Render a map as a P6 heatmap and write its sidecar; returns the RGB raster."""
    if source not in SOURCES:
        raise InputError(f"unknown heatmap source {source!r}; choose from {SOURCES}")
    arr = reduce_channels(values)
    unit, lo, hi = rescale(arr)
    if upscale_to is not None:
        unit = upscale_nearest(unit, upscale_to)
    rgb = colorize(unit)
    path = Path(path)
    write_ppm(path, rgb)
    _write_sidecar(path, {"source": source, "min": repr(lo), "max": repr(hi),
                          "height": rgb.shape[0], "width": rgb.shape[1], **(extra or {})})
    return rgb


def grad_cam(model, image, target: int, granularity: str = "fine") -> np.ndarray:
    """relu(sum_k w_k A_k) with w_k the spatial mean of d(logit_target)/dA_k.

    ``image`` is a (3, H, W) or (1, 3, H, W) array in [0, 1]; the result has
    the resolution of the chosen feature map.
    """
    K = model.config.model.num_classes
    if not 0 <= int(target) < K:
        raise InputError(f"class index {target} out of range for {K} classes")
    if granularity not in ("fine", "medium", "coarse"):
        raise InputError(f"CAM granularity must be fine, medium or coarse, got {granularity!r}")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    trace = model.trace(x)
    score = trace.logits[0:1, int(target)]
    T.backward(T.tsum(score))
    fmap = trace.features.get(granularity)
    grad = fmap.grad if fmap.grad is not None else np.zeros(fmap.shape)
    model.zero_grad()
    return cam_from_gradients(fmap.data[0], grad[0])


def cam_from_gradients(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """relu(sum_k mean(dY/dA_k) * A_k) for (C, h, w) activations and gradients."""
    weights = gradients.mean(axis=(1, 2))
    return np.maximum(np.tensordot(weights, activations, axes=1), 0.0)


def overlay(image: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend an (H, W, 3) uint8 image with a same-sized uint8 heatmap."""
    mixed = (1.0 - alpha) * image.astype(np.float64) + alpha * heat.astype(np.float64)
    return np.round(mixed).astype(np.uint8)


def emit_cam(model, image, target: int, path, granularity: str = "fine",
             blend: float | None = 0.5) -> np.ndarray:
    """Write the CAM of ``target`` as a heatmap at input resolution.

    With ``blend`` set, the heatmap is mixed into the input image; ``None``
    writes the bare heatmap.
    """
    x = np.asarray(image, dtype=np.float64)
    x = x[0] if x.ndim == 4 else x
    cam = grad_cam(model, x, target, granularity)
    H, W = x.shape[1:]
    unit, lo, hi = rescale(cam)
    heat = colorize(upscale_nearest(unit, (H, W)))
    if blend is not None:
        base = np.round(np.clip(x, 0.0, 1.0).transpose(1, 2, 0) * 255).astype(np.uint8)
        heat = overlay(base, heat, blend)
    path = Path(path)
    write_ppm(path, heat)
    _write_sidecar(path, {"source": "cam", "min": repr(lo), "max": repr(hi), "target": int(target),
                          "granularity": granularity, "height": H, "width": W,
                          "blend": "none" if blend is None else repr(blend)})
    return cam


def feature_map(model, image, source: str) -> np.ndarray:
    """The (C, h, w) map of one granularity, or the (h, w) fused fuzzy map."""
    x = np.asarray(image, dtype=np.float64)
    x = x[None] if x.ndim == 3 else x
    with T.no_grad():
        trace = model.trace(Tensor(x))
    if source == "fuzzy":
        if trace.fuzzy_map is None:
            raise InputError(f"model with fusion={model.config.model.fusion!r} has no fuzzy map")
        return trace.fuzzy_map.data[0, 0]
    if source not in ("fine", "medium", "coarse"):
        raise InputError(f"unknown feature source {source!r}")
    return trace.features.get(source).data[0]
