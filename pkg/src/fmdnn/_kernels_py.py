"""Pure numpy implementations of the hot convolution and pooling kernels.

Every function here has a twin of the same signature in the compiled
``_kernels`` extension. Both operate on C-contiguous float64 arrays laid out
as (batch, channels, height, width).
"""

import numpy as np


def im2col(x, k, stride, pad):
    """Unfold ``x`` into columns of shape (B, C*k*k, Ho*Wo)."""
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((B, C, k, k, Ho, Wo), dtype=np.float64)
    for i in range(k):
        i_end = i + stride * Ho
        for j in range(k):
            j_end = j + stride * Wo
            cols[:, :, i, j] = x[:, :, i:i_end:stride, j:j_end:stride]
    return cols.reshape(B, C * k * k, Ho * Wo)


def col2im(cols, C, H, W, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back into an image."""
    B = cols.shape[0]
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    cols = cols.reshape(B, C, k, k, Ho, Wo)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for i in range(k):
        i_end = i + stride * Ho
        for j in range(k):
            j_end = j + stride * Wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool_forward(x, window, stride):
    """Window maxima and the flat input index each one came from.

    Ties resolve to the first position in row-major window order.
    """
    B, C, H, W = x.shape
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1
    patches = np.empty((B, C, Ho, Wo, window * window), dtype=np.float64)
    for i in range(window):
        for j in range(window):
            patches[..., i * window + j] = x[
                :, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride
            ]
    arg = patches.argmax(axis=-1)
    out = np.take_along_axis(patches, arg[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(arg, window)
    rows = np.arange(Ho)[:, None] * stride + di
    cols = np.arange(Wo)[None, :] * stride + dj
    index = (rows * W + cols).astype(np.int64)
    return np.ascontiguousarray(out), np.ascontiguousarray(index)


def maxpool_backward(grad, index, H, W):
    """Route each output gradient to the input position recorded in ``index``."""
    B, C = grad.shape[:2]
    out = np.zeros((B * C, H * W), dtype=np.float64)
    flat_idx = index.reshape(B * C, -1)
    rows = np.broadcast_to(np.arange(B * C)[:, None], flat_idx.shape)
    np.add.at(out, (rows, flat_idx), grad.reshape(B * C, -1))
    return out.reshape(B, C, H, W)
