"""Pure-numpy convolution kernels (im2col) used when the compiled core is absent."""

from __future__ import annotations

import numpy as np


def _output_hw(H: int, W: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    return ((H + 2 * padding - k) // stride + 1,
            (W + 2 * padding - k) // stride + 1)


def _im2col(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    # read-only strided view [B, C, k, k, Ho, Wo] over the padded input
    B, C, Hp, Wp = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (B, C, k, k, Ho, Wo), (s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    B, C, H, W = x.shape
    Co, _, k, _ = w.shape
    Ho, Wo = _output_hw(H, W, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x
    cols = _im2col(xp, k, stride, Ho, Wo)
    y = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # [Co, B, Ho, Wo]
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def conv2d_backward_input(g: np.ndarray, w: np.ndarray, stride: int, padding: int,
                          H: int, W: int) -> np.ndarray:
    B, Co, Ho, Wo = g.shape
    _, C, k, _ = w.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    dxp = np.zeros((B, C, Hp, Wp), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            # dy [B,Co,Ho,Wo] x w[:, :, i, j] [Co,C] -> [B,Ho,Wo,C]
            t = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                t.transpose(0, 3, 1, 2)
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:padding + H, padding:padding + W])
    return dxp


def conv2d_backward_kernel(g: np.ndarray, x: np.ndarray, stride: int, padding: int,
                           k: int) -> np.ndarray:
    B, Co, Ho, Wo = g.shape
    _, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x
    cols = _im2col(xp, k, stride, Ho, Wo)
    # g [B,Co,Ho,Wo] x cols [B,C,k,k,Ho,Wo] contracting B,Ho,Wo -> [Co,C,k,k]
    return np.ascontiguousarray(
        np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5])))
