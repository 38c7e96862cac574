"""Pure-numpy kernel implementations (fallback for the compiled core)."""

from __future__ import annotations

import numpy as np


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1. x: (n,c,h,w), w: (oc,c,3,3)."""
    n, c, h, wd = x.shape
    oc = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((oc, n, h, wd), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            out += np.tensordot(
                w[:, :, di, dj], xp[:, :, di : di + h, dj : dj + wd], axes=([1], [1])
            )
    y = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    y += b[None, :, None, None]
    return y


def conv3x3_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv3x3_forward w.r.t. input, weights, and bias."""
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    db = dy.sum(axis=(0, 2, 3))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di : di + h, dj : dj + wd]
            dw[:, :, di, dj] = np.tensordot(dy, patch, axes=([0, 2, 3], [0, 2, 3]))
            contrib = np.tensordot(dy, w[:, :, di, dj], axes=([1], [0]))
            dxp[:, :, di : di + h, dj : dj + wd] += np.moveaxis(contrib, 3, 1)
    dx = np.ascontiguousarray(dxp[:, :, 1 : h + 1, 1 : wd + 1])
    return dx, dw, db


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2, floor semantics; ties pick the first
    candidate in (0,0),(0,1),(1,0),(1,1) order. Returns (y, argmax)."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xx = x[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
    cand = np.stack(
        [xx[:, :, :, 0, :, 0], xx[:, :, :, 0, :, 1], xx[:, :, :, 1, :, 0], xx[:, :, :, 1, :, 1]],
        axis=-1,
    )
    idx = cand.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(cand, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(
    dy: np.ndarray, idx: np.ndarray, h: int, w: int
) -> np.ndarray:
    """Scatter pooled gradients back to the (n,c,h,w) input layout."""
    n, c, h2, w2 = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    ii = (np.arange(h2) * 2)[None, None, :, None] + (idx >> 1)
    jj = (np.arange(w2) * 2)[None, None, None, :] + (idx & 1)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    dx[nn, cc, ii, jj] = dy
    return dx


def tapered_spectra(
    segments: np.ndarray, tapers: np.ndarray, freqs: np.ndarray, fs: float
) -> np.ndarray:
    """Uniform-average multitaper power, evaluated directly at `freqs`.

    segments: (m, N) float64, tapers: (L, N) float64. Returns (m, F) power
    in squared-units per Hz.
    """
    segments = np.asarray(segments, dtype=np.float64)
    tapers = np.asarray(tapers, dtype=np.float64)
    m, n = segments.shape
    ell = tapers.shape[0]
    t = np.arange(n)
    phase = np.exp((-2j * np.pi / fs) * np.outer(np.asarray(freqs, np.float64), t))
    tapered = segments[:, None, :] * tapers[None, :, :]
    spec = tapered.reshape(m * ell, n) @ phase.T
    power = np.abs(spec) ** 2
    return power.reshape(m, ell, -1).sum(axis=1) / (ell * fs)
