"""Pure-numpy implementations of the hot kernels.

Reference semantics for the compiled backend: both backends accumulate in
the same tap/neighbor order so results agree to float64 rounding.
"""

from __future__ import annotations

import numpy as np


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1.

    x: (N, H, W), w: (F, 3, 3), b: (F) -> (N, F, H, W)
    """
    n, h, wd = x.shape
    f = w.shape[0]
    xpad = np.zeros((n, h + 2, wd + 2), dtype=np.float64)
    xpad[:, 1:-1, 1:-1] = x
    out = np.empty((n, f, h, wd), dtype=np.float64)
    out[:] = b[None, :, None, None]
    for di in range(3):
        for dj in range(3):
            out += w[None, :, di, dj, None, None] * xpad[:, None, di : di + h, dj : dj + wd]
    return out


def conv3x3_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv3x3_forward w.r.t. input, weights, bias."""
    n, h, wd = x.shape
    f = w.shape[0]
    xpad = np.zeros((n, h + 2, wd + 2), dtype=np.float64)
    xpad[:, 1:-1, 1:-1] = x
    db = dy.sum(axis=(0, 2, 3))
    dw = np.empty((f, 3, 3), dtype=np.float64)
    dxpad = np.zeros((n, h + 2, wd + 2), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            patch = xpad[:, di : di + h, dj : dj + wd]
            dw[:, di, dj] = np.einsum("nfhw,nhw->f", dy, patch)
            dxpad[:, di : di + h, dj : dj + wd] += np.einsum("nfhw,f->nhw", dy, w[:, di, dj])
    return dxpad[:, 1:-1, 1:-1].copy(), dw, db


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2, floor semantics for odd sizes.

    Returns (pooled, switches) where switches[n,f,p,q] in {0..3} encodes the
    argmax window cell as 2*di + dj, first occurrence winning ties.
    """
    n, f, h, wd = x.shape
    h2, w2 = h // 2, wd // 2
    x2 = x[:, :, : 2 * h2, : 2 * w2]
    cand = np.stack(
        [x2[:, :, 0::2, 0::2], x2[:, :, 0::2, 1::2], x2[:, :, 1::2, 0::2], x2[:, :, 1::2, 1::2]],
        axis=-1,
    )
    switches = cand.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(cand, switches[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), switches


def maxpool2_backward(dy: np.ndarray, switches: np.ndarray, h: int, w: int) -> np.ndarray:
    """Scatter pooled gradients back through the recorded argmax switches."""
    n, f, h2, w2 = dy.shape
    dx = np.zeros((n, f, h, w), dtype=np.float64)
    for s in range(4):
        di, dj = divmod(s, 2)
        view = dx[:, :, di : 2 * h2 : 2, dj : 2 * w2 : 2]
        view += dy * (switches == s)
    return dx


def warp_bilinear(img: np.ndarray, m: np.ndarray, fill: float, clamp_edges: bool) -> np.ndarray:
    """Inverse-map warp with bilinear sampling.

    m maps homogeneous destination coords [x, y, 1] to source coords; pixels
    sampling outside the image get `fill`, or edge-clamped coordinates when
    clamp_edges is set.
    """
    h, w = img.shape
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sw = m[2, 0] * xx + m[2, 1] * yy + m[2, 2]
    sx = (m[0, 0] * xx + m[0, 1] * yy + m[0, 2]) / sw
    sy = (m[1, 0] * xx + m[1, 1] * yy + m[1, 2]) / sw
    if clamp_edges:
        sx = np.clip(sx, 0.0, w - 1.0)
        sy = np.clip(sy, 0.0, h - 1.0)
        inside = np.ones((h, w), dtype=bool)
    else:
        inside = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
        sx = np.clip(sx, 0.0, w - 1.0)
        sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    out = (1.0 - fy) * top + fy * bot
    return np.where(inside, out, fill)


def sepconv2d_clamp(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 2-d convolution with edge-clamp padding; same kernel per axis."""
    h, w = img.shape
    taps = k.shape[0]
    r = taps // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="edge")
    tmp = np.zeros((h, w), dtype=np.float64)
    for t in range(taps):
        tmp += k[t] * padded[:, t : t + w]
    padded = np.pad(tmp, ((r, r), (0, 0)), mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for t in range(taps):
        out += k[t] * padded[t : t + h, :]
    return out
