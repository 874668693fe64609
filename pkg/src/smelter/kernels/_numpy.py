"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba.py`` with the same signature and
the same floating-point accumulation order, so both paths agree bit for bit.
"""
import numpy as np


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=x.dtype)
    for dy in range(kh):
        y_max = dy + stride * ho
        for dx in range(kw):
            x_max = dx + stride * wo
            patch = xp[:, :, dy:y_max:stride, dx:x_max:stride]
            cols[:, :, :, :, dy, dx] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * ho * wo, c * kh * kw)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for dy in range(kh):
        y_max = dy + stride * ho
        for dx in range(kw):
            x_max = dx + stride * wo
            xp[:, :, dy:y_max:stride, dx:x_max:stride] += cols[:, :, dy, dx]
    return xp[:, :, pad:pad + h, pad:pad + w]


def maxpool2x2(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool2x2_backward(grad, arg):
    n, c, ho, wo = grad.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=grad.dtype)
    np.put_along_axis(win, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, ho * 2, wo * 2)


def warp_bilinear(src, m, out_h, out_w):
    """Sample ``src`` (H, W, C float64) at ``m @ (x, y, 1)`` for every output pixel."""
    h, w, c = src.shape
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for oy, ox, wgt in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (0, 1, fx * (1.0 - fy)),
        (1, 0, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        yy = y0 + oy
        xx = x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        # taps with zero weight never contribute, even when out of bounds
        vals = np.zeros((out_h, out_w, c), dtype=np.float64)
        vals[ok] = src[yy[ok], xx[ok]]
        out += wgt[..., None] * vals
    return out


def convolve_rows(img, kernel):
    """Correlate each row of ``img`` (H, W, C float64) with ``kernel``, edge-replicated."""
    r = kernel.shape[0] // 2
    w = img.shape[1]
    padded = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for i in range(kernel.shape[0]):
        out += kernel[i] * padded[:, i:i + w]
    return out
