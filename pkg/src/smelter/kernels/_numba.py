"""Numba-compiled kernels; loop order mirrors ``_numpy.py`` so results match exactly."""
import numpy as np
from numba import njit


@njit(cache=True)
def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    # channels-last padded copy so each tap reads one contiguous run of c values
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    xp[b, y + pad, xx + pad, ch] = x[b, ch, y, xx]
    cols = np.empty((n * ho * wo, c * kh * kw), dtype=x.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                row = (b * ho + oy) * wo + ox
                for dy in range(kh):
                    for dx in range(kw):
                        src = xp[b, oy * stride + dy, ox * stride + dx]
                        base = dy * kw + dx
                        for ch in range(c):
                            cols[row, ch * kh * kw + base] = src[ch]
    return cols


@njit(cache=True)
def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    # (dy, dx) outermost to reproduce the slice-accumulation order of the numpy path
    for dy in range(kh):
        for dx in range(kw):
            for b in range(n):
                for ch in range(c):
                    col = (ch * kh + dy) * kw + dx
                    for oy in range(ho):
                        iy = oy * stride + dy - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(wo):
                            ix = ox * stride + dx - pad
                            if ix < 0 or ix >= w:
                                continue
                            out[b, ch, iy, ix] += cols[(b * ho + oy) * wo + ox, col]
    return out


@njit(cache=True)
def maxpool2x2(x):
    n, c, h, w = x.shape
    ho = h // 2
    wo = w // 2
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int8)
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[b, ch, 2 * oy, 2 * ox]
                    k = 0
                    for j in range(1, 4):
                        v = x[b, ch, 2 * oy + j // 2, 2 * ox + j % 2]
                        if v > best:
                            best = v
                            k = j
                    out[b, ch, oy, ox] = best
                    arg[b, ch, oy, ox] = k
    return out, arg


@njit(cache=True)
def maxpool2x2_backward(grad, arg):
    n, c, ho, wo = grad.shape
    out = np.zeros((n, c, ho * 2, wo * 2), dtype=grad.dtype)
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    k = arg[b, ch, oy, ox]
                    out[b, ch, 2 * oy + k // 2, 2 * ox + k % 2] = grad[b, ch, oy, ox]
    return out


@njit(cache=True)
def warp_bilinear(src, m, out_h, out_w):
    h, w, c = src.shape
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for y in range(out_h):
        for x in range(out_w):
            fxy = float(x)
            fyy = float(y)
            sx = m[0, 0] * fxy + m[0, 1] * fyy + m[0, 2]
            sy = m[1, 0] * fxy + m[1, 1] * fyy + m[1, 2]
            x0f = np.floor(sx)
            y0f = np.floor(sy)
            fx = sx - x0f
            fy = sy - y0f
            x0 = int(x0f)
            y0 = int(y0f)
            for t in range(4):
                oy = t // 2
                ox = t % 2
                wx = fx if ox == 1 else 1.0 - fx
                wy = fy if oy == 1 else 1.0 - fy
                wgt = wx * wy
                yy = y0 + oy
                xx = x0 + ox
                inside = yy >= 0 and yy < h and xx >= 0 and xx < w
                for ch in range(c):
                    v = src[yy, xx, ch] if inside else 0.0
                    out[y, x, ch] += wgt * v
    return out


@njit(cache=True)
def convolve_rows(img, kernel):
    h, w, c = img.shape
    r = kernel.shape[0] // 2
    out = np.zeros_like(img)
    for i in range(kernel.shape[0]):
        k = kernel[i]
        for y in range(h):
            for x in range(w):
                sx = min(max(x + i - r, 0), w - 1)
                for ch in range(c):
                    out[y, x, ch] += k * img[y, sx, ch]
    return out
