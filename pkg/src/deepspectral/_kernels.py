"""Hot numeric kernels with two interchangeable backends.

Every function here has a compiled numba path and a pure-numpy path.
The backend is chosen once at import time from the environment flag
``DEEPSPECTRAL_NUMBA`` ("0"/"false"/"off" selects the numpy path); the
numpy path is also used automatically when numba is not importable.
Both paths implement the same math, so results agree to floating-point
tolerance, and each path is deterministic run to run.

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""

import os

import numpy as np
import scipy.ndimage


def _env_wants_numba() -> bool:
    val = os.environ.get("DEEPSPECTRAL_NUMBA", "1").strip().lower()
    return val not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if _env_wants_numba():
    try:
        from numba import njit, prange

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    prange = range


# ---------------------------------------------------------------------------
# CSR matrix-vector product
# ---------------------------------------------------------------------------

def _csr_matvec_np(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    if data.shape[0] == 0:
        return np.zeros(n)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=n)


def _csr_matvec_loop(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            acc += data[j] * x[indices[j]]
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# CRF message passing: truncated-window kernels, self excluded, zero padding
# ---------------------------------------------------------------------------

def _gaussian_weights(radius, inv_two_sigma2):
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(d * d) * inv_two_sigma2)


def _gaussian_message_np(q, radius, inv_two_sigma2):
    # Separable window sum minus the self term (weight exp(0) = 1).
    w = _gaussian_weights(radius, inv_two_sigma2)
    out = np.empty_like(q)
    for c in range(q.shape[0]):
        tmp = scipy.ndimage.correlate1d(q[c], w, axis=0, mode="constant", cval=0.0)
        out[c] = scipy.ndimage.correlate1d(tmp, w, axis=1, mode="constant", cval=0.0)
    return out - q


def _gaussian_message_loop(q, radius, inv_two_sigma2):
    nclass, h, w = q.shape
    d = np.arange(-radius, radius + 1).astype(np.float64)
    g = np.exp(-(d * d) * inv_two_sigma2)
    tmp = np.zeros_like(q)
    out = np.zeros_like(q)
    for c in range(nclass):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                lo = max(-radius, -x)
                hi = min(radius, w - 1 - x)
                for dx in range(lo, hi + 1):
                    acc += g[dx + radius] * q[c, y, x + dx]
                tmp[c, y, x] = acc
        for y in range(h):
            lo = max(-radius, -y)
            hi = min(radius, h - 1 - y)
            for x in range(w):
                acc = 0.0
                for dy in range(lo, hi + 1):
                    acc += g[dy + radius] * tmp[c, y + dy, x]
                out[c, y, x] = acc - q[c, y, x]
    return out


def _bilateral_message_np(q, rgb, radius, inv_two_sx2, inv_two_srgb2):
    # The kernel separates into per-axis spatial and per-channel color
    # factors, and colors are 8-bit, so lookup tables replace the exps.
    nclass, h, w = q.shape
    out = np.zeros_like(q)
    ry = min(radius, h - 1)
    rx = min(radius, w - 1)
    spatial = np.exp(-(np.arange(max(ry, rx) + 1, dtype=np.float64) ** 2) * inv_two_sx2)
    color = np.exp(-(np.arange(256, dtype=np.float64) ** 2) * inv_two_srgb2)
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if dy == 0 and dx == 0:
                continue
            dst_y = slice(max(0, -dy), min(h, h - dy))
            dst_x = slice(max(0, -dx), min(w, w - dx))
            src_y = slice(max(0, dy), min(h, h + dy))
            src_x = slice(max(0, dx), min(w, w + dx))
            diff = np.abs(rgb[dst_y, dst_x] - rgb[src_y, src_x])
            kern = spatial[abs(dy)] * spatial[abs(dx)] * (
                color[diff[..., 0]] * color[diff[..., 1]] * color[diff[..., 2]]
            )
            for c in range(nclass):
                out[c, dst_y, dst_x] += kern * q[c, src_y, src_x]
    return out


def _bilateral_message_loop(q, rgb, radius, inv_two_sx2, inv_two_srgb2):
    # prange over rows: each output element is reduced sequentially inside
    # one iteration, so results are bitwise identical at any thread count.
    nclass, h, w = q.shape
    out = np.zeros_like(q)
    rmax = min(radius, max(h, w) - 1)
    d = np.arange(rmax + 1).astype(np.float64)
    spatial = np.exp(-(d * d) * inv_two_sx2)
    dc = np.arange(256).astype(np.float64)
    color = np.exp(-(dc * dc) * inv_two_srgb2)
    for y in prange(h):
        ylo = max(0, y - radius)
        yhi = min(h - 1, y + radius)
        for x in range(w):
            xlo = max(0, x - radius)
            xhi = min(w - 1, x + radius)
            r0 = rgb[y, x, 0]
            g0 = rgb[y, x, 1]
            b0 = rgb[y, x, 2]
            for yy in range(ylo, yhi + 1):
                wy = spatial[abs(yy - y)]
                for xx in range(xlo, xhi + 1):
                    if yy == y and xx == x:
                        continue
                    kern = (wy * spatial[abs(xx - x)]
                            * color[abs(rgb[yy, xx, 0] - r0)]
                            * color[abs(rgb[yy, xx, 1] - g0)]
                            * color[abs(rgb[yy, xx, 2] - b0)])
                    for c in range(nclass):
                        out[c, y, x] += kern * q[c, yy, xx]
    return out


# ---------------------------------------------------------------------------
# Connected-component labeling, 4-connectivity
# ---------------------------------------------------------------------------

def _label_components_np(mask):
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int32)
    labels, _ = scipy.ndimage.label(mask, structure=structure)
    return labels.astype(np.int32)


def _label_components_loop(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = np.empty(h * w, dtype=np.int64)
    current = 0
    for sy in range(h):
        for sx in range(w):
            if mask[sy, sx] == 0 or labels[sy, sx] != 0:
                continue
            current += 1
            top = 0
            stack[top] = sy * w + sx
            labels[sy, sx] = current
            while top >= 0:
                pos = stack[top]
                top -= 1
                y = pos // w
                x = pos - y * w
                if y > 0 and mask[y - 1, x] != 0 and labels[y - 1, x] == 0:
                    labels[y - 1, x] = current
                    top += 1
                    stack[top] = pos - w
                if y < h - 1 and mask[y + 1, x] != 0 and labels[y + 1, x] == 0:
                    labels[y + 1, x] = current
                    top += 1
                    stack[top] = pos + w
                if x > 0 and mask[y, x - 1] != 0 and labels[y, x - 1] == 0:
                    labels[y, x - 1] = current
                    top += 1
                    stack[top] = pos - 1
                if x < w - 1 and mask[y, x + 1] != 0 and labels[y, x + 1] == 0:
                    labels[y, x + 1] = current
                    top += 1
                    stack[top] = pos + 1
    return labels


if NUMBA_ENABLED:
    _csr_matvec_nb = njit(cache=True)(_csr_matvec_loop)
    _gaussian_message_nb = njit(cache=True)(_gaussian_message_loop)
    _bilateral_message_nb = njit(cache=True, parallel=True)(_bilateral_message_loop)
    _label_components_nb = njit(cache=True)(_label_components_loop)


def csr_matvec(indptr, indices, data, x):
    """y = A @ x for a CSR matrix given by (indptr, indices, data)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if NUMBA_ENABLED:
        return _csr_matvec_nb(indptr, indices, data, x)
    return _csr_matvec_np(indptr, indices, data, x)


def gaussian_message(q, radius, inv_two_sigma2):
    """Spatial-Gaussian weighted sum of q over a (2r+1)^2 window, self excluded.

    q has shape (classes, H, W); contributions outside the image are zero.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    if NUMBA_ENABLED:
        return _gaussian_message_nb(q, radius, inv_two_sigma2)
    return _gaussian_message_np(q, radius, inv_two_sigma2)


def bilateral_message(q, rgb, radius, inv_two_sx2, inv_two_srgb2):
    """Joint spatial+color weighted sum of q over a truncated window, self excluded.

    rgb has shape (H, W, 3) and must hold 8-bit intensities (integer values
    in 0..255, any dtype); the color term is a Gaussian on the Euclidean RGB
    difference, evaluated through per-channel lookup tables.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    rgb_i = np.ascontiguousarray(np.asarray(rgb), dtype=np.int64)
    if not np.array_equal(rgb_i, np.asarray(rgb)) or rgb_i.min() < 0 or rgb_i.max() > 255:
        raise ValueError("rgb must contain integer 8-bit intensities in 0..255")
    if NUMBA_ENABLED:
        return _bilateral_message_nb(q, rgb_i, radius, inv_two_sx2, inv_two_srgb2)
    return _bilateral_message_np(q, rgb_i, radius, inv_two_sx2, inv_two_srgb2)


def label_components(mask):
    """Label 4-connected components of a binary mask; 0 stays background.

    Returns an int32 array of the mask's shape with labels 1..n_components.
    """
    mask = np.ascontiguousarray(mask.astype(np.uint8))
    if NUMBA_ENABLED:
        return _label_components_nb(mask)
    return _label_components_np(mask)
