"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen at import time: set ``RESTYLEADV_NUMBA=0`` to force the
numpy implementations (useful for debugging and for machines without a working
numba install). Both backends are bit-compatible up to floating-point
associativity; ``tests/test_kernels.py`` asserts agreement and
``benchmarks/bench_kernels.py`` compares throughput.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("RESTYLEADV_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


# ---------------------------------------------------------------------------
# bilinear resize (single channel)
# ---------------------------------------------------------------------------

def _resize_coords(n_in, n_out):
    # align-corners mapping; degenerate axes collapse to coordinate 0
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def _bilinear_resize_np(grid, out_h, out_w):
    h, w = grid.shape
    ys = _resize_coords(h, out_h)
    xs = _resize_coords(w, out_w)
    y0 = np.clip(ys.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x0 = np.clip(xs.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _bilinear_resize_loop(grid, out_h, out_w):
    h, w = grid.shape
    out = np.empty((out_h, out_w))
    sy = (h - 1) / (out_h - 1) if out_h > 1 else 0.0
    sx = (w - 1) / (out_w - 1) if out_w > 1 else 0.0
    for i in range(out_h):
        y = i * sy
        y0 = int(y)
        if y0 > h - 1:
            y0 = h - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fy = y - y0
        for j in range(out_w):
            x = j * sx
            x0 = int(x)
            if x0 > w - 1:
                x0 = w - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            fx = x - x0
            top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
            bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


# ---------------------------------------------------------------------------
# backward warp of an image stack by a displacement field
# ---------------------------------------------------------------------------

def _warp_backward_np(frame, flow):
    h, w = frame.shape[:2]
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ys = np.clip(gy - flow[..., 0], 0.0, h - 1.0)
    xs = np.clip(gx - flow[..., 1], 0.0, w - 1.0)
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    out = (frame[y0, x0] * (1 - fy) * (1 - fx)
           + frame[y0, x1] * (1 - fy) * fx
           + frame[y1, x0] * fy * (1 - fx)
           + frame[y1, x1] * fy * fx)
    return out


def _warp_backward_loop(frame, flow):
    h, w, c = frame.shape
    out = np.empty((h, w, c))
    for i in range(h):
        for j in range(w):
            y = i - flow[i, j, 0]
            x = j - flow[i, j, 1]
            if y < 0.0:
                y = 0.0
            elif y > h - 1:
                y = float(h - 1)
            if x < 0.0:
                x = 0.0
            elif x > w - 1:
                x = float(w - 1)
            y0 = int(y)
            x0 = int(x)
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            fy = y - y0
            fx = x - x0
            for k in range(c):
                top = frame[y0, x0, k] * (1 - fx) + frame[y0, x1, k] * fx
                bot = frame[y1, x0, k] * (1 - fx) + frame[y1, x1, k] * fx
                out[i, j, k] = top * (1 - fy) + bot * fy
    return out


# ---------------------------------------------------------------------------
# total variation (squared neighbor differences) and its gradient
# ---------------------------------------------------------------------------

def _tv_np(frame):
    dh = frame[:, 1:, :] - frame[:, :-1, :]
    dv = frame[1:, :, :] - frame[:-1, :, :]
    loss = float(np.sum(dh * dh) + np.sum(dv * dv))
    grad = np.zeros_like(frame)
    grad[:, 1:, :] += 2.0 * dh
    grad[:, :-1, :] -= 2.0 * dh
    grad[1:, :, :] += 2.0 * dv
    grad[:-1, :, :] -= 2.0 * dv
    return loss, grad


def _tv_loop(frame):
    h, w, c = frame.shape
    loss = 0.0
    grad = np.zeros((h, w, c))
    for i in range(h):
        for j in range(w):
            for k in range(c):
                if j + 1 < w:
                    d = frame[i, j + 1, k] - frame[i, j, k]
                    loss += d * d
                    grad[i, j + 1, k] += 2.0 * d
                    grad[i, j, k] -= 2.0 * d
                if i + 1 < h:
                    d = frame[i + 1, j, k] - frame[i, j, k]
                    loss += d * d
                    grad[i + 1, j, k] += 2.0 * d
                    grad[i, j, k] -= 2.0 * d
    return loss, grad


# ---------------------------------------------------------------------------
# matting Laplacian (Levin closed-form construction, local windows)
# ---------------------------------------------------------------------------

def _matting_entries_loop(img, radius, eps):
    h, w, _ = img.shape
    win = 2 * radius + 1
    wsize = win * win
    n_windows = (h - win + 1) * (w - win + 1)
    rows = np.empty(n_windows * wsize * wsize, dtype=np.int64)
    cols = np.empty(n_windows * wsize * wsize, dtype=np.int64)
    vals = np.empty(n_windows * wsize * wsize)
    idx = np.empty(wsize, dtype=np.int64)
    patch = np.empty((wsize, 3))
    pos = 0
    for wy in range(h - win + 1):
        for wx in range(w - win + 1):
            t = 0
            for dy in range(win):
                for dx in range(win):
                    idx[t] = (wy + dy) * w + (wx + dx)
                    patch[t, 0] = img[wy + dy, wx + dx, 0]
                    patch[t, 1] = img[wy + dy, wx + dx, 1]
                    patch[t, 2] = img[wy + dy, wx + dx, 2]
                    t += 1
            mu = np.zeros(3)
            for t in range(wsize):
                mu += patch[t]
            mu /= wsize
            cov = np.zeros((3, 3))
            for t in range(wsize):
                d = patch[t] - mu
                for a in range(3):
                    for b in range(3):
                        cov[a, b] += d[a] * d[b]
            cov /= wsize
            for a in range(3):
                cov[a, a] += eps / wsize
            inv = np.linalg.inv(cov)
            for a in range(wsize):
                da = patch[a] - mu
                for b in range(wsize):
                    db = patch[b] - mu
                    q = 0.0
                    for s in range(3):
                        for t2 in range(3):
                            q += da[s] * inv[s, t2] * db[t2]
                    v = -(1.0 + q) / wsize
                    if a == b:
                        v += 1.0
                    rows[pos] = idx[a]
                    cols[pos] = idx[b]
                    vals[pos] = v
                    pos += 1
    return rows, cols, vals


def _matting_entries_np(img, radius, eps):
    h, w, _ = img.shape
    win = 2 * radius + 1
    wsize = win * win
    idx = np.arange(h * w).reshape(h, w)
    win_idx = np.lib.stride_tricks.sliding_window_view(idx, (win, win))
    win_idx = win_idx.reshape(-1, wsize)
    flat = img.reshape(h * w, 3)
    patches = flat[win_idx]  # (n_windows, wsize, 3)
    mu = patches.mean(axis=1, keepdims=True)
    centered = patches - mu
    cov = np.einsum("nwa,nwb->nab", centered, centered) / wsize
    cov += (eps / wsize) * np.eye(3)
    inv = np.linalg.inv(cov)
    quad = np.einsum("nia,nab,njb->nij", centered, inv, centered)
    vals = np.eye(wsize) - (1.0 + quad) / wsize
    rows = np.repeat(win_idx, wsize, axis=1).ravel()
    cols = np.tile(win_idx, (1, wsize)).ravel()
    return rows, cols, vals.ravel()


if USE_NUMBA:
    _bilinear_resize_jit = numba.njit(cache=True)(_bilinear_resize_loop)
    _warp_backward_jit = numba.njit(cache=True)(_warp_backward_loop)
    _tv_jit = numba.njit(cache=True)(_tv_loop)
    _matting_entries_jit = numba.njit(cache=True)(_matting_entries_loop)


def bilinear_resize(grid, out_h, out_w):
    """Resize a 2-D float grid to (out_h, out_w) by bilinear interpolation."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if USE_NUMBA:
        return _bilinear_resize_jit(grid, out_h, out_w)
    return _bilinear_resize_np(grid, out_h, out_w)


def warp_backward(frame, flow):
    """Backward-warp an (H, W, C) frame by an (H, W, 2) displacement field.

    Output pixel (i, j) samples the input at (i - flow[i,j,0], j - flow[i,j,1])
    with bilinear interpolation and border clamping, so a frame translated by
    (dy, dx) is recovered exactly by flow (dy, dx) in the interior.
    """
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    flow = np.ascontiguousarray(flow, dtype=np.float64)
    if USE_NUMBA:
        return _warp_backward_jit(frame, flow)
    return _warp_backward_np(frame, flow)


def tv_loss_and_grad(frame):
    """Unnormalized squared-difference total variation and its gradient."""
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    if USE_NUMBA:
        return _tv_jit(frame)
    return _tv_np(frame)


def matting_laplacian_entries(img, radius, eps):
    """COO triplets of the matting Laplacian of an (H, W, 3) image in [0,1]."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if USE_NUMBA:
        return _matting_entries_jit(img, radius, eps)
    return _matting_entries_np(img, radius, eps)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
