"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used when numba imports cleanly and the
environment variable ``MADONET_DISABLE_NUMBA`` is unset (or ``0``).  Both
paths compute the same quantities; ``tests/test_kernels.py`` checks them
against each other and ``benchmarks/bench_kernels.py`` times them.

Array conventions (all float64, C-contiguous):

* conv1d input ``[B, C, L]``, kernel ``[O, C, K]``, output ``[B, O, Lo]``
* conv2d input ``[B, C, H, W]``, kernel ``[O, C, KH, KW]``, output ``[B, O, Ho, Wo]``
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _env_disabled() -> bool:
    return os.environ.get("MADONET_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def np_conv1d_forward(x, w, stride):
    k = w.shape[2]
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    return np.einsum("bclk,ock->bol", win, w, optimize=True)


def np_conv1d_grad_kernel(gy, x, k, stride):
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    return np.einsum("bol,bclk->ock", gy, win, optimize=True)


def np_conv1d_grad_input(gy, w, length, stride):
    b, o, lo = gy.shape
    c, k = w.shape[1], w.shape[2]
    gx = np.zeros((b, c, length))
    span = stride * (lo - 1) + 1
    for j in range(k):
        gx[:, :, j : j + span : stride] += np.einsum("bol,oc->bcl", gy, w[:, :, j], optimize=True)
    return gx


def np_conv2d_forward(x, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bchwij,ocij->bohw", win, w, optimize=True)


def np_conv2d_grad_kernel(gy, x, kh, kw, stride):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bohw,bchwij->ocij", gy, win, optimize=True)


def np_conv2d_grad_input(gy, w, height, width, stride):
    b, o, ho, wo = gy.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gx = np.zeros((b, c, height, width))
    sh = stride * (ho - 1) + 1
    sw = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + sh : stride, j : j + sw : stride] += np.einsum(
                "bohw,oc->bchw", gy, w[:, :, i, j], optimize=True
            )
    return gx


def np_tridiag_solve(lower, diag, upper, rhs):
    """Thomas algorithm, vectorised over right-hand-side columns.

    ``rhs`` has shape ``[n, m]``; the band arrays have length ``n`` (the
    first entry of ``lower`` and last of ``upper`` are ignored).
    """
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty_like(rhs)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    out = np.empty_like(rhs)
    out[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    return out


def np_gauss_kde_eval(points, data, bandwidth):
    """Product-Gaussian KDE density at ``points`` [m, d] from ``data`` [n, d]."""
    d = data.shape[1]
    z = (points[:, None, :] - data[None, :, :]) / bandwidth
    norm = (2.0 * np.pi) ** (d / 2.0) * np.prod(bandwidth) * data.shape[0]
    return np.exp(-0.5 * np.sum(z * z, axis=2)).sum(axis=1) / norm


numpy_kernels = SimpleNamespace(
    name="numpy",
    conv1d_forward=np_conv1d_forward,
    conv1d_grad_kernel=np_conv1d_grad_kernel,
    conv1d_grad_input=np_conv1d_grad_input,
    conv2d_forward=np_conv2d_forward,
    conv2d_grad_kernel=np_conv2d_grad_kernel,
    conv2d_grad_input=np_conv2d_grad_input,
    tridiag_solve=np_tridiag_solve,
    gauss_kde_eval=np_gauss_kde_eval,
)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _build_numba_kernels():
    jit = njit(cache=True, fastmath=False)

    # Convolutions: numba gathers patches (im2col) and scatters them back
    # (col2im); the contractions go through BLAS via np.dot.

    @jit
    def _im2col1d(x, k_n, stride):
        b_n, c_n, length = x.shape
        lo = (length - k_n) // stride + 1
        cols = np.empty((b_n * lo, c_n * k_n))
        for b in range(b_n):
            for l in range(lo):
                r = b * lo + l
                base = l * stride
                for c in range(c_n):
                    for k in range(k_n):
                        cols[r, c * k_n + k] = x[b, c, base + k]
        return cols

    @jit
    def _rows_to_bol(rows, b_n, o_n, lo):
        out = np.empty((b_n, o_n, lo))
        for b in range(b_n):
            for l in range(lo):
                for o in range(o_n):
                    out[b, o, l] = rows[b * lo + l, o]
        return out

    @jit
    def _bol_to_rows(gy):
        b_n, o_n, lo = gy.shape
        rows = np.empty((b_n * lo, o_n))
        for b in range(b_n):
            for l in range(lo):
                for o in range(o_n):
                    rows[b * lo + l, o] = gy[b, o, l]
        return rows

    @jit
    def conv1d_forward(x, w, stride):
        b_n = x.shape[0]
        o_n, c_n, k_n = w.shape
        lo = (x.shape[2] - k_n) // stride + 1
        cols = _im2col1d(x, k_n, stride)
        rows = np.dot(cols, np.ascontiguousarray(w.reshape(o_n, c_n * k_n).T))
        return _rows_to_bol(rows, b_n, o_n, lo)

    @jit
    def conv1d_grad_kernel(gy, x, k_n, stride):
        o_n = gy.shape[1]
        c_n = x.shape[1]
        cols = _im2col1d(x, k_n, stride)
        gw = np.dot(np.ascontiguousarray(_bol_to_rows(gy).T), cols)
        return gw.reshape(o_n, c_n, k_n)

    @jit
    def conv1d_grad_input(gy, w, length, stride):
        b_n, o_n, lo = gy.shape
        c_n, k_n = w.shape[1], w.shape[2]
        dcols = np.dot(_bol_to_rows(gy), np.ascontiguousarray(w.reshape(o_n, c_n * k_n)))
        gx = np.zeros((b_n, c_n, length))
        for b in range(b_n):
            for l in range(lo):
                r = b * lo + l
                base = l * stride
                for c in range(c_n):
                    for k in range(k_n):
                        gx[b, c, base + k] += dcols[r, c * k_n + k]
        return gx

    @jit
    def _im2col2d(x, kh, kw, stride):
        b_n, c_n, h_n, w_n = x.shape
        ho = (h_n - kh) // stride + 1
        wo = (w_n - kw) // stride + 1
        cols = np.empty((b_n * ho * wo, c_n * kh * kw))
        for b in range(b_n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    bi = i * stride
                    bj = j * stride
                    for c in range(c_n):
                        for p in range(kh):
                            for q in range(kw):
                                cols[r, (c * kh + p) * kw + q] = x[b, c, bi + p, bj + q]
        return cols

    @jit
    def _bohw_to_rows(gy):
        b_n, o_n, ho, wo = gy.shape
        rows = np.empty((b_n * ho * wo, o_n))
        for b in range(b_n):
            for i in range(ho):
                for j in range(wo):
                    for o in range(o_n):
                        rows[(b * ho + i) * wo + j, o] = gy[b, o, i, j]
        return rows

    @jit
    def conv2d_forward(x, w, stride):
        b_n = x.shape[0]
        o_n, c_n, kh, kw = w.shape
        ho = (x.shape[2] - kh) // stride + 1
        wo = (x.shape[3] - kw) // stride + 1
        cols = _im2col2d(x, kh, kw, stride)
        rows = np.dot(cols, np.ascontiguousarray(w.reshape(o_n, c_n * kh * kw).T))
        out = np.empty((b_n, o_n, ho, wo))
        for b in range(b_n):
            for i in range(ho):
                for j in range(wo):
                    for o in range(o_n):
                        out[b, o, i, j] = rows[(b * ho + i) * wo + j, o]
        return out

    @jit
    def conv2d_grad_kernel(gy, x, kh, kw, stride):
        o_n = gy.shape[1]
        c_n = x.shape[1]
        cols = _im2col2d(x, kh, kw, stride)
        gw = np.dot(np.ascontiguousarray(_bohw_to_rows(gy).T), cols)
        return gw.reshape(o_n, c_n, kh, kw)

    @jit
    def conv2d_grad_input(gy, w, height, width, stride):
        b_n, o_n, ho, wo = gy.shape
        c_n, kh, kw = w.shape[1], w.shape[2], w.shape[3]
        dcols = np.dot(_bohw_to_rows(gy), np.ascontiguousarray(w.reshape(o_n, c_n * kh * kw)))
        gx = np.zeros((b_n, c_n, height, width))
        for b in range(b_n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    bi = i * stride
                    bj = j * stride
                    for c in range(c_n):
                        for p in range(kh):
                            for q in range(kw):
                                gx[b, c, bi + p, bj + q] += dcols[r, (c * kh + p) * kw + q]
        return gx

    @jit
    def tridiag_solve(lower, diag, upper, rhs):
        n, m = rhs.shape
        cp = np.empty(n)
        dp = np.empty((n, m))
        out = np.empty((n, m))
        cp[0] = upper[0] / diag[0]
        for j in range(m):
            dp[0, j] = rhs[0, j] / diag[0]
        for i in range(1, n):
            denom = diag[i] - lower[i] * cp[i - 1]
            cp[i] = upper[i] / denom
            for j in range(m):
                dp[i, j] = (rhs[i, j] - lower[i] * dp[i - 1, j]) / denom
        for j in range(m):
            out[n - 1, j] = dp[n - 1, j]
        for i in range(n - 2, -1, -1):
            for j in range(m):
                out[i, j] = dp[i, j] - cp[i] * out[i + 1, j]
        return out

    @jit
    def gauss_kde_eval(points, data, bandwidth):
        m, d = points.shape
        n = data.shape[0]
        norm = (2.0 * np.pi) ** (d / 2.0) * n
        for k in range(d):
            norm *= bandwidth[k]
        out = np.zeros(m)
        for i in range(m):
            s = 0.0
            for j in range(n):
                q = 0.0
                for k in range(d):
                    z = (points[i, k] - data[j, k]) / bandwidth[k]
                    q += z * z
                s += np.exp(-0.5 * q)
            out[i] = s / norm
        return out

    return SimpleNamespace(
        name="numba",
        conv1d_forward=conv1d_forward,
        conv1d_grad_kernel=conv1d_grad_kernel,
        conv1d_grad_input=conv1d_grad_input,
        conv2d_forward=conv2d_forward,
        conv2d_grad_kernel=conv2d_grad_kernel,
        conv2d_grad_input=conv2d_grad_input,
        tridiag_solve=tridiag_solve,
        gauss_kde_eval=gauss_kde_eval,
    )


numba_kernels = _build_numba_kernels() if HAVE_NUMBA else None

USE_NUMBA = HAVE_NUMBA and not _env_disabled()
active = numba_kernels if USE_NUMBA else numpy_kernels
