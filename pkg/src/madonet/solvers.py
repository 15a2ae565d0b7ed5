"""Ground-truth solution operators for the four benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import splu

from . import _kernels


@dataclass
class Field2D:
    """Values on the tensor grid ``x`` by ``y``; leading batch axes allowed."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-2:] != (self.x.size, self.y.size):
            raise ValueError(f"values shape {self.values.shape} does not end with ({self.x.size}, {self.y.size})")


def _uniform_step(x: np.ndarray, what: str) -> float:
    if x.size < 2:
        raise ValueError(f"{what} needs at least two points")
    dx = np.diff(x)
    h = float(dx.mean())
    if np.max(np.abs(dx - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError(f"{what} must be uniform")
    return h


def solve_growth_ode(k: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``u' = k u`` with ``u(0) = 1``: ``u = exp(cumtrapz(k))``.

    ``k`` is [n_t] or [n_samples, n_t]; ``t`` must start at 0.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("empty time grid")
    if t[0] != 0.0:
        raise ValueError("time grid must include t = 0 for the initial condition")
    k = np.asarray(k, dtype=np.float64)
    if k.shape[-1] != t.size:
        raise ValueError(f"k has {k.shape[-1]} time points, grid has {t.size}")
    if t.size == 1:
        return np.ones_like(k)
    return np.exp(cumulative_trapezoid(k, t, axis=-1, initial=0.0))


def solve_poisson_1d(f: np.ndarray, x: np.ndarray, domain: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """``-u'' = f`` on interior nodes ``x`` with zero Dirichlet data at both ends.

    ``f`` is [n] or [n_samples, n]; second-order central differences.
    """
    x = np.asarray(x, dtype=np.float64)
    h = _uniform_step(x, "poisson grid") if x.size > 1 else (domain[1] - domain[0]) / 2.0
    if abs(x[0] - h - domain[0]) > 1e-9 or abs(x[-1] + h - domain[1]) > 1e-9:
        raise ValueError("grid must be the interior nodes of the domain")
    f = np.asarray(f, dtype=np.float64)
    batch = f.reshape(-1, x.size)
    n = x.size
    lower = np.full(n, -1.0)
    upper = np.full(n, -1.0)
    diag = np.full(n, 2.0)
    u = _kernels.active.tridiag_solve(lower, diag, upper, np.ascontiguousarray(batch.T * h * h))
    if not np.all(np.isfinite(u)):
        raise np.linalg.LinAlgError("tridiagonal solve produced non-finite values")
    return u.T.reshape(f.shape)


@lru_cache(maxsize=8)
def _laplacian_lu(nx: int, ny: int, hx: float, hy: float):
    tx = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(nx, nx)) / hx**2
    ty = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(ny, ny)) / hy**2
    a = (sparse.kron(tx, sparse.identity(ny)) + sparse.kron(sparse.identity(nx), ty)).tocsc()
    return a, splu(a)


def solve_poisson_2d(f: Field2D, domain: tuple[float, float] = (-1.0, 1.0), tol: float = 1e-10) -> Field2D:
    """Five-point Laplacian, zero Dirichlet boundary, sparse direct solve.

    ``f.x`` and ``f.y`` are the interior nodes of ``domain`` in each direction.
    """
    hx = _uniform_step(f.x, "x grid")
    hy = _uniform_step(f.y, "y grid")
    for ax, h in ((f.x, hx), (f.y, hy)):
        if abs(ax[0] - h - domain[0]) > 1e-9 or abs(ax[-1] + h - domain[1]) > 1e-9:
            raise ValueError("grid must be the interior nodes of the domain")
    nx, ny = f.x.size, f.y.size
    a, lu = _laplacian_lu(nx, ny, round(hx, 15), round(hy, 15))
    rhs = f.values.reshape(-1, nx * ny).T
    u = lu.solve(np.ascontiguousarray(rhs))
    res = np.linalg.norm(a @ u - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(res) or res > tol:
        raise np.linalg.LinAlgError(f"Poisson solve residual {res:.3e} exceeds {tol:.1e}")
    return Field2D(f.x, f.y, u.T.reshape(f.values.shape))


def refine_interior(n: int, factor: int) -> int:
    """Interior node count after refining spacing by ``factor``."""
    return factor * (n + 1) - 1


def restrict_interior(values: np.ndarray, factor: int, axes: tuple[int, ...] = (-1,)) -> np.ndarray:
    """Pick the coarse interior nodes out of a refined interior grid."""
    out = values
    for ax in axes:
        idx = np.arange(factor - 1, out.shape[ax], factor)
        out = np.take(out, idx, axis=ax)
    return out


def kdv_solution(f: np.ndarray, t: np.ndarray, x: np.ndarray, query_times: np.ndarray) -> Field2D:
    """``u = W - 2 sech^2(x - 4t + 6 int_0^t W)`` with ``W = int_0^t f``.

    ``f`` is [n_t] or [n_samples, n_t] on the grid ``t`` (starting at 0).
    Values come back as [..., n_x, n_query].
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    q = np.atleast_1d(np.asarray(query_times, dtype=np.float64))
    if t.size < 2 or t[0] != 0.0:
        raise ValueError("time grid must start at 0 and have at least two points")
    span = t[-1] - t[0]
    if np.any(q < t[0] - 1e-12 * span) or np.any(q > t[-1] + 1e-12 * span):
        raise ValueError(f"query times must lie in [{t[0]}, {t[-1]}]")
    f = np.asarray(f, dtype=np.float64)
    w = cumulative_trapezoid(f, t, axis=-1, initial=0.0)
    iw = cumulative_trapezoid(w, t, axis=-1, initial=0.0)
    flat_w = w.reshape(-1, t.size)
    flat_iw = iw.reshape(-1, t.size)
    wq = np.stack([np.interp(q, t, row) for row in flat_w])
    iwq = np.stack([np.interp(q, t, row) for row in flat_iw])
    arg = x[None, :, None] - 4.0 * q[None, None, :] + 6.0 * iwq[:, None, :]
    u = wq[:, None, :] - 2.0 / np.cosh(arg) ** 2
    return Field2D(x, q, u.reshape(*f.shape[:-1], x.size, q.size))
