"""Gaussian random processes: Gram matrices, sampling, Karhunen-Loeve modes.

Also home to :class:`SensorGrid` and :class:`FunctionEnsemble` with the
binary/CSV serialisation shared by the whole pipeline.
"""

from __future__ import annotations

import csv
import logging
import struct
import zlib
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

FAMILIES = ("squared-exponential", "exponential")


def stream(seed: int, tag: str) -> np.random.Generator:
    """Independent generator for one (seed, call-tag) pair."""
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode())])


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass
class SensorGrid:
    """Ordered sensor coordinates ``points`` [n, dim].

    ``shape`` is the array layout of the sensors (``(n,)`` in 1D, ``(nx, ny)``
    for a row-major tensor grid); ``axes`` keeps the 1D coordinate vectors
    of a tensor grid so separable kernels can be factorised.
    """

    points: np.ndarray
    shape: tuple[int, ...]
    axes: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.shape = tuple(int(s) for s in self.shape)
        if int(np.prod(self.shape)) != self.points.shape[0]:
            raise ValueError(f"grid shape {self.shape} does not match {self.points.shape[0]} points")
        if not self.axes and self.dim == 1:
            self.axes = (self.points[:, 0].copy(),)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_tensor(self) -> bool:
        return len(self.axes) == self.dim

    @classmethod
    def line(cls, coords) -> SensorGrid:
        coords = np.asarray(coords, dtype=np.float64)
        return cls(coords[:, None], (coords.size,), (coords,))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> SensorGrid:
        if n < 1:
            raise ValueError("grid needs at least one point")
        return cls.line(np.linspace(lo, hi, n))

    @classmethod
    def interior(cls, lo: float, hi: float, n: int) -> SensorGrid:
        """``n`` interior nodes of a uniform grid with spacing (hi-lo)/(n+1)."""
        if n < 1:
            raise ValueError("grid needs at least one point")
        return cls.line(np.linspace(lo, hi, n + 2)[1:-1])

    @classmethod
    def tensor(cls, *axes) -> SensorGrid:
        axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(pts, tuple(a.size for a in axes), axes)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (tensor products of 1D trapezoid weights)."""
        if not self.is_tensor:
            raise ValueError("quadrature weights need a tensor-product grid")
        w = np.ones(1)
        for ax in self.axes:
            w = np.multiply.outer(w, _trapezoid_weights(ax)).reshape(-1)
        return w

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "axes": [a.tolist() for a in self.axes]}

    @classmethod
    def from_dict(cls, d: dict) -> SensorGrid:
        return cls.tensor(*d["axes"]) if len(d["axes"]) > 1 else cls.line(d["axes"][0])


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    if x.size == 1:
        return np.ones(1)
    dx = np.diff(x)
    w = np.zeros(x.size)
    w[:-1] += dx / 2.0
    w[1:] += dx / 2.0
    return w


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    family: str = "squared-exponential"
    sigma: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.length <= 0:
            raise ValueError("correlation length must be positive")

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Covariance between point sets [n, d] and [m, d]."""
        x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
        x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
        diff = x1[:, None, :] - x2[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        if self.family == "squared-exponential":
            return self.sigma**2 * np.exp(-sq / (2.0 * self.length**2))
        return self.sigma**2 * np.exp(-np.sqrt(sq) / self.length)

    @property
    def separable(self) -> bool:
        return self.family == "squared-exponential"


def gram_matrix(kernel: KernelSpec, grid: SensorGrid) -> np.ndarray:
    if grid.size == 0:
        raise ValueError("empty grid")
    k = kernel(grid.points, grid.points)
    return 0.5 * (k + k.T)


def _cholesky_jitter(k: np.ndarray) -> np.ndarray:
    scale = float(np.max(np.diag(k)))
    if scale == 0.0:
        return np.zeros_like(k)
    last = None
    for jitter in (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            chol = linalg.cholesky(k + jitter * scale * np.eye(k.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            last = exc
            continue
        if jitter > 1e-9:
            logger.info("Cholesky needed relative jitter %.0e", jitter)
        return chol
    eig = np.linalg.eigvalsh(k)
    raise linalg.LinAlgError(
        f"Cholesky failed with relative jitter up to 1e-6 (eigenvalues in [{eig[0]:.3e}, {eig[-1]:.3e}])"
    ) from last


def _mean_values(mean, grid: SensorGrid) -> np.ndarray:
    if mean is None:
        return np.zeros(grid.size)
    if callable(mean):
        return np.asarray(mean(grid.points), dtype=np.float64).reshape(grid.size)
    return np.broadcast_to(np.asarray(mean, dtype=np.float64), (grid.size,)).copy()


@dataclass
class FunctionEnsemble:
    """Sampled trajectories ``values`` [n_samples, n_sensors] on ``grid``."""

    grid: SensorGrid
    values: np.ndarray
    latent: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, self.grid.size)
        if self.latent is not None:
            latent = np.asarray(self.latent, dtype=np.float64)
            self.latent = latent.reshape(self.values.shape[0], latent.shape[-1] if latent.ndim > 1 else -1)

    def __len__(self) -> int:
        return self.values.shape[0]

    def subset(self, idx) -> FunctionEnsemble:
        lat = None if self.latent is None else self.latent[idx]
        return FunctionEnsemble(self.grid, self.values[idx], lat)


def gp_sample(
    mean: Callable | np.ndarray | float | None,
    kernel: KernelSpec,
    grid: SensorGrid,
    n_samples: int,
    seed: int,
    tag: str = "gp",
) -> FunctionEnsemble:
    """Draw ``mean + L @ eta`` with ``L`` the (jittered) Cholesky factor of the Gram matrix.

    Separable kernels on tensor grids are factorised axis by axis, which
    keeps fine 2D grids cheap.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = stream(seed, tag)
    mu = _mean_values(mean, grid)
    if grid.dim > 1 and grid.is_tensor and kernel.separable:
        factors = []
        for i, ax in enumerate(grid.axes):
            sub = KernelSpec(kernel.family, kernel.sigma if i == 0 else 1.0, kernel.length)
            factors.append(_cholesky_jitter(gram_matrix(sub, SensorGrid.line(ax))))
        eta = rng.standard_normal((n_samples, *grid.shape))
        draws = eta
        for axis, chol in enumerate(factors):
            draws = np.moveaxis(np.tensordot(chol, draws, axes=([1], [axis + 1])), 0, axis + 1)
        values = mu + draws.reshape(n_samples, grid.size)
    else:
        chol = _cholesky_jitter(gram_matrix(kernel, grid))
        eta = rng.standard_normal((n_samples, grid.size))
        values = mu + eta @ chol.T
    return FunctionEnsemble(grid, values)


# ---------------------------------------------------------------------------
# Karhunen-Loeve
# ---------------------------------------------------------------------------


@dataclass
class KLBasis:
    eigenvalues: np.ndarray  # [N], descending, nonnegative
    eigenfunctions: np.ndarray  # [n_sensors, N], orthonormal under weights
    grid: SensorGrid
    weights: np.ndarray  # quadrature weights [n_sensors]

    @property
    def retained(self) -> int:
        return self.eigenvalues.size

    def project(self, values: np.ndarray, mean: np.ndarray | float = 0.0) -> np.ndarray:
        """Standardised KL coordinates of centred samples, [n, N]."""
        centred = np.atleast_2d(values) - mean
        coef = (centred * self.weights) @ self.eigenfunctions
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.eigenvalues > 0, coef / np.sqrt(self.eigenvalues), 0.0)

    def truncated_covariance(self) -> np.ndarray:
        e = self.eigenfunctions
        return (e * self.eigenvalues) @ e.T


def kl_modes(kernel: KernelSpec, grid: SensorGrid, retain: int) -> KLBasis:
    """Nystrom KL modes from the symmetrised problem ``W^1/2 K W^1/2``."""
    if not 1 <= retain <= grid.size:
        raise ValueError(f"retain must be in [1, {grid.size}], got {retain}")
    w = grid.quadrature_weights()
    sw = np.sqrt(w)
    k = gram_matrix(kernel, grid)
    sym = sw[:, None] * k * sw[None, :]
    sym = 0.5 * (sym + sym.T)
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1][:retain]
    vals = np.clip(vals[order], 0.0, None)
    with np.errstate(divide="ignore"):
        inv_sw = np.where(sw > 0, 1.0 / sw, 0.0)
    funcs = vecs[:, order] * inv_sw[:, None]
    for j in range(retain):
        col = funcs[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            funcs[:, j] = -col
    return KLBasis(vals, funcs, grid, w)


def kl_field_sample(
    basis: KLBasis,
    sigma: float,
    n_samples: int,
    seed: int,
    omega: np.ndarray | None = None,
    tag: str = "kl",
) -> FunctionEnsemble:
    """``sigma * sum_i sqrt(lambda_i) phi_i(t) omega_i`` with standard-normal omega."""
    if omega is None:
        omega = stream(seed, tag).standard_normal((n_samples, basis.retained))
    omega = np.asarray(omega, dtype=np.float64).reshape(-1, basis.retained)
    values = sigma * (omega * np.sqrt(basis.eigenvalues)) @ basis.eigenfunctions.T
    return FunctionEnsemble(basis.grid, values, omega)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

ENSEMBLE_MAGIC = b"MAFE"
ENSEMBLE_VERSION = 1
_HEAD = struct.Struct("<4sHQQII")


def ensemble_bytes(ens: FunctionEnsemble) -> bytes:
    """Columnar little-endian float64 layout behind a fixed header.

    header: magic, version, n_samples, n_sensors, n_axes, latent_dim;
    then per axis its length (u64) and coordinates; then value columns
    (one per sensor); then latent columns.
    """
    n, m = ens.values.shape
    lat = ens.latent
    ld = 0 if lat is None else lat.shape[1]
    parts = [_HEAD.pack(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, n, m, len(ens.grid.axes), ld)]
    for ax in ens.grid.axes:
        parts.append(struct.pack("<Q", ax.size))
        parts.append(np.asarray(ax, dtype="<f8").tobytes())
    parts.append(np.asfortranarray(ens.values, dtype="<f8").tobytes(order="F"))
    if lat is not None:
        parts.append(np.asfortranarray(lat, dtype="<f8").tobytes(order="F"))
    return b"".join(parts)


def save_ensemble(path, ens: FunctionEnsemble) -> None:
    Path(path).write_bytes(ensemble_bytes(ens))


def load_ensemble(path) -> FunctionEnsemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise ValueError(f"{path}: truncated ensemble header")
    magic, version, n, m, n_axes, ld = _HEAD.unpack_from(raw, 0)
    if magic != ENSEMBLE_MAGIC:
        raise ValueError(f"{path}: not an ensemble file (magic {magic!r})")
    if version != ENSEMBLE_VERSION:
        raise ValueError(f"{path}: unsupported ensemble version {version}")
    off = _HEAD.size
    axes = []
    for _ in range(n_axes):
        (size,) = struct.unpack_from("<Q", raw, off)
        off += 8
        axes.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).astype(np.float64))
        off += 8 * size
    expected = off + 8 * n * (m + ld)
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype="<f8", count=n * m, offset=off).reshape((n, m), order="F")
    off += 8 * n * m
    latent = None
    if ld:
        latent = np.frombuffer(raw, dtype="<f8", count=n * ld, offset=off).reshape((n, ld), order="F")
    grid = SensorGrid.tensor(*axes) if len(axes) > 1 else SensorGrid.line(axes[0])
    if grid.size != m:
        raise ValueError(f"{path}: grid has {grid.size} points but {m} value columns")
    return FunctionEnsemble(grid, np.array(values), None if latent is None else np.array(latent))


def export_csv(path, ens: FunctionEnsemble) -> None:
    """One row per sample; header names each sensor by its coordinates."""
    labels = ["(" + ",".join(f"{c:.6g}" for c in pt) + ")" for pt in ens.grid.points]
    ld = 0 if ens.latent is None else ens.latent.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", *labels, *(f"xi{i + 1}" for i in range(ld))])
        for i, row in enumerate(ens.values):
            extra = [] if ens.latent is None else [repr(float(v)) for v in ens.latent[i]]
            writer.writerow([i, *(repr(float(v)) for v in row), *extra])
