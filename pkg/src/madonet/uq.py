"""Latent KDE generator, ensemble statistics and error metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .stochastic import FunctionEnsemble, SensorGrid, stream

BANDWIDTH_FLOOR = 1e-8


@dataclass
class KDEModel:
    latents: np.ndarray  # [n, d]
    bandwidth: np.ndarray  # [d], diagonal of the bandwidth matrix

    @property
    def dim(self) -> int:
        return self.latents.shape[1]


def kde_fit(latents: np.ndarray) -> KDEModel:
    """Gaussian product kernel with Scott's rule ``n^(-1/(d+4)) * std`` per dimension."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    n, d = z.shape
    if n < 2:
        raise ValueError("KDE needs at least two latent samples")
    bw = n ** (-1.0 / (d + 4)) * z.std(axis=0, ddof=1)
    if np.any(bw < BANDWIDTH_FLOOR):
        warnings.warn("zero-variance latent dimension; bandwidth floored at 1e-8", RuntimeWarning, stacklevel=2)
        bw = np.maximum(bw, BANDWIDTH_FLOOR)
    return KDEModel(z.copy(), bw)


def kde_pdf(model: KDEModel, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, model.dim)
    return _kernels.active.gauss_kde_eval(np.ascontiguousarray(pts), model.latents, model.bandwidth)


def kde_sample(model: KDEModel, n: int, seed: int) -> np.ndarray:
    """Resample a stored latent uniformly and perturb it by the kernel."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = stream(seed, "kde")
    pick = rng.integers(0, model.latents.shape[0], size=n)
    return model.latents[pick] + rng.standard_normal((n, model.dim)) * model.bandwidth


def decode(model, z: np.ndarray, unsup: SensorGrid, sup: SensorGrid) -> tuple[np.ndarray, np.ndarray]:
    """Both heads of a trained model at latent codes ``z`` [n, latent]."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, model.arch.latent)
    if z.shape[0] == 0:
        return np.zeros((0, unsup.size)), np.zeros((0, sup.size))
    phi = model.basis(z).data
    s = model.scaling
    k = s.in_centre(unsup.points) + s.in_scale * (phi @ model.coeff_unsup(unsup.points).data.T)
    u = s.out_centre(sup.points) + s.out_scale * (phi @ model.coeff_sup(sup.points).data.T)
    return k, u


def generate_ensemble(
    model, kde: KDEModel, unsup: SensorGrid, sup: SensorGrid, n: int, seed: int
) -> tuple[FunctionEnsemble, FunctionEnsemble]:
    """New input/solution sample pairs decoded from KDE-drawn latent codes."""
    z = kde_sample(kde, n, seed)
    k, u = decode(model, z, unsup, sup)
    return FunctionEnsemble(unsup, k, z), FunctionEnsemble(sup, u, z)


def rel_l2(pred, ref) -> float:
    """``||pred - ref|| / ||ref||``; for 2D inputs the mean of per-row values."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    if ref.ndim <= 1:
        denom = np.linalg.norm(ref)
        if denom == 0.0:
            raise ValueError("reference has zero norm")
        return float(np.linalg.norm(pred - ref) / denom)
    pred = pred.reshape(pred.shape[0], -1)
    ref = ref.reshape(ref.shape[0], -1)
    denom = np.linalg.norm(ref, axis=1)
    if np.any(denom == 0.0):
        raise ValueError("a reference sample has zero norm")
    return float(np.mean(np.linalg.norm(pred - ref, axis=1) / denom))


def mse(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    return float(np.mean((pred - ref) ** 2))


def ensemble_stats(ensemble: FunctionEnsemble | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sensor mean and unbiased variance."""
    values = ensemble.values if isinstance(ensemble, FunctionEnsemble) else np.asarray(ensemble, dtype=np.float64)
    if values.shape[0] < 2:
        raise ValueError("variance needs at least two samples")
    return values.mean(axis=0), values.var(axis=0, ddof=1)
