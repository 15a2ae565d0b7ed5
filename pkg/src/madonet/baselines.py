"""Comparison models: PCA reduction, vanilla DeepONet on KL inputs, Legendre PCE basis."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from scipy.special import erf

from .nn import DenseStack, as_seed_sequence
from .stochastic import FunctionEnsemble
from .tensor import Tensor, mul, reshape, tsum

# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass
class PCAProjection:
    mean: np.ndarray  # [m]
    components: np.ndarray  # [r, m], orthonormal rows
    variances: np.ndarray  # [r] sample-covariance eigenvalues, descending
    discarded: float  # sum of the eigenvalues not retained

    @property
    def retained(self) -> int:
        return self.components.shape[0]

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(values) - self.mean) @ self.components.T

    def inverse_transform(self, coords: np.ndarray) -> np.ndarray:
        return self.mean + np.atleast_2d(coords) @ self.components


def pca_fit(data: FunctionEnsemble | np.ndarray, r: int) -> PCAProjection:
    """Top-``r`` principal directions from the sample covariance (n - 1 normalisation).

    Each direction is signed so its largest-magnitude entry is positive.
    """
    x = data.values if isinstance(data, FunctionEnsemble) else np.asarray(data, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    n, m = x.shape
    if not 1 <= r <= min(n, m):
        raise ValueError(f"r must be in [1, {min(n, m)}], got {r}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order[:r]].T.copy()
    for row in vecs:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCAProjection(mu, vecs, vals[:r], float(vals[r:].sum()))


# ---------------------------------------------------------------------------
# vanilla DeepONet with KL-expansion inputs
# ---------------------------------------------------------------------------


class DeepONet:
    """Unstacked DeepONet: ``branch(u) . trunk(y)``."""

    def __init__(self, n_branch: int, n_trunk: int, p: int, widths=(60, 60), seed=0):
        s_b, s_t = as_seed_sequence(seed).spawn(2)
        self.branch = DenseStack(n_branch, widths, p, s_b, "branch")
        self.trunk = DenseStack(n_trunk, widths, p, s_t, "trunk")
        self.p = p

    def params(self) -> dict[str, Tensor]:
        return {**self.branch.params(), **self.trunk.params()}

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        for k, v in state.items():
            params[k].data[...] = v


def deeponet_forward(branch_input, trunk_input, net: DeepONet) -> float:
    """Scalar output for one (branch input, trunk input) pair."""
    b = net.branch(Tensor(np.atleast_2d(branch_input))).data[0]
    t = net.trunk(Tensor(np.atleast_2d(trunk_input))).data[0]
    return float(b @ t)


@dataclass
class KLOperatorData:
    """Per-sample KL data for the vanilla baseline.

    ``branch_inputs`` [N, N_kl * m] holds ``sqrt(lambda_i) e_i(t_j)`` at the
    input sensors; ``xi`` [N, N_kl] the KL coordinates; ``targets`` [N, n_out]
    the solution at output times ``t_out``.
    """

    branch_inputs: np.ndarray
    xi: np.ndarray
    targets: np.ndarray
    t_out: np.ndarray

    def __len__(self) -> int:
        return self.targets.shape[0]

    def subset(self, idx) -> KLOperatorData:
        return KLOperatorData(self.branch_inputs[idx], self.xi[idx], self.targets[idx], self.t_out)


class KLDeepONet(DeepONet):
    """Branch reads the KL modes; trunk reads ``[t, xi_1, ..., xi_N]``."""

    def __init__(self, n_branch: int, n_modes: int, p: int, widths=(60, 60), seed=0):
        super().__init__(n_branch, 1 + n_modes, p, widths, seed)
        self.out_shift: float | np.ndarray = 0.0
        self.out_scale = 1.0
        self.t_lo, self.t_hi = 0.0, 1.0

    def fit_scaling(self, data: KLOperatorData) -> None:
        # per-output-time mean, scalar std of the remainder
        self.out_shift = data.targets.mean(axis=0)
        self.out_scale = float((data.targets - self.out_shift).std()) or 1.0
        self.t_lo, self.t_hi = float(data.t_out.min()), float(data.t_out.max())

    def _forward(self, data: KLOperatorData) -> Tensor:
        n, m = data.targets.shape
        t = 2.0 * (data.t_out - self.t_lo) / max(self.t_hi - self.t_lo, 1e-300) - 1.0
        trunk_in = np.concatenate(
            [np.repeat(t[None, :, None], n, axis=0), np.repeat(data.xi[:, None, :], m, axis=1)], axis=2
        )
        br = self.branch(Tensor(data.branch_inputs))  # [n, p]
        tr = self.trunk(Tensor(trunk_in.reshape(n * m, -1)))  # [n*m, p]
        prod = mul(reshape(tr, (n, m, self.p)), reshape(br, (n, 1, self.p)))
        return tsum(prod, axis=2)

    def predict(self, data: KLOperatorData) -> np.ndarray:
        return self.out_shift + self.out_scale * self._forward(data).data


def deeponet_loss(model: KLDeepONet, data: KLOperatorData, l1_weight: float = 0.0):
    from .model import LossTerms, TrainingDiverged
    from .tensor import mean, square, sub

    pred = model._forward(data)
    mse_u = mean(square(sub(pred, (data.targets - model.out_shift) / model.out_scale)))
    if not np.isfinite(mse_u.data):
        raise TrainingDiverged("non-finite prediction MSE")
    return LossTerms(mse_u, 0.0, float(mse_u.data), 0.0)


# ---------------------------------------------------------------------------
# Legendre polynomial chaos
# ---------------------------------------------------------------------------


def legendre_eval(degree: int, x) -> np.ndarray:
    """``P_n(x)`` by the three-term recurrence, normalised so ``P_n(1) = 1``."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("Legendre arguments must lie in [-1, 1]")
    p_prev, p = np.ones_like(x), x.copy()
    if degree == 0:
        return p_prev
    for n in range(1, degree):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return p


class PCEBasis:
    """Multi-indices of total degree <= ``degree`` over ``dim`` variables.

    Ordered by total degree, then lexicographically descending.
    """

    def __init__(self, dim: int, degree: int):
        if dim < 1 or degree < 0:
            raise ValueError("dim must be >= 1 and degree >= 0")
        self.dim = dim
        self.degree = degree
        idx = []
        for total in range(degree + 1):
            level = set()
            for combo in combinations_with_replacement(range(dim), total):
                alpha = [0] * dim
                for c in combo:
                    alpha[c] += 1
                level.add(tuple(alpha))
            idx.extend(sorted(level, reverse=True))
        self.indices = np.array(idx, dtype=int).reshape(-1, dim)
        assert len(idx) == comb(dim + degree, degree)

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def pce_basis_eval(basis: PCEBasis, xi) -> np.ndarray:
    """Tensor-product Legendre values for each multi-index; [size] or [B, size]."""
    xi = np.asarray(xi, dtype=np.float64)
    single = xi.ndim == 1
    xi = np.atleast_2d(xi)
    if xi.shape[1] != basis.dim:
        raise ValueError(f"expected {basis.dim}-dimensional inputs, got {xi.shape[1]}")
    table = np.stack([legendre_eval(q, xi) for q in range(basis.degree + 1)])  # [q+1, B, d]
    out = np.ones((xi.shape[0], basis.size))
    for k in range(basis.dim):
        out *= table[basis.indices[:, k], :, k].T
    return out[0] if single else out


def gaussian_to_unit(z: np.ndarray) -> np.ndarray:
    """Map standard-normal coordinates to [-1, 1] through the normal CDF."""
    return erf(np.asarray(z) / np.sqrt(2.0))
