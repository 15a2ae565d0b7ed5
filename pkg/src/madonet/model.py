"""MultiAuto-DeepONet: convolutional encoder, one shared branch, two trunks.

The encoder maps a sampled input function to a latent code ``z``.  The
branch net turns ``z`` into a basis ``phi(z)`` that both heads share:

* unsupervised head  ``k~(x)  = a(x)  . phi(z)``  (reconstructs the input)
* supervised head    ``u~(x') = b(x') . phi(z)``  (predicts the solution)

The two trunks take coordinates of different dimension and on different
grids.  Swapping the encoder for a fixed linear reducer gives PCA-DeepONet;
swapping the branch for a frozen polynomial basis gives the PCE variant;
everything downstream of the reducer is the same code.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import baselines
from .nn import AdamState, ConvLayer, ConvSpec, DenseStack, adam_step, as_seed_sequence, l1_penalty
from .stochastic import SensorGrid
from .tensor import Tensor, add, backward, matmul, mean, mul, reshape, square, sub, transpose

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Architecture:
    input_shape: tuple[int, ...]  # (n,) or (nx, ny)
    unsup_dim: int = 1
    sup_dim: int = 1
    latent: int = 8
    p: int = 60
    conv_channels: tuple[int, ...] = (8, 16)
    filter_size: int = 5
    stride: int = 1
    encoder_hidden: tuple[int, ...] = (64,)
    branch_widths: tuple[int, ...] = (60, 60)
    trunk_widths: tuple[int, ...] = (60, 60)
    reducer: str = "conv"  # conv | pca | kl
    branch: str = "dense"  # dense | pce
    pce_degree: int = 3
    l1_on: tuple[str, ...] = ("a", "b", "phi")

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        for name in ("conv_channels", "encoder_hidden", "branch_widths", "trunk_widths", "l1_on"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.reducer not in ("conv", "pca", "kl"):
            raise ValueError(f"unknown reducer {self.reducer!r}")
        if self.branch not in ("dense", "pce"):
            raise ValueError(f"unknown branch {self.branch!r}")
        if self.branch == "pce":
            count = baselines.PCEBasis(self.latent, self.pce_degree).size
            if self.p != count:
                raise ValueError(f"PCE branch yields {count} basis values but p = {self.p}")
        bad = set(self.l1_on) - {"a", "b", "phi"}
        if bad:
            raise ValueError(f"unknown L1 targets {sorted(bad)}")
        if min(self.latent, self.p, self.unsup_dim, self.sup_dim) < 1:
            raise ValueError("latent, p and trunk dimensions must be positive")

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.input_shape))


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-3
    l1_weight: float = 1e-4
    patience: int = 200
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.l1_weight < 0:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{i + 1},{tr!r},{va!r}" for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss))]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> TrainHistory:
        rows = Path(path).read_text().strip().splitlines()[1:]
        h = cls()
        for row in rows:
            _, tr, va = row.split(",")
            h.train_loss.append(float(tr))
            h.val_loss.append(float(va))
        if h.val_loss:
            h.best_epoch = int(np.argmin(h.val_loss))
            h.best_val_loss = h.val_loss[h.best_epoch]
        return h


@dataclass
class OperatorData:
    """Paired samples: encoder inputs and supervised targets plus both trunk grids.

    ``recon`` (defaults to the flattened inputs) is what the unsupervised
    head reconstructs at ``unsup`` sensors.
    """

    inputs: np.ndarray  # [N, *input_shape]
    targets: np.ndarray  # [N, n_sup]
    unsup: SensorGrid
    sup: SensorGrid
    recon: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(len(self.inputs), -1)
        if self.recon is None:
            self.recon = self.inputs.reshape(len(self.inputs), -1)
        if self.recon.shape[1] != self.unsup.size:
            raise ValueError(f"reconstruction targets have {self.recon.shape[1]} columns, unsup grid {self.unsup.size}")
        if self.targets.shape[1] != self.sup.size:
            raise ValueError(f"targets have {self.targets.shape[1]} columns, sup grid {self.sup.size}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> OperatorData:
        return OperatorData(self.inputs[idx], self.targets[idx], self.unsup, self.sup, self.recon[idx])


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------


class ConvEncoder:
    """Valid convolutions (relu), flatten, relu dense layers, linear map to the latent."""

    def __init__(self, arch: Architecture, seed):
        seeds = as_seed_sequence(seed).spawn(len(arch.conv_channels) + 1)
        ndim = len(arch.input_shape)
        shape: tuple[int, ...] = (1, *arch.input_shape)
        self.convs = []
        for i, ch in enumerate(arch.conv_channels):
            spec = ConvSpec(shape[0], ch, (arch.filter_size,) * ndim, arch.stride, "relu")
            layer = ConvLayer(spec, seeds[i], name=f"encoder.conv{i}")
            shape = layer.out_shape(shape)
            if min(shape[1:]) < 1:
                raise ValueError(f"input {arch.input_shape} too small for {len(arch.conv_channels)} conv layers")
            self.convs.append(layer)
        self.flat = int(np.prod(shape))
        self.dense = DenseStack(
            self.flat, arch.encoder_hidden, arch.latent, seeds[-1], "encoder.dense", hidden_activation="relu"
        )
        self.input_shape = arch.input_shape

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for c in self.convs:
            out.update(c.params())
        out.update(self.dense.params())
        return out

    def __call__(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        h = reshape(x, (b, 1, *self.input_shape))
        for conv in self.convs:
            h = conv(h)
        return self.dense(reshape(h, (b, self.flat)))


class LinearReducer:
    """Fixed affine map ``(x - mean) @ components.T / scale`` (PCA or KL projection)."""

    def __init__(self, mean: np.ndarray, components: np.ndarray, scale: np.ndarray, squash: bool = False):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.components = np.asarray(components, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.squash = squash  # map standard-normal coordinates to [-1, 1]

    def params(self) -> dict[str, Tensor]:
        return {}

    def fixed_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "components": self.components, "scale": self.scale}

    def __call__(self, x: Tensor) -> Tensor:
        flat = x.data.reshape(x.shape[0], -1)
        z = (flat - self.mean) @ self.components.T / self.scale
        if self.squash:
            z = baselines.gaussian_to_unit(z)
        return Tensor(z)


class PCEBranch:
    """Frozen tensor-product Legendre basis standing in for the branch net."""

    def __init__(self, dim: int, degree: int):
        self.basis = baselines.PCEBasis(dim, degree)

    def params(self) -> dict[str, Tensor]:
        return {}

    def __call__(self, z: Tensor) -> Tensor:
        return Tensor(baselines.pce_basis_eval(self.basis, z.data))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class Scaling:
    """Affine normalisation of inputs/targets and box maps for trunk coordinates.

    Values are centred by a per-sensor training mean when one is stored (else
    by the scalar shift) and divided by a scalar scale.  Queries off the fitted
    sensor grid interpolate the mean field linearly.
    """

    in_shift: float = 0.0
    in_scale: float = 1.0
    out_shift: float = 0.0
    out_scale: float = 1.0
    unsup_lo: list[float] | None = None
    unsup_hi: list[float] | None = None
    sup_lo: list[float] | None = None
    sup_hi: list[float] | None = None
    enc_mean: list[float] | None = None  # encoder inputs, flattened
    in_mean: list[float] | None = None  # reconstruction targets on the unsup grid
    out_mean: list[float] | None = None  # targets on the sup grid
    unsup_points: list[list[float]] | None = None
    sup_points: list[list[float]] | None = None

    def in_centre(self, points) -> np.ndarray | float:
        if self.in_mean is None:
            return self.in_shift
        return _field_at(self.in_mean, self.unsup_points, points)

    def out_centre(self, points) -> np.ndarray | float:
        if self.out_mean is None:
            return self.out_shift
        return _field_at(self.out_mean, self.sup_points, points)


def _field_at(values, grid_points, query) -> np.ndarray:
    """A sensor-grid field at ``query`` points (exact on the grid, linear between)."""
    values = np.asarray(values, dtype=np.float64)
    grid = np.asarray(grid_points, dtype=np.float64).reshape(values.size, -1)
    q = np.asarray(query, dtype=np.float64).reshape(-1, grid.shape[1])
    if q.shape == grid.shape and np.array_equal(q, grid):
        return values
    axes = [np.unique(grid[:, d]) for d in range(grid.shape[1])]
    if int(np.prod([a.size for a in axes])) != values.size:
        raise ValueError("mean fields need a tensor-product sensor grid")
    table = np.empty([a.size for a in axes])
    table[tuple(np.searchsorted(a, grid[:, d]) for d, a in enumerate(axes))] = values
    keep = [d for d, a in enumerate(axes) if a.size > 1]
    table = table.reshape([axes[d].size for d in keep]) if keep else table.reshape(())
    if not keep:
        return np.full(q.shape[0], float(table))
    interp = RegularGridInterpolator([axes[d] for d in keep], table, bounds_error=False, fill_value=None)
    return interp(q[:, keep])


def _box(points: np.ndarray, lo, hi) -> np.ndarray:
    if lo is None:
        return points
    lo = np.asarray(lo)
    span = np.where(np.asarray(hi) > lo, np.asarray(hi) - lo, 1.0)
    return 2.0 * (points - lo) / span - 1.0


class MultiAutoModel:
    def __init__(self, arch: Architecture, seed: int = 0, reducer=None, scaling: Scaling | None = None):
        self.arch = arch
        self.seed = seed
        s_enc, s_branch, s_unsup, s_sup = as_seed_sequence(seed).spawn(4)
        if arch.reducer == "conv":
            self.encoder = ConvEncoder(arch, s_enc)
        else:
            if reducer is None:
                raise ValueError(f"reducer {arch.reducer!r} needs a fitted LinearReducer")
            self.encoder = reducer
        if arch.branch == "dense":
            self.branch = DenseStack(arch.latent, arch.branch_widths, arch.p, s_branch, "branch")
        else:
            self.branch = PCEBranch(arch.latent, arch.pce_degree)
        self.trunk_unsup = DenseStack(arch.unsup_dim, arch.trunk_widths, arch.p, s_unsup, "trunk_unsup")
        self.trunk_sup = DenseStack(arch.sup_dim, arch.trunk_widths, arch.p, s_sup, "trunk_sup")
        self.scaling = scaling or Scaling()

    # -- parameters --------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for part in (self.encoder, self.branch, self.trunk_unsup, self.trunk_sup):
            out.update(part.params())
        return out

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        if set(state) != set(params):
            raise ValueError("parameter names differ from the model's")
        for k, v in state.items():
            if v.shape != params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {params[k].shape}")
            params[k].data[...] = v

    def fit_scaling(self, data: OperatorData, centring: str = "field") -> None:
        """Normalisation from ``data``; trunk boxes from its grids.

        ``centring="field"`` subtracts the per-sensor training mean and divides
        by the scalar std of what remains; ``"scalar"`` uses the global mean.
        """
        boxes = dict(
            unsup_lo=data.unsup.points.min(axis=0).tolist(),
            unsup_hi=data.unsup.points.max(axis=0).tolist(),
            sup_lo=data.sup.points.min(axis=0).tolist(),
            sup_hi=data.sup.points.max(axis=0).tolist(),
        )
        if centring == "scalar":
            self.scaling = Scaling(
                float(data.inputs.mean()),
                float(data.inputs.std()) or 1.0,
                float(data.targets.mean()),
                float(data.targets.std()) or 1.0,
                **boxes,
            )
            return
        if centring != "field":
            raise ValueError(f"unknown centring {centring!r}")
        in_mean = data.recon.mean(axis=0)
        out_mean = data.targets.mean(axis=0)
        self.scaling = Scaling(
            0.0,
            float((data.recon - in_mean).std()) or 1.0,
            0.0,
            float((data.targets - out_mean).std()) or 1.0,
            **boxes,
            enc_mean=data.inputs.mean(axis=0).ravel().tolist(),
            in_mean=in_mean.tolist(),
            out_mean=out_mean.tolist(),
            unsup_points=data.unsup.points.tolist(),
            sup_points=data.sup.points.tolist(),
        )

    # -- forward pieces ----------------------------------------------------

    def _norm_inputs(self, values: np.ndarray) -> Tensor:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-len(self.arch.input_shape) :] != self.arch.input_shape:
            if values.shape[-1] == self.arch.n_inputs:
                values = values.reshape(*values.shape[:-1], *self.arch.input_shape)
            else:
                raise ValueError(f"input shape {values.shape} does not match encoder input {self.arch.input_shape}")
        values = values.reshape(-1, *self.arch.input_shape)
        s = self.scaling
        if self.arch.reducer != "conv":
            return Tensor(values)  # fixed reducers work in raw units
        shift = s.in_shift if s.enc_mean is None else np.reshape(s.enc_mean, self.arch.input_shape)
        return Tensor((values - shift) / s.in_scale)

    def latent(self, values: np.ndarray) -> Tensor:
        return self.encoder(self._norm_inputs(values))

    def basis(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
        return self.branch(z)

    def coeff_unsup(self, points) -> Tensor:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.arch.unsup_dim)
        return self.trunk_unsup(Tensor(_box(pts, self.scaling.unsup_lo, self.scaling.unsup_hi)))

    def coeff_sup(self, points) -> Tensor:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.arch.sup_dim)
        return self.trunk_sup(Tensor(_box(pts, self.scaling.sup_lo, self.scaling.sup_hi)))

    def forward(self, values: np.ndarray, unsup_points, sup_points):
        """Normalised-space outputs ``(k_rec, u_pred, a, b, phi)`` as tensors."""
        z = self.latent(values)
        phi = self.basis(z)
        a = self.coeff_unsup(unsup_points)
        b = self.coeff_sup(sup_points)
        return matmul(phi, transpose(a)), matmul(phi, transpose(b)), a, b, phi

    # -- raw-unit evaluation -------------------------------------------------

    def predict_fields(self, values, unsup_points, sup_points) -> tuple[np.ndarray, np.ndarray]:
        k_rec, u_pred, *_ = self.forward(values, unsup_points, sup_points)
        s = self.scaling
        k = s.in_centre(unsup_points) + s.in_scale * k_rec.data
        return k, s.out_centre(sup_points) + s.out_scale * u_pred.data


def encode(model: MultiAutoModel, values: np.ndarray) -> np.ndarray:
    """Latent code(s) for one input function or a batch of them."""
    z = model.latent(values).data
    single = np.asarray(values).ndim == len(model.arch.input_shape)
    return z[0] if single else z


def _head(model: MultiAutoModel, z, points, trunk: str) -> np.ndarray:
    z_arr = np.asarray(z, dtype=np.float64)
    phi = model.basis(np.atleast_2d(z_arr)).data
    s = model.scaling
    if trunk == "unsup":
        coef = model.coeff_unsup(points).data
        shift, scale = s.in_centre(_as_points(points, model.arch.unsup_dim)), s.in_scale
    else:
        coef = model.coeff_sup(points).data
        shift, scale = s.out_centre(_as_points(points, model.arch.sup_dim)), s.out_scale
    out = shift + scale * (phi @ coef.T)
    if z_arr.ndim == 1:
        out = out[0]
    if np.ndim(points) <= 1 and np.size(points) == (model.arch.unsup_dim if trunk == "unsup" else model.arch.sup_dim):
        out = out[..., 0]
    return out


def _as_points(points, dim: int) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).reshape(-1, dim)


def reconstruct(model: MultiAutoModel, z, x) -> np.ndarray:
    """``a(x) . phi(z)`` (in input units); scalar for one ``z`` and one ``x``."""
    return _head(model, z, x, "unsup")


def predict(model: MultiAutoModel, z, x) -> np.ndarray:
    """``b(x') . phi(z)`` (in target units)."""
    return _head(model, z, x, "sup")


# ---------------------------------------------------------------------------
# loss and training
# ---------------------------------------------------------------------------


@dataclass
class LossTerms:
    total: Tensor
    mse_k: float
    mse_u: float
    penalty: float


def _penalty(a: Tensor, b: Tensor, phi: Tensor, targets: Sequence[str]) -> Tensor:
    """Per-sample L1 of the selected outputs.

    ``a`` and ``b`` do not depend on the sample, so their absolute values are
    summed over all sensors; ``|phi|`` is summed over the basis and averaged
    over the batch.  The result is batch-size independent.
    """
    blocks = {"a": (a, 1.0), "b": (b, 1.0), "phi": (phi, 1.0 / phi.shape[0])}
    total = Tensor(0.0)
    for key in targets:
        blk, w = blocks[key]
        total = add(total, mul(l1_penalty([blk]), w))
    return total


def loss(model: MultiAutoModel, data: OperatorData, l1_weight: float = 0.0) -> LossTerms:
    """``MSE_k + MSE_u + l1_weight * penalty`` in normalised units."""
    if len(data) == 0:
        raise ValueError("empty batch")
    k_rec, u_pred, a, b, phi = model.forward(data.inputs, data.unsup.points, data.sup.points)
    s = model.scaling
    k_t = (data.recon - s.in_centre(data.unsup.points)) / s.in_scale
    u_t = (data.targets - s.out_centre(data.sup.points)) / s.out_scale
    mse_k = mean(square(sub(k_rec, k_t)))
    mse_u = mean(square(sub(u_pred, u_t)))
    pen = _penalty(a, b, phi, model.arch.l1_on)
    for name, term in (("reconstruction MSE", mse_k), ("prediction MSE", mse_u), ("L1 penalty", pen)):
        if not np.isfinite(term.data):
            raise TrainingDiverged(f"non-finite {name}")
    total = add(add(mse_k, mse_u), mul(pen, l1_weight))
    return LossTerms(total, float(mse_k.data), float(mse_u.data), float(pen.data))


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    if n - n_val < 1:
        raise ValueError(f"dataset of {n} samples too small to split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(model, data, config: TrainConfig, loss_fn=None) -> TrainHistory:
    """Mini-batch Adam with per-epoch shuffling and early stopping.

    ``model`` needs ``params()``, ``get_state()``/``set_state()``; ``loss_fn``
    (default :func:`loss`) maps ``(model, batch, l1_weight)`` to
    :class:`LossTerms`.  The best-validation parameters are restored.
    """
    loss_fn = loss_fn or loss
    history = TrainHistory()
    if config.epochs == 0:
        return history
    train_idx, val_idx = split_indices(len(data), config.val_fraction, config.seed)
    if config.batch_size > len(train_idx):
        raise ValueError(f"batch size {config.batch_size} exceeds training set of {len(train_idx)}")
    train_set, val_set = data.subset(train_idx), data.subset(val_idx)
    params = model.params()
    state = AdamState(lr=config.learning_rate)
    rng = np.random.default_rng([int(config.seed), 0xBA7C4])
    best_state = model.get_state()
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[start : start + config.batch_size])
            try:
                terms = loss_fn(model, batch, config.l1_weight)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}") from exc
            grads = backward(terms.total, params)
            try:
                adam_step(state, params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}") from exc
            batch_losses.append(float(terms.total.data) * len(batch))
        history.train_loss.append(sum(batch_losses) / len(train_set))
        val = float(loss_fn(model, val_set, config.l1_weight).total.data)
        history.val_loss.append(val)
        if val < history.best_val_loss:
            history.best_val_loss = val
            history.best_epoch = epoch
            best_state = model.get_state()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch + 1, history.best_epoch + 1)
                break
    model.set_state(best_state)
    return history


def validation_set(data, config: TrainConfig):
    return data.subset(split_indices(len(data), config.val_fraction, config.seed)[1])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"MADOCKPT"
CKPT_VERSION = 1


def _pack(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = sorted(arrays)
    header = dict(header, arrays=[[n, list(arrays[n].shape)] for n in names])
    blob = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    head = json.dumps(header, sort_keys=True).encode()
    return b"".join(
        [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(head)), head, struct.pack("<I", zlib.crc32(head + blob)), blob]
    )


def _unpack(raw: bytes, path) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<HI", raw, off)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 6
    head = raw[off : off + hlen]
    off += hlen
    (crc,) = struct.unpack_from("<I", raw, off)
    blob = raw[off + 4 :]
    if zlib.crc32(head + blob) != crc:
        raise ValueError(f"{path}: checksum mismatch (corrupted checkpoint)")
    header = json.loads(head)
    arrays, pos = {}, 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(blob):
        raise ValueError(f"{path}: payload size does not match header")
    return header, arrays


def save_model(model: MultiAutoModel, path) -> None:
    arrays = {f"param:{k}": v for k, v in model.get_state().items()}
    if isinstance(model.encoder, LinearReducer):
        arrays.update({f"reducer:{k}": v for k, v in model.encoder.fixed_arrays().items()})
    header = {
        "kind": "multiauto",
        "arch": asdict(model.arch),
        "seed": model.seed,
        "scaling": asdict(model.scaling),
        "squash": bool(getattr(model.encoder, "squash", False)),
    }
    Path(path).write_bytes(_pack(header, arrays))


def load_model(path) -> MultiAutoModel:
    header, arrays = _unpack(Path(path).read_bytes(), path)
    if header.get("kind") != "multiauto":
        raise ValueError(f"{path}: checkpoint holds a {header.get('kind')!r} model")
    arch = Architecture(**header["arch"])
    reducer = None
    if arch.reducer != "conv":
        reducer = LinearReducer(
            arrays["reducer:mean"], arrays["reducer:components"], arrays["reducer:scale"], header["squash"]
        )
    model = MultiAutoModel(arch, header["seed"], reducer=reducer, scaling=Scaling(**header["scaling"]))
    model.set_state({k[len("param:") :]: v for k, v in arrays.items() if k.startswith("param:")})
    return model
