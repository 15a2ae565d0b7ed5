"""Problem samplers: stochastic inputs through the reference solvers.

Every sampler returns ``(inputs, targets)`` as :class:`FunctionEnsemble`
pairs.  ``inputs`` is what the encoder sees, ``targets`` what the
supervised head predicts (for the inverse Poisson problem these are ``u``
observations and the forcing ``f``).
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .model import OperatorData
from .solvers import Field2D, kdv_solution, refine_interior, restrict_interior, solve_growth_ode
from .solvers import solve_poisson_1d, solve_poisson_2d
from .stochastic import (
    FunctionEnsemble,
    KernelSpec,
    SensorGrid,
    gp_sample,
    kl_field_sample,
    kl_modes,
    load_ensemble,
    save_ensemble,
    stream,
)


@dataclass
class ProblemGrids:
    inputs: SensorGrid  # encoder input sensors
    unsup: SensorGrid  # unsupervised-trunk sensors (reconstruction)
    sup: SensorGrid  # supervised-trunk sensors (targets)


def problem_grids(cfg: ExperimentConfig, input_sensors: int | None = None) -> ProblemGrids:
    n_in = input_sensors or cfg.input_sensors
    if cfg.problem == "growth-ode":
        g_in = SensorGrid.uniform(0.0, 1.0, n_in)
        return ProblemGrids(g_in, g_in, SensorGrid.uniform(0.0, 1.0, cfg.output_sensors))
    if cfg.problem == "poisson1d-inverse":
        g = SensorGrid.interior(-1.0, 1.0, n_in)
        return ProblemGrids(g, g, g)
    if cfg.problem == "poisson2d-forward":
        ax = np.linspace(-1.0, 1.0, n_in + 2)[1:-1]
        g = SensorGrid.tensor(ax, ax)
        return ProblemGrids(g, g, g)
    if cfg.problem == "kdv-forward":
        g_t = SensorGrid.uniform(0.0, 0.1, n_in)
        x = np.linspace(0.0, 4.0, cfg.output_sensors)
        t = np.linspace(0.0, 0.1, cfg.output_times + 1)[1:]
        return ProblemGrids(g_t, g_t, SensorGrid.tensor(x, t))
    raise ValueError(cfg.problem)


def input_shape(cfg: ExperimentConfig, input_sensors: int | None = None) -> tuple[int, ...]:
    g = problem_grids(cfg, input_sensors).inputs
    return g.shape


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _kernel(cfg: ExperimentConfig, length: float | None = None) -> KernelSpec:
    k = cfg.kernel
    return KernelSpec(k.family, k.sigma, k.length if length is None else length)


def sample_growth(cfg: ExperimentConfig, n: int, seed: int, tag: str, input_sensors: int | None = None):
    """k ~ GP(0, SE(sigma, l)) with l drawn per trajectory; u = exp(int k).

    Trajectories live on a fine grid; inputs and targets are read off it.
    The input latent columns are the first ``kl_modes`` KL coordinates of
    each trajectory (under its own kernel) followed by its correlation length.
    """
    grids = problem_grids(cfg, input_sensors)
    fine = SensorGrid.uniform(0.0, 1.0, cfg.fine_points)
    tf = fine.points[:, 0]
    t_in = grids.inputs.points[:, 0]
    t_out = grids.sup.points[:, 0]
    lo, hi = cfg.kernel.length_range or (cfg.kernel.length, cfg.kernel.length)
    lengths = stream(seed, f"{tag}/lengths").uniform(lo, hi, size=n)
    k_in = np.empty((n, t_in.size))
    u_out = np.empty((n, t_out.size))
    latent = np.empty((n, cfg.kl_modes + 1))
    n_modes = min(cfg.kl_modes, t_in.size)
    for i, ell in enumerate(lengths):
        kern = _kernel(cfg, float(ell))
        k_f = gp_sample(0.0, kern, fine, 1, seed, tag=f"{tag}/k{i}").values[0]
        u_f = solve_growth_ode(k_f, tf)
        k_in[i] = np.interp(t_in, tf, k_f)
        u_out[i] = np.interp(t_out, tf, u_f)
        basis = kl_modes(kern, grids.inputs, n_modes)
        latent[i, :n_modes] = basis.project(k_in[i])[0]
        latent[i, n_modes:-1] = 0.0
        latent[i, -1] = ell
    return FunctionEnsemble(grids.inputs, k_in, latent), FunctionEnsemble(grids.sup, u_out)


def sample_poisson1d(cfg: ExperimentConfig, n: int, seed: int, tag: str, input_sensors: int | None = None):
    """f ~ GP(sin(pi x), SE); -u'' = f on a refined grid, restricted to the sensors."""
    grids = problem_grids(cfg, input_sensors)
    n_c = grids.inputs.size
    n_f = refine_interior(n_c, cfg.refine)
    fine = SensorGrid.interior(-1.0, 1.0, n_f)
    f = gp_sample(lambda p: np.sin(np.pi * p[:, 0]), _kernel(cfg), fine, n, seed, tag=f"{tag}/f").values
    u = solve_poisson_1d(f, fine.points[:, 0])
    f_c = restrict_interior(f, cfg.refine)
    u_c = restrict_interior(u, cfg.refine)
    return FunctionEnsemble(grids.inputs, u_c), FunctionEnsemble(grids.sup, f_c)


def _f0_2d(p: np.ndarray) -> np.ndarray:
    return 20.0 * np.sin(np.pi * (p[:, 0] + p[:, 1]))


def sample_poisson2d(cfg: ExperimentConfig, n: int, seed: int, tag: str, input_sensors: int | None = None):
    """f ~ GP(20 sin(pi(x+y)), SE) on a refined tensor grid; 5-point solve; restrict.

    Input latent columns: the first ``pce_dim`` standardised KL coordinates
    of ``f`` on the sensor grid.
    """
    grids = problem_grids(cfg, input_sensors)
    n_c = grids.inputs.shape[0]
    n_f = refine_interior(n_c, cfg.refine)
    ax_f = np.linspace(-1.0, 1.0, n_f + 2)[1:-1]
    fine = SensorGrid.tensor(ax_f, ax_f)
    f = gp_sample(_f0_2d, _kernel(cfg), fine, n, seed, tag=f"{tag}/f").values.reshape(n, n_f, n_f)
    u = solve_poisson_2d(Field2D(ax_f, ax_f, f)).values
    f_c = restrict_interior(f, cfg.refine, axes=(1, 2)).reshape(n, -1)
    u_c = restrict_interior(u, cfg.refine, axes=(1, 2)).reshape(n, -1)
    basis = kl_modes(_kernel(cfg), grids.inputs, cfg.pce_dim)
    xi = basis.project(f_c, _f0_2d(grids.inputs.points))
    return FunctionEnsemble(grids.inputs, f_c, xi), FunctionEnsemble(grids.sup, u_c)


def sample_kdv(cfg: ExperimentConfig, n: int, seed: int, tag: str, input_sensors: int | None = None):
    """f(t) = sigma sum sqrt(lambda_i) phi_i(t) omega_i (exponential kernel); analytic u."""
    grids = problem_grids(cfg, input_sensors)
    unit = KernelSpec(cfg.kernel.family, 1.0, cfg.kernel.length)
    basis = kl_modes(unit, grids.inputs, cfg.kl_modes)
    f = kl_field_sample(basis, cfg.kernel.sigma, n, seed, tag=f"{tag}/omega")
    x = grids.sup.axes[0]
    tq = grids.sup.axes[1]
    u = kdv_solution(f.values, grids.inputs.points[:, 0], x, tq).values.reshape(n, -1)
    return f, FunctionEnsemble(grids.sup, u)


SAMPLERS = {
    "growth-ode": sample_growth,
    "poisson1d-inverse": sample_poisson1d,
    "poisson2d-forward": sample_poisson2d,
    "kdv-forward": sample_kdv,
}


def sample_problem(cfg: ExperimentConfig, n: int, seed: int, tag: str, input_sensors: int | None = None):
    return SAMPLERS[cfg.problem](cfg, n, seed, tag, input_sensors)


def to_operator_data(cfg: ExperimentConfig, inputs: FunctionEnsemble, targets: FunctionEnsemble) -> OperatorData:
    shape = inputs.grid.shape
    grids_unsup = inputs.grid
    return OperatorData(inputs.values.reshape(len(inputs), *shape), targets.values, grids_unsup, targets.grid)


# ---------------------------------------------------------------------------
# on-disk datasets
# ---------------------------------------------------------------------------

SPLITS = ("train", "test")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class Dataset:
    train_inputs: FunctionEnsemble
    train_targets: FunctionEnsemble
    test_inputs: FunctionEnsemble
    test_targets: FunctionEnsemble

    def train(self, cfg: ExperimentConfig) -> OperatorData:
        return to_operator_data(cfg, self.train_inputs, self.train_targets)

    def test(self, cfg: ExperimentConfig) -> OperatorData:
        return to_operator_data(cfg, self.test_inputs, self.test_targets)


def build_dataset(cfg: ExperimentConfig, input_sensors: int | None = None) -> Dataset:
    tr = sample_problem(cfg, cfg.n_train, cfg.seed, "train", input_sensors)
    te = sample_problem(cfg, cfg.n_test, cfg.seed, "test", input_sensors)
    return Dataset(tr[0], tr[1], te[0], te[1])


def atomic_dir(final: Path):
    """Context manager: yields a temp dir next to ``final``, renamed into place on success."""

    class _Ctx:
        def __enter__(self):
            final.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))
            return self.tmp

        def __exit__(self, exc_type, exc, tb):
            if exc_type is not None:
                shutil.rmtree(self.tmp, ignore_errors=True)
                return False
            if final.exists():
                shutil.rmtree(final)
            os.replace(self.tmp, final)
            return False

    return _Ctx()


def write_dataset_files(target: Path, cfg: ExperimentConfig, ds: Dataset, input_sensors: int | None = None) -> None:
    """Ensemble files plus ``manifest.json`` (config echo, seed, content hashes)."""
    target.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for split in SPLITS:
        for part in ("inputs", "targets"):
            name = f"{split}_{part}.fens"
            save_ensemble(target / name, getattr(ds, f"{split}_{part}"))
            hashes[name] = git_blob_hash((target / name).read_bytes())
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "input_sensors": input_sensors or cfg.input_sensors,
        "files": hashes,
    }
    (target / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def generate_dataset(cfg: ExperimentConfig, out_dir, input_sensors: int | None = None) -> Path:
    """Write train/test ensembles plus ``manifest.json`` into ``out_dir``/data."""
    cfg.validate()
    problem_grids(cfg, input_sensors)
    ds = build_dataset(cfg, input_sensors)
    final = Path(out_dir) / "data"
    with atomic_dir(final) as tmp:
        write_dataset_files(tmp, cfg, ds, input_sensors)
    return final


def load_dataset(data_dir, verify: bool = True) -> tuple[Dataset, dict]:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing dataset manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    parts = {}
    for name, digest in manifest["files"].items():
        path = data_dir / name
        if verify and git_blob_hash(path.read_bytes()) != digest:
            raise ValueError(f"{path}: content hash does not match the manifest")
        parts[name[: -len(".fens")]] = load_ensemble(path)
    return Dataset(**parts), manifest


def matching_dataset(data_dir, cfg: ExperimentConfig) -> Dataset | None:
    """The dataset under ``data_dir`` if it was generated from an equivalent config."""
    try:
        ds, man = load_dataset(data_dir)
    except (FileNotFoundError, ValueError):
        return None
    keys = ("problem", "kernel", "n_train", "n_test", "input_sensors", "output_sensors", "output_times",
            "refine", "fine_points", "kl_modes", "pce_dim", "seed")
    want = cfg.to_dict()
    if all(man["config"].get(k) == want[k] for k in keys):
        return ds
    return None
