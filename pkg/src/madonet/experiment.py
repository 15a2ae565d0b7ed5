"""End-to-end experiment runner: data, models, metrics, KDE ensembles, run directories.

A run directory holds

* ``manifest.json``  config echo, seed, dataset content hashes, package version
* ``metrics.csv``    rows ``experiment,metric,value`` (values written with ``repr``)
* ``summary.json``   the same metrics nested per experiment
* ``stats.csv``      per-sensor reference / predicted / generated mean and variance
* ``coefficients.csv`` a, b and phi at representative sensors (sparsity plots)
* ``history/<model>.csv`` and ``models/<model>.ckpt``

Everything is written to a temporary sibling directory first and renamed
into place once the run succeeds.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import KLDeepONet, KLOperatorData, deeponet_loss, pca_fit
from .config import ExperimentConfig
from .data import Dataset, atomic_dir, build_dataset, git_blob_hash, problem_grids, sample_problem, write_dataset_files
from .model import (
    Architecture,
    LinearReducer,
    MultiAutoModel,
    OperatorData,
    TrainHistory,
    _pack,
    _unpack,
    load_model,
    save_model,
    train,
)
from .stochastic import KernelSpec, SensorGrid, ensemble_bytes, kl_modes
from .uq import ensemble_stats, generate_ensemble, kde_fit, mse, rel_l2

logger = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-3  # |entry| below this counts as zero in sparsity statistics


@dataclass
class ModelResult:
    name: str
    model: object
    history: TrainHistory
    prediction: np.ndarray  # test-set u (or f) in raw units
    metrics: dict[str, float] = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class RunResult:
    experiment: str
    metrics: dict[str, dict[str, float]]  # model -> metric -> value
    models: dict[str, ModelResult]
    stats: dict[str, np.ndarray]
    dataset: Dataset


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def architecture(cfg: ExperimentConfig, data: OperatorData, **kw) -> Architecture:
    a = cfg.arch
    base = dict(
        input_shape=data.inputs.shape[1:],
        unsup_dim=data.unsup.dim,
        sup_dim=data.sup.dim,
        latent=a.latent,
        p=a.p,
        conv_channels=a.conv_channels,
        filter_size=a.filter_size,
        stride=a.stride,
        encoder_hidden=a.encoder_hidden,
        branch_widths=a.branch_widths,
        trunk_widths=a.trunk_widths,
        l1_on=a.l1_on,
    )
    base.update(kw)
    return Architecture(**base)


def pca_reducer(train_data: OperatorData, r: int) -> LinearReducer:
    proj = pca_fit(train_data.inputs.reshape(len(train_data), -1), r)
    scale = np.sqrt(np.where(proj.variances > 0, proj.variances, 1.0))
    return LinearReducer(proj.mean, proj.components, scale)


def kl_reducer(cfg: ExperimentConfig, grid: SensorGrid, mean: np.ndarray, dim: int) -> LinearReducer:
    """Standardised KL coordinates of the input field, squashed to [-1, 1]."""
    k = cfg.kernel
    basis = kl_modes(KernelSpec(k.family, k.sigma, k.length), grid, dim)
    comps = (basis.eigenfunctions * basis.weights[:, None]).T
    scale = np.sqrt(np.where(basis.eigenvalues > 0, basis.eigenvalues, 1.0))
    return LinearReducer(mean, comps, scale, squash=True)


def input_mean(cfg: ExperimentConfig, grid: SensorGrid) -> np.ndarray:
    from .data import _f0_2d

    if cfg.problem == "poisson2d-forward":
        return _f0_2d(grid.points)
    return np.zeros(grid.size)


def kl_operator_data(cfg: ExperimentConfig, inputs, targets) -> KLOperatorData:
    """Vanilla DeepONet data for growth-ode: per-trajectory KL modes as branch input."""
    grid = inputs.grid
    n_modes = min(cfg.kl_modes, grid.size)
    rows = []
    for ell in inputs.latent[:, -1]:
        basis = kl_modes(KernelSpec(cfg.kernel.family, cfg.kernel.sigma, float(ell)), grid, n_modes)
        rows.append((basis.eigenfunctions * np.sqrt(basis.eigenvalues)).T.ravel())
    return KLOperatorData(np.array(rows), inputs.latent[:, :n_modes].copy(), targets.values, targets.grid.points[:, 0])


def build_model(cfg: ExperimentConfig, kind: str, train_data: OperatorData, seed: int):
    if kind == "multiauto":
        return MultiAutoModel(architecture(cfg, train_data), seed)
    if kind == "pca":
        r = cfg.pca_r or cfg.arch.latent
        return MultiAutoModel(architecture(cfg, train_data, reducer="pca", latent=r), seed, reducer=pca_reducer(train_data, r))
    if kind == "pce":
        grid = train_data.unsup
        red = kl_reducer(cfg, grid, input_mean(cfg, grid), cfg.pce_dim)
        arch = architecture(cfg, train_data, reducer="kl", branch="pce", latent=cfg.pce_dim, pce_degree=cfg.pce_degree)
        return MultiAutoModel(arch, seed, reducer=red)
    raise ValueError(f"unknown model {kind!r}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def field_metrics(pred: np.ndarray, ref: np.ndarray) -> dict[str, float]:
    mu_p, var_p = ensemble_stats(pred)
    mu_r, var_r = ensemble_stats(ref)
    return {
        "test_mse": mse(pred, ref),
        "test_rel_l2": rel_l2(pred, ref),
        "mean_rel_l2": rel_l2(mu_p, mu_r),
        "var_rel_l2": rel_l2(var_p, var_r),
    }


def coefficient_blocks(model: MultiAutoModel, data: OperatorData) -> dict[str, np.ndarray]:
    """a over all unsup sensors, b over all sup sensors, phi over all samples."""
    return {
        "a": model.coeff_unsup(data.unsup.points).data,
        "b": model.coeff_sup(data.sup.points).data,
        "phi": model.basis(model.latent(data.inputs)).data,
    }


def sparsity(blocks: dict[str, np.ndarray], threshold: float = ZERO_THRESHOLD) -> dict[str, float]:
    return {f"sparsity_{k}": float(np.mean(np.abs(v) < threshold)) for k, v in blocks.items()}


def reference_ensemble(cfg: ExperimentConfig, n: int, input_sensors: int | None = None):
    """Independent Monte-Carlo solution ensemble from the data-generating process."""
    return sample_problem(cfg, n, cfg.seed, "reference", input_sensors)[1]


# ---------------------------------------------------------------------------
# training one model
# ---------------------------------------------------------------------------


def fit_model(cfg: ExperimentConfig, kind: str, ds: Dataset, seed_offset: int = 0) -> ModelResult:
    tr, te = ds.train(cfg), ds.test(cfg)
    tc = replace(cfg.train, seed=cfg.seed + seed_offset)
    if kind == "deeponet":
        kl_tr = kl_operator_data(cfg, ds.train_inputs, ds.train_targets)
        kl_te = kl_operator_data(cfg, ds.test_inputs, ds.test_targets)
        net = KLDeepONet(kl_tr.branch_inputs.shape[1], kl_tr.xi.shape[1], cfg.arch.p, cfg.arch.branch_widths, tc.seed)
        net.fit_scaling(kl_tr)
        hist = train(net, kl_tr, tc, loss_fn=deeponet_loss)
        pred = net.predict(kl_te)
        return ModelResult(kind, net, hist, pred, field_metrics(pred, te.targets))
    model = build_model(cfg, kind, tr, tc.seed)
    model.fit_scaling(tr)
    hist = train(model, tr, tc)
    k_pred, u_pred = model.predict_fields(te.inputs, te.unsup.points, te.sup.points)
    metrics = field_metrics(u_pred, te.targets)
    metrics["recon_rel_l2"] = rel_l2(k_pred, te.recon)
    blocks = coefficient_blocks(model, te)
    metrics.update(sparsity(blocks))
    metrics["epochs_run"] = float(len(hist.train_loss))
    metrics["best_val_loss"] = float(hist.best_val_loss)
    return ModelResult(kind, model, hist, u_pred, metrics, {"blocks": blocks})


def generated_metrics(cfg: ExperimentConfig, res: ModelResult, ds: Dataset, reference: np.ndarray) -> dict:
    """KDE over training latents, decode ``n_generate`` samples, compare with the reference."""
    model = res.model
    tr = ds.train(cfg)
    z = model.latent(tr.inputs).data
    kde = kde_fit(z)
    _, u_gen = generate_ensemble(model, kde, tr.unsup, tr.sup, cfg.n_generate, cfg.seed)
    mu_g, var_g = ensemble_stats(u_gen)
    mu_r, var_r = ensemble_stats(reference)
    res.extras["generated"] = u_gen.values
    return {"gen_mean_rel_l2": rel_l2(mu_g, mu_r), "gen_var_rel_l2": rel_l2(var_g, var_r)}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def experiment_id(cfg: ExperimentConfig, suffix: str = "") -> str:
    return f"{cfg.problem}/seed{cfg.seed}" + (f"/{suffix}" if suffix else "")


def run_experiment(cfg: ExperimentConfig, models=None, dataset: Dataset | None = None, generate: bool = True) -> RunResult:
    """Train every selected model on one dataset and collect their metrics."""
    cfg.validate()
    models = tuple(models or cfg.models)
    ds = dataset or build_dataset(cfg)
    te = ds.test(cfg)
    results: dict[str, ModelResult] = {}
    metrics: dict[str, dict[str, float]] = {}
    for kind in models:
        logger.info("training %s on %s", kind, cfg.problem)
        res = fit_model(cfg, kind, ds)
        results[kind] = res
        metrics[kind] = res.metrics
    mu_r, var_r = ensemble_stats(te.targets)
    stats = {"ref_mean": mu_r, "ref_var": var_r}
    for kind, res in results.items():
        stats[f"{kind}_mean"], stats[f"{kind}_var"] = ensemble_stats(res.prediction)
    if generate and "multiauto" in results and cfg.n_generate > 1:
        ref = reference_ensemble(cfg, cfg.n_reference).values
        metrics["multiauto"].update(generated_metrics(cfg, results["multiauto"], ds, ref))
        stats["mc_mean"], stats["mc_var"] = ensemble_stats(ref)
        stats["generated_mean"], stats["generated_var"] = ensemble_stats(results["multiauto"].extras["generated"])
    return RunResult(experiment_id(cfg), metrics, results, stats, ds)


def run_sweep(cfg: ExperimentConfig, sensors=None) -> dict[int, dict[str, float]]:
    """MultiAuto test metrics as a function of the number of input sensors."""
    out = {}
    for n in sensors or cfg.sweep_sensors:
        sub = cfg.with_overrides(input_sensors=n)
        res = fit_model(sub, "multiauto", build_dataset(sub))
        out[n] = res.metrics
    return out


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------


def metrics_rows(experiment: str, metrics: dict[str, dict[str, float]]) -> list[tuple[str, str, str]]:
    rows = []
    for model in sorted(metrics):
        for name in sorted(metrics[model]):
            rows.append((f"{experiment}/{model}", name, repr(float(metrics[model][name]))))
    return rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", "metric", "value"])
    writer.writerows(rows)
    return buf.getvalue()


def manifest(cfg: ExperimentConfig, ds: Dataset | None, command: str) -> dict:
    hashes = {}
    if ds is not None:
        for name in ("train_inputs", "train_targets", "test_inputs", "test_targets"):
            hashes[name] = git_blob_hash(ensemble_bytes(getattr(ds, name)))
    return {"command": command, "config": cfg.to_dict(), "seed": cfg.seed, "datasets": hashes, "version": __version__}


def _stats_csv(grid: SensorGrid, stats: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    coord_names = [f"x{i + 1}" for i in range(grid.dim)]
    keys = sorted(stats)
    writer.writerow([*coord_names, *keys])
    for i, pt in enumerate(grid.points):
        writer.writerow([*(repr(float(c)) for c in pt), *(repr(float(stats[k][i])) for k in keys)])
    return buf.getvalue()


def _coefficients_csv(blocks: dict[str, np.ndarray]) -> str:
    """Representative vectors: a and b at the middle sensor, phi for the first test sample."""
    reps = {"a": blocks["a"][len(blocks["a"]) // 2], "b": blocks["b"][len(blocks["b"]) // 2], "phi": blocks["phi"][0]}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["block", "index", "value"])
    for name in ("a", "b", "phi"):
        for j, v in enumerate(reps[name]):
            writer.writerow([name, j, repr(float(v))])
    return buf.getvalue()


def write_run(out_dir, cfg: ExperimentConfig, result: RunResult, command: str = "compare", extra_rows=()) -> Path:
    final = Path(out_dir)
    with atomic_dir(final) as tmp:
        (tmp / "history").mkdir()
        (tmp / "models").mkdir()
        rows = metrics_rows(result.experiment, result.metrics) + list(extra_rows)
        (tmp / "metrics.csv").write_text(metrics_csv(rows))
        summary = {"experiment": result.experiment, "metrics": result.metrics}
        (tmp / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (tmp / "manifest.json").write_text(json.dumps(manifest(cfg, result.dataset, command), indent=2, sort_keys=True) + "\n")
        write_dataset_files(tmp / "data", cfg, result.dataset)
        (tmp / "stats.csv").write_text(_stats_csv(result.dataset.test_targets.grid, result.stats))
        for kind, res in result.models.items():
            res.history.to_csv(tmp / "history" / f"{kind}.csv")
            if isinstance(res.model, MultiAutoModel):
                save_model(res.model, tmp / "models" / f"{kind}.ckpt")
            else:
                save_deeponet(res.model, tmp / "models" / f"{kind}.ckpt")
        if "multiauto" in result.models:
            (tmp / "coefficients.csv").write_text(_coefficients_csv(result.models["multiauto"].extras["blocks"]))
    return final


def save_deeponet(net: KLDeepONet, path) -> None:
    header = {
        "kind": "kl-deeponet",
        "n_branch": net.branch.n_in,
        "n_modes": net.trunk.n_in - 1,
        "p": net.p,
        "widths": [layer.weight.shape[0] for layer in net.branch.layers[:-1]],
        "out_shift": np.atleast_1d(net.out_shift).tolist(),
        "scaling": [net.out_scale, net.t_lo, net.t_hi],
    }
    Path(path).write_bytes(_pack(header, net.get_state()))


def load_checkpoint(path):
    """Either model kind stored by :func:`write_run`."""
    header, arrays = _unpack(Path(path).read_bytes(), path)
    if header.get("kind") == "multiauto":
        return load_model(path)
    if header.get("kind") != "kl-deeponet":
        raise ValueError(f"{path}: unknown checkpoint kind {header.get('kind')!r}")
    net = KLDeepONet(header["n_branch"], header["n_modes"], header["p"], tuple(header["widths"]))
    net.out_shift = np.asarray(header["out_shift"])
    net.out_scale, net.t_lo, net.t_hi = header["scaling"]
    net.set_state(arrays)
    return net


def evaluate_run(run_dir) -> dict[str, dict[str, float]]:
    """Recompute test metrics from a run directory's checkpoints and stored dataset."""
    from .data import load_dataset

    run = Path(run_dir)
    cfg = load_config_or_manifest(run / "manifest.json")
    ds, _ = load_dataset(run / "data")
    te = ds.test(cfg)
    out = {}
    for ckpt in sorted((run / "models").glob("*.ckpt")):
        model = load_checkpoint(ckpt)
        if isinstance(model, KLDeepONet):
            pred = model.predict(kl_operator_data(cfg, ds.test_inputs, ds.test_targets))
            out[ckpt.stem] = field_metrics(pred, te.targets)
        else:
            k_pred, u_pred = model.predict_fields(te.inputs, te.unsup.points, te.sup.points)
            out[ckpt.stem] = field_metrics(u_pred, te.targets)
            out[ckpt.stem]["recon_rel_l2"] = rel_l2(k_pred, te.recon)
    if not out:
        raise FileNotFoundError(f"no checkpoints under {run / 'models'}")
    return out


def write_sweep(out_dir, cfg: ExperimentConfig, sweep: dict[int, dict[str, float]]) -> Path:
    final = Path(out_dir)
    rows = []
    for n in sorted(sweep):
        for name in sorted(sweep[n]):
            rows.append((f"{experiment_id(cfg)}/sweep/n{n}", name, repr(float(sweep[n][name]))))
    table = ["sensors  test_mse      test_rel_l2"]
    table += [f"{n:7d}  {sweep[n]['test_mse']:.6e}  {sweep[n]['test_rel_l2']:.6e}" for n in sorted(sweep)]
    with atomic_dir(final) as tmp:
        (tmp / "metrics.csv").write_text(metrics_csv(rows))
        (tmp / "table.txt").write_text("\n".join(table) + "\n")
        (tmp / "manifest.json").write_text(json.dumps(manifest(cfg, None, "sweep"), indent=2, sort_keys=True) + "\n")
    return final


def render_table(metrics: dict[str, dict[str, float]], columns=("test_mse", "test_rel_l2", "mean_rel_l2", "var_rel_l2")) -> str:
    head = "model      " + "  ".join(f"{c:>12s}" for c in columns)
    lines = [head]
    for model in sorted(metrics):
        vals = "  ".join(f"{metrics[model].get(c, float('nan')):12.5e}" for c in columns)
        lines.append(f"{model:<10s} {vals}")
    return "\n".join(lines) + "\n"


def load_config_or_manifest(path) -> ExperimentConfig:
    """Accept either a plain config JSON or a run manifest (which embeds one)."""
    raw = json.loads(Path(path).read_text())
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return ExperimentConfig.from_dict(raw)


__all__ = [
    "ModelResult",
    "RunResult",
    "architecture",
    "build_model",
    "coefficient_blocks",
    "field_metrics",
    "fit_model",
    "evaluate_run",
    "generated_metrics",
    "kl_operator_data",
    "load_checkpoint",
    "load_config_or_manifest",
    "metrics_csv",
    "metrics_rows",
    "problem_grids",
    "reference_ensemble",
    "render_table",
    "run_experiment",
    "run_sweep",
    "sparsity",
    "write_run",
    "write_sweep",
]
