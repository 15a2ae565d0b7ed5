"""SVG figures from a run directory: loss curves, mean/variance overlays, sparsity stems.

Series are tagged with SVG ``id`` attributes (``series-<name>``, and for the
stem plots ``zero-<block>`` / ``nonzero-<block>``) so tests and scripts can
find them without scraping pixels.  Output is deterministic: fixed hash
salt and no timestamp metadata.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import ZERO_THRESHOLD  # noqa: E402
from .model import TrainHistory  # noqa: E402

SVG_RC = {"svg.hashsalt": "madonet", "svg.fonttype": "none"}


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing plot input: {path}")
    return path


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _read_columns(path: Path) -> dict[str, np.ndarray]:
    with open(_require(path), newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(head)}


def loss_curves(history: TrainHistory, path: Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = np.arange(1, len(history.train_loss) + 1)
    (tr,) = ax.semilogy(epochs, history.train_loss, label="training")
    (va,) = ax.semilogy(epochs, history.val_loss, label="validation")
    tr.set_gid("series-train")
    va.set_gid("series-validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def mean_variance(stats: dict[str, np.ndarray], prefix: str, ref_prefix: str, path: Path, label: str) -> Path:
    """Two panels (mean, variance), each with one reference and one prediction series."""
    coord = stats["x1"] if "x2" not in stats else np.arange(stats["x1"].size)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, moment in zip(axes, ("mean", "var")):
        (r,) = ax.plot(coord, stats[f"{ref_prefix}_{moment}"], "k-", label="reference")
        (p,) = ax.plot(coord, stats[f"{prefix}_{moment}"], "r--", label=label)
        r.set_gid(f"series-reference-{moment}")
        p.set_gid(f"series-{prefix}-{moment}")
        ax.set_title("mean" if moment == "mean" else "variance")
        ax.set_xlabel("x" if "x2" not in stats else "sensor index")
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def sparsity_stems(coeffs: dict[str, np.ndarray], path: Path, threshold: float = ZERO_THRESHOLD) -> Path:
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    names = {"a": "a(x)", "b": "b(x')", "phi": "phi(z)"}
    for ax, block in zip(axes, ("a", "b", "phi")):
        v = coeffs[block]
        idx = np.arange(v.size)
        ax.vlines(idx, 0.0, v, colors="0.6", linewidth=0.8)
        small = np.abs(v) < threshold
        z = ax.scatter(idx[small], v[small], s=10, c="tab:blue", label="|v| < 1e-3")
        nz = ax.scatter(idx[~small], v[~small], s=10, c="tab:red", label="|v| >= 1e-3")
        z.set_gid(f"zero-{block}")
        nz.set_gid(f"nonzero-{block}")
        ax.axhline(0.0, color="k", linewidth=0.5)
        ax.set_ylabel(names[block])
    axes[0].legend(loc="upper right", fontsize="small")
    axes[-1].set_xlabel("basis index")
    fig.tight_layout()
    return _save(fig, path)


def read_coefficients(path: Path) -> dict[str, np.ndarray]:
    out: dict[str, list[float]] = {}
    with open(_require(path), newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["block"], []).append(float(row["value"]))
    return {k: np.array(v) for k, v in out.items()}


def emit_plots(run_dir, out_dir=None) -> list[Path]:
    """Write every figure the run directory supports into ``run_dir/plots``."""
    run = Path(run_dir)
    stats = _read_columns(run / "stats.csv")
    hist_dir = _require(run / "history")
    target = Path(out_dir) if out_dir else run / "plots"
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for h in sorted(hist_dir.glob("*.csv")):
        written.append(loss_curves(TrainHistory.from_csv(h), target / f"loss_{h.stem}.svg", h.stem))
    models = sorted(k[: -len("_mean")] for k in stats if k.endswith("_mean") and k not in ("ref_mean", "mc_mean", "generated_mean"))
    for m in models:
        written.append(mean_variance(stats, m, "ref", target / f"meanvar_{m}.svg", m))
    if "generated_mean" in stats:
        written.append(mean_variance(stats, "generated", "mc", target / "meanvar_generated.svg", "KDE generated"))
    if (run / "coefficients.csv").exists():
        written.append(sparsity_stems(read_coefficients(run / "coefficients.csv"), target / "sparsity.svg"))
    return written
