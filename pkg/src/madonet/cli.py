"""Command-line harness: ``madonet {generate,train,evaluate,compare,plot,sweep}``.

Configs are JSON (a run manifest also works, since it embeds the config);
``--problem`` picks a preset instead.  ``MADONET_THREADS`` caps BLAS threads
(default 1, which keeps reruns byte-identical and matches the one-core budget).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import MODELS, PROBLEMS, ConfigError, ExperimentConfig, preset

logger = logging.getLogger("madonet")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment config or run manifest (JSON)")
    src.add_argument("--problem", choices=PROBLEMS, help="start from a built-in preset")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (default: config out_dir)")
    common.add_argument("--epochs", type=int, help="override the training epoch budget")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="madonet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("generate", parents=[common], help="sample inputs, solve, write the dataset")
    t = sub.add_parser("train", parents=[common], help="train one model and write a run directory")
    t.add_argument("--model", choices=MODELS, default="multiauto")
    sub.add_parser("compare", parents=[common], help="train every configured model on shared data")
    e = sub.add_parser("evaluate", parents=[common], help="recompute test metrics from a run directory")
    e.add_argument("run", type=Path, nargs="?", help="run directory (default: --out)")
    pl = sub.add_parser("plot", parents=[common], help="write SVG figures for a run directory")
    pl.add_argument("run", type=Path, nargs="?", help="run directory (default: --out)")
    sub.add_parser("sweep", parents=[common], help="MultiAuto error versus input sensor count")
    return p


def load_config(args) -> ExperimentConfig:
    from .experiment import load_config_or_manifest

    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        try:
            cfg = load_config_or_manifest(args.config)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    else:
        cfg = preset(args.problem or "growth-ode")
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.epochs is not None:
        from dataclasses import replace

        cfg = cfg.with_overrides(train=replace(cfg.train, epochs=args.epochs))
    if args.out is not None:
        cfg = cfg.with_overrides(out_dir=str(args.out))
    return cfg


def _dataset(cfg: ExperimentConfig):
    from .data import build_dataset, matching_dataset

    ds = matching_dataset(Path(cfg.out_dir) / "data", cfg)
    if ds is None:
        logger.info("generating %s dataset (seed %d)", cfg.problem, cfg.seed)
        ds = build_dataset(cfg)
    return ds


def _write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}-", dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from . import experiment as ex
    from .data import generate_dataset
    from .plots import emit_plots

    if args.verb in ("evaluate", "plot"):
        run_dir = args.run or args.out
        if run_dir is None:
            raise ConfigError(f"{args.verb}: give a run directory")
        if args.verb == "plot":
            for path in emit_plots(run_dir):
                print(path)
            return 0
        metrics = ex.evaluate_run(run_dir)
        rows = ex.metrics_rows(ex.load_config_or_manifest(Path(run_dir) / "manifest.json").problem + "/evaluate", metrics)
        _write_text_atomic(Path(run_dir) / "evaluation.csv", ex.metrics_csv(rows))
        print(ex.render_table(metrics), end="")
        return 0

    cfg = load_config(args)
    out = Path(cfg.out_dir)
    if args.verb == "generate":
        print(generate_dataset(cfg, out))
        return 0
    if args.verb == "sweep":
        sweep = ex.run_sweep(cfg)
        ex.write_sweep(out, cfg, sweep)
        print((out / "table.txt").read_text(), end="")
        return 0
    models = (args.model,) if args.verb == "train" else cfg.models
    if args.verb == "train":
        cfg = cfg.with_overrides(models=models)
    result = ex.run_experiment(cfg, models, dataset=_dataset(cfg))
    ex.write_run(out, cfg, result, command=args.verb)
    table = ex.render_table(result.metrics)
    _write_text_atomic(out / "table.txt", table)
    print(table, end="")
    return 0


def main(argv=None) -> int:
    threads = int(os.environ.get("MADONET_THREADS", "1"))
    try:
        with threadpool_limits(limits=threads):
            return run(argv)
    except (ConfigError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"madonet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
