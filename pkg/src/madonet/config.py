"""Experiment configuration: four benchmark presets, JSON round-trip, validation."""

from __future__ import annotations

import json
from math import comb
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .model import TrainConfig

PROBLEMS = ("growth-ode", "poisson1d-inverse", "poisson2d-forward", "kdv-forward")
MODELS = ("multiauto", "pca", "deeponet", "pce")


class ConfigError(ValueError):
    pass


@dataclass
class KernelConfig:
    family: str = "squared-exponential"
    sigma: float = 1.0
    length: float = 1.5
    length_range: tuple[float, float] | None = None  # per-trajectory uniform draw when set


@dataclass
class ArchConfig:
    latent: int = 8
    p: int = 60
    conv_channels: tuple[int, ...] = (8, 16)
    filter_size: int = 5
    stride: int = 1
    encoder_hidden: tuple[int, ...] = (64,)
    branch_widths: tuple[int, ...] = (60, 60)
    trunk_widths: tuple[int, ...] = (60, 60)
    l1_on: tuple[str, ...] = ("a", "b", "phi")


@dataclass
class ExperimentConfig:
    problem: str = "growth-ode"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    n_train: int = 1000  # trajectories, before the train/validation split
    n_test: int = 500
    input_sensors: int = 25  # per axis
    output_sensors: int = 25  # per axis (x axis for KdV)
    output_times: int = 10  # KdV only
    refine: int = 4  # solver grid refinement used during data generation
    fine_points: int = 241  # growth-ode integration grid
    kl_modes: int = 5  # vanilla DeepONet truncation N / KdV forcing modes d
    pca_r: int | None = None  # defaults to the latent width
    pce_dim: int = 3
    pce_degree: int = 3
    models: tuple[str, ...] = ("multiauto",)
    sweep_sensors: tuple[int, ...] = ()
    n_generate: int = 3000
    n_reference: int = 10000
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/default"
    seed: int = 0

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = preset(d.get("problem", "growth-ode"))
        kernel = replace(base.kernel, **_tuplify(d.pop("kernel", {})))
        arch = replace(base.arch, **_tuplify(d.pop("arch", {})))
        train = replace(base.train, **d.pop("train", {}))
        cfg = replace(base, kernel=kernel, arch=arch, train=train, **_tuplify(d))
        cfg.validate()
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        for name in ("n_train", "n_test", "input_sensors", "output_sensors", "output_times", "refine", "kl_modes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_test < 2:
            raise ConfigError("n_test must be at least 2 (variance metrics)")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ConfigError(f"unknown models {sorted(bad)}")
        k = self.kernel
        if k.sigma < 0 or k.length <= 0:
            raise ConfigError("kernel sigma must be >= 0 and length > 0")
        if k.length_range is not None and not 0 < k.length_range[0] <= k.length_range[1]:
            raise ConfigError(f"bad length_range {k.length_range}")
        shrink = len(self.arch.conv_channels) * (self.arch.filter_size - 1)
        for n in (self.input_sensors, *self.sweep_sensors):
            if n - shrink < 1:
                raise ConfigError(
                    f"{n} input sensors per axis cannot feed {len(self.arch.conv_channels)} conv layers "
                    f"of width {self.arch.filter_size}"
                )
        if self.problem == "growth-ode":
            if self.fine_points < 2 * max(self.input_sensors, self.output_sensors, *self.sweep_sensors):
                raise ConfigError("fine_points must be at least twice the sensor counts")
        if self.problem == "kdv-forward":
            if (self.input_sensors - 1) % self.output_times:
                raise ConfigError("KdV output times must fall on the forcing time grid: output_times must divide input_sensors - 1")
            if self.kl_modes > self.input_sensors:
                raise ConfigError("more KL modes than forcing sensors")
        if self.problem == "poisson1d-inverse" and self.input_sensors != self.output_sensors:
            raise ConfigError("poisson1d-inverse observes u and predicts f on the same interior grid")
        if "pce" in self.models:
            if self.problem != "poisson2d-forward":
                raise ConfigError("the PCE variant is defined for poisson2d-forward only")
            count = comb(self.pce_dim + self.pce_degree, self.pce_degree)
            if self.arch.p != count:
                raise ConfigError(f"PCE comparison needs a matched basis count: set arch.p = {count}")
        if "deeponet" in self.models and self.problem != "growth-ode":
            raise ConfigError("the KL-input DeepONet baseline is defined for growth-ode only")
        if self.n_generate < 0 or self.n_reference < 0:
            raise ConfigError("n_generate and n_reference must be nonnegative")
        n_fit = self.n_train - max(1, round(self.train.val_fraction * self.n_train))
        if self.train.batch_size > n_fit:
            raise ConfigError(f"batch size {self.train.batch_size} exceeds the {n_fit} training samples")
        if self.arch.latent < 1 or self.arch.p < 1:
            raise ConfigError("latent and p must be positive")

    def with_overrides(self, **kw) -> ExperimentConfig:
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def preset(problem: str) -> ExperimentConfig:
    """Desk-scale defaults for each benchmark."""
    if problem == "growth-ode":
        return ExperimentConfig(
            problem=problem,
            kernel=KernelConfig("squared-exponential", 1.0, 1.5, (1.0, 2.0)),
            n_train=1000,
            n_test=500,
            input_sensors=25,
            output_sensors=25,
            arch=ArchConfig(latent=4),
            models=("multiauto", "pca", "deeponet"),
            sweep_sensors=(10, 15, 20, 25),
            train=TrainConfig(batch_size=64),
            out_dir="runs/growth-ode",
        )
    if problem == "poisson1d-inverse":
        return ExperimentConfig(
            problem=problem,
            kernel=KernelConfig("squared-exponential", 1.0, 1.5),
            n_train=1000,
            n_test=500,
            input_sensors=40,
            output_sensors=40,
            arch=ArchConfig(latent=8),
            models=("multiauto", "pca"),
            sweep_sensors=(10, 20, 30, 40),
            out_dir="runs/poisson1d-inverse",
        )
    if problem == "poisson2d-forward":
        return ExperimentConfig(
            problem=problem,
            kernel=KernelConfig("squared-exponential", 0.5, 1.5),
            n_train=2000,
            n_test=500,
            input_sensors=20,
            output_sensors=20,
            arch=ArchConfig(latent=15),
            models=("multiauto", "pca"),
            sweep_sensors=(9, 15, 19, 25),
            out_dir="runs/poisson2d-forward",
        )
    if problem == "kdv-forward":
        return ExperimentConfig(
            problem=problem,
            kernel=KernelConfig("exponential", 0.1, 0.25),
            n_train=4000,
            n_test=500,
            input_sensors=41,
            output_sensors=40,
            output_times=10,
            kl_modes=3,
            arch=ArchConfig(latent=4),
            models=("multiauto", "pca"),
            out_dir="runs/kdv-forward",
        )
    raise ConfigError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
