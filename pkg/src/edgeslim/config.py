"""Run configuration: one JSON file drives a full pipeline run.

Fields mirror the pipeline and distillation knobs plus the input paths.
Any scalar field can be overridden from the environment with the
``EDGESLIM_`` prefix (``EDGESLIM_SEED=7``, ``EDGESLIM_SCHEME=S5``, ...),
applied after the file is read so ad-hoc experiments keep the file intact.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from edgeslim.pipeline import PipelineSettings

ENV_PREFIX = "EDGESLIM_"


@dataclass(frozen=True)
class RunConfig:
    architecture: str
    device: str
    dataset: str
    output_dir: str
    teacher: str | None = None  # checkpoint path; None pretrains in-run
    pretrain_epochs: int = 30
    pretrain_eta: float = 0.1
    seed: int = 0
    omega: float = 0.5
    dropout_c: float = 1.0
    dropout_max_iteration: int = 20
    dropout_initial_rate: float = 0.5
    dropout_input_rate: float = 0.8
    dropout_eta: float = 0.05
    size_penalty: float = 0.0
    scheme: str = "S6"
    lambdas: tuple[float, float, float] | None = None
    total_epochs: int = 30
    h_max: int | None = None
    plateau_epsilon: float = 0.5
    plateau_window: int = 10
    de_population: int = 8
    de_generations: int = 4
    de_epochs: int = 6
    eta: float = 0.05
    batch_size: int = 32
    val_fraction: float = 0.3
    reference_tolerance: float = 1e-6
    workers: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
            if len(self.lambdas) != 3:
                raise ValueError("lambdas must hold exactly three weights")
        if self.pretrain_epochs < 1 or self.total_epochs < 1:
            raise ValueError("epoch counts must be positive")

    def check_paths(self) -> None:
        """The referenced input files must exist before a run starts."""
        missing = [
            p
            for p in (self.architecture, self.device, self.dataset, self.teacher)
            if p is not None and not Path(p).is_file()
        ]
        if missing:
            raise FileNotFoundError(f"missing input files: {', '.join(missing)}")

    def pipeline_settings(self) -> PipelineSettings:
        return PipelineSettings(
            omega=self.omega,
            dropout_c=self.dropout_c,
            dropout_max_iteration=self.dropout_max_iteration,
            dropout_initial_rate=self.dropout_initial_rate,
            dropout_input_rate=self.dropout_input_rate,
            dropout_eta=self.dropout_eta,
            size_penalty=self.size_penalty,
            scheme=self.scheme,
            lambdas=self.lambdas,
            de_population=self.de_population,
            de_generations=self.de_generations,
            de_epochs=self.de_epochs,
            total_epochs=self.total_epochs,
            h_max=self.h_max,
            plateau_epsilon=self.plateau_epsilon,
            plateau_window=self.plateau_window,
            eta=self.eta,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
            seed=self.seed,
            reference_tolerance=self.reference_tolerance,
            workers=self.workers,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["lambdas"] is not None:
            out["lambdas"] = list(out["lambdas"])
        return out


def config_from_dict(data: dict) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    missing = {"architecture", "device", "dataset", "output_dir"} - set(data)
    if missing:
        raise ValueError(f"config requires keys: {sorted(missing)}")
    return RunConfig(**data)


def _coerce(name: str, raw: str) -> object:
    field_type = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    if raw.lower() in ("none", "null"):
        return None
    if "tuple" in field_type:
        return tuple(float(part) for part in raw.split(","))
    if "int" in field_type and raw.lstrip("-").isdigit():
        return int(raw)
    if "float" in field_type:
        try:
            return float(raw)
        except ValueError:
            pass
    return raw


def apply_env_overrides(config: RunConfig, env=None) -> RunConfig:
    env = os.environ if env is None else env
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in env:
            overrides[f.name] = _coerce(f.name, env[key])
    if not overrides:
        return config
    return dataclasses.replace(config, **overrides)


def load_config(path, env=None) -> RunConfig:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return apply_env_overrides(config_from_dict(data), env)
