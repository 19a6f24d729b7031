"""
Run configuration
One JSON document describes the dataset, the models to train, custom attacks
and the evaluation plan. CLI flags may override seed, threads and output dir.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from attacks.presets import PRESETS, resolve_attack
from models.zoo import ARCHITECTURES, NUM_TAPS
from training.trainer import TrainHyper
from utils.errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetSpec(_Section):
    format: Literal["cifar10", "idx"]
    train_images: List[str]
    train_labels: List[str] = Field(default_factory=list)
    test_images: List[str]
    test_labels: List[str] = Field(default_factory=list)
    num_classes: int = Field(10, ge=2)
    eval_subset_size: int = Field(200, ge=0)
    seed: int = 0
    train_limit: Optional[int] = Field(None, ge=1)  # use only the first N training records

    @field_validator("train_images", "train_labels", "test_images", "test_labels", mode="before")
    @classmethod
    def _one_or_many(cls, value):
        return [value] if isinstance(value, str) else value


class ModelEntry(_Section):
    name: str = Field(min_length=1)
    architecture: str
    train_seed: int = 0
    hyper: TrainHyper = Field(default_factory=TrainHyper)

    @field_validator("architecture")
    @classmethod
    def _known_architecture(cls, value):
        if value not in ARCHITECTURES:
            raise ValueError(f"unknown architecture '{value}' (known: {', '.join(ARCHITECTURES)})")
        return value

    @field_validator("name")
    @classmethod
    def _file_safe(cls, value):
        if any(c in value for c in "/\\+ ") or value.startswith("."):
            raise ValueError(f"model name '{value}' must not contain '/', '\\', '+' or spaces")
        return value


class EvalPlan(_Section):
    runs: Optional[List[str]] = None  # snapshot runs to evaluate; default every stored run
    transfer_checkpoints: List[int] = Field(default_factory=lambda: [20, 100, 300])
    universality: bool = False
    dominance_taps: List[int] = Field(default_factory=lambda: [3])
    dominance_perturbations: int = Field(20, ge=1)
    ensemble_holdout: bool = False
    holdout_attack: str = "dtmi-ce-li"
    ablation: List[Dict[str, Any]] = Field(default_factory=list)
    ablation_attack: str = "dtmi-ce-li"
    ablation_surrogate: Optional[str] = None
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])

    @field_validator("transfer_checkpoints")
    @classmethod
    def _positive_checkpoints(cls, value):
        if not value or any(c < 1 for c in value):
            raise ValueError("transfer checkpoints must be a non-empty list of iterations >= 1")
        return sorted(set(value))

    @field_validator("dominance_taps")
    @classmethod
    def _valid_taps(cls, value):
        if any(not 1 <= t <= NUM_TAPS for t in value):
            raise ValueError(f"dominance taps must lie in 1..{NUM_TAPS}")
        return value


class RunConfig(_Section):
    dataset: DatasetSpec
    models: List[ModelEntry] = Field(min_length=1)
    attacks: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    evaluation: EvalPlan = Field(default_factory=EvalPlan)
    output_dir: str = "data"
    seed: int = 0
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _names_resolve(self):
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError(f"model names must be unique, got {names}")
        plan = self.evaluation
        if plan.ablation_surrogate is not None and plan.ablation_surrogate not in names:
            raise ValueError(f"ablation_surrogate '{plan.ablation_surrogate}' is not a configured model")
        for attack in (plan.holdout_attack, plan.ablation_attack):
            if attack not in PRESETS and attack not in self.attacks:
                raise ValueError(f"evaluation refers to unknown attack '{attack}'")
        return self

    def model_entry(self, name):
        for entry in self.models:
            if entry.name == name:
                return entry
        raise ConfigError(f"unknown model '{name}' (configured: {', '.join(m.name for m in self.models)})")

    def attack_config(self, name):
        return resolve_attack(name, self.attacks, seed=self.seed)


def _first_error(e: ValidationError):
    first = e.errors()[0]
    where = ".".join(str(p) for p in first["loc"]) or "config"
    return f"{where}: {first['msg']}"


def load_run_config(path, seed=None, threads=None, out=None) -> RunConfig:
    """Read and validate the JSON run config, applying CLI overrides"""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"config {path} must be a JSON object")

    for key, value in (("seed", seed), ("threads", threads), ("output_dir", out)):
        if value is not None:
            document[key] = value
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {_first_error(e)}") from e

    for name in config.attacks:
        config.attack_config(name)  # raises ConfigError on bad overrides
    return config
