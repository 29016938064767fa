"""Flat key=value experiment configs with model./train./data. prefixes.

Unknown keys are rejected and everything is validated before any compute
starts. Lines may be blank or start with '#'.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import GraphBundle, load_bundle, make_splits, sbm_generate
from .errors import ConfigError, ParseError
from .model import FfnVariant, ModelConfig, ResidualMode
from .operators import OperatorSpec, PropagatorKind
from .training import TrainConfig


@dataclass(frozen=True)
class SbmSpec:
    n: int
    c: int
    p_in: float
    p_out: float
    feat_dim: int
    feat_noise: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    bundle_path: str | None = None
    sbm: SbmSpec | None = None
    gt_layers: int = 2

    def __post_init__(self):
        if (self.bundle_path is None) == (self.sbm is None):
            raise ConfigError("config needs exactly one of data.bundle or data.sbm.*")
        if self.gt_layers < 1:
            raise ConfigError(f"gt_layers must be positive, got {self.gt_layers}")

    def load_data(self) -> GraphBundle:
        if self.bundle_path is not None:
            bundle = load_bundle(self.bundle_path)
        else:
            s = self.sbm
            bundle = sbm_generate(
                s.n, s.c, s.p_in, s.p_out, s.feat_dim, s.feat_noise, np.random.default_rng(s.seed)
            )
        missing = [seed for seed in self.train.seeds if seed not in bundle.splits]
        if missing:
            if self.bundle_path is not None:
                raise ConfigError(
                    f"bundle {self.bundle_path} lacks splits for seeds {missing}; "
                    "regenerate it with those seeds"
                )
            make_splits(bundle, list(self.train.seeds))
        return bundle


_MODEL_KEYS = {"blocks", "propagator", "ffn", "residual", "d_prime", "dropout", "heads", "gt_layers"}
_TRAIN_KEYS = {"lr", "weight_decay", "max_epochs", "patience", "seeds"}
_DATA_KEYS = {"bundle", "sbm.n", "sbm.c", "sbm.p_in", "sbm.p_out", "sbm.feat_dim", "sbm.feat_noise", "sbm.seed"}


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in pairs:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value.split("#", 1)[0].strip()
    return pairs


def _typed(value: str, kind, key: str):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def _seed_list(value: str, key: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in value.split(",") if s.strip() != "")
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from None
    if not seeds:
        raise ConfigError(f"{key}: empty seed list")
    return seeds


def build_config(pairs: dict[str, str]) -> ExperimentConfig:
    for key in pairs:
        section, _, rest = key.partition(".")
        if section == "model" and rest in _MODEL_KEYS:
            continue
        if section == "train" and rest in _TRAIN_KEYS:
            continue
        if section == "data" and rest in _DATA_KEYS:
            continue
        raise ConfigError(f"unknown config key {key!r}")

    model_kwargs = {}
    if "model.blocks" in pairs:
        model_kwargs["blocks"] = OperatorSpec.parse(pairs["model.blocks"])
    if "model.propagator" in pairs:
        model_kwargs["propagator"] = PropagatorKind.parse(pairs["model.propagator"])
    if "model.ffn" in pairs:
        model_kwargs["ffn"] = FfnVariant.parse(pairs["model.ffn"])
    if "model.residual" in pairs:
        model_kwargs["residual"] = ResidualMode.parse(pairs["model.residual"])
    if "model.d_prime" in pairs:
        model_kwargs["d_prime"] = _typed(pairs["model.d_prime"], int, "model.d_prime")
    if "model.dropout" in pairs:
        model_kwargs["dropout"] = _typed(pairs["model.dropout"], float, "model.dropout")
    if "model.heads" in pairs:
        model_kwargs["heads"] = _typed(pairs["model.heads"], int, "model.heads")

    train_kwargs = {}
    if "train.lr" in pairs:
        train_kwargs["lr"] = _typed(pairs["train.lr"], float, "train.lr")
    if "train.weight_decay" in pairs:
        train_kwargs["weight_decay"] = _typed(pairs["train.weight_decay"], float, "train.weight_decay")
    if "train.max_epochs" in pairs:
        train_kwargs["max_epochs"] = _typed(pairs["train.max_epochs"], int, "train.max_epochs")
    if "train.patience" in pairs:
        train_kwargs["patience"] = _typed(pairs["train.patience"], int, "train.patience")
    if "train.seeds" in pairs:
        train_kwargs["seeds"] = _seed_list(pairs["train.seeds"], "train.seeds")

    sbm = None
    if any(key.startswith("data.sbm.") for key in pairs):
        required = ("data.sbm.n", "data.sbm.c", "data.sbm.p_in", "data.sbm.p_out", "data.sbm.feat_dim")
        for key in required:
            if key not in pairs:
                raise ConfigError(f"data.sbm.* requires {key}")
        sbm = SbmSpec(
            n=_typed(pairs["data.sbm.n"], int, "data.sbm.n"),
            c=_typed(pairs["data.sbm.c"], int, "data.sbm.c"),
            p_in=_typed(pairs["data.sbm.p_in"], float, "data.sbm.p_in"),
            p_out=_typed(pairs["data.sbm.p_out"], float, "data.sbm.p_out"),
            feat_dim=_typed(pairs["data.sbm.feat_dim"], int, "data.sbm.feat_dim"),
            feat_noise=_typed(pairs.get("data.sbm.feat_noise", "0"), float, "data.sbm.feat_noise"),
            seed=_typed(pairs.get("data.sbm.seed", "0"), int, "data.sbm.seed"),
        )

    return ExperimentConfig(
        model=ModelConfig(**model_kwargs),
        train=TrainConfig(**train_kwargs),
        bundle_path=pairs.get("data.bundle"),
        sbm=sbm,
        gt_layers=_typed(pairs.get("model.gt_layers", "2"), int, "model.gt_layers"),
    )


def load_experiment_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ParseError(f"{p}: unreadable config ({e})") from None
    return build_config(parse_pairs(text, str(p)))
