"""JSON pipeline configuration.

Top-level keys: ``seed``, ``data`` (SyntheticSpec fields), ``model``
(ModelConfig fields except ``input_dim``, which comes from the data),
``train`` (TrainConfig fields except ``seed``) and ``inference``.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticSpec
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class InferenceConfig:
    tta: bool = True
    smooth_window: int = 11
    smooth_before_ensemble: bool = False
    ensemble: list = field(default_factory=list)
    split: str = "test"

    def __post_init__(self):
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be odd and >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "input_dim": input_dim})

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": self.seed, **overrides})


def _build(cls, d, section):
    if not isinstance(d, dict):
        raise ValueError(f"config section {section!r} must be an object")
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ValueError(f"unknown keys in {section!r}: {sorted(extra)}")
    return cls(**d)


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    """Read a pipeline config; ``LAM_SEED`` (or ``seed_override``) wins over the file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    extra = set(raw) - {"seed", "data", "model", "train", "inference"}
    if extra:
        raise ValueError(f"{path}: unknown top-level keys {sorted(extra)}")
    model = raw.get("model", {})
    train = raw.get("train", {})
    if "input_dim" in model:
        raise ValueError("model.input_dim is taken from the data, do not set it")
    if "seed" in train:
        raise ValueError("train.seed is the top-level seed")
    cfg = PipelineConfig(
        seed=int(raw.get("seed", 0)),
        data=_build(SyntheticSpec, raw.get("data", {}), "data"),
        model=dict(model),
        train=dict(train),
        inference=_build(InferenceConfig, raw.get("inference", {}), "inference"),
    )
    env = os.environ.get("LAM_SEED")
    if seed_override is not None:
        cfg.seed = int(seed_override)
    elif env:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ValueError(f"LAM_SEED must be an integer, got {env!r}") from None
    # validate the blocks that are only materialized later
    cfg.model_config(cfg.data.feature_dim)
    cfg.train_config()
    return cfg
