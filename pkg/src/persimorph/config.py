"""Run configuration: one JSON document, overridable from the command line."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .augment import AugmentConfig
from .contrastive import TrainConfig
from .encoders import ModelDims
from .errors import ConfigError
from .pimage import ImageConfig

MODEL_KEYS = ("hidden_dim", "patch_size", "image_dim", "proj_hidden", "proj_out", "head_activation")


@dataclass
class EvalConfig:
    k: tuple = (20,)
    fusion: str = "concat"
    fusion_weight: float = 0.5
    space: str = "encoder"
    metric: str = "cosine"
    n_permutations: int = 1000

    def __post_init__(self):
        self.k = tuple(int(v) for v in (self.k if isinstance(self.k, (list, tuple)) else [self.k]))
        if not self.k or min(self.k) < 1:
            raise ConfigError("k values must be >= 1")
        if self.fusion not in ("concat", "add", "weighted_add"):
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.space not in ("encoder", "projection"):
            raise ConfigError(f"unknown embedding space {self.space!r}")
        if self.metric not in ("cosine", "euclidean"):
            raise ConfigError(f"unknown metric {self.metric!r}")


@dataclass
class RunConfig:
    seed: int = 0
    input: str | None = None
    output: str | None = None
    test_fraction: float = 0.3
    image: ImageConfig = field(default_factory=ImageConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        # the root seed drives every stochastic component
        self.augment = replace(self.augment, seed=self.seed)
        self.train = replace(self.train, seed=self.seed)
        bad = set(self.model) - set(MODEL_KEYS)
        if bad:
            raise ConfigError(f"unknown model keys: {sorted(bad)}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

    def model_dims(self) -> ModelDims:
        ic = self.image
        return ModelDims(image_height=ic.height, image_width=ic.width,
                         image_channels=len(ic.channels), **self.model).validate()

    def to_dict(self):
        return {
            "seed": self.seed,
            "input": self.input,
            "output": self.output,
            "test_fraction": self.test_fraction,
            "image": self.image.to_dict(),
            "augment": self.augment.to_dict(),
            "train": self.train.to_dict(),
            "eval": {**asdict(self.eval), "k": list(self.eval.k)},
            "model": dict(self.model),
        }

    def hash(self):
        d = self.to_dict()
        d.pop("input")
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def validate_paths(self):
        if self.input is not None and not os.path.exists(self.input):
            raise ConfigError(f"input path does not exist: {self.input}")
        return self


def _build(cls, d, name):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from None


def run_config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    known = {f.name for f in fields(RunConfig)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
    return RunConfig(
        seed=int(d.get("seed", 0)),
        input=d.get("input"),
        output=d.get("output"),
        test_fraction=float(d.get("test_fraction", 0.3)),
        image=_build(ImageConfig, d.get("image"), "image"),
        augment=_build(AugmentConfig, d.get("augment"), "augment"),
        train=_build(TrainConfig, d.get("train"), "train"),
        eval=_build(EvalConfig, d.get("eval"), "eval"),
        model=dict(d.get("model") or {}),
    )


def load_run_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def merge_overrides(base: dict, overrides: dict) -> dict:
    """Deep-merge ``overrides`` (dotted keys, ``None`` = not given) into ``base``."""
    out = json.loads(json.dumps(base))
    for key, value in overrides.items():
        if value is None:
            continue
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out
