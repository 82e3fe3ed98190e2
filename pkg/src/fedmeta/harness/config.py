"""Experiment configuration: one YAML file with flat sections per module.

Every field has a default mirroring the experiment protocol (task batch of
10, 5 adaptation steps, query twice the support, eta=5, lam=2, phi=2, Adam at
lr 0.001 with weight decay 0.1, 150 fusion rounds of 5 local iterations, 30
evaluation episodes); a config plus a seed fully determines a run.  The
config hash is the SHA-256 of the canonical JSON of every resolved field.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from ..data import ARRHYTHMIA_KEEP_CLASSES, SyntheticSpec
from ..errors import ConfigError
from ..fedsim import FusionPolicy
from ..losses import FocalParams
from ..metalearn import MetaConfig


@dataclass(frozen=True)
class CsvSpec:
    path: str
    label_column: int = -1
    missing_marker: str = "?"
    keep_classes: tuple = ARRHYTHMIA_KEEP_CLASSES


@dataclass(frozen=True)
class SplitSettings:
    common: tuple = (1, 2, 3, 4, 5)
    rare: tuple = (6, 7, 8, 9)
    hospitals: int = 4
    classes_per_hospital: int = 3
    sample_split: bool = False

    def __post_init__(self):
        object.__setattr__(self, "common", tuple(int(c) for c in self.common))
        object.__setattr__(self, "rare", tuple(int(c) for c in self.rare))


@dataclass(frozen=True)
class ModelSettings:
    encoder_dims: tuple = (64, 32)
    use_bn: bool = True
    head_dims: tuple = (32,)

    def __post_init__(self):
        object.__setattr__(self, "encoder_dims", tuple(int(d) for d in self.encoder_dims))
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))


@dataclass(frozen=True)
class RunSettings:
    variant: str = "DWA_FML"
    rounds: int = 150
    local_episodes: int = 5
    seeds: tuple = tuple(range(10))
    report_episodes: int = 30
    emit_finetune_curve: bool = True
    finetune_curve_steps: tuple = tuple(range(1, 11))
    trace_points: int = 20
    save_client_models: bool = False

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "finetune_curve_steps",
                           tuple(int(s) for s in self.finetune_curve_steps))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: object = SyntheticSpec()
    split: SplitSettings = SplitSettings()
    model: ModelSettings = ModelSettings()
    meta: MetaConfig = MetaConfig()
    fusion: FusionPolicy = FusionPolicy()
    run: RunSettings = RunSettings()


_META_KEYS = {
    "alpha", "beta", "eta", "lam", "phi", "n_way", "k_shot", "q_per_class",
    "tasks_per_episode", "adapt_steps", "finetune_steps", "first_order",
    "outer_optimizer", "weight_decay", "outer_loss",
}


def _build(section, cls, raw, aliases=None):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in (raw or {}).items():
        name = (aliases or {}).get(key, key)
        if name not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from None


def _build_meta(raw):
    raw = dict(raw or {})
    for key in raw:
        if key not in _META_KEYS:
            raise ConfigError(f"meta.{key}: unknown field")
    eta = raw.pop("eta", None)
    lam = raw.pop("lam", None)
    try:
        focal = FocalParams(
            eta=5.0 if eta is None else float(eta),
            lam=2.0 if lam is None else float(lam),
        )
        return MetaConfig(focal=focal, **raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"meta: {e}") from None


def _build_dataset(raw):
    raw = dict(raw or {})
    kind = raw.pop("kind", "synthetic")
    if kind == "synthetic":
        return _build("dataset", SyntheticSpec, raw,
                      aliases={"classes": "n_classes", "sizes": "samples_per_class",
                               "spread": "cluster_spread", "separation": "class_separation"})
    if kind == "csv":
        return _build("dataset", CsvSpec, raw)
    raise ConfigError(f"dataset.kind: expected 'synthetic' or 'csv', got {kind!r}")


def from_dict(raw) -> ExperimentConfig:
    raw = dict(raw or {})
    sections = {"dataset", "split", "model", "meta", "fusion", "run"}
    for key in raw:
        if key not in sections:
            raise ConfigError(f"{key}: unknown section")
    return ExperimentConfig(
        dataset=_build_dataset(raw.get("dataset")),
        split=_build("split", SplitSettings, raw.get("split")),
        model=_build("model", ModelSettings, raw.get("model")),
        meta=_build_meta(raw.get("meta")),
        fusion=_build("fusion", FusionPolicy, raw.get("fusion")),
        run=_build("run", RunSettings, raw.get("run")),
    )


def from_file(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
    return from_dict(raw)


def override(cfg: ExperimentConfig, variant=None, seed=None) -> ExperimentConfig:
    run = cfg.run
    if variant is not None:
        run = replace(run, variant=variant)
    if seed is not None:
        run = replace(run, seeds=(int(seed),))
    return replace(cfg, run=run)


def canonical_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "dataset": asdict(cfg.dataset),
        "split": asdict(cfg.split),
        "model": asdict(cfg.model),
        "meta": asdict(cfg.meta),
        "fusion": asdict(cfg.fusion),
        "run": asdict(cfg.run),
    }
    d["dataset"]["kind"] = "csv" if isinstance(cfg.dataset, CsvSpec) else "synthetic"
    return d


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(canonical_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
