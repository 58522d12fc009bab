"""Experiment configuration: a YAML file, overridable key by key.

Schema (all keys optional)::

    seed: 13
    split_strategy: paragraph      # paragraph | sentence | exact_span
    vocab_size: 2000
    data:
      articles_dir: data/articles
      si_labels: data/labels-si.tsv
      tc_labels: data/labels-tc.tsv
      vocab: null                  # existing vocabulary file
      embeddings: null             # "surface v1 ... vn" text file
      pretrain_corpus: null        # directory of *.txt files; default: train articles
    encoder: {kind: transformer, hidden_dim: 64, layers: 2, heads: 2,
              max_seq_len: 130, dropout: 0.1, embedding_dim: null}
    pretrain: {total_steps: 2000, checkpoint_fractions: [0.175, 0.4, 0.6, 0.75, 1.0],
               batch_size: 8, window: 64, lr: 1.0e-4}
    train: {epochs: 10, batch_size: 16, patience: 3, lr_si: 1.0e-3, lr_tc: 1.0e-4,
            undersample: true, oversample: false, freeze_encoder: false,
            init_checkpoint: none}    # none | last | <path to checkpoint>
    ensemble: {enabled: false, fractions: null}   # null -> every pretrain checkpoint
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .neural.encoder import EncoderConfig
from .neural.mlm import DEFAULT_CHECKPOINT_FRACTIONS
from .neural.optim import MLM_LR, SI_LR, TC_LR
from .pipelines.common import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    articles_dir: str | None = None
    si_labels: str | None = None
    tc_labels: str | None = None
    vocab: str | None = None
    embeddings: str | None = None
    pretrain_corpus: str | None = None


@dataclass
class EncoderSettings:
    kind: str = "transformer"
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 2
    max_seq_len: int = 130
    dropout: float = 0.1
    embedding_dim: int | None = None


@dataclass
class PretrainSettings:
    total_steps: int = 2000
    checkpoint_fractions: list[float] = field(default_factory=lambda: list(DEFAULT_CHECKPOINT_FRACTIONS))
    batch_size: int = 8
    window: int = 64
    lr: float = MLM_LR


@dataclass
class TrainSettings:
    epochs: int = 10
    batch_size: int = 16
    patience: int = 3
    lr_si: float = SI_LR
    lr_tc: float = TC_LR
    undersample: bool = True
    oversample: bool = False
    freeze_encoder: bool = False
    init_checkpoint: str = "none"


@dataclass
class EnsembleSettings:
    enabled: bool = False
    fractions: list[float] | None = None


@dataclass
class ExperimentConfig:
    seed: int = 13
    split_strategy: str = "paragraph"
    vocab_size: int = 2000
    data: DataPaths = field(default_factory=DataPaths)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)

    def __post_init__(self):
        if self.split_strategy not in ("paragraph", "sentence", "exact_span"):
            raise ConfigError(f"split_strategy must be paragraph, sentence or exact_span, not {self.split_strategy!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        e = self.encoder
        return EncoderConfig(
            vocab_size=vocab_size, hidden_dim=e.hidden_dim, layers=e.layers, heads=e.heads,
            max_seq_len=e.max_seq_len, encoder_kind=e.kind, dropout=e.dropout,
            embedding_dim=e.embedding_dim, embedding_file=self.data.embeddings,
        )

    def train_config(self, subtask: str, vocab_size: int) -> TrainConfig:
        t = self.train
        strategy = self.split_strategy if self.split_strategy != "exact_span" else "paragraph"
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, patience=t.patience,
            lr=t.lr_si if subtask == "SI" else t.lr_tc, seed=self.seed, split_strategy=strategy,
            undersample=t.undersample, oversample=t.oversample, freeze_encoder=t.freeze_encoder,
            vocab_size=self.vocab_size, encoder=self.encoder_config(vocab_size),
        )


def _build(cls, data: Any, where: str):
    if not is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(f'{where}{k}' for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f.default_factory() if f.default_factory is not field().default_factory else None  # type: ignore[misc]
        kwargs[name] = _build(type(sub), value, f"{where}{name}.") if is_dataclass(sub) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _set_dotted(tree: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def _absolute(tree: dict, base: Path) -> None:
    """Anchor relative data paths (and a checkpoint path) at ``base``."""
    data = tree.get("data")
    if isinstance(data, dict):
        for key, value in data.items():
            if isinstance(value, str) and not Path(value).is_absolute():
                data[key] = str((base / value).resolve())
    train = tree.get("train")
    if isinstance(train, dict):
        init = train.get("init_checkpoint")
        if isinstance(init, str) and init not in ("none", "last") and not Path(init).is_absolute():
            train["init_checkpoint"] = str((base / init).resolve())


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a YAML config and apply ``key.sub=value`` overrides (values are
    parsed as YAML).  Relative paths in the file resolve against the file's
    directory; relative paths given as overrides resolve against the
    working directory."""
    tree: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = copy.deepcopy(loaded) if loaded else {}
        _absolute(tree, path.resolve().parent)
    override_tree: dict = {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_dotted(override_tree, key.strip(), yaml.safe_load(raw))
    _absolute(override_tree, Path.cwd())
    for section, value in override_tree.items():
        if isinstance(value, dict) and isinstance(tree.get(section), dict):
            tree[section].update(value)
        else:
            tree[section] = value
    return _build(ExperimentConfig, tree, "")
