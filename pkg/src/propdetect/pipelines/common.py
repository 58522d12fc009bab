from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..neural.encoder import EncoderConfig


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning settings shared by both subtasks.

    Epochs, batch size and patience are not documented for the original
    system; the defaults here are ours.
    """

    epochs: int = 10
    batch_size: int = 16
    patience: int = 3
    lr: float | None = None  # None -> subtask default (1e-3 SI, 1e-4 TC)
    warmup_steps: int = 0
    seed: int = 13
    split_strategy: str = "paragraph"
    undersample: bool = True
    oversample: bool = False
    freeze_encoder: bool = False
    vocab_size: int = 2000
    encoder: EncoderConfig | None = None

    def __post_init__(self):
        if self.split_strategy not in ("paragraph", "sentence"):
            raise ValueError(f"unknown split strategy {self.split_strategy!r}")
        if self.epochs < 1:
            raise ValueError("training needs at least one epoch")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def snapshot(*modules: torch.nn.Module) -> list[dict[str, torch.Tensor]]:
    return [{k: v.detach().clone() for k, v in m.state_dict().items()} for m in modules]


def restore(modules, states) -> None:
    for m, s in zip(modules, states):
        m.load_state_dict(s)


def batches(items: list, batch_size: int):
    for i in range(0, len(items), batch_size):
        yield items[i : i + batch_size]


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])
