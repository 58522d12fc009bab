"""Masked-LM domain pre-training with checkpoints at fixed step fractions."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..corpus import Article
from ..segmenter import BOS, EOS, MASK, PAD, Tokenizer, Vocabulary
from .checkpoint import Checkpoint, init_checkpoint, state_to_numpy
from .encoder import DTYPE, Encoder, EncoderConfig
from .optim import MLM_LR, RAdam

log = logging.getLogger(__name__)

# 350k, 800k, 1.2M, 1.5M and 2M of 2M steps
DEFAULT_CHECKPOINT_FRACTIONS = (0.175, 0.40, 0.60, 0.75, 1.0)
WARMUP_FRACTION = 0.005
MASK_RATE_PERCENT = 15
NOT_MASKABLE = frozenset({PAD, MASK, BOS, EOS})


@dataclass(frozen=True)
class MlmSample:
    input_ids: list[int]
    positions: list[int]
    targets: list[int]


@dataclass(frozen=True)
class MlmBatch:
    input_ids: torch.Tensor  # (B, T), BOS/EOS included
    mask: torch.Tensor  # (B, T) real positions
    rows: torch.Tensor
    cols: torch.Tensor
    targets: torch.Tensor


def n_to_mask(maskable: int) -> int:
    # round half up of 15%, never below one
    return max(1, (MASK_RATE_PERCENT * maskable + 50) // 100)


def mask_for_mlm(token_ids: Sequence[int], seed, vocab_size: int, n_special: int = 5) -> MlmSample:
    """Pick 15% of maskable positions; 80% become [MASK], 10% a random
    vocabulary id, 10% stay unchanged."""
    maskable = [i for i, t in enumerate(token_ids) if t not in NOT_MASKABLE]
    if not maskable:
        raise ValueError("sequence has no maskable token")
    rng = np.random.default_rng(seed)
    n = n_to_mask(len(maskable))
    chosen = sorted(rng.choice(maskable, size=n, replace=False).tolist())
    ids = list(token_ids)
    for pos in chosen:
        u = rng.random()
        if u < 0.8:
            ids[pos] = MASK
        elif u < 0.9:
            ids[pos] = int(rng.integers(n_special, vocab_size))
    return MlmSample(ids, chosen, [int(token_ids[p]) for p in chosen])


def collate(samples: Sequence[MlmSample]) -> MlmBatch:
    width = max(len(s.input_ids) for s in samples) + 2
    ids = torch.full((len(samples), width), PAD, dtype=torch.long)
    rows, cols, targets = [], [], []
    for b, s in enumerate(samples):
        ids[b, : len(s.input_ids) + 2] = torch.tensor([BOS, *s.input_ids, EOS])
        rows += [b] * len(s.positions)
        cols += [p + 1 for p in s.positions]
        targets += s.targets
    return MlmBatch(ids, ids != PAD, torch.tensor(rows), torch.tensor(cols), torch.tensor(targets))


class MlmHead(nn.Module):
    def __init__(self, d: int, vocab_size: int):
        super().__init__()
        self.transform = nn.Linear(d, d)
        self.ln = nn.LayerNorm(d)
        self.decoder = nn.Linear(d, vocab_size)
        nn.init.normal_(self.transform.weight, std=0.02)
        nn.init.zeros_(self.transform.bias)
        nn.init.normal_(self.decoder.weight, std=0.02)
        nn.init.zeros_(self.decoder.bias)
        self.to(DTYPE)

    def forward(self, features):
        return self.decoder(self.ln(F.gelu(self.transform(features))))


def mlm_loss(encoder: Encoder, head: MlmHead, batch: MlmBatch) -> torch.Tensor:
    features = encoder(batch.input_ids, batch.mask)
    logits = head(features[batch.rows, batch.cols])
    return F.cross_entropy(logits, batch.targets)


def checkpoint_steps(total_steps: int, fractions: Sequence[float] = DEFAULT_CHECKPOINT_FRACTIONS) -> list[int]:
    if list(fractions) != sorted(fractions) or any(not 0 < f <= 1 for f in fractions):
        raise ValueError(f"checkpoint fractions must be sorted and within (0, 1]: {fractions}")
    return [max(1, round(f * total_steps)) for f in fractions]


def warmup_steps_for(total_steps: int) -> int:
    return round(WARMUP_FRACTION * total_steps)


def _windows(articles: Sequence[Article], tok: Tokenizer, vocab: Vocabulary, width: int) -> list[list[int]]:
    windows = []
    for article in articles:
        ids = vocab.encode(tok.tokenize(article.text))
        for i in range(0, len(ids), width):
            chunk = ids[i : i + width]
            if any(t not in NOT_MASKABLE for t in chunk):
                windows.append(chunk)
    return windows


def pretrain_mlm(
    corpus: Sequence[Article],
    cfg: EncoderConfig,
    total_steps: int,
    tok: Tokenizer,
    vocab: Vocabulary,
    checkpoint_fractions: Sequence[float] = DEFAULT_CHECKPOINT_FRACTIONS,
    seed: int = 0,
    batch_size: int = 8,
    window: int | None = None,
    lr: float = MLM_LR,
    init: Checkpoint | None = None,
) -> list[Checkpoint]:
    """Train an encoder with masked-LM loss and snapshot it at each fraction.

    Every checkpoint's ``meta`` holds the training-batch loss at its step and
    the loss on a fixed probe batch; ``meta["initial"]`` holds the same two
    numbers for step 1.
    """
    if not corpus:
        raise ValueError("pre-training corpus is empty")
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    if cfg.vocab_size != len(vocab):
        raise ValueError(f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
    steps = checkpoint_steps(total_steps, checkpoint_fractions)
    width = min(window or cfg.max_tokens, cfg.max_tokens)
    windows = _windows(corpus, tok, vocab, width)
    if not windows:
        raise ValueError("pre-training corpus has no maskable tokens")

    start = init or init_checkpoint(cfg, seed, vocab.surfaces)
    encoder = start.build()
    torch.manual_seed(seed)
    head = MlmHead(cfg.hidden_dim, cfg.vocab_size)
    params = [(f"encoder.{n}", p) for n, p in encoder.named_parameters()]
    params += [(f"head.{n}", p) for n, p in head.named_parameters()]
    opt = RAdam(params, lr=lr, warmup_steps=warmup_steps_for(total_steps))

    rng = np.random.default_rng(seed)
    probe_idx = rng.choice(len(windows), size=min(len(windows), 4 * batch_size), replace=False)
    probe = collate([
        mask_for_mlm(windows[i], np.random.SeedSequence([seed, 2**31 - 1, k]), len(vocab), vocab.n_special)
        for k, i in enumerate(probe_idx)
    ])

    def probe_loss() -> float:
        encoder.eval()
        head.eval()
        with torch.no_grad():
            value = float(mlm_loss(encoder, head, probe))
        encoder.train()
        head.train()
        return value

    initial = {"eval_loss": probe_loss()}
    checkpoints = []
    encoder.train()
    head.train()
    wanted = Counter(steps)
    for step in range(1, total_steps + 1):
        idx = rng.integers(0, len(windows), size=batch_size)
        batch = collate([
            mask_for_mlm(windows[i], np.random.SeedSequence([seed, step, k]), len(vocab), vocab.n_special)
            for k, i in enumerate(idx)
        ])
        opt.zero_grad()
        loss = mlm_loss(encoder, head, batch)
        loss.backward()
        opt.step()
        if step == 1:
            initial["train_loss"] = loss.item()
        if step in wanted:
            meta = {"train_loss": loss.item(), "eval_loss": probe_loss(), "initial": dict(initial), "seed": seed}
            log.info("mlm step %d/%d loss %.4f probe %.4f", step, total_steps, meta["train_loss"], meta["eval_loss"])
            encoder.eval()
            snapshot = state_to_numpy(encoder)
            checkpoints.extend(Checkpoint(cfg, snapshot, step, total_steps, meta) for _ in range(wanted[step]))
            encoder.train()
    return checkpoints
