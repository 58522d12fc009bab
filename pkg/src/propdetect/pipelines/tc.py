"""Technique classification over given spans, checkpoint ensembles, voting
and overlap resolution."""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from ..corpus import (
    NUM_TECHNIQUES, ClassifiedSample, Span, TcLabel, Technique, oversample_classes, technique_histogram,
)
from ..neural.checkpoint import (
    Checkpoint, CheckpointError, init_checkpoint, load_numpy_state, pack, state_to_numpy, unpack,
)
from ..neural.encoder import Encoder, EncoderConfig, pad_batch
from ..neural.heads import TcHead
from ..neural.optim import TC_LR, RAdam
from ..segmenter import BOS, EOS, PAD, RuleTokenizer, Tokenizer, Vocabulary
from .common import TrainConfig, batches, epoch_seed, restore, snapshot

log = logging.getLogger(__name__)


@dataclass
class TcModel:
    encoder: Encoder
    head: TcHead
    vocab: Vocabulary
    tokenizer: Tokenizer = field(default_factory=RuleTokenizer)
    step_fraction: float = 1.0
    warnings: list[str] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    def modules(self):
        return self.encoder, self.head

    def eval(self) -> "TcModel":
        for m in self.modules():
            m.eval()
        return self

    def _ids(self, sample: ClassifiedSample) -> list[int]:
        ids = self.vocab.encode(self.tokenizer.tokenize(sample.surface))
        return ids[: self.encoder.cfg.max_tokens]

    def logits(self, samples: Sequence[ClassifiedSample]) -> torch.Tensor:
        ids, mask = pad_batch([self._ids(s) for s in samples])
        features = self.encoder(ids, mask)
        real = mask & (ids != BOS) & (ids != EOS)
        # a span of pure whitespace has no real token; pool the specials instead
        empty = ~real.any(dim=1)
        real[empty] = mask[empty]
        return self.head.logits(features, real)

    def predict_proba(self, samples: Sequence[ClassifiedSample], batch_size: int = 64) -> np.ndarray:
        self.eval()
        out = []
        with torch.no_grad():
            for chunk in batches(list(samples), batch_size):
                out.append(torch.softmax(self.logits(chunk), dim=-1).numpy())
        return np.concatenate(out) if out else np.zeros((0, NUM_TECHNIQUES))

    def to_bytes(self) -> bytes:
        tensors = state_to_numpy(self.encoder, "encoder.")
        tensors.update(state_to_numpy(self.head, "head."))
        meta = {
            "kind": "tc_model",
            "config": self.encoder.cfg.to_dict(),
            "vocab": list(self.vocab.surfaces),
            "step_fraction": self.step_fraction,
        }
        return pack(meta, tensors)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TcModel":
        meta, tensors = unpack(data)
        if meta.get("kind") != "tc_model":
            raise CheckpointError(f"expected a TC model, found {meta.get('kind')!r}")
        cfg = EncoderConfig.from_dict(meta["config"])
        model = cls(Encoder(cfg), TcHead(cfg.hidden_dim), Vocabulary(tuple(meta["vocab"])),
                    step_fraction=meta.get("step_fraction", 1.0))
        load_numpy_state(model.encoder, tensors, "encoder.")
        load_numpy_state(model.head, tensors, "head.")
        return model.eval()


def accuracy(model: TcModel, samples: Sequence[ClassifiedSample]) -> float:
    if not samples:
        return 0.0
    pred = model.predict_proba(samples).argmax(axis=1)
    return float(np.mean([p == s.technique for p, s in zip(pred, samples)]))


def train_tc(
    train: Sequence[ClassifiedSample],
    dev: Sequence[ClassifiedSample],
    cfg: TrainConfig,
    init: Checkpoint | None = None,
    vocab: Vocabulary | None = None,
    tokenizer: Tokenizer | None = None,
) -> TcModel:
    """Fine-tune encoder + funnel head with cross-entropy; returns the epoch
    with the best dev micro-F1 (accuracy, one label per span)."""
    if not train:
        raise ValueError("empty training set")
    tokenizer = tokenizer or RuleTokenizer()
    if vocab is None:
        vocab = Vocabulary.build((s.surface for s in train), tokenizer, cfg.vocab_size)
    if init is None:
        init = init_checkpoint(cfg.encoder or EncoderConfig(vocab_size=len(vocab)), cfg.seed, vocab.surfaces)
    if init.config.vocab_size != len(vocab):
        raise ValueError(f"checkpoint vocab_size {init.config.vocab_size} != vocabulary size {len(vocab)}")
    encoder = init.build()
    torch.manual_seed(cfg.seed)
    model = TcModel(encoder, TcHead(init.config.hidden_dim), vocab, tokenizer, init.step_fraction)

    present = technique_histogram(train)
    for t in Technique:
        if present[t] == 0:
            msg = f"technique {t.label!r} has no training sample"
            model.warnings.append(msg)
            log.warning(msg)

    data = oversample_classes(train, cfg.seed) if cfg.oversample else list(train)
    params = [(f"head.{n}", p) for n, p in model.head.named_parameters()]
    if cfg.freeze_encoder:
        model.encoder.requires_grad_(False)
    else:
        params += [(f"encoder.{n}", p) for n, p in model.encoder.named_parameters()]
    opt = RAdam(params, lr=cfg.lr or TC_LR, warmup_steps=cfg.warmup_steps)

    best, best_state, stale = -1.0, None, 0
    for epoch in range(cfg.epochs):
        seed = epoch_seed(cfg.seed, epoch)
        order = np.random.default_rng(seed).permutation(len(data))
        torch.manual_seed(seed)
        for m in model.modules():
            m.train()
        if cfg.freeze_encoder:
            model.encoder.eval()
        total = 0.0
        for idx in batches(list(order), cfg.batch_size):
            chunk = [data[i] for i in idx]
            target = torch.tensor([int(s.technique) for s in chunk])
            opt.zero_grad()
            loss = F.cross_entropy(model.logits(chunk), target)
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        score = accuracy(model, dev) if dev else 0.0
        model.history.append({"epoch": epoch, "loss": total / len(data), "dev_micro_f1": score})
        log.info("tc epoch %d loss %.4f dev micro-F1 %.4f", epoch, total / len(data), score)
        if score > best:
            best, best_state, stale = score, snapshot(*model.modules()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    restore(model.modules(), best_state)
    return model.eval()


@dataclass
class Ensemble:
    members: list[TcModel]

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        vocabs = {m.vocab.surfaces for m in self.members}
        if len(vocabs) != 1:
            raise ValueError("ensemble members must share one vocabulary")

    def __len__(self) -> int:
        return len(self.members)


def build_ensemble(
    checkpoints: Sequence[Checkpoint],
    train: Sequence[ClassifiedSample],
    dev: Sequence[ClassifiedSample],
    cfg: TrainConfig,
    vocab: Vocabulary,
    tokenizer: Tokenizer | None = None,
) -> Ensemble:
    """Fine-tune one member per checkpoint on identical data; member ``i``
    uses seed ``cfg.seed + i``."""
    if len(checkpoints) < 2:
        raise ValueError(f"an ensemble needs at least 2 checkpoints, got {len(checkpoints)}")
    fractions = [ck.step_fraction for ck in checkpoints]
    if len(set(fractions)) != len(fractions):
        warnings.warn(f"duplicate checkpoint step fractions {fractions}", stacklevel=2)
    members = [
        train_tc(train, dev, dataclasses.replace(cfg, seed=cfg.seed + i), ck, vocab, tokenizer)
        for i, ck in enumerate(checkpoints)
    ]
    return Ensemble(members)


def ensemble_vote(member_probs) -> tuple[int, np.ndarray]:
    """Majority vote over member argmaxes.

    Vote ties go to the class with the largest summed probability, then to
    the lowest class index.  Each member vector is renormalized first; the
    returned aggregate is the mean of the renormalized vectors.
    """
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] != NUM_TECHNIQUES:
        raise ValueError(f"expected K x {NUM_TECHNIQUES} member probabilities, got shape {probs.shape}")
    probs = probs / probs.sum(axis=1, keepdims=True)
    votes = np.bincount(probs.argmax(axis=1), minlength=NUM_TECHNIQUES)
    sums = probs.sum(axis=0)
    tied = np.flatnonzero(votes == votes.max())
    best = tied[np.argmax(sums[tied])]  # argmax keeps the lowest index on equal sums
    return int(best), sums / probs.shape[0]


@dataclass(frozen=True)
class TcPrediction:
    article_id: int
    span: Span
    member_probs: np.ndarray  # (K, 14)
    technique: Technique
    aggregate: np.ndarray  # (14,)


def predict_tc(
    model: TcModel | Ensemble, samples: Sequence[ClassifiedSample]
) -> list[TcPrediction]:
    members = model.members if isinstance(model, Ensemble) else [model]
    per_member = np.stack([m.predict_proba(samples) for m in members], axis=1) if samples else np.zeros((0, len(members), NUM_TECHNIQUES))
    out = []
    for s, probs in zip(samples, per_member):
        technique, aggregate = ensemble_vote(probs)
        out.append(TcPrediction(s.article_id, s.span, probs, Technique(technique), aggregate))
    return out


def resolve_overlaps(preds: Sequence[TcPrediction]) -> list[TcLabel]:
    """Stop overlapping spans from sharing a technique.

    Predictions are settled in order of confidence in their own technique.
    Each takes the first entry of its ranking (voted technique, then the rest
    by aggregate probability) not already held by an overlapping, settled
    prediction.  If every technique is taken the voted one is kept.  Output
    follows input order.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].aggregate[preds[i].technique], i))
    settled: dict[int, Technique] = {}
    for i in order:
        p = preds[i]
        taken = {
            settled[j] for j in settled
            if preds[j].article_id == p.article_id and preds[j].span.overlaps(p.span)
        }
        ranking = [int(p.technique)] + [
            int(c) for c in np.argsort(-p.aggregate, kind="stable") if c != p.technique
        ]
        choice = next((c for c in ranking if Technique(c) not in taken), int(p.technique))
        settled[i] = Technique(choice)
    return [TcLabel(p.article_id, settled[i], p.span) for i, p in enumerate(preds)]
