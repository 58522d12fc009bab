"""Span identification: segment, encode, tag with a CRF, rebuild char spans."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..corpus import Article, SiLabel, Span, group_by_article, undersample_negatives
from ..metrics import si_score
from ..neural.checkpoint import (
    Checkpoint, CheckpointError, init_checkpoint, load_numpy_state, pack, state_to_numpy, unpack,
)
from ..neural.encoder import Encoder, EncoderConfig, pad_batch
from ..neural.heads import CrfLayer, SiHead
from ..neural.optim import SI_LR, RAdam
from ..segmenter import (
    RuleTokenizer, Segment, Tokenizer, Vocabulary, merge_spans, project_labels, reconstruct_spans,
    split_paragraphs, split_sentences,
)
from .common import TrainConfig, batches, epoch_seed, restore, snapshot

log = logging.getLogger(__name__)


def segment_article(article: Article, tok: Tokenizer, strategy: str, max_tokens: int) -> list[Segment]:
    if strategy == "paragraph":
        return split_paragraphs(article, tok, max_tokens)
    if strategy == "sentence":
        return split_sentences(article, tok, max_tokens)
    raise ValueError(f"unknown split strategy {strategy!r}")


@dataclass
class SiModel:
    encoder: Encoder
    head: SiHead
    crf: CrfLayer
    vocab: Vocabulary
    split_strategy: str
    tokenizer: Tokenizer = field(default_factory=RuleTokenizer)
    history: list[dict] = field(default_factory=list)

    @property
    def max_tokens(self) -> int:
        return min(128, self.encoder.cfg.max_tokens)

    def modules(self):
        return self.encoder, self.head, self.crf

    def eval(self) -> "SiModel":
        for m in self.modules():
            m.eval()
        return self

    def emissions(self, segments: Sequence[Segment]) -> tuple[torch.Tensor, list[int]]:
        ids, mask = pad_batch([self.vocab.encode(s.tokens) for s in segments])
        features = self.encoder(ids, mask)
        lengths = [len(s) for s in segments]
        return self.head(features[:, 1 : 1 + max(lengths)]), lengths

    def segments(self, article: Article) -> list[Segment]:
        return segment_article(article, self.tokenizer, self.split_strategy, self.max_tokens)

    def to_bytes(self) -> bytes:
        tensors = {}
        for prefix, m in (("encoder.", self.encoder), ("head.", self.head), ("crf.", self.crf)):
            tensors.update(state_to_numpy(m, prefix))
        meta = {
            "kind": "si_model",
            "config": self.encoder.cfg.to_dict(),
            "split_strategy": self.split_strategy,
            "vocab": list(self.vocab.surfaces),
        }
        return pack(meta, tensors)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SiModel":
        meta, tensors = unpack(data)
        if meta.get("kind") != "si_model":
            raise CheckpointError(f"expected an SI model, found {meta.get('kind')!r}")
        cfg = EncoderConfig.from_dict(meta["config"])
        model = cls(Encoder(cfg), SiHead(cfg.hidden_dim), CrfLayer(), Vocabulary(tuple(meta["vocab"])), meta["split_strategy"])
        for prefix, m in (("encoder.", model.encoder), ("head.", model.head), ("crf.", model.crf)):
            load_numpy_state(m, tensors, prefix)
        return model.eval()


def _labels_for(segments: Sequence[Segment], spans: Sequence[Span]) -> list[list[int]]:
    return [project_labels(s, spans) for s in segments]


def predict_segments(model: SiModel, segments: Sequence[Segment], batch_size: int = 32) -> list[list[int]]:
    model.eval()
    out: list[list[int]] = []
    with torch.no_grad():
        for chunk in batches(list(segments), batch_size):
            e, lengths = model.emissions(chunk)
            out.extend(model.crf.decode(e, lengths))
    return out


def predict_si(model: SiModel, article: Article) -> list[SiLabel]:
    """Article-absolute spans, sorted and non-overlapping.  Runs that were cut
    apart by segmentation are rejoined when only non-alphanumeric characters
    separate them."""
    segments = model.segments(article)
    if not segments:
        return []
    spans: list[Span] = []
    for seg, labels in zip(segments, predict_segments(model, segments)):
        spans.extend(reconstruct_spans(seg, labels))
    return [SiLabel(article.id, s) for s in merge_spans(spans, article.text)]


def predict_si_many(model: SiModel, articles: Sequence[Article]) -> list[SiLabel]:
    out = []
    for article in articles:
        out.extend(predict_si(model, article))
    return out


def build_model(
    cfg: TrainConfig, train_articles: Sequence[Article], init: Checkpoint | None, vocab: Vocabulary | None,
    tokenizer: Tokenizer,
) -> SiModel:
    if vocab is None:
        vocab = Vocabulary.build((a.text for a in train_articles), tokenizer, cfg.vocab_size)
    if init is None:
        enc_cfg = cfg.encoder or EncoderConfig(vocab_size=len(vocab))
        init = init_checkpoint(enc_cfg, cfg.seed, vocab.surfaces)
    if init.config.vocab_size != len(vocab):
        raise ValueError(f"checkpoint vocab_size {init.config.vocab_size} != vocabulary size {len(vocab)}")
    encoder = init.build()
    torch.manual_seed(cfg.seed)
    return SiModel(encoder, SiHead(init.config.hidden_dim), CrfLayer(), vocab, cfg.split_strategy, tokenizer)


def train_si(
    train_articles: Sequence[Article],
    train_labels: Sequence[SiLabel],
    dev_articles: Sequence[Article],
    dev_labels: Sequence[SiLabel],
    cfg: TrainConfig,
    init: Checkpoint | None = None,
    vocab: Vocabulary | None = None,
    tokenizer: Tokenizer | None = None,
) -> SiModel:
    """Fine-tune encoder + dense head + CRF on token labels projected from
    gold spans; returns the epoch with the best dev span F1."""
    if not train_articles:
        raise ValueError("empty training set")
    tokenizer = tokenizer or RuleTokenizer()
    model = build_model(cfg, train_articles, init, vocab, tokenizer)
    gold = group_by_article(train_labels)
    examples = []
    for article in train_articles:
        spans = [l.span for l in gold.get(article.id, ())]
        segments = model.segments(article)
        for seg, labels in zip(segments, _labels_for(segments, spans)):
            examples.append(((seg, labels), any(labels)))
    if not any(pos for _, pos in examples):
        raise ValueError("no training segment contains a propaganda span")

    params = [(f"head.{n}", p) for n, p in model.head.named_parameters()]
    params += [(f"crf.{n}", p) for n, p in model.crf.named_parameters()]
    if cfg.freeze_encoder:
        model.encoder.requires_grad_(False)
    else:
        params += [(f"encoder.{n}", p) for n, p in model.encoder.named_parameters()]
    opt = RAdam(params, lr=cfg.lr or SI_LR, warmup_steps=cfg.warmup_steps)

    best_f1, best_state, stale = -1.0, None, 0
    for epoch in range(cfg.epochs):
        seed = epoch_seed(cfg.seed, epoch)
        if cfg.undersample:
            chosen = undersample_negatives(examples, seed)
        else:
            chosen = [examples[i] for i in np.random.default_rng(seed).permutation(len(examples))]
        torch.manual_seed(seed)
        for m in model.modules():
            m.train()
        if cfg.freeze_encoder:
            model.encoder.eval()
        total = 0.0
        for chunk in batches([ex for ex, _ in chosen], cfg.batch_size):
            segs = [s for s, _ in chunk]
            e, lengths = model.emissions(segs)
            tags = np.zeros((len(chunk), e.shape[1]), dtype=np.int64)
            for b, (_, labels) in enumerate(chunk):
                tags[b, : len(labels)] = labels
            opt.zero_grad()
            loss = model.crf.nll(e, lengths, tags) / len(chunk)
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        f1 = si_score(predict_si_many(model, dev_articles), dev_labels).f1 if dev_articles else 0.0
        model.history.append({"epoch": epoch, "loss": total / max(1, len(chosen)), "dev_f1": f1})
        log.info("si epoch %d loss %.4f dev F1 %.4f", epoch, total / max(1, len(chosen)), f1)
        if f1 > best_f1:
            best_f1, best_state, stale = f1, snapshot(*model.modules()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    restore(model.modules(), best_state)
    return model.eval()
