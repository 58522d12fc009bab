"""Toy-scale encoders producing per-token features: a post-LN transformer
stack and a bidirectional LSTM baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..segmenter import BOS, EOS, PAD

DTYPE = torch.float64


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 2
    max_seq_len: int = 130
    encoder_kind: str = "transformer"
    dropout: float = 0.1
    ffn_dim: int | None = None
    embedding_dim: int | None = None
    embedding_file: str | None = None

    def __post_init__(self):
        if self.encoder_kind not in ("transformer", "bilstm"):
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.encoder_kind == "transformer" and self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        if self.max_seq_len < 3:
            raise ValueError("max_seq_len must leave room for two special positions")

    @property
    def max_tokens(self) -> int:
        """Real tokens that fit next to the two special positions."""
        return self.max_seq_len - 2

    @property
    def emb_dim(self) -> int:
        return self.embedding_dim or self.hidden_dim

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    @classmethod
    def bert_base(cls, vocab_size: int = 30522) -> "EncoderConfig":
        return cls(vocab_size=vocab_size, hidden_dim=768, layers=12, heads=12, max_seq_len=128)


def load_embedding_file(path: str | Path, surfaces, dim: int, seed: int = 0) -> np.ndarray:
    """Read ``surface v1 ... vn`` lines into a table aligned with ``surfaces``.

    Surfaces absent from the file get a seeded random vector; row 0 (pad)
    stays zero.
    """
    found: dict[str, np.ndarray] = {}
    wanted = set(surfaces)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(f"{path}:{line_no}: expected {dim} values, found {len(parts) - 1}")
            if parts[0] in wanted:
                found[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 0.1, size=(len(surfaces), dim))
    for i, s in enumerate(surfaces):
        if s in found:
            table[i] = found[s]
    table[PAD] = 0.0
    return table


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=0.02)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        B, T, d = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(B, T, 3, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = (self.drop(weights) @ v).transpose(1, 2).reshape(B, T, d)
        return self.out(ctx), weights


class TransformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.attn = SelfAttention(d, cfg.heads, cfg.dropout)
        self.ln1 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, cfg.ffn)
        self.ff2 = nn.Linear(cfg.ffn, d)
        self.ln2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        a, weights = self.attn(x, key_mask)
        x = self.ln1(x + self.drop(a))
        x = self.ln2(x + self.drop(self.ff2(F.gelu(self.ff1(x)))))
        return x, weights


class Encoder(nn.Module):
    """Maps padded id batches ``(B, T)`` to features ``(B, T, hidden_dim)``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.emb_dim)
        self.proj = nn.Linear(cfg.emb_dim, cfg.hidden_dim) if cfg.emb_dim != cfg.hidden_dim else None
        if cfg.encoder_kind == "transformer":
            self.pos = nn.Embedding(cfg.max_seq_len, cfg.hidden_dim)
            self.ln = nn.LayerNorm(cfg.hidden_dim)
            self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.layers))
        else:
            self.lstm = nn.LSTM(
                cfg.hidden_dim, cfg.hidden_dim, num_layers=cfg.layers,
                bidirectional=True, batch_first=True,
                dropout=cfg.dropout if cfg.layers > 1 else 0.0,
            )
            self.merge = nn.Linear(2 * cfg.hidden_dim, cfg.hidden_dim)
        self.drop = nn.Dropout(cfg.dropout)
        _init_weights(self)
        self.to(DTYPE)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor | None = None, return_attention: bool = False):
        if mask is None:
            mask = ids != PAD
        if ids.shape[1] > self.cfg.max_seq_len:
            raise ValueError(f"sequence of {ids.shape[1]} positions exceeds max_seq_len {self.cfg.max_seq_len}")
        x = self.embed(ids)
        if self.proj is not None:
            x = self.proj(x)
        attentions = []
        if self.cfg.encoder_kind == "transformer":
            positions = torch.arange(ids.shape[1], device=ids.device)
            x = self.drop(self.ln(x + self.pos(positions)[None]))
            for block in self.blocks:
                x, w = block(x, mask)
                attentions.append(w)
        else:
            lengths = mask.sum(dim=1).cpu()
            packed = nn.utils.rnn.pack_padded_sequence(self.drop(x), lengths, batch_first=True, enforce_sorted=False)
            out, _ = self.lstm(packed)
            out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
            x = self.merge(self.drop(out))
        x = x * mask[:, :, None]
        return (x, attentions) if return_attention else x


def with_specials(token_ids) -> list[int]:
    return [BOS, *token_ids, EOS]


def pad_batch(sequences) -> tuple[torch.Tensor, torch.Tensor]:
    """Wrap each id list in BOS/EOS and right-pad; returns ``(ids, mask)``."""
    wrapped = [with_specials(s) for s in sequences]
    width = max(len(s) for s in wrapped)
    ids = torch.full((len(wrapped), width), PAD, dtype=torch.long)
    for i, s in enumerate(wrapped):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return ids, ids != PAD
