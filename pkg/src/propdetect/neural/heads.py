"""Task heads: SI emissions + CRF, TC pooled funnel + softmax."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .. import crf
from ..corpus import NUM_TECHNIQUES
from .encoder import DTYPE


class SiHead(nn.Module):
    """Dense d->d with GELU, then d->2 per-token label scores."""

    def __init__(self, d: int, num_labels: int = 2):
        super().__init__()
        self.hidden = nn.Linear(d, d)
        self.out = nn.Linear(d, num_labels)
        for layer in (self.hidden, self.out):
            nn.init.normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)
        self.to(DTYPE)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.out(F.gelu(self.hidden(features)))


def funnel_sizes(d: int) -> tuple[int, int, int]:
    return d, round(d / 3), NUM_TECHNIQUES


class TcHead(nn.Module):
    """Mean-pool real positions, then a d -> d/3 -> 14 funnel and softmax."""

    def __init__(self, d: int):
        super().__init__()
        _, mid, out = funnel_sizes(d)
        self.hidden = nn.Linear(d, mid)
        self.out = nn.Linear(mid, out)
        for layer in (self.hidden, self.out):
            nn.init.normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)
        self.to(DTYPE)

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return self.hidden.in_features, self.hidden.out_features, self.out.out_features

    def logits(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        weights = mask.to(features.dtype)[:, :, None]
        pooled = (features * weights).sum(dim=1) / weights.sum(dim=1).clamp_min(1.0)
        return self.out(F.gelu(self.hidden(pooled)))

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(features, mask), dim=-1)


class _CrfNll(torch.autograd.Function):
    @staticmethod
    def forward(ctx, emissions, transitions, start, end, lengths, tags):
        params = crf.CrfParams(
            transitions.detach().cpu().numpy(), start.detach().cpu().numpy(), end.detach().cpu().numpy()
        )
        nll, grads = crf.batch_nll_and_grad(emissions.detach().cpu().numpy(), lengths, params, tags)
        as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).to(emissions.dtype)
        ctx.save_for_backward(
            as_t(grads.emissions), as_t(grads.transitions), as_t(grads.start_scores), as_t(grads.end_scores)
        )
        return emissions.new_tensor(nll.sum())

    @staticmethod
    def backward(ctx, grad_out):
        g_e, g_t, g_s, g_end = ctx.saved_tensors
        return g_e * grad_out, g_t * grad_out, g_s * grad_out, g_end * grad_out, None, None


class CrfLayer(nn.Module):
    def __init__(self, num_labels: int = 2):
        super().__init__()
        self.transitions = nn.Parameter(torch.zeros(num_labels, num_labels, dtype=DTYPE))
        self.start_scores = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))
        self.end_scores = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))

    def params(self) -> crf.CrfParams:
        return crf.CrfParams(
            self.transitions.detach().cpu().numpy().copy(),
            self.start_scores.detach().cpu().numpy().copy(),
            self.end_scores.detach().cpu().numpy().copy(),
        )

    def nll(self, emissions: torch.Tensor, lengths, tags) -> torch.Tensor:
        """Summed negative log-likelihood of ``tags`` over the batch."""
        return _CrfNll.apply(
            emissions, self.transitions, self.start_scores, self.end_scores,
            np.asarray(lengths, dtype=np.int64), np.asarray(tags, dtype=np.int64),
        )

    def decode(self, emissions: torch.Tensor, lengths) -> list[list[int]]:
        params = self.params()
        e = emissions.detach().cpu().numpy()
        return [crf.viterbi(e[b, :n], params) for b, n in enumerate(lengths)]
