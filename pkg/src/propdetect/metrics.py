"""Scoring for both subtasks.

SI credits every (prediction, gold) pair in the same article with
``|s & t| / |s|`` towards precision and ``|s & t| / |t|`` towards recall,
pooled over articles.  No one-to-one matching is done, so a long prediction
covering several gold spans can collect more than one unit of credit.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import NUM_TECHNIQUES, SiLabel, TcLabel, Technique, group_by_article


@dataclass(frozen=True)
class SiScore:
    precision: float
    recall: float
    f1: float


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def si_score(pred: Iterable[SiLabel], gold: Iterable[SiLabel]) -> SiScore:
    pred, gold = list(pred), list(gold)
    for label in pred + gold:
        if label.span.start < 0 or label.span.start >= label.span.end:
            raise ValueError(f"invalid span {label.span}")
    if not pred and not gold:
        return SiScore(1.0, 1.0, 1.0)
    gold_by_article = group_by_article(gold)
    prec_terms, rec_terms = [], []
    for article_id, preds in group_by_article(pred).items():
        for s in preds:
            for t in gold_by_article.get(article_id, ()):
                inter = s.span.overlap(t.span)
                if inter:
                    prec_terms.append(inter / len(s.span))
                    rec_terms.append(inter / len(t.span))
    # fsum is exactly rounded, so the result does not depend on pair order
    # and P(S, T) == R(T, S) holds bit for bit
    p = math.fsum(prec_terms) / len(pred) if pred else 0.0
    r = math.fsum(rec_terms) / len(gold) if gold else 0.0
    return SiScore(p, r, f1_score(p, r))


class KeyMismatchError(ValueError):
    pass


def _aligned(pred: Sequence[TcLabel], gold: Sequence[TcLabel], strict: bool = True):
    """Group techniques by (article, span) and check both sides cover the same
    keys with the same multiplicity.  With ``strict=False`` a mismatch is not
    an error: keys present on one side only pair with an empty counter."""
    p_by_key: dict = defaultdict(list)
    g_by_key: dict = defaultdict(list)
    for l in pred:
        p_by_key[(l.article_id, l.span.start, l.span.end)].append(l.technique)
    for l in gold:
        g_by_key[(l.article_id, l.span.start, l.span.end)].append(l.technique)
    bad = sorted(
        k for k in set(p_by_key) | set(g_by_key) if len(p_by_key.get(k, ())) != len(g_by_key.get(k, ()))
    )
    if bad and strict:
        shown = ", ".join(f"{a}:[{s},{e})" for a, s, e in bad[:10])
        raise KeyMismatchError(f"{len(bad)} span keys differ between prediction and gold: {shown}")
    keys = sorted(set(p_by_key) | set(g_by_key))
    return [(Counter(p_by_key.get(k, ())), Counter(g_by_key.get(k, ()))) for k in keys]


@dataclass(frozen=True)
class ClassReport:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    predicted: tuple[int, ...]
    micro_f1: float

    def rows(self):
        for t in Technique:
            yield t, self.f1[t], self.support[t]


def per_class_report(pred: Sequence[TcLabel], gold: Sequence[TcLabel], allow_missing: bool = False) -> ClassReport:
    """Per-technique precision, recall and F1; ``support`` counts gold spans.

    ``allow_missing=True`` scores partial prediction files: a gold span with
    no prediction counts as a miss and a prediction on a non-gold span as a
    false positive, instead of raising :class:`KeyMismatchError`.
    """
    tp = [0] * NUM_TECHNIQUES
    n_pred = [0] * NUM_TECHNIQUES
    n_gold = [0] * NUM_TECHNIQUES
    for p_counts, g_counts in _aligned(pred, gold, strict=not allow_missing):
        for t, n in p_counts.items():
            n_pred[t] += n
        for t, n in g_counts.items():
            n_gold[t] += n
        for t, n in (p_counts & g_counts).items():
            tp[t] += n
    precision, recall, f1 = [], [], []
    for c in range(NUM_TECHNIQUES):
        p = tp[c] / n_pred[c] if n_pred[c] else 0.0
        r = tp[c] / n_gold[c] if n_gold[c] else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f1_score(p, r))
    total_pred, total_gold = sum(n_pred), sum(n_gold)
    micro_p = sum(tp) / total_pred if total_pred else 0.0
    micro_r = sum(tp) / total_gold if total_gold else 0.0
    return ClassReport(
        tuple(precision), tuple(recall), tuple(f1), tuple(n_gold), tuple(n_pred), f1_score(micro_p, micro_r)
    )


def tc_micro_f1(pred: Sequence[TcLabel], gold: Sequence[TcLabel]) -> float:
    """Micro-F1 over the 14 classes; with one label per span this is accuracy."""
    correct = total = 0
    for p_counts, g_counts in _aligned(pred, gold):
        correct += sum((p_counts & g_counts).values())
        total += sum(g_counts.values())
    return correct / total if total else 0.0


def format_si(score: SiScore) -> str:
    return (
        f"precision={100 * score.precision:.3f}\n"
        f"recall={100 * score.recall:.3f}\n"
        f"f1={100 * score.f1:.3f}\n"
    )


def format_report(report: ClassReport) -> str:
    """Per-technique F1 and support table in the fixed technique order."""
    width = max(len(t.label) for t in Technique)
    lines = [f"{'Technique':<{width}}  {'Support':>7}  {'F1 (%)':>7}", "-" * (width + 18)]
    for t, f1, support in report.rows():
        lines.append(f"{t.label:<{width}}  {support:>7}  {100 * f1:>7.2f}")
    lines.append("-" * (width + 18))
    lines.append(f"{'micro-F1':<{width}}  {sum(report.support):>7}  {100 * report.micro_f1:>7.2f}")
    return "\n".join(lines) + "\n"
