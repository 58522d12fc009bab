"""Seeded synthetic corpus with exactly recoverable labels.

Articles are made of filler words.  Some sentences carry a run of 2-5
lexicon words; each run contains exactly one technique trigger word and is
one gold span.  Runs never touch a sentence boundary, so rejoining runs over
punctuation never merges two gold spans.  Technique frequencies follow the
span counts of the real training set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    NUM_TECHNIQUES, Article, SiLabel, Span, TcLabel, Technique, emit_si_predictions, emit_tc_predictions,
)

# spans per technique in the shared-task training set, in Technique order
TRAINING_SPAN_COUNTS = (144, 294, 72, 107, 209, 493, 466, 229, 2123, 1058, 621, 129, 76, 108)

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


def _words(rng: np.random.Generator, n: int, syllables: tuple[int, int], taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(k))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass(frozen=True)
class SynthConfig:
    n_articles: int = 200
    seed: int = 2020
    filler_size: int = 400
    lexicon_size: int = 40
    span_rate: float = 0.3  # chance that a sentence carries a span
    first_id: int = 1000


@dataclass
class SynthCorpus:
    articles: list[Article]
    si_labels: list[SiLabel]
    tc_labels: list[TcLabel]
    triggers: dict[Technique, str]
    lexicon: list[str]
    filler: list[str]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "articles").mkdir(parents=True, exist_ok=True)
        for a in self.articles:
            (out / "articles" / f"article{a.id}.txt").write_bytes(a.text.encode("utf-8"))
        (out / "labels-si.tsv").write_text(emit_si_predictions(self.si_labels), encoding="utf-8")
        (out / "labels-tc.tsv").write_text(emit_tc_predictions(self.tc_labels), encoding="utf-8")
        (out / "triggers.tsv").write_text(
            "".join(f"{t.label}\t{w}\n" for t, w in self.triggers.items()), encoding="utf-8"
        )


def generate(cfg: SynthConfig = SynthConfig()) -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)
    taken: set[str] = set()
    filler = _words(rng, cfg.filler_size, (1, 3), taken)
    lexicon = _words(rng, cfg.lexicon_size, (3, 4), taken)
    triggers = dict(zip(Technique, _words(rng, NUM_TECHNIQUES, (4, 4), taken)))
    weights = np.asarray(TRAINING_SPAN_COUNTS, dtype=float)
    weights /= weights.sum()

    articles, si, tc = [], [], []
    for k in range(cfg.n_articles):
        aid = cfg.first_id + k
        text = ""
        spans: list[tuple[Span, Technique]] = []
        n_par = int(rng.integers(2, 6))
        for p in range(n_par):
            if p:
                text += "\n\n" if rng.random() < 0.8 else "\n"
            # now and then a paragraph long enough to need cutting
            n_sent = int(rng.integers(8, 14)) if rng.random() < 0.1 else int(rng.integers(1, 5))
            for s in range(n_sent):
                if s:
                    text += " "
                words = [str(w) for w in rng.choice(filler, size=int(rng.integers(4, 12)))]
                run = None
                if rng.random() < cfg.span_rate:
                    technique = Technique(int(rng.choice(NUM_TECHNIQUES, p=weights)))
                    run = [str(w) for w in rng.choice(lexicon, size=int(rng.integers(1, 5)))]
                    run.insert(int(rng.integers(0, len(run) + 1)), triggers[technique])
                    at = int(rng.integers(1, len(words)))
                    words = words[:at] + [None] + words[at:]
                words_text = []
                for i, w in enumerate(words):
                    if w is None:
                        start = len(text) + len(" ".join(words_text)) + (1 if words_text else 0)
                        chunk = " ".join(run)
                        spans.append((Span(start, start + len(chunk)), technique))
                        words_text.append(chunk)
                    else:
                        if i == 0:
                            w = w.capitalize()
                        # occasional comma between filler words
                        if i + 1 < len(words) and words[i + 1] is not None and w is not None and rng.random() < 0.08:
                            w += ","
                        words_text.append(w)
                text += " ".join(words_text) + str(rng.choice([".", ".", ".", "!", "?"]))
        article = Article(aid, text)
        articles.append(article)
        for span, technique in spans:
            si.append(SiLabel(aid, span))
            tc.append(TcLabel(aid, technique, span))
    return SynthCorpus(articles, si, tc, triggers, lexicon, filler)


# Experiment settings that fit the synthetic corpus on one CPU core.  The
# TC learning rate is raised from the pre-trained-encoder default because
# fine-tuning here starts from random or briefly pre-trained weights.
_EXPERIMENT_TEMPLATE = """\
# Desk-scale experiment on the synthetic corpus written by `propdetect synth`.
# Relative paths resolve against this file's directory.
seed: 13
split_strategy: paragraph
vocab_size: 2000
data:
  articles_dir: {prefix}articles
  si_labels: {prefix}labels-si.tsv
  tc_labels: {prefix}labels-tc.tsv
encoder:
  kind: transformer
  hidden_dim: 64
  layers: 2
  heads: 2
  max_seq_len: 130
  dropout: 0.1
pretrain:
  total_steps: 2000
  checkpoint_fractions: [0.175, 0.4, 0.6, 0.75, 1.0]
  batch_size: 8
  window: 64
  lr: 1.0e-4
train:
  epochs: 10
  batch_size: 16
  patience: 3
  lr_si: 1.0e-3
  lr_tc: 1.0e-3
  undersample: true
  oversample: true
  freeze_encoder: false
  init_checkpoint: none
ensemble:
  enabled: false
  fractions: null
"""


def experiment_yaml(data_prefix: str = "") -> str:
    """The synthetic experiment config; ``data_prefix`` is prepended to the
    corpus paths (e.g. ``"../data/synth/"`` for a config kept elsewhere)."""
    return _EXPERIMENT_TEMPLATE.replace("{prefix}", data_prefix)
