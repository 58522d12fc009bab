"""Offset-exact tokenization, article splitting and span/token label projection."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Article, ClassifiedSample, Span, TcLabel

DEFAULT_MAX_TOKENS = 128
SENTENCE_TERMINATORS = frozenset(".!?")
NEWLINES = frozenset("\n\r")

PAD, UNK, MASK, BOS, EOS = 0, 1, 2, 3, 4
SPECIAL_SURFACES = ("[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]")
VOCAB_HEADER = "#vocab pad=0 unk=1 mask=2 bos=3 eos=4"


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int

    @property
    def is_word(self) -> bool:
        return any(ch.isalnum() for ch in self.surface)

    @property
    def is_punct(self) -> bool:
        return self.end - self.start == 1 and not self.surface.isalnum()


@dataclass(frozen=True)
class Segment:
    article_id: int
    start: int
    end: int
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[Token]: ...


class RuleTokenizer:
    """Letter/digit runs become lowercased word tokens; every other visible
    character is a token on its own; whitespace is dropped."""

    def tokenize(self, text: str) -> list[Token]:
        tokens = []
        i, n = 0, len(text)
        while i < n:
            ch = text[i]
            if ch.isspace():
                i += 1
            elif ch.isalnum():
                j = i + 1
                while j < n and text[j].isalnum():
                    j += 1
                tokens.append(Token(text[i:j].lower(), i, j))
                i = j
            else:
                tokens.append(Token(ch, i, i + 1))
                i += 1
        return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Surface to id mapping with ids 0..4 reserved for pad/unk/mask/bos/eos."""

    surfaces: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.surfaces[: len(SPECIAL_SURFACES)]) != SPECIAL_SURFACES:
            raise ValueError("vocabulary must start with the reserved special entries")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.surfaces)})

    @classmethod
    def build(cls, texts: Iterable[str], tokenizer: Tokenizer, size: int = 2000) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(t.surface for t in tokenizer.tokenize(text))
        for special in SPECIAL_SURFACES:
            counts.pop(special, None)
        keep = max(0, size - len(SPECIAL_SURFACES))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:keep]
        return cls(SPECIAL_SURFACES + tuple(s for s, _ in ranked))

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def n_special(self) -> int:
        return len(SPECIAL_SURFACES)

    def encode(self, tokens: Sequence[Token]) -> list[int]:
        return [self.index.get(t.surface, UNK) for t in tokens]

    def dumps(self) -> str:
        return VOCAB_HEADER + "\n" + "".join(s + "\n" for s in self.surfaces)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if not lines or lines[0] != VOCAB_HEADER:
            raise ValueError(f"vocabulary file must start with {VOCAB_HEADER!r}")
        body = lines[1:]
        if body and body[-1] == "":
            body = body[:-1]
        return cls(tuple(body))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def tokenize(text: str) -> list[Token]:
    return RuleTokenizer().tokenize(text)


def _make_segment(article_id: int, tokens: Sequence[Token]) -> Segment:
    return Segment(article_id, tokens[0].start, tokens[-1].end, tuple(tokens))


def cut_long(tokens: Sequence[Token], max_tokens: int) -> list[list[Token]]:
    """Cut ``tokens`` into pieces of at most ``max_tokens``.

    Each cut falls right after the last punctuation token within the first
    ``max_tokens`` positions, or exactly at ``max_tokens`` when there is none.
    """
    if max_tokens < 2:
        raise ValueError("max_tokens must be at least 2")
    pieces = []
    rest = list(tokens)
    while len(rest) > max_tokens:
        cut = max_tokens
        for i in range(max_tokens - 1, -1, -1):
            if rest[i].is_punct:
                cut = i + 1
                break
        pieces.append(rest[:cut])
        rest = rest[cut:]
    if rest:
        pieces.append(rest)
    return pieces


def _has_newline(text: str, start: int, end: int) -> bool:
    return any(ch in NEWLINES for ch in text[start:end])


def _group(article: Article, tokens: list[Token], breaks_after) -> list[list[Token]]:
    groups: list[list[Token]] = []
    current: list[Token] = []
    for i, token in enumerate(tokens):
        if current and _has_newline(article.text, current[-1].end, token.start):
            groups.append(current)
            current = []
        current.append(token)
        if breaks_after(i, token):
            groups.append(current)
            current = []
    if current:
        groups.append(current)
    return groups


def split_paragraphs(article: Article, tok: Tokenizer, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Segment]:
    if max_tokens < 2:
        raise ValueError("max_tokens must be at least 2")
    tokens = tok.tokenize(article.text)
    paragraphs = _group(article, tokens, lambda i, t: False)
    return [
        _make_segment(article.id, piece)
        for para in paragraphs
        for piece in cut_long(para, max_tokens)
    ]


def split_sentences(article: Article, tok: Tokenizer, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Segment]:
    """Sentence segments; a terminator (``.!?``) ends a sentence when followed
    by whitespace or the end of the text.  There is no abbreviation list, so
    "e.g. x" yields two sentences."""
    text = article.text
    tokens = tok.tokenize(text)

    def ends_sentence(i: int, token: Token) -> bool:
        if token.end - token.start != 1 or text[token.start] not in SENTENCE_TERMINATORS:
            return False
        return token.end == len(text) or text[token.end].isspace()

    sentences = _group(article, tokens, ends_sentence)
    return [
        _make_segment(article.id, piece)
        for sent in sentences
        for piece in cut_long(sent, max_tokens)
    ]


class SpanBoundsError(ValueError):
    pass


def extract_exact_spans(article: Article, labels: Iterable[TcLabel]) -> list[ClassifiedSample]:
    samples = []
    for label in labels:
        if label.article_id != article.id or label.span.end > len(article.text):
            raise SpanBoundsError(
                f"label {label.article_id}:{label.technique.label}:[{label.span.start}, {label.span.end}) "
                f"does not fit article {article.id} of length {len(article.text)}"
            )
        samples.append(
            ClassifiedSample(
                label.article_id,
                label.span,
                article.text[label.span.start : label.span.end],
                label.technique,
            )
        )
    return samples


def project_labels(segment: Segment, gold: Iterable[Span]) -> list[int]:
    gold = sorted(gold)
    labels = []
    for token in segment.tokens:
        hit = any(s.start < token.end and token.start < s.end for s in gold)
        labels.append(int(hit))
    return labels


def reconstruct_spans(segment: Segment, labels: Sequence[int]) -> list[Span]:
    if len(labels) != len(segment.tokens):
        raise ValueError(f"{len(labels)} labels for a segment of {len(segment.tokens)} tokens")
    runs: list[list[int]] = []
    for i, lab in enumerate(labels):
        if lab:
            if runs and runs[-1][1] == i - 1:
                runs[-1][1] = i
            else:
                runs.append([i, i])
    merged: list[list[int]] = []
    for run in runs:
        if merged and not any(t.is_word for t in segment.tokens[merged[-1][1] + 1 : run[0]]):
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    return [Span(segment.tokens[a].start, segment.tokens[b].end) for a, b in merged]


def merge_spans(spans: Iterable[Span], text: str) -> list[Span]:
    """Sort spans and join those that overlap or are separated only by
    characters that are neither letters nor digits."""
    out: list[Span] = []
    for span in sorted(spans):
        if out:
            last = out[-1]
            gap = text[last.end : span.start]
            if span.start <= last.end or not any(ch.isalnum() for ch in gap):
                out[-1] = Span(last.start, max(last.end, span.end))
                continue
        out.append(span)
    return out
