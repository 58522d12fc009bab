"""Shared-task file formats, annotation data model, splitting and rebalancing."""

from __future__ import annotations

import enum
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TypeVar

import numpy as np

ARTICLE_NAME_RE = re.compile(r"^article(\d+)\.txt$")

# dev share of the labeled training articles: 74 of 371
DEV_NUMERATOR = 74
DEV_DENOMINATOR = 371

T = TypeVar("T")


class FormatError(ValueError):
    """A file name or file body does not follow the shared-task layout."""


class LabelParseError(FormatError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ArticleDecodeError(FormatError):
    def __init__(self, file_name: str, position: int, reason: str):
        super().__init__(f"{file_name}: invalid UTF-8 at byte {position} ({reason})")
        self.file_name = file_name
        self.position = position


TECHNIQUE_NAMES: tuple[str, ...] = (
    "Appeal to Authority",
    "Appeal to fear-prejudice",
    "Bandwagon, Reductio ad hitlerum",
    "Black-and-White Fallacy",
    "Causal Oversimplification",
    "Doubt",
    "Exaggeration, Minimisation",
    "Flag-Waving",
    "Loaded Language",
    "Name Calling, Labeling",
    "Repetition",
    "Slogans",
    "Thought-terminating Cliches",
    "Whataboutism, Straw Men",
)
_NAME_TO_INDEX = {name: i for i, name in enumerate(TECHNIQUE_NAMES)}
NUM_TECHNIQUES = len(TECHNIQUE_NAMES)


class Technique(enum.IntEnum):
    APPEAL_TO_AUTHORITY = 0
    APPEAL_TO_FEAR_PREJUDICE = 1
    BANDWAGON_REDUCTIO_AD_HITLERUM = 2
    BLACK_AND_WHITE_FALLACY = 3
    CAUSAL_OVERSIMPLIFICATION = 4
    DOUBT = 5
    EXAGGERATION_MINIMISATION = 6
    FLAG_WAVING = 7
    LOADED_LANGUAGE = 8
    NAME_CALLING_LABELING = 9
    REPETITION = 10
    SLOGANS = 11
    THOUGHT_TERMINATING_CLICHES = 12
    WHATABOUTISM_STRAW_MEN = 13

    @property
    def label(self) -> str:
        return TECHNIQUE_NAMES[self.value]

    @classmethod
    def from_name(cls, name: str) -> "Technique":
        try:
            return cls(_NAME_TO_INDEX[name])
        except KeyError:
            raise ValueError(
                f"unknown technique {name!r}; valid names: {'; '.join(TECHNIQUE_NAMES)}"
            ) from None

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class Article:
    id: int
    text: str

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"article id must be >= 1, got {self.id}")

    def __len__(self) -> int:
        return len(self.text)


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < 0:
            raise ValueError(f"negative offset in span [{self.start}, {self.end})")
        if self.start >= self.end:
            raise ValueError(f"empty or inverted span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlap(self, other: "Span") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class SiLabel:
    article_id: int
    span: Span


@dataclass(frozen=True)
class TcLabel:
    article_id: int
    technique: Technique
    span: Span


@dataclass(frozen=True)
class ClassifiedSample:
    article_id: int
    span: Span
    surface: str
    technique: Technique | None = None


def load_article(file_name: str, content: bytes) -> Article:
    """Build an :class:`Article` from a shared-task ``article<ID>.txt`` file.

    The text is kept exactly as decoded; label offsets index into it.
    """
    match = ARTICLE_NAME_RE.match(Path(file_name).name)
    if match is None:
        raise FormatError(f"{file_name}: expected a file named article<digits>.txt")
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ArticleDecodeError(file_name, exc.start, exc.reason) from exc
    return Article(id=int(match.group(1)), text=text)


def load_articles(directory: str | Path) -> list[Article]:
    """Load every ``article*.txt`` in ``directory``, sorted by article id."""
    articles = []
    for path in Path(directory).iterdir():
        if ARTICLE_NAME_RE.match(path.name):
            articles.append(load_article(path.name, path.read_bytes()))
    articles.sort(key=lambda a: a.id)
    return articles


def _split_lines(tsv_text: str) -> Iterable[tuple[int, list[str]]]:
    for line_no, line in enumerate(tsv_text.split("\n"), start=1):
        line = line.rstrip("\r")
        if line.strip():
            yield line_no, line.split("\t")


def _parse_int(field: str, line_no: int, what: str) -> int:
    try:
        return int(field, 10)
    except ValueError:
        raise LabelParseError(line_no, f"{what} is not an integer: {field!r}") from None


def _parse_span(start: str, end: str, line_no: int) -> Span:
    s = _parse_int(start, line_no, "start")
    e = _parse_int(end, line_no, "end")
    if s < 0 or e < 0:
        raise LabelParseError(line_no, f"negative offset in [{s}, {e})")
    if s >= e:
        raise LabelParseError(line_no, f"start {s} must be smaller than end {e}")
    return Span(s, e)


def _parse_article_id(field: str, line_no: int) -> int:
    article_id = _parse_int(field, line_no, "article id")
    if article_id < 1:
        raise LabelParseError(line_no, f"article id must be positive, got {article_id}")
    return article_id


def parse_si_labels(tsv_text: str) -> list[SiLabel]:
    labels = []
    for line_no, fields in _split_lines(tsv_text):
        if len(fields) != 3:
            raise LabelParseError(line_no, f"expected 3 tab-separated fields, found {len(fields)}")
        article_id = _parse_article_id(fields[0], line_no)
        labels.append(SiLabel(article_id, _parse_span(fields[1], fields[2], line_no)))
    return labels


def parse_tc_labels(tsv_text: str) -> list[TcLabel]:
    labels = []
    for line_no, fields in _split_lines(tsv_text):
        if len(fields) != 4:
            raise LabelParseError(line_no, f"expected 4 tab-separated fields, found {len(fields)}")
        article_id = _parse_article_id(fields[0], line_no)
        try:
            technique = Technique.from_name(fields[1])
        except ValueError as exc:
            raise LabelParseError(line_no, str(exc)) from None
        labels.append(TcLabel(article_id, technique, _parse_span(fields[2], fields[3], line_no)))
    return labels


def emit_si_predictions(labels: Iterable[SiLabel]) -> str:
    return "".join(f"{l.article_id}\t{l.span.start}\t{l.span.end}\n" for l in labels)


def emit_tc_predictions(labels: Iterable[TcLabel]) -> str:
    return "".join(
        f"{l.article_id}\t{l.technique.label}\t{l.span.start}\t{l.span.end}\n" for l in labels
    )


def validate_against(labels: Iterable[SiLabel | TcLabel], articles: Mapping[int, Article]) -> None:
    """Raise ``ValueError`` if any label points outside its article or at a missing one."""
    for label in labels:
        article = articles.get(label.article_id)
        if article is None:
            raise ValueError(f"label refers to unknown article {label.article_id}")
        if label.span.end > len(article.text):
            raise ValueError(
                f"span [{label.span.start}, {label.span.end}) exceeds article "
                f"{label.article_id} of length {len(article.text)}"
            )


def group_by_article(labels: Iterable[T]) -> dict[int, list[T]]:
    grouped: dict[int, list[T]] = defaultdict(list)
    for label in labels:
        grouped[label.article_id].append(label)
    return dict(grouped)


def dev_size(n_articles: int) -> int:
    # n * 74 / 371 is never exactly halfway for integer n, so plain rounding is safe
    return round(n_articles * DEV_NUMERATOR / DEV_DENOMINATOR)


def train_dev_split(articles: Sequence[Article], seed: int) -> tuple[list[Article], list[Article]]:
    if not articles:
        raise ValueError("cannot split an empty article list")
    order = np.random.default_rng(seed).permutation(len(articles))
    n_dev = dev_size(len(articles))
    shuffled = [articles[i] for i in order]
    return shuffled[n_dev:], shuffled[:n_dev]


def undersample_negatives(segments: Sequence[tuple[T, bool]], seed: int) -> list[tuple[T, bool]]:
    """Keep every positive segment and an equally sized random draw of negatives."""
    positives = [s for s in segments if s[1]]
    negatives = [s for s in segments if not s[1]]
    if not positives:
        raise ValueError("undersampling needs at least one positive segment")
    rng = np.random.default_rng(seed)
    n_neg = min(len(negatives), len(positives))
    keep = rng.choice(len(negatives), size=n_neg, replace=False) if n_neg else []
    out = positives + [negatives[i] for i in sorted(keep)]
    return [out[i] for i in rng.permutation(len(out))]


def oversample_classes(samples: Sequence[ClassifiedSample], seed: int) -> list[ClassifiedSample]:
    """Replicate minority techniques (with replacement) up to the majority count.

    Only techniques present in ``samples`` are equalized; a class with zero
    samples cannot be synthesized.
    """
    if not samples:
        raise ValueError("cannot oversample an empty sample list")
    by_class: dict[Technique, list[ClassifiedSample]] = defaultdict(list)
    for s in samples:
        if s.technique is None:
            raise ValueError(f"sample {s.article_id}:{s.span} carries no technique")
        by_class[s.technique].append(s)
    target = max(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(samples)
    for technique in sorted(by_class):
        members = by_class[technique]
        extra = target - len(members)
        if extra:
            out.extend(members[i] for i in rng.integers(0, len(members), size=extra))
    return [out[i] for i in rng.permutation(len(out))]


def technique_histogram(labels: Iterable[TcLabel | ClassifiedSample]) -> Counter:
    return Counter(l.technique for l in labels)
