"""Datasets: CSV/TSV loading with a frequency-ordered vocabulary, and
seeded synthetic classification tasks.

Every encoded sequence starts with ``<cls>``; sequences longer than
``max_seq`` are truncated.
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .model import PAD_ID

PAD, UNK, CLS = "<pad>", "<unk>", "<cls>"
SPECIALS = (PAD, UNK, CLS)
UNK_ID = 1
CLS_ID = 2


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, texts) -> "Vocab":
        """Specials first, then tokens by descending frequency, ties lexicographic."""
        counts = Counter(tok for text in texts for tok in text.split())
        for s in SPECIALS:
            counts.pop(s, None)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(SPECIALS + tuple(ordered))

    def __len__(self):
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def encode(self, text: str, max_seq: int) -> tuple[int, ...]:
        idx = self.index
        ids = [CLS_ID] + [idx.get(t, UNK_ID) for t in text.split()]
        return tuple(ids[:max_seq])


@dataclass(frozen=True)
class Dataset:
    examples: tuple[tuple[tuple[int, ...], int], ...]
    vocab: Vocab
    classes: int
    max_seq: int

    def __post_init__(self):
        for ids, label in self.examples:
            if len(ids) > self.max_seq:
                raise DomainError(f"sequence of length {len(ids)} exceeds {self.max_seq}")
            if not 0 <= label < self.classes:
                raise DomainError(f"label {label} outside [0, {self.classes})")

    def __len__(self):
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.examples], dtype=np.int64)

    def tokens(self, indices=None) -> np.ndarray:
        """Padded [n, max_seq] id matrix."""
        rows = self.examples if indices is None else [self.examples[i] for i in indices]
        out = np.full((len(rows), self.max_seq), PAD_ID, dtype=np.int64)
        for r, (ids, _) in enumerate(rows):
            out[r, : len(ids)] = ids
        return out

    def split(self, eval_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        if not 0.0 < eval_fraction < 1.0:
            raise DomainError("eval fraction must lie in (0, 1)")
        order = np.random.default_rng(seed).permutation(len(self))
        n_eval = max(1, int(round(eval_fraction * len(self))))
        pick = lambda idx: Dataset(tuple(self.examples[i] for i in sorted(idx)), self.vocab,  # noqa: E731
                                   self.classes, self.max_seq)
        return pick(order[n_eval:]), pick(order[:n_eval])


class Format(enum.Enum):
    CSV = "csv"
    TSV = "tsv"


def load_dataset(path: str | Path, fmt: Format | str | None = None, max_seq: int = 16,
                 vocab: Vocab | None = None) -> Dataset:
    """Read ``text,label`` rows (an optional ``text,label`` header is skipped).

    ``fmt`` defaults from the file suffix. Pass ``vocab`` to encode with an
    existing vocabulary (unknown tokens map to ``<unk>``).
    """
    path = Path(path)
    if fmt is None:
        fmt = Format.TSV if path.suffix.lower() == ".tsv" else Format.CSV
    fmt = Format(fmt)
    delim = "\t" if fmt is Format.TSV else ","
    rows: list[tuple[str, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh, delimiter=delim), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 2:
                raise ParseError(f"expected 2 columns, got {len(rec)}", lineno)
            text, label = rec[0].strip(), rec[1].strip()
            if lineno == 1 and (text.lower(), label.lower()) == ("text", "label"):
                continue
            try:
                y = int(label)
            except ValueError:
                raise ParseError(f"label {label!r} is not an integer", lineno) from None
            if y < 0:
                raise ParseError(f"negative label {y}", lineno)
            rows.append((text, y))
    if not rows:
        raise DomainError(f"{path}: no examples")
    vocab = vocab or Vocab.build(t for t, _ in rows)
    classes = max(y for _, y in rows) + 1
    return Dataset(tuple((vocab.encode(t, max_seq), y) for t, y in rows), vocab, max(classes, 2), max_seq)


class Rule(enum.Enum):
    MAJORITY_TOKEN = "majority_token"
    CONTAINS_PATTERN = "contains_pattern"


def _symbols(k: int) -> list[str]:
    return [f"w{i}" for i in range(k)]


def synth_task(seed: int, n_examples: int, rule: Rule | str = Rule.CONTAINS_PATTERN,
               max_seq: int = 16, n_symbols: int = 4, min_len: int = 5) -> Dataset:
    """Balanced synthetic binary task; identical seeds give identical data.

    MAJORITY_TOKEN: sequences over ``w0``/``w1`` of odd length, label 1 iff
    ``w1`` is the more frequent symbol. CONTAINS_PATTERN: sequences over
    ``n_symbols`` symbols, label 1 iff ``w0 w1`` occurs as adjacent tokens;
    negatives carry the reversed pair ``w1 w0`` so that symbol counts alone
    do not reveal the label.
    Exactly ``n_examples // 2`` examples carry label 1 (one more label-0 one
    when ``n_examples`` is odd).
    """
    rule = Rule(rule)
    if n_examples <= 0:
        raise DomainError("n_examples must be positive")
    body_max = max_seq - 1
    if body_max < min_len or min_len < 3:
        raise DomainError(f"max_seq {max_seq} leaves no room for sequences of length {min_len}")
    rng = np.random.default_rng(seed)
    labels = np.array([1] * (n_examples // 2) + [0] * (n_examples - n_examples // 2))
    rng.shuffle(labels)
    texts = []
    for y in labels:
        length = int(rng.integers(min_len, body_max + 1))
        if rule is Rule.MAJORITY_TOKEN:
            length -= 1 - length % 2
            n_major = int(rng.integers(length // 2 + 1, length + 1))
            major, minor = ("w1", "w0") if y else ("w0", "w1")
            seq = [major] * n_major + [minor] * (length - n_major)
            rng.shuffle(seq)
        else:
            syms = _symbols(max(n_symbols, 3))
            # both classes start from the same pattern-free base
            while True:
                seq = [syms[i] for i in rng.integers(0, len(syms), size=length)]
                if _has_pattern(seq):
                    continue
                at = int(rng.integers(0, length - 1))
                seq[at: at + 2] = ["w0", "w1"] if y else ["w1", "w0"]
                if _has_pattern(seq) == bool(y):
                    break
        texts.append(" ".join(seq))
    vocab = Vocab(SPECIALS + tuple(_symbols(2 if rule is Rule.MAJORITY_TOKEN else max(n_symbols, 3))))
    return Dataset(tuple((vocab.encode(t, max_seq), int(y)) for t, y in zip(texts, labels)), vocab, 2, max_seq)


def _has_pattern(seq) -> bool:
    return any(a == "w0" and b == "w1" for a, b in zip(seq, seq[1:]))


def write_dataset(path: str | Path, texts, labels, fmt: Format | str = Format.CSV) -> None:
    delim = "\t" if Format(fmt) is Format.TSV else ","
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(["text", "label"])
        for t, y in zip(texts, labels):
            w.writerow([t, int(y)])
