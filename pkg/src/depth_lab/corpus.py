"""Corpus ingestion: stream documents from disk and split train/validation.

Documents are read line-at-a-time so memory stays flat regardless of corpus
size.  The train/val split is a pure function of (seed, doc_id), so the same
document lands on the same side of the split no matter how the stream is
consumed or parallelized.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

CORPUS_FORMATS = ("plain-lines", "json-lines")


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus input."""


@dataclass(frozen=True)
class Document:
    """One raw document: a stable ordinal and its text body."""

    doc_id: int
    text: str


@dataclass
class CorpusConfig:
    path: str | Path
    format: str = "plain-lines"
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.format not in CORPUS_FORMATS:
            raise CorpusError(f"unknown corpus format {self.format!r}; expected one of {CORPUS_FORMATS}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise CorpusError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class CorpusStats:
    """Counters accumulated while streaming a corpus."""

    yielded: int = 0
    skipped_empty: int = 0


def load_corpus(config: CorpusConfig, stats: CorpusStats | None = None) -> Iterator[Document]:
    """Yield documents in file order, one per non-empty record.

    ``doc_id`` is the 0-based line index of the record, so it stays stable
    even when blank records are skipped (skips are counted in ``stats``).
    """
    path = Path(config.path)
    if not path.is_file():
        raise CorpusError(f"corpus path not readable: {path}")
    stats = stats if stats is not None else CorpusStats()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if config.format == "json-lines":
                line = line.strip()
                if not line:
                    stats.skipped_empty += 1
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
                text = record.get("text")
                if not isinstance(text, str):
                    raise CorpusError(f"{path}:{lineno}: json-lines record lacks a string 'text' field")
            else:
                text = line
            if not text.strip():
                stats.skipped_empty += 1
                continue
            yield Document(doc_id=lineno - 1, text=text.strip())
            stats.yielded += 1


def assign_to_val(doc_id: int, val_fraction: float, seed: int) -> bool:
    """Deterministic split decision for one document.

    Hash-based (blake2b over seed and doc_id) rather than contiguous, so the
    validation set is topically representative of the whole corpus.
    """
    if val_fraction <= 0.0:
        return False
    digest = hashlib.blake2b(
        struct.pack("<QQ", seed & 0xFFFFFFFFFFFFFFFF, doc_id),
        digest_size=8,
        person=b"docsplit",
    ).digest()
    (u,) = struct.unpack("<Q", digest)
    return u / 2.0**64 < val_fraction


def split_corpus(
    docs: Iterable[Document], val_fraction: float, seed: int
) -> tuple[list[Document], list[Document]]:
    """Materialize a document stream into (train, val) lists.

    The per-document assignment is pure in (seed, doc_id); the expected val
    share is ``val_fraction``.
    """
    if not (0.0 <= val_fraction < 1.0):
        raise CorpusError(f"val_fraction must be in [0, 1), got {val_fraction}")
    train: list[Document] = []
    val: list[Document] = []
    for doc in docs:
        (val if assign_to_val(doc.doc_id, val_fraction, seed) else train).append(doc)
    return train, val


def iter_split(
    docs: Iterable[Document], val_fraction: float, seed: int, side: str
) -> Iterator[Document]:
    """Streaming variant of :func:`split_corpus` yielding only one side."""
    want_val = {"train": False, "val": True}[side]
    for doc in docs:
        if assign_to_val(doc.doc_id, val_fraction, seed) == want_val:
            yield doc
