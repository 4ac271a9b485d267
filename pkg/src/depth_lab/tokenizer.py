"""Byte-pair subword vocabulary with reserved ID ranges, and the
sentence-aware tokenization step that feeds the corruption pipeline.

The base tokenizer is a from-scratch greedy byte-pair merger with full byte
fallback: the first 256 subword IDs are the raw bytes, so ``encode`` covers
arbitrary UTF-8 input and ``decode(encode(x)) == x`` exactly.  Reserved IDs
(100 sentinels, k sentence tokens, and the control tokens) are appended
after the subword table, so all ranges are disjoint by construction.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .corpus import Document
from .segment import segment

N_SENTINELS = 100
DEFAULT_K = 20
MIN_TARGET_SIZE = 300

_VOCAB_MAGIC = b"DLVOCAB1"
_VOCAB_VERSION = 1


class VocabError(ValueError):
    """Raised for invalid vocabulary construction or serialization input."""


@dataclass(frozen=True)
class Vocab:
    """Subword table plus reserved sentinel / sentence / control token IDs.

    ID layout (all ranges disjoint):

    * ``[0, n_subwords)`` -- byte-fallback units (0..255) then merged units
    * ``[n_subwords, n_subwords+100)`` -- sentinels ``<special_token_z>``
    * next ``k`` IDs -- sentence tokens ``<SENT_1>`` .. ``<SENT_k>``
    * then ``<EOSEN>``, ``<EOS>``, ``<BOS>``, ``<PAD>``, ``<UNK>``
    """

    subwords: tuple[bytes, ...]
    k: int = DEFAULT_K

    def __post_init__(self) -> None:
        if self.k < 1:
            raise VocabError(f"k must be >= 1, got {self.k}")
        if len(self.subwords) < 256:
            raise VocabError("subword table must include the 256 byte-fallback units")

    @property
    def n_subwords(self) -> int:
        return len(self.subwords)

    @property
    def sentinel_base(self) -> int:
        return self.n_subwords

    @property
    def sentence_base(self) -> int:
        return self.n_subwords + N_SENTINELS

    @property
    def eosen_id(self) -> int:
        return self.sentence_base + self.k

    @property
    def eos_id(self) -> int:
        return self.eosen_id + 1

    @property
    def bos_id(self) -> int:
        return self.eosen_id + 2

    @property
    def pad_id(self) -> int:
        return self.eosen_id + 3

    @property
    def unk_id(self) -> int:
        return self.eosen_id + 4

    @property
    def size(self) -> int:
        return self.n_subwords + N_SENTINELS + self.k + 5

    def sentinel_id(self, z: int) -> int:
        if not 0 <= z < N_SENTINELS:
            raise VocabError(f"sentinel index {z} out of range [0, {N_SENTINELS})")
        return self.sentinel_base + z

    def sentence_id(self, i: int) -> int:
        """ID of ``<SENT_i>`` for i in 1..k."""
        if not 1 <= i <= self.k:
            raise VocabError(f"sentence index {i} out of range [1, {self.k}]")
        return self.sentence_base + (i - 1)

    @property
    def sentinel_ids(self) -> range:
        return range(self.sentinel_base, self.sentinel_base + N_SENTINELS)

    @property
    def sentence_ids(self) -> range:
        return range(self.sentence_base, self.sentence_base + self.k)

    def is_sentinel(self, token_id: int) -> bool:
        return self.sentinel_base <= token_id < self.sentinel_base + N_SENTINELS

    def is_sentence_token(self, token_id: int) -> bool:
        return self.sentence_base <= token_id < self.sentence_base + self.k

    def is_reserved(self, token_id: int) -> bool:
        return token_id >= self.n_subwords

    def token_name(self, token_id: int) -> str:
        """Human-readable name, used by decode for reserved IDs and by dumps."""
        if not 0 <= token_id < self.size:
            raise VocabError(f"token ID {token_id} out of range for vocab of size {self.size}")
        if token_id < self.n_subwords:
            return self.subwords[token_id].decode("utf-8", errors="backslashreplace")
        if self.is_sentinel(token_id):
            return f"<special_token_{token_id - self.sentinel_base}>"
        if self.is_sentence_token(token_id):
            return f"<SENT_{token_id - self.sentence_base + 1}>"
        return {
            self.eosen_id: "<EOSEN>",
            self.eos_id: "<EOS>",
            self.bos_id: "<BOS>",
            self.pad_id: "<PAD>",
            self.unk_id: "<UNK>",
        }[token_id]


@dataclass(frozen=True)
class TokenizedExample:
    """A document as per-sentence token sequences with assigned sentence IDs.

    ``sentences[i] = (assigned_sent_id, body_ids)`` in original document
    order.  Assigned IDs are distinct within one example; bodies contain no
    reserved IDs.
    """

    doc_id: int
    sentences: tuple[tuple[int, tuple[int, ...]], ...]

    @property
    def m(self) -> int:
        return len(self.sentences)

    def body_token_count(self) -> int:
        return sum(len(body) for _, body in self.sentences)

    def flat_ids(self, vocab: Vocab) -> list[int]:
        """Framed flat form: (SENT body+ EOSEN)+ EOS."""
        out: list[int] = []
        for sent_id, body in self.sentences:
            out.append(sent_id)
            out.extend(body)
            out.append(vocab.eosen_id)
        out.append(vocab.eos_id)
        return out


def _merge_piece(piece: tuple[bytes, ...], pair: tuple[bytes, bytes], merged: bytes) -> tuple[bytes, ...]:
    out: list[bytes] = []
    i = 0
    n = len(piece)
    while i < n:
        if i + 1 < n and piece[i] == pair[0] and piece[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(piece[i])
            i += 1
    return tuple(out)


def train_vocab(
    corpus: Iterable[Document],
    target_size: int,
    k: int = DEFAULT_K,
    min_pair_count: int = 2,
) -> Vocab:
    """Learn a subword table by greedy pair merging over the corpus.

    ``target_size`` is the subword-table size (256 byte units plus learned
    merges); reserved IDs are appended after it.  Ties between equally
    frequent pairs break lexicographically so training is deterministic.
    """
    if target_size < MIN_TARGET_SIZE:
        raise VocabError(
            f"target_size must be >= {MIN_TARGET_SIZE} to leave room for "
            f"byte fallback and merges, got {target_size}"
        )
    pieces = Counter()
    for doc in corpus:
        pieces[tuple(bytes([b]) for b in doc.text.encode("utf-8"))] += 1
    if not pieces:
        raise VocabError("cannot train a vocabulary on an empty corpus")

    subwords: list[bytes] = [bytes([i]) for i in range(256)]
    while len(subwords) < target_size:
        pair_counts: Counter[tuple[bytes, bytes]] = Counter()
        for piece, count in pieces.items():
            for a, b in zip(piece, piece[1:]):
                pair_counts[(a, b)] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < min_pair_count:
            break
        pair = min(p for p, c in pair_counts.items() if c == best_count)
        merged = pair[0] + pair[1]
        subwords.append(merged)
        pieces = Counter(
            {
                (_merge_piece(piece, pair, merged) if pair[0] in piece and pair[1] in piece else piece): c
                for piece, c in pieces.items()
            }
        )
    return Vocab(subwords=tuple(subwords), k=k)


def encode(vocab: Vocab, text: str) -> list[int]:
    """Greedy longest-match encoding over the subword table.

    Byte fallback guarantees progress, so any UTF-8 string is encodable and
    the output never contains reserved IDs.
    """
    data = text.encode("utf-8")
    if not data:
        return []
    table, max_len = _match_table(vocab)
    ids: list[int] = []
    i = 0
    n = len(data)
    while i < n:
        for length in range(min(max_len, n - i), 0, -1):
            token_id = table.get(data[i : i + length])
            if token_id is not None:
                ids.append(token_id)
                i += length
                break
    return ids


def _match_table(vocab: Vocab) -> tuple[dict[bytes, int], int]:
    # lazily cached on the (frozen) instance; rebuilt never, shared freely
    cached = vocab.__dict__.get("_match_table")
    if cached is None:
        table = {sw: i for i, sw in enumerate(vocab.subwords)}
        cached = (table, max(len(s) for s in vocab.subwords))
        object.__setattr__(vocab, "_match_table", cached)
    return cached


def decode(vocab: Vocab, ids: Iterable[int]) -> str:
    """Inverse of encode for subword IDs; reserved IDs render as their names."""
    parts: list[bytes] = []
    for token_id in ids:
        if not 0 <= token_id < vocab.size:
            raise VocabError(f"cannot decode token ID {token_id}: vocab size is {vocab.size}")
        if token_id < vocab.n_subwords:
            parts.append(vocab.subwords[token_id])
        else:
            parts.append(vocab.token_name(token_id).encode("utf-8"))
    return b"".join(parts).decode("utf-8")


def depth_tokenize(
    vocab: Vocab,
    doc: Document,
    rng: np.random.Generator,
    abbreviations: frozenset[str] | None = None,
) -> TokenizedExample | None:
    """Segment, encode, and frame one document.

    Sentences beyond the k-th are dropped; sentences whose encoded body is
    empty are dropped before assignment.  Assigned sentence-token IDs are a
    uniform without-replacement sample over the k IDs, drawn from ``rng``
    (the pipeline derives it from the global seed and doc_id).  Returns None
    for documents with no encodable sentences.
    """
    bodies = []
    for sentence in segment(doc.text, abbreviations):
        body = encode(vocab, sentence)
        if body:
            bodies.append(tuple(body))
        if len(bodies) == vocab.k:
            break
    if not bodies:
        return None
    assigned = rng.choice(vocab.k, size=len(bodies), replace=False)
    sentences = tuple(
        (vocab.sentence_id(int(i) + 1), body) for i, body in zip(assigned, bodies)
    )
    return TokenizedExample(doc_id=doc.doc_id, sentences=sentences)


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    """Serialize: magic, version, k, subword count, then length-prefixed entries.

    Layout (little-endian):

    * 8 bytes magic ``DLVOCAB1``
    * u32 version, u32 k, u32 n_subwords, u32 n_sentinels
    * per subword, in ID order: u32 byte length + raw bytes
    """
    with open(path, "wb") as fh:
        fh.write(_VOCAB_MAGIC)
        fh.write(struct.pack("<IIII", _VOCAB_VERSION, vocab.k, vocab.n_subwords, N_SENTINELS))
        for sw in vocab.subwords:
            fh.write(struct.pack("<I", len(sw)))
            fh.write(sw)


def load_vocab(path: str | Path) -> Vocab:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _VOCAB_MAGIC:
            raise VocabError(f"{path}: not a vocabulary file (bad magic {magic!r})")
        version, k, n_subwords, n_sentinels = struct.unpack("<IIII", _read_exact(fh, 16))
        if version != _VOCAB_VERSION:
            raise VocabError(f"{path}: unsupported vocabulary version {version}")
        if n_sentinels != N_SENTINELS:
            raise VocabError(f"{path}: unexpected sentinel count {n_sentinels}")
        subwords = []
        for _ in range(n_subwords):
            (length,) = struct.unpack("<I", _read_exact(fh, 4))
            subwords.append(_read_exact(fh, length))
    return Vocab(subwords=tuple(subwords), k=k)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise VocabError("truncated vocabulary file")
    return data
