"""Turn tokenized documents into training examples.

Two objectives share one budgeted span sampler:

* ``depth`` -- sentence-framed encoder (``<SENT_a> body <EOSEN> ... <EOS>``)
  with randomized sentinel IDs, optional sentence shuffling, and a target
  that interleaves span reconstruction inside the original-order sentence
  frame.
* ``t5`` -- flat span corruption with sentinels assigned in decreasing
  order from 99 by input position, no sentence tokens, no shuffling.

Every random decision derives from (global_seed, doc_id | batch_index), so
example bytes are reproducible in any processing order.  Examples are never
packed: each encoder sequence comes from exactly one document.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from . import seeding
from .corpus import Document
from .seeding import rng_for
from .tokenizer import TokenizedExample, Vocab, depth_tokenize

OBJECTIVES = ("depth", "t5")

_SHARD_MAGIC = b"DLSHARD1"
_SHARD_VERSION = 1
_MAX_SPANS = 100  # sentinel supply


class CorruptionError(ValueError):
    """Raised for invalid corruption configs or malformed shard files."""


@dataclass
class CorruptionConfig:
    p: float = 0.3
    mean_span: float = 3.0
    max_span: int = 10
    shuffle_prob: float = 0.5
    max_len: int = 512
    objective: str = "depth"
    global_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p < 1.0:
            raise CorruptionError(f"mask fraction p must be in [0, 1), got {self.p}")
        if self.mean_span < 1.0:
            raise CorruptionError(f"mean span length must be >= 1, got {self.mean_span}")
        if self.max_span < 1:
            raise CorruptionError(f"max_span must be >= 1, got {self.max_span}")
        if not 0.0 <= self.shuffle_prob <= 1.0:
            raise CorruptionError(f"shuffle_prob must be in [0, 1], got {self.shuffle_prob}")
        if self.max_len < 16:
            raise CorruptionError(f"max_len must be >= 16, got {self.max_len}")
        if self.objective not in OBJECTIVES:
            raise CorruptionError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass(frozen=True)
class SpanRecord:
    """One masked span: position within a sentence body plus its sentinel."""

    sentence_index: int
    start: int
    length: int
    sentinel_z: int


@dataclass(frozen=True)
class CorruptedExample:
    doc_id: int
    encoder_ids: tuple[int, ...]
    decoder_input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    spans: tuple[SpanRecord, ...]
    permutation: tuple[int, ...]  # original sentence index -> encoder slot
    shuffled: bool
    sentence_positions_enc: tuple[int, ...]
    sentence_positions_dec: tuple[int, ...]

    @property
    def masked_token_count(self) -> int:
        return sum(s.length for s in self.spans)

    def original_body_count(self, vocab: Vocab) -> int:
        """Body tokens of the (truncated) source document."""
        frame = {vocab.eosen_id, vocab.eos_id}
        surviving = sum(
            1
            for t in self.encoder_ids
            if t not in frame and not vocab.is_sentence_token(t) and not vocab.is_sentinel(t)
        )
        return surviving + self.masked_token_count

    def realized_mask_rate(self, vocab: Vocab) -> float:
        body = self.original_body_count(vocab)
        return self.masked_token_count / body if body else 0.0


@dataclass
class CorruptionStats:
    built: int = 0
    dropped_no_sentences: int = 0
    dropped_overlong: int = 0
    budget_underfilled: int = 0


def truncate_example(ex: TokenizedExample, vocab: Vocab, max_len: int) -> TokenizedExample | None:
    """Cap the framed form at ``max_len`` tokens before corruption.

    The first sentence must fit whole (otherwise even one sentence cannot be
    represented and the example is dropped); later sentences are cut at the
    token level, and the final ``<EOS>`` always fits because one slot is
    reserved for it.
    """
    budget = max_len - 1  # final <EOS>
    kept: list[tuple[int, tuple[int, ...]]] = []
    for sent_id, body in ex.sentences:
        need = len(body) + 2  # <SENT_i> + body + <EOSEN>
        if need <= budget:
            kept.append((sent_id, body))
            budget -= need
            continue
        if kept and budget >= 3:
            kept.append((sent_id, body[: budget - 2]))
        break
    if not kept:
        return None
    return TokenizedExample(doc_id=ex.doc_id, sentences=tuple(kept))


def _budget_spans(
    n_tokens: int,
    segment_ends: list[int] | None,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
) -> tuple[list[tuple[int, int]], bool]:
    """Sample (flat_start, length) spans until round(p * n) tokens are masked.

    Starts are uniform over currently unmasked positions; lengths are
    geometric with mean ``cfg.mean_span`` clipped to ``cfg.max_span``.  A
    draw is rejected (and re-drawn, within a 10x-budget attempt cap) if the
    span would cross one of ``segment_ends`` or overlap an accepted span.
    Returns the spans sorted by start and whether the budget was underfilled.
    """
    budget = int(cfg.p * n_tokens + 0.5)
    if budget <= 0 or n_tokens == 0:
        return [], False
    ends = np.asarray(segment_ends if segment_ends is not None else [n_tokens])
    unmasked = np.ones(n_tokens, dtype=bool)
    spans: list[tuple[int, int]] = []
    masked = 0
    attempts = 0
    while masked < budget and attempts < 10 * budget and len(spans) < _MAX_SPANS:
        attempts += 1
        start = int(rng.choice(np.flatnonzero(unmasked)))
        length = int(min(rng.geometric(1.0 / cfg.mean_span), cfg.max_span))
        end = start + length
        segment_end = int(ends[np.searchsorted(ends, start, side="right")])
        if end > segment_end:
            continue  # would cross a sentence boundary (or run off the end)
        if not unmasked[start:end].all():
            continue  # would overlap an existing span
        unmasked[start:end] = False
        spans.append((start, length))
        masked += length
    return sorted(spans), masked < budget


def sample_spans(
    ex: TokenizedExample, cfg: CorruptionConfig, rng: np.random.Generator
) -> list[SpanRecord]:
    """Sentence-bounded span sampling with randomized, unique sentinel IDs.

    Spans cover body tokens only; ``<SENT_i>``/``<EOSEN>`` positions are
    structurally unreachable because sampling happens in body-token space
    and boundary-crossing draws are rejected.
    """
    spans, _ = _sample_spans_impl(ex, cfg, rng)
    return spans


def _sample_spans_impl(
    ex: TokenizedExample, cfg: CorruptionConfig, rng: np.random.Generator
) -> tuple[list[SpanRecord], bool]:
    lengths = [len(body) for _, body in ex.sentences]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat_spans, underfilled = _budget_spans(int(offsets[-1]), list(offsets[1:]), cfg, rng)
    z_values = rng.choice(100, size=len(flat_spans), replace=False)
    records = []
    for (flat_start, length), z in zip(flat_spans, z_values):
        sentence_index = int(np.searchsorted(offsets, flat_start, side="right") - 1)
        records.append(
            SpanRecord(
                sentence_index=sentence_index,
                start=int(flat_start - offsets[sentence_index]),
                length=length,
                sentinel_z=int(z),
            )
        )
    return records, underfilled


def decide_shuffle(batch_index: int, cfg: CorruptionConfig) -> bool:
    """Batch-level shuffle decision; pure in (global_seed, batch_index)."""
    rng = rng_for(cfg.global_seed, seeding.SHUFFLE_DECIDE, batch_index)
    return bool(rng.random() < cfg.shuffle_prob)


def permute(m: int, shuffled: bool, rng: np.random.Generator) -> tuple[int, ...]:
    """Original-index -> encoder-slot mapping; identity unless shuffled.

    Token order within a sentence is never touched; only whole sentences
    move.  The draw is uniform over all m! orderings.
    """
    if not shuffled or m <= 1:
        return tuple(range(m))
    order = rng.permutation(m)  # order[j] = original index at encoder slot j
    permutation = np.empty(m, dtype=int)
    permutation[order] = np.arange(m)
    return tuple(int(x) for x in permutation)


def build_depth_example(
    ex: TokenizedExample,
    spans: list[SpanRecord],
    permutation: tuple[int, ...],
    cfg: CorruptionConfig,
    vocab: Vocab,
    shuffled: bool,
) -> CorruptedExample:
    """Assemble encoder / target / decoder-input for the depth objective.

    Encoder shows sentences in permuted order with spans collapsed to their
    sentinels; the target walks sentences in original order emitting
    ``<SENT_a>``, then sentinel + original tokens per span (left to right),
    then ``<EOSEN>``, terminated by ``<EOS>``.
    """
    m = ex.m
    by_sentence: dict[int, list[SpanRecord]] = {i: [] for i in range(m)}
    for span in spans:
        by_sentence[span.sentence_index].append(span)
    for sentence_spans in by_sentence.values():
        sentence_spans.sort(key=lambda s: s.start)

    order = [0] * m  # encoder slot -> original index
    for original, slot in enumerate(permutation):
        order[slot] = original

    encoder: list[int] = []
    enc_sent_positions: list[int] = []
    for original in order:
        sent_id, body = ex.sentences[original]
        enc_sent_positions.append(len(encoder))
        encoder.append(sent_id)
        cursor = 0
        for span in by_sentence[original]:
            encoder.extend(body[cursor : span.start])
            encoder.append(vocab.sentinel_id(span.sentinel_z))
            cursor = span.start + span.length
        encoder.extend(body[cursor:])
        encoder.append(vocab.eosen_id)
    encoder.append(vocab.eos_id)

    target: list[int] = []
    tgt_sent_positions: list[int] = []
    for original in range(m):
        sent_id, body = ex.sentences[original]
        tgt_sent_positions.append(len(target))
        target.append(sent_id)
        for span in by_sentence[original]:
            target.append(vocab.sentinel_id(span.sentinel_z))
            target.extend(body[span.start : span.start + span.length])
        target.append(vocab.eosen_id)
    target.append(vocab.eos_id)

    decoder_input = [vocab.bos_id] + target[:-1]
    dec_sent_positions = tuple(p + 1 for p in tgt_sent_positions)

    return CorruptedExample(
        doc_id=ex.doc_id,
        encoder_ids=tuple(encoder),
        decoder_input_ids=tuple(decoder_input),
        target_ids=tuple(target),
        spans=tuple(sorted(spans, key=lambda s: (s.sentence_index, s.start))),
        permutation=permutation,
        shuffled=shuffled,
        sentence_positions_enc=tuple(enc_sent_positions),
        sentence_positions_dec=dec_sent_positions,
    )


def build_t5_example(
    ex: TokenizedExample,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
    vocab: Vocab,
) -> CorruptedExample:
    """Flat span corruption: no sentence frame, no shuffling.

    Spans come from the same budget procedure but without boundary
    rejection; sentinels take decreasing IDs from 99 in input-position
    order.  The target is sentinel_i ++ span_i ... ++ <EOS>.
    """
    flat: list[int] = []
    for _, body in ex.sentences:
        flat.extend(body)
    flat = flat[: cfg.max_len - 1]
    flat_spans, _ = _budget_spans(len(flat), None, cfg, rng)
    return t5_layout(flat, flat_spans, vocab, ex.doc_id)


def t5_layout(
    flat: list[int], flat_spans: list[tuple[int, int]], vocab: Vocab, doc_id: int
) -> CorruptedExample:
    """Assemble the t5-style example from a flat sequence and sorted spans."""
    encoder: list[int] = []
    target: list[int] = []
    records: list[SpanRecord] = []
    cursor = 0
    for i, (start, length) in enumerate(flat_spans):
        z = 99 - i
        encoder.extend(flat[cursor:start])
        encoder.append(vocab.sentinel_id(z))
        target.append(vocab.sentinel_id(z))
        target.extend(flat[start : start + length])
        records.append(SpanRecord(sentence_index=0, start=start, length=length, sentinel_z=z))
        cursor = start + length
    encoder.extend(flat[cursor:])
    encoder.append(vocab.eos_id)
    target.append(vocab.eos_id)
    decoder_input = [vocab.bos_id] + target[:-1]

    return CorruptedExample(
        doc_id=doc_id,
        encoder_ids=tuple(encoder),
        decoder_input_ids=tuple(decoder_input),
        target_ids=tuple(target),
        spans=tuple(records),
        permutation=(),
        shuffled=False,
        sentence_positions_enc=(),
        sentence_positions_dec=(),
    )


def corrupt_example(
    ex: TokenizedExample,
    cfg: CorruptionConfig,
    batch_index: int,
    vocab: Vocab,
    stats: CorruptionStats | None = None,
) -> CorruptedExample | None:
    """Corrupt one tokenized document (truncate, sample, shuffle, build)."""
    truncated = truncate_example(ex, vocab, cfg.max_len)
    if truncated is None:
        if stats is not None:
            stats.dropped_overlong += 1
        return None
    if cfg.objective == "t5":
        rng = rng_for(cfg.global_seed, seeding.SPAN_SAMPLE, ex.doc_id)
        built = build_t5_example(truncated, cfg, rng, vocab)
    else:
        span_rng = rng_for(cfg.global_seed, seeding.SPAN_SAMPLE, ex.doc_id)
        spans, underfilled = _sample_spans_impl(truncated, cfg, span_rng)
        if underfilled and stats is not None:
            stats.budget_underfilled += 1
        shuffled = decide_shuffle(batch_index, cfg)
        perm_rng = rng_for(cfg.global_seed, seeding.PERMUTATION, ex.doc_id)
        permutation = permute(truncated.m, shuffled, perm_rng)
        built = build_depth_example(truncated, spans, permutation, cfg, vocab, shuffled)
    if stats is not None:
        stats.built += 1
    return built


def corrupt_documents(
    docs: Iterable[Document],
    vocab: Vocab,
    cfg: CorruptionConfig,
    batch_size: int = 16,
    abbreviations: frozenset[str] | None = None,
    stats: CorruptionStats | None = None,
) -> Iterator[CorruptedExample]:
    """Full per-document pipeline: segment + tokenize + corrupt.

    ``batch_size`` sets the granularity of the batch-level shuffle decision
    (example ordinal // batch_size).
    """
    ordinal = 0
    for doc in docs:
        tokenized = depth_tokenize(
            vocab, doc, rng_for(cfg.global_seed, seeding.SENT_ASSIGN, doc.doc_id), abbreviations
        )
        if tokenized is None:
            if stats is not None:
                stats.dropped_no_sentences += 1
            continue
        built = corrupt_example(tokenized, cfg, ordinal // batch_size, vocab, stats)
        if built is not None:
            yield built
            ordinal += 1


def un_corrupt(
    encoder_ids: Iterable[int], target_ids: Iterable[int], vocab: Vocab
) -> list[int]:
    """Invert corruption: recover the original flat body token sequence.

    Works from the (encoder, target) pair alone: sentinels are replaced by
    the span tokens that follow them in the target, sentences are put back
    in original order using the target's sentence-token order, and frame
    tokens are stripped.  Written against the wire layout, independently of
    the builders, so it doubles as the round-trip oracle.
    """
    encoder = list(encoder_ids)
    target = list(target_ids)

    def is_break(tok: int) -> bool:
        return (
            vocab.is_sentinel(tok)
            or vocab.is_sentence_token(tok)
            or tok in (vocab.eosen_id, vocab.eos_id)
        )

    span_tokens: dict[int, list[int]] = {}
    i = 0
    while i < len(target):
        tok = target[i]
        i += 1
        if vocab.is_sentinel(tok):
            run: list[int] = []
            while i < len(target) and not is_break(target[i]):
                run.append(target[i])
                i += 1
            span_tokens[tok] = run

    def splice(tokens: list[int]) -> list[int]:
        out: list[int] = []
        for tok in tokens:
            if vocab.is_sentinel(tok):
                out.extend(span_tokens[tok])
            else:
                out.append(tok)
        return out

    sent_order = [t for t in target if vocab.is_sentence_token(t)]
    if not sent_order:
        # flat (t5) layout: encoder is body + <EOS>
        body = [t for t in encoder if t != vocab.eos_id]
        return splice(body)

    sentences: dict[int, list[int]] = {}
    current: int | None = None
    for tok in encoder:
        if vocab.is_sentence_token(tok):
            current = tok
            sentences[current] = []
        elif tok in (vocab.eosen_id, vocab.eos_id):
            current = None
        elif current is not None:
            sentences[current].append(tok)
    out: list[int] = []
    for sent_id in sent_order:
        out.extend(splice(sentences[sent_id]))
    return out


def format_example(ex: CorruptedExample, vocab: Vocab) -> str:
    """Pretty-print one example with token names, for --dump-text."""

    def render(ids: Iterable[int]) -> str:
        return " ".join(vocab.token_name(t) for t in ids)

    lines = [
        f"doc_id={ex.doc_id} shuffled={ex.shuffled} permutation={list(ex.permutation)}",
        f"  encoder : {render(ex.encoder_ids)}",
        f"  dec_in  : {render(ex.decoder_input_ids)}",
        f"  target  : {render(ex.target_ids)}",
        f"  spans   : "
        + "; ".join(
            f"s{s.sentence_index}@{s.start}+{s.length}->z{s.sentinel_z}" for s in ex.spans
        ),
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# shard serialization
# ---------------------------------------------------------------------------


def write_shard(
    path: str | Path,
    examples: Iterable[CorruptedExample],
    objective: str,
    vocab_size: int,
) -> int:
    """Write length-prefixed example records; returns the record count.

    File layout (little-endian): 8-byte magic ``DLSHARD1``, u32 version,
    u8 objective (0=depth, 1=t5), u32 vocab size, then per record a u32
    payload length followed by the payload:

    * u64 doc_id, u8 flags (bit0 = shuffled), u16 sentence count m
    * u32 encoder length, u32 decoder length, u32 target length, u16 span count
    * m x u16 permutation entries
    * encoder / decoder-input / target ID arrays, each as u32 entries
    * span table entries: u16 sentence index, u32 start, u16 length, u8 sentinel
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(_SHARD_MAGIC)
        fh.write(struct.pack("<IBI", _SHARD_VERSION, OBJECTIVES.index(objective), vocab_size))
        for ex in examples:
            payload = _pack_example(ex)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            count += 1
    return count


def _pack_example(ex: CorruptedExample) -> bytes:
    flags = 1 if ex.shuffled else 0
    m = len(ex.permutation)
    parts = [
        struct.pack(
            "<QBHIIIH",
            ex.doc_id,
            flags,
            m,
            len(ex.encoder_ids),
            len(ex.decoder_input_ids),
            len(ex.target_ids),
            len(ex.spans),
        ),
        np.asarray(ex.permutation, dtype="<u2").tobytes(),
        np.asarray(ex.encoder_ids, dtype="<u4").tobytes(),
        np.asarray(ex.decoder_input_ids, dtype="<u4").tobytes(),
        np.asarray(ex.target_ids, dtype="<u4").tobytes(),
    ]
    for span in ex.spans:
        parts.append(struct.pack("<HIHB", span.sentence_index, span.start, span.length, span.sentinel_z))
    return b"".join(parts)


@dataclass
class Shard:
    objective: str
    vocab_size: int
    examples: list[CorruptedExample] = field(default_factory=list)


def read_shard(path: str | Path, vocab: Vocab | None = None) -> Shard:
    """Load a shard; sentence positions are recomputed from the IDs."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _SHARD_MAGIC:
            raise CorruptionError(f"{path}: not a shard file (bad magic {magic!r})")
        version, objective_code, vocab_size = struct.unpack("<IBI", _read_exact(fh, 9))
        if version != _SHARD_VERSION:
            raise CorruptionError(f"{path}: unsupported shard version {version}")
        if objective_code >= len(OBJECTIVES):
            raise CorruptionError(f"{path}: unknown objective code {objective_code}")
        shard = Shard(objective=OBJECTIVES[objective_code], vocab_size=vocab_size)
        while True:
            prefix = fh.read(4)
            if not prefix:
                break
            if len(prefix) != 4:
                raise CorruptionError(f"{path}: truncated record length prefix")
            (payload_len,) = struct.unpack("<I", prefix)
            shard.examples.append(_unpack_example(_read_exact(fh, payload_len), vocab, vocab_size))
    return shard


def _unpack_example(payload: bytes, vocab: Vocab | None, vocab_size: int) -> CorruptedExample:
    header_size = struct.calcsize("<QBHIIIH")
    doc_id, flags, m, enc_len, dec_len, tgt_len, n_spans = struct.unpack(
        "<QBHIIIH", payload[:header_size]
    )
    offset = header_size
    permutation = tuple(int(x) for x in np.frombuffer(payload, "<u2", m, offset))
    offset += 2 * m
    encoder = tuple(int(x) for x in np.frombuffer(payload, "<u4", enc_len, offset))
    offset += 4 * enc_len
    decoder = tuple(int(x) for x in np.frombuffer(payload, "<u4", dec_len, offset))
    offset += 4 * dec_len
    target = tuple(int(x) for x in np.frombuffer(payload, "<u4", tgt_len, offset))
    offset += 4 * tgt_len
    spans = []
    span_size = struct.calcsize("<HIHB")
    for _ in range(n_spans):
        s_idx, s_start, s_len, s_z = struct.unpack("<HIHB", payload[offset : offset + span_size])
        spans.append(SpanRecord(s_idx, s_start, s_len, s_z))
        offset += span_size
    if offset != len(payload):
        raise CorruptionError("shard record has trailing bytes")

    if vocab is not None:
        enc_pos = tuple(i for i, t in enumerate(encoder) if vocab.is_sentence_token(t))
        dec_pos = tuple(i for i, t in enumerate(decoder) if vocab.is_sentence_token(t))
    else:
        enc_pos = ()
        dec_pos = ()
    return CorruptedExample(
        doc_id=doc_id,
        encoder_ids=encoder,
        decoder_input_ids=decoder,
        target_ids=target,
        spans=tuple(spans),
        permutation=permutation,
        shuffled=bool(flags & 1),
        sentence_positions_enc=enc_pos,
        sentence_positions_dec=dec_pos,
    )


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptionError("truncated shard file")
    return data
