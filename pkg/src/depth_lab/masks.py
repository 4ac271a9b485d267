"""Hierarchical boolean attention masks (True = attention allowed).

Rules, applied per example:

* encoder self: regular tokens attend to every non-pad position; a
  ``<SENT_i>`` row attends exactly to its own sentence's interval, from its
  own position through that sentence's ``<EOSEN>`` (sentinels inside the
  sentence included).
* decoder self: causal everywhere; rows whose input token is ``<SENT_i>``
  are further restricted to earlier sentence-token columns plus self.
* cross: regular decoder rows see the whole non-pad encoder input;
  ``<SENT_i>`` decoder rows see exactly the encoder's sentence-token columns.

Pad rows and columns are all False.  Sequences without sentence tokens
(the t5 objective) degrade to plain bidirectional / causal / full masks.

``eosen_hierarchical=True`` widens the hierarchical token set for the
decoder-self and cross rules from {<SENT_i>} to the full sentence-token set
{<SENT_i>, <EOSEN>}; the encoder rule is unaffected either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .corruption import CorruptedExample
from .tokenizer import Vocab


class FrameError(ValueError):
    """Raised when a sequence violates the (SENT body+ EOSEN)+ EOS frame."""


@dataclass
class AttentionMaskSet:
    enc_self: np.ndarray  # (Le, Le) bool
    dec_self: np.ndarray  # (Ld, Ld) bool
    cross: np.ndarray  # (Ld, Le) bool


def _as_array(ids: Sequence[int]) -> np.ndarray:
    return np.asarray(list(ids), dtype=np.int64)


def _hier_row_set(ids: np.ndarray, vocab: Vocab, eosen_hierarchical: bool) -> np.ndarray:
    is_sent = (ids >= vocab.sentence_base) & (ids < vocab.sentence_base + vocab.k)
    if eosen_hierarchical:
        return is_sent | (ids == vocab.eosen_id)
    return is_sent


def build_encoder_mask(encoder_ids: Sequence[int], vocab: Vocab) -> np.ndarray:
    """Encoder self-attention mask; raises FrameError on an unclosed sentence."""
    ids = _as_array(encoder_ids)
    n = len(ids)
    non_pad = ids != vocab.pad_id
    mask = non_pad[None, :] & non_pad[:, None]
    for start, end in _sentence_intervals(ids, vocab):
        row = np.zeros(n, dtype=bool)
        row[start : end + 1] = True
        mask[start] = row & non_pad
    return mask


def _sentence_intervals(ids: np.ndarray, vocab: Vocab) -> Iterator[tuple[int, int]]:
    """Yield (sent_pos, eosen_pos) pairs; validates SENT..EOSEN pairing."""
    open_pos: int | None = None
    for pos, tok in enumerate(ids):
        tok = int(tok)
        if vocab.is_sentence_token(tok):
            if open_pos is not None:
                raise FrameError(
                    f"<SENT> at position {open_pos} has no <EOSEN> before position {pos}"
                )
            open_pos = pos
        elif tok == vocab.eosen_id and open_pos is not None:
            yield open_pos, pos
            open_pos = None
    if open_pos is not None:
        raise FrameError(f"<SENT> at position {open_pos} has no following <EOSEN>")


def build_decoder_mask(
    decoder_input_ids: Sequence[int], vocab: Vocab, eosen_hierarchical: bool = False
) -> np.ndarray:
    """Causal mask, with sentence-token rows restricted to past sentence tokens."""
    ids = _as_array(decoder_input_ids)
    n = len(ids)
    non_pad = ids != vocab.pad_id
    causal = np.tril(np.ones((n, n), dtype=bool))
    mask = causal & non_pad[None, :] & non_pad[:, None]
    hier = _hier_row_set(ids, vocab, eosen_hierarchical)
    sent_cols = hier & non_pad
    for q in np.flatnonzero(hier & non_pad):
        row = sent_cols.copy()
        row[q + 1 :] = False
        row[q] = True  # self-attention always permitted
        mask[q] = row
    return mask


def build_cross_mask(
    decoder_input_ids: Sequence[int],
    encoder_ids: Sequence[int],
    vocab: Vocab,
    eosen_hierarchical: bool = False,
) -> np.ndarray:
    """Decoder-to-encoder mask: full rows except sentence-token queries."""
    dec = _as_array(decoder_input_ids)
    enc = _as_array(encoder_ids)
    dec_non_pad = dec != vocab.pad_id
    enc_non_pad = enc != vocab.pad_id
    mask = dec_non_pad[:, None] & enc_non_pad[None, :]
    hier_rows = _hier_row_set(dec, vocab, eosen_hierarchical) & dec_non_pad
    enc_sent_cols = _hier_row_set(enc, vocab, eosen_hierarchical) & enc_non_pad
    mask[hier_rows] = enc_sent_cols
    return mask


def build_mask_set(
    encoder_ids: Sequence[int],
    decoder_input_ids: Sequence[int],
    vocab: Vocab,
    eosen_hierarchical: bool = False,
) -> AttentionMaskSet:
    return AttentionMaskSet(
        enc_self=build_encoder_mask(encoder_ids, vocab),
        dec_self=build_decoder_mask(decoder_input_ids, vocab, eosen_hierarchical),
        cross=build_cross_mask(decoder_input_ids, encoder_ids, vocab, eosen_hierarchical),
    )


# ---------------------------------------------------------------------------
# independent verification
# ---------------------------------------------------------------------------


@dataclass
class MaskReport:
    mismatches: list[tuple[str, int, int, bool, bool]]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def summary(self) -> str:
        if self.ok:
            return "masks conform"
        lines = [f"{len(self.mismatches)} mismatching cells:"]
        lines += [
            f"  {name}[{r}][{c}]: expected {exp}, got {got}"
            for name, r, c, exp, got in self.mismatches[:20]
        ]
        if len(self.mismatches) > 20:
            lines.append("  ...")
        return "\n".join(lines)


def verify_masks(
    example: CorruptedExample,
    masks: AttentionMaskSet,
    vocab: Vocab,
    eosen_hierarchical: bool = False,
) -> MaskReport:
    """Recompute every cell from first principles and diff against the builder.

    Deliberately naive (per-cell predicates with linear scans) so it shares
    no code with the builders above.
    """
    enc = list(example.encoder_ids)
    dec = list(example.decoder_input_ids)
    # extend with whatever padding the caller baked into the matrices
    enc += [vocab.pad_id] * (masks.enc_self.shape[0] - len(enc))
    dec += [vocab.pad_id] * (masks.dec_self.shape[0] - len(dec))

    def in_sent_set(tok: int) -> bool:
        if vocab.is_sentence_token(tok):
            return True
        return eosen_hierarchical and tok == vocab.eosen_id

    def own_sentence_end(pos: int) -> int:
        for u in range(pos + 1, len(enc)):
            if enc[u] == vocab.eosen_id:
                return u
        raise FrameError(f"<SENT> at position {pos} has no following <EOSEN>")

    def enc_cell(q: int, u: int) -> bool:
        if enc[q] == vocab.pad_id or enc[u] == vocab.pad_id:
            return False
        if vocab.is_sentence_token(enc[q]):
            return q <= u <= own_sentence_end(q)
        return True

    def dec_cell(q: int, u: int) -> bool:
        if dec[q] == vocab.pad_id or dec[u] == vocab.pad_id:
            return False
        if u > q:
            return False
        if in_sent_set(dec[q]):
            return u == q or in_sent_set(dec[u])
        return True

    def cross_cell(q: int, u: int) -> bool:
        if dec[q] == vocab.pad_id or enc[u] == vocab.pad_id:
            return False
        if in_sent_set(dec[q]):
            return in_sent_set(enc[u])
        return True

    mismatches: list[tuple[str, int, int, bool, bool]] = []
    for name, matrix, predicate in (
        ("enc_self", masks.enc_self, enc_cell),
        ("dec_self", masks.dec_self, dec_cell),
        ("cross", masks.cross, cross_cell),
    ):
        rows, cols = matrix.shape
        for q in range(rows):
            for u in range(cols):
                expected = predicate(q, u)
                got = bool(matrix[q, u])
                if expected != got:
                    mismatches.append((name, q, u, expected, got))
    return MaskReport(mismatches=mismatches)


# ---------------------------------------------------------------------------
# inspection dumps
# ---------------------------------------------------------------------------


def ascii_grid(mask: np.ndarray) -> str:
    return "\n".join("".join("#" if cell else "." for cell in row) for row in mask)


def to_pbm(mask: np.ndarray) -> str:
    """Portable bitmap (P1); allowed cells are black (1)."""
    rows, cols = mask.shape
    body = "\n".join(" ".join("1" if cell else "0" for cell in row) for row in mask)
    return f"P1\n{cols} {rows}\n{body}\n"
