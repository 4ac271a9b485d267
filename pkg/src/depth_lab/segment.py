"""Rule-based sentence segmentation.

A boundary is a '.', '!' or '?' (optionally followed by closing quotes or
brackets), then whitespace, then an uppercase letter, digit, or opening
quote.  A fixed abbreviation list plus a single-initial rule ("J. Smith")
suppress false boundaries.  Newlines count as ordinary whitespace, never as
hard boundaries.

Segmentation is lossless modulo whitespace normalization: joining the
returned sentences with single spaces reproduces the whitespace-normalized
input.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

_TERMINATORS = ".!?"
_CLOSERS = "\"')]}’”"  # straight/curly closing quotes, brackets
_OPENERS = "\"'([{‘“"

# candidate boundary: terminator + optional closers, a whitespace run, then
# an upper-case letter, digit, or opening quote
_BOUNDARY_RE = re.compile(
    rf"[{re.escape(_TERMINATORS)}][{re.escape(_CLOSERS)}]*\s+(?=[A-Z0-9{re.escape(_OPENERS)}])"
)

_SINGLE_INITIAL_RE = re.compile(r"(?:^|[\s" + re.escape(_OPENERS) + r"])[A-Z]\.$")

_WS_RE = re.compile(r"\s+")


def _builtin_abbreviations() -> frozenset[str]:
    text = resources.files("depth_lab.data").joinpath("abbreviations.txt").read_text("utf-8")
    return _parse_abbreviations(text)


def _parse_abbreviations(text: str) -> frozenset[str]:
    entries = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if not line or line.startswith("#"):
            continue
        if not line.endswith("."):
            line += "."
        entries.add(line)
    return frozenset(entries)


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    """Load the abbreviation list, either the shipped one or an override file."""
    if path is None:
        return _builtin_abbreviations()
    return _parse_abbreviations(Path(path).read_text("utf-8"))


_DEFAULT_ABBREVIATIONS = _builtin_abbreviations()


def _ends_with_abbreviation(prefix: str, abbreviations: frozenset[str]) -> bool:
    """True if the text up to and including a '.' ends in a known abbreviation."""
    word_match = re.search(r"(\S+)$", prefix)
    if word_match is None:
        return False
    word = word_match.group(1)
    # strip opening quotes/brackets glued to the word
    word = word.lstrip(_OPENERS)
    if word.lower() in abbreviations:
        return True
    return _SINGLE_INITIAL_RE.search(" " + word) is not None


def segment(text: str, abbreviations: frozenset[str] | None = None) -> list[str]:
    """Split ``text`` into sentences.

    Text without any accepted boundary comes back as a single sentence.
    Every returned sentence is non-empty and internally whitespace-normalized.
    """
    if not text.strip():
        raise ValueError("cannot segment empty text")
    abbrevs = _DEFAULT_ABBREVIATIONS if abbreviations is None else abbreviations
    normalized = _WS_RE.sub(" ", text).strip()

    sentences: list[str] = []
    start = 0
    for match in _BOUNDARY_RE.finditer(normalized):
        terminator_end = match.start() + 1  # position just past the ./!/? char
        if normalized[match.start()] == "." and _ends_with_abbreviation(
            normalized[:terminator_end], abbrevs
        ):
            continue
        piece = normalized[start : match.end()].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = normalized[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences
