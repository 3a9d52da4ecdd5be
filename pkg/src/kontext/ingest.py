"""Token-corpus ingestion: turn sequence data into empirical models.

A window of length 2n is split into an n-token prefix (the conditioning
segment) and an n-token continuation (the predicted segment). Observables
are (position, token) slots: position i holding token t is the observable
i * alphabet + t, so identical prefixes merge into one context, different
prefixes are different observable subsets, and two contexts constrain each
other exactly where they agree on a slot. Outcome tuples align position by
position with the prefix, matching the stepwise prediction task.

Padding draws i.i.d. uniform tokens. Window-level padding (``pad_to``)
extends both halves of each window to a common length, which adds
fully-supported uniform positions and therefore preserves the contextuality
number; the corpus-level ``pad_sequences`` just extends raw sequences.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyModel, ParseError, UnknownToken
from .model import Context, EmpiricalModel


@dataclass(frozen=True)
class Corpus:
    alphabet: tuple[str, ...]
    sequences: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for i, seq in enumerate(self.sequences):
            if len(seq) == 0:
                raise ValueError(f"sequence {i} is empty")
            if any(t < 0 or t >= len(self.alphabet) for t in seq):
                raise ValueError(f"sequence {i} has a token outside the alphabet")


@dataclass(frozen=True)
class WindowedModelSpec:
    """Window geometry: prefix length n, slide step, context frequency floor.

    ``pad_to`` extends each window half with seeded uniform tokens to that
    length before counting (None disables padding).
    """

    n: int
    stride: int = 1
    min_count: int = 2
    pad_to: int | None = None
    pad_seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.pad_to is not None and self.pad_to < self.n:
            raise ValueError("pad_to must be >= n")


def _tokenize_line(line: str, index: dict[str, int], alphabet_fixed: bool, lineno: int):
    tokens = []
    for ch in line.strip().lower():
        if ch.isspace():
            continue
        if ch not in index:
            if alphabet_fixed:
                raise UnknownToken(f"token {ch!r} not in the supplied alphabet", line=lineno)
            index[ch] = len(index)
        tokens.append(index[ch])
    return tokens


def load_corpus(
    path: str,
    format: str = "plain",
    alphabet: str | None = None,
    csv_column: int = 0,
) -> Corpus:
    """Read a token corpus.

    plain: one sequence per line; fasta-lite: ">" header lines start a new
    record and are dropped, other lines concatenate into the current record;
    csv: one sequence per row taken from ``csv_column``. Tokens are single
    characters, case-folded, indexed by first appearance unless ``alphabet``
    pins the mapping.
    """
    if format not in ("plain", "fasta", "csv"):
        raise ParseError(f"unknown corpus format {format!r}")
    index: dict[str, int] = {}
    fixed = alphabet is not None
    if fixed:
        for ch in alphabet.lower():
            if ch in index:
                raise ParseError(f"alphabet repeats token {ch!r}")
            index[ch] = len(index)
    sequences: list[tuple[int, ...]] = []
    with open(path, "r", encoding="utf-8") as fh:
        if format == "csv":
            reader = _csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row:
                    continue
                if csv_column >= len(row):
                    raise ParseError(f"row has no column {csv_column}", line=lineno)
                toks = _tokenize_line(row[csv_column], index, fixed, lineno)
                if toks:
                    sequences.append(tuple(toks))
        elif format == "fasta":
            current: list[int] = []
            for lineno, line in enumerate(fh, start=1):
                if line.startswith(">"):
                    if current:
                        sequences.append(tuple(current))
                        current = []
                    continue
                current.extend(_tokenize_line(line, index, fixed, lineno))
            if current:
                sequences.append(tuple(current))
        else:
            for lineno, line in enumerate(fh, start=1):
                toks = _tokenize_line(line, index, fixed, lineno)
                if toks:
                    sequences.append(tuple(toks))
    if not sequences:
        raise ParseError("corpus contains no sequences")
    return Corpus(alphabet=tuple(index), sequences=tuple(sequences))


def pad_sequences(corpus: Corpus, target_len: int, seed: int = 0) -> Corpus:
    """Append i.i.d. uniform tokens so every sequence reaches ``target_len``."""
    longest = max(len(s) for s in corpus.sequences)
    if target_len < longest:
        raise ValueError(f"target_len {target_len} shorter than longest sequence {longest}")
    rng = np.random.default_rng(seed)
    padded = []
    for seq in corpus.sequences:
        need = target_len - len(seq)
        if need == 0:
            padded.append(seq)
        else:
            extra = tuple(int(t) for t in rng.integers(0, len(corpus.alphabet), size=need))
            padded.append(seq + extra)
    return Corpus(alphabet=corpus.alphabet, sequences=tuple(padded))


def windowed_model(corpus: Corpus, spec: WindowedModelSpec) -> EmpiricalModel:
    """Empirical next-segment model from sliding windows.

    Scans windows of length 2n at the given stride; each distinct prefix
    (after optional half-padding) becomes a context whose distribution is
    the empirical frequency of its continuations. Contexts seen fewer than
    ``min_count`` times are dropped; raises EmptyModel if nothing survives.
    """
    n = spec.n
    alpha = len(corpus.alphabet)
    counts: dict[tuple[int, ...], dict[tuple[int, ...], int]] = {}
    windows_scanned = 0
    for seq in corpus.sequences:
        if len(seq) < 2 * n:
            continue
        for start in range(0, len(seq) - 2 * n + 1, spec.stride):
            prefix = seq[start : start + n]
            suffix = seq[start + n : start + 2 * n]
            counts.setdefault(prefix, {})
            counts[prefix][suffix] = counts[prefix].get(suffix, 0) + 1
            windows_scanned += 1
    kept = {
        prefix: suffixes
        for prefix, suffixes in counts.items()
        if sum(suffixes.values()) >= spec.min_count
    }
    if not kept:
        raise EmptyModel(
            f"no prefix reached min_count={spec.min_count} over {windows_scanned} windows"
        )
    pad = 0 if spec.pad_to is None else spec.pad_to - n
    rng = np.random.default_rng(spec.pad_seed)
    padded: dict[tuple[int, ...], dict[tuple[int, ...], float]] = {}
    for prefix in sorted(kept):
        total = sum(kept[prefix].values())
        dist = {suffix: c / total for suffix, c in sorted(kept[prefix].items())}
        if pad:
            # one fixed prefix draw per context; outcome pad positions carry
            # the full uniform alphabet, which leaves sections (and k) alone
            prefix = prefix + tuple(int(t) for t in rng.integers(0, alpha, size=pad))
            scale = float(alpha) ** pad
            import itertools as _it

            dist = {
                suffix + tail: p / scale
                for suffix, p in dist.items()
                for tail in _it.product(range(alpha), repeat=pad)
            }
        padded[prefix] = dist
    used_slots = sorted({
        i * alpha + t for prefix in padded for i, t in enumerate(prefix)
    })
    slot_of = {s: j for j, s in enumerate(used_slots)}
    contexts = []
    distributions = []
    for cid, prefix in enumerate(sorted(padded)):
        observables = tuple(slot_of[i * alpha + t] for i, t in enumerate(prefix))
        contexts.append(Context(id=cid, observables=observables))
        distributions.append(padded[prefix])
    return EmpiricalModel(
        num_observables=len(used_slots),
        num_outcomes=alpha,
        contexts=tuple(contexts),
        distributions=tuple(distributions),
        consistency_enforced=False,
    )


def window_counts(corpus: Corpus, spec: WindowedModelSpec) -> tuple[int, int]:
    """(windows scanned, windows kept) for the conservation check."""
    n = spec.n
    scanned = 0
    counts: dict[tuple[int, ...], int] = {}
    for seq in corpus.sequences:
        if len(seq) < 2 * n:
            continue
        for start in range(0, len(seq) - 2 * n + 1, spec.stride):
            prefix = seq[start : start + n]
            counts[prefix] = counts.get(prefix, 0) + 1
            scanned += 1
    kept = sum(c for c in counts.values() if c >= spec.min_count)
    return scanned, kept
