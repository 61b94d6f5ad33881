"""Exact word error rate: alignment counts, aggregates, and the confidence baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from .errors import DataError

if TYPE_CHECKING:  # import cycle: dataset imports this module at runtime
    from .dataset import UtteranceRecord


@dataclass(frozen=True)
class ErrorCounts:
    """Substitution / insertion / deletion tallies against a reference."""

    substitutions: int
    insertions: int
    deletions: int
    reference_words: int

    def __post_init__(self):
        for field in ("substitutions", "insertions", "deletions", "reference_words"):
            if getattr(self, field) < 0:
                raise DataError(f"{field} must be >= 0")
        if self.deletions > self.reference_words:
            raise DataError("cannot delete more words than the reference holds")

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


@dataclass(frozen=True)
class ScoredPair:
    """One utterance with its alignment counts and clamped WER."""

    record: "UtteranceRecord"
    counts: ErrorCounts
    wer: float


def normalize_text(text: str) -> str:
    """Lowercase and collapse runs of whitespace to single spaces."""
    return " ".join(text.lower().split())


def tokens(text: str, normalize: bool = True) -> list[str]:
    """Split text into word tokens, normalising first unless told not to."""
    if normalize:
        text = normalize_text(text)
    return text.split()


def word_error_counts(reference: list[str], hypothesis: list[str]) -> ErrorCounts:
    """Count S/I/D along a minimum-edit-cost alignment with unit costs.

    The backtrace prefers substitution over insertion over deletion on
    equal-cost paths; the split can vary between equally cheap
    alignments but the total S+I+D is the word-level edit distance and
    does not.
    """
    if not reference:
        raise DataError("WER is undefined for an empty reference")
    n, m = len(reference), len(hypothesis)
    # dist[i][j]: cheapest way to turn reference[:i] into hypothesis[:j].
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ref_word = reference[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            same = ref_word == hypothesis[j - 1]
            row[j] = min(prev[j - 1] + (0 if same else 1), row[j - 1] + 1, prev[j] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and reference[i - 1] == hypothesis[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorCounts(subs, ins, dels, n)


def wer(counts: ErrorCounts, clamp: bool = True) -> float:
    """Error rate (S+I+D)/N_ref, capped at 1.0 unless clamping is off."""
    if counts.reference_words == 0:
        raise DataError("WER is undefined for an empty reference")
    rate = counts.total / counts.reference_words
    return min(1.0, rate) if clamp else rate


def score_pair(record: "UtteranceRecord", clamp: bool = True, normalize: bool = True) -> ScoredPair:
    """Align one record's hypothesis against its reference."""
    if record.reference is None:
        raise DataError(f"record {record.id!r} has no reference transcript")
    counts = word_error_counts(
        tokens(record.reference, normalize), tokens(record.hypothesis, normalize)
    )
    return ScoredPair(record, counts, wer(counts, clamp))


def weighted_wer_by_words(pairs: Iterable[ScoredPair]) -> float:
    """Corpus WER with every utterance weighted by its reference length.

    Uses unclamped error totals: this is the ratio of all errors to all
    words, not a mean of per-utterance rates.
    """
    errors = words = 0
    for pair in pairs:
        errors += pair.counts.total
        words += pair.counts.reference_words
    if words == 0:
        raise DataError("word-weighted WER is undefined with zero reference words")
    return errors / words


def weighted_estimate_by_duration(estimates: Iterable[tuple[float, float]]) -> float:
    """Duration-weighted mean of (estimate, duration_seconds) pairs."""
    num = den = 0.0
    for est, dur in estimates:
        if dur <= 0:
            raise DataError(f"durations must be positive, got {dur}")
        num += est * dur
        den += dur
    if den == 0:
        raise DataError("duration-weighted estimate needs at least one pair")
    return num / den


def werr(target_wrd: float, estimate_dur: float) -> float:
    """Relative gap between the word-weighted target and the duration-weighted estimate."""
    if target_wrd == 0:
        raise DataError("WERR is undefined when the target rate is zero")
    return abs(target_wrd - estimate_dur) / target_wrd


def confidence_score(token_logprobs: list[float], as_probability: bool = False) -> float:
    """Decoder-confidence WER estimate: one minus the mean token log-probability.

    Taken literally this exceeds 1 whenever decoding was not certain,
    and it is deliberately not clamped. as_probability switches to
    1 - exp(mean), which stays in [0, 1); that variant is an offered
    alternative, not the primary definition.
    """
    if not token_logprobs:
        raise DataError("confidence score needs at least one token log-probability")
    for lp in token_logprobs:
        if not math.isfinite(lp):
            raise DataError(f"token log-probabilities must be finite, got {lp}")
        if lp > 0:
            raise DataError(f"token log-probabilities must be <= 0, got {lp}")
    mean = sum(token_logprobs) / len(token_logprobs)
    return 1.0 - math.exp(mean) if as_probability else 1.0 - mean
