"""Word and character error rates from Levenshtein distance."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .text import graphemes


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost insert/delete/substitute distance, two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


class UndefinedRateError(ValueError):
    def __init__(self, distance: int):
        super().__init__(f"empty reference with non-empty hypothesis (distance {distance})")
        self.distance = distance


@dataclass(frozen=True)
class ErrorRateReport:
    distance: int
    reference_length: int

    @property
    def rate(self) -> float:
        """Percentage; may exceed 100."""
        if self.reference_length == 0:
            if self.distance == 0:
                return 0.0
            raise UndefinedRateError(self.distance)
        return 100.0 * self.distance / self.reference_length

    def __add__(self, other: "ErrorRateReport") -> "ErrorRateReport":
        return ErrorRateReport(self.distance + other.distance, self.reference_length + other.reference_length)


def words(text: str) -> list[str]:
    return text.split()


def wer(ref: str, hyp: str) -> ErrorRateReport:
    r = words(ref)
    return ErrorRateReport(levenshtein(r, words(hyp)), len(r))


def cer(ref: str, hyp: str) -> ErrorRateReport:
    r = graphemes(ref)
    return ErrorRateReport(levenshtein(r, graphemes(hyp)), len(r))


def corpus_rates(pairs: Iterable[tuple[str, str]]) -> tuple[ErrorRateReport, ErrorRateReport]:
    """Aggregate distances over all utterances before dividing."""
    w = c = ErrorRateReport(0, 0)
    for ref, hyp in pairs:
        w = w + wer(ref, hyp)
        c = c + cer(ref, hyp)
    return w, c


def _rate_or_none(r: ErrorRateReport) -> float | None:
    try:
        return round(r.rate, 4)
    except UndefinedRateError:
        return None


def write_report(out: TextIO, rows: Sequence[dict]) -> dict:
    """Write one JSON object per utterance, then a ``summary`` object.

    Each row carries ``id`` and ``ref`` plus either ``hyp`` or ``error``.
    Failed rows are listed but excluded from corpus totals.
    """
    w = c = ErrorRateReport(0, 0)
    n_ok = n_err = 0
    for row in rows:
        rec = {"id": row["id"], "ref": row["ref"]}
        if "error" in row:
            rec.update(hyp=None, wer=None, cer=None, error=row["error"])
            n_err += 1
        else:
            rw, rc = wer(row["ref"], row["hyp"]), cer(row["ref"], row["hyp"])
            w, c = w + rw, c + rc
            rec.update(hyp=row["hyp"], wer=_rate_or_none(rw), cer=_rate_or_none(rc))
            n_ok += 1
        out.write(json.dumps(rec, ensure_ascii=False) + "\n")
    summary = {
        "summary": True,
        "utterances": n_ok,
        "errors": n_err,
        "cer": _rate_or_none(c),
        "wer": _rate_or_none(w),
        "char_edits": c.distance,
        "chars": c.reference_length,
        "word_edits": w.distance,
        "words": w.reference_length,
    }
    out.write(json.dumps(summary) + "\n")
    return summary
