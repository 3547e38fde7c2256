"""Word error rate via minimum-edit-distance alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass
class Alignment:
    deletions: int
    substitutions: int
    insertions: int
    matches: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.deletions + self.substitutions + self.insertions


def edit_alignment(ref: Sequence, hyp: Sequence) -> Alignment:
    """Levenshtein alignment with unit costs.

    Cost ties during backtrace prefer match > substitution > deletion >
    insertion, which makes the reported counts deterministic.
    """
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i][j] = min(
                dist[i - 1][j - 1] + (0 if same else 1),
                dist[i - 1][j] + 1,
                dist[i][j - 1] + 1,
            )

    dels = subs = ins = matches = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            matches += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return Alignment(deletions=dels, substitutions=subs, insertions=ins,
                     matches=matches, ref_len=n)


def wer(ref: Sequence, hyp: Sequence) -> float:
    """(deletions + substitutions + insertions) / reference length; may exceed 1."""
    if len(ref) == 0:
        raise ValueError("WER is undefined for an empty reference")
    return edit_alignment(ref, hyp).errors / len(ref)


def corpus_wer(pairs: Sequence[tuple[Sequence, Sequence]]) -> float:
    """Total errors over total reference glosses (sclite-style aggregation)."""
    errors = 0
    ref_total = 0
    for ref, hyp in pairs:
        a = edit_alignment(ref, hyp)
        errors += a.errors
        ref_total += a.ref_len
    if ref_total == 0:
        raise ValueError("corpus WER is undefined with no reference glosses")
    return errors / ref_total
