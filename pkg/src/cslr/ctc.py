"""CTC alignment: log-domain forward/backward loss, an exhaustive-path
oracle for small instances, and greedy / prefix beam decoding.

Blank is id 0 throughout; gloss ids are 1..|V|.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cslr import kernels
from cslr.autodiff import Tensor, as_tensor, log_softmax, make_node

BLANK = 0
DEFAULT_BEAM_WIDTH = 10
_BRUTEFORCE_MAX_T = 8

NEG_INF = -math.inf


def collapse(path: Sequence[int]) -> list[int]:
    """Merge adjacent repeats, then drop blanks (the standard mapping)."""
    out: list[int] = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != BLANK]


def is_feasible(t_len: int, labels: Sequence[int]) -> bool:
    """True when at least one length-T path collapses to the label sequence."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return t_len >= len(labels) + repeats


def ctc_loss(logits, labels: Sequence[int]) -> Tensor:
    """Negative log-likelihood of the label sequence under the logits.

    Differentiable w.r.t. the logits. An infeasible label/length pair
    yields a constant +inf tensor instead of raising, so callers can
    detect and skip the sample.
    """
    logits = as_tensor(logits)
    labels = np.asarray(list(labels), dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() >= logits.shape[1]):
        raise ValueError("label ids must lie in [1, vocab_size]")
    if not is_feasible(logits.shape[0], labels.tolist()):
        return Tensor(np.float64(np.inf))
    lp = log_softmax(logits, axis=1)
    loss, grad = kernels.ctc_loss_grad(np.ascontiguousarray(lp.data), labels)
    if not np.isfinite(loss):
        return Tensor(np.float64(np.inf))
    return make_node(np.float64(loss), (lp,), lambda g: (g * grad,))


def _path_table(t_len: int, n_classes: int) -> dict[tuple[int, ...], list[int]]:
    """Group every length-T path index by its collapsed label sequence."""
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, path in enumerate(itertools.product(range(n_classes), repeat=t_len)):
        groups.setdefault(tuple(collapse(path)), []).append(i)
    return groups


_path_cache: dict[tuple[int, int], tuple[np.ndarray, dict]] = {}


def _paths_and_groups(t_len: int, n_classes: int):
    key = (t_len, n_classes)
    if key not in _path_cache:
        paths = np.array(list(itertools.product(range(n_classes), repeat=t_len)), dtype=np.int64)
        _path_cache[key] = (paths, _path_table(t_len, n_classes))
    return _path_cache[key]


def ctc_bruteforce(logits, labels: Sequence[int]) -> float:
    """Loss by exhaustive path enumeration; the definitional oracle."""
    logits = as_tensor(logits)
    t_len, n_classes = logits.shape
    if t_len > _BRUTEFORCE_MAX_T:
        raise ValueError(f"brute force limited to T <= {_BRUTEFORCE_MAX_T}, got {t_len}")
    lp = log_softmax(logits, axis=1).data
    paths, groups = _paths_and_groups(t_len, n_classes)
    idx = groups.get(tuple(labels))
    if not idx:
        return math.inf
    scores = lp[np.arange(t_len), paths[idx]].sum(axis=1)
    m = scores.max()
    return float(-(m + np.log(np.exp(scores - m).sum())))


@dataclass
class DecodeResult:
    ids: list[int]
    log_prob: float
    method: str = "greedy"


def greedy_decode(logits) -> DecodeResult:
    """Best-path decode: per-frame argmax (ties to lowest id), then collapse."""
    logits = as_tensor(logits)
    lp = log_softmax(logits, axis=1).data
    picks = np.argmax(lp, axis=1)
    score = float(lp[np.arange(lp.shape[0]), picks].sum())
    return DecodeResult(ids=collapse(picks.tolist()), log_prob=score, method="greedy")


def beam_decode(logits, width: int = DEFAULT_BEAM_WIDTH) -> DecodeResult:
    """CTC prefix beam search merging hypotheses by collapsed prefix.

    Width 1 delegates to greedy best-path decoding (the merged search can
    legitimately disagree with best-path at width 1, and the contract here
    is that they coincide).
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    if width == 1:
        res = greedy_decode(logits)
        return DecodeResult(ids=res.ids, log_prob=res.log_prob, method="beam1")
    logits = as_tensor(logits)
    lp = log_softmax(logits, axis=1).data
    t_len, n_classes = lp.shape

    # per prefix: (log p ending in blank, log p ending in its last symbol)
    beams: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(t_len):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def bump(prefix, slot, value):
            cur = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            cur[slot] = np.logaddexp(cur[slot], value)

        for prefix, (lb, lnb) in beams.items():
            total = np.logaddexp(lb, lnb)
            bump(prefix, 0, total + row[BLANK])
            if prefix:
                bump(prefix, 1, lnb + row[prefix[-1]])
            for c in range(1, n_classes):
                if prefix and c == prefix[-1]:
                    bump(prefix + (c,), 1, lb + row[c])
                else:
                    bump(prefix + (c,), 1, total + row[c])
        ranked = sorted(
            nxt.items(), key=lambda kv: -np.logaddexp(kv[1][0], kv[1][1])
        )[:width]
        beams = {p: (v[0], v[1]) for p, v in ranked}

    best, (lb, lnb) = max(beams.items(), key=lambda kv: np.logaddexp(kv[1][0], kv[1][1]))
    return DecodeResult(
        ids=list(best), log_prob=float(np.logaddexp(lb, lnb)), method=f"beam{width}"
    )
