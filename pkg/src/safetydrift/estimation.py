"""Transition-matrix estimation from labeled risk-level sequences.

Supports first-order 5x5 chains and higher-order chains embedded as a
first-order chain over k-tuples of levels (5^k context rows, 5 target
columns). Row contexts are indexed by base-5 positional encoding, oldest
level first.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .state_model import RiskLevel

N_LEVELS = len(RiskLevel)
LEVEL_NAMES = [lv.name for lv in RiskLevel]

MATRIX_FORMAT_VERSION = 1

# Floor for log-likelihood contributions of zero-probability transitions.
LOG_FLOOR_P = 1e-12


class EmptyCorpus(Exception):
    """No transitions available to estimate or score."""


class InvalidCount(Exception):
    """Wilson interval inputs out of range."""


@dataclass
class TransitionCounts:
    order: int
    counts: np.ndarray  # shape (5**order, 5), nonnegative ints

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class TransitionMatrix:
    order: int
    probs: np.ndarray  # shape (5**order, 5), row-stochastic
    counts: Optional[TransitionCounts] = None
    category: str = ""

    @property
    def rows(self) -> int:
        return N_LEVELS**self.order

    def context_index(self, context: Sequence[int]) -> int:
        """Base-5 encoding of a k-tuple of levels, oldest first."""
        idx = 0
        for level in context:
            idx = idx * N_LEVELS + int(level)
        return idx

    def index_context(self, index: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.order):
            index, level = divmod(index, N_LEVELS)
            out.append(level)
        return tuple(reversed(out))

    def row(self, context: Sequence[int]) -> np.ndarray:
        return self.probs[self.context_index(context)]

    def wilson_bounds(self, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
        """Per-entry Wilson bounds from the stored counts."""
        if self.counts is None:
            raise EmptyCorpus("matrix has no provenance counts")
        lo = np.zeros_like(self.probs)
        hi = np.zeros_like(self.probs)
        for i in range(self.probs.shape[0]):
            n = int(self.counts.counts[i].sum())
            for j in range(N_LEVELS):
                if n == 0:
                    lo[i, j], hi[i, j] = 0.0, 1.0
                else:
                    ci = wilson_ci(int(self.counts.counts[i, j]), n, z)
                    lo[i, j], hi[i, j] = ci.lo, ci.hi
        return lo, hi

    def to_dict(self) -> dict:
        out = {
            "format_version": MATRIX_FORMAT_VERSION,
            "order": self.order,
            "category": self.category,
            "levels": LEVEL_NAMES,
            "probabilities": self.probs.tolist(),
        }
        if self.counts is not None:
            out["counts"] = self.counts.counts.astype(int).tolist()
            lo, hi = self.wilson_bounds()
            out["wilson_lo"] = np.round(lo, 6).tolist()
            out["wilson_hi"] = np.round(hi, 6).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TransitionMatrix":
        if data.get("format_version") != MATRIX_FORMAT_VERSION:
            raise ValueError(
                f"unsupported matrix format version {data.get('format_version')!r}"
            )
        order = int(data["order"])
        probs = np.asarray(data["probabilities"], dtype=float)
        counts = None
        if "counts" in data:
            counts = TransitionCounts(order, np.asarray(data["counts"], dtype=np.int64))
        return cls(order, probs, counts, data.get("category", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TransitionMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class WilsonInterval:
    lo: float
    hi: float
    z: float = 1.96


def wilson_ci(successes: int, n: int, z: float = 1.96) -> WilsonInterval:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= successes <= n:
        raise InvalidCount(f"invalid counts: {successes}/{n}")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return WilsonInterval(max(0.0, center - margin), min(1.0, center + margin), z)


def count_transitions(
    sequences: Iterable[Sequence[int]], order: int = 1
) -> TransitionCounts:
    """Count context -> next-level transitions over all sequences.

    Contexts shorter than ``order`` at the start of a sequence are padded
    by repeating the first level, so every adjacent pair contributes one
    transition.
    """
    counts = np.zeros((N_LEVELS**order, N_LEVELS), dtype=np.int64)
    result = TransitionCounts(order, counts)
    dummy = TransitionMatrix(order, np.zeros((1, 1)))  # for context encoding
    for seq in sequences:
        levels = [int(x) for x in seq]
        if len(levels) < 2:
            continue
        for i in range(1, len(levels)):
            context = levels[max(0, i - order) : i]
            if len(context) < order:
                context = [levels[0]] * (order - len(context)) + context
            counts[dummy.context_index(context), levels[i]] += 1
    if result.total == 0:
        raise EmptyCorpus("no transitions in corpus")
    return result


def estimate_matrix(
    counts: TransitionCounts, smoothing_alpha: float = 0.0
) -> TransitionMatrix:
    """Row-normalize counts into a transition matrix.

    With ``smoothing_alpha`` > 0 each row is (count + a) / (rowsum + 5a).
    Unsmoothed rows with no observations become self-loops on the row's
    most recent level. Rows whose most recent level is VIOLATED are
    forced absorbing regardless of data.
    """
    c = counts.counts.astype(float)
    probs = np.zeros_like(c)
    model = TransitionMatrix(counts.order, probs, counts)
    for i in range(c.shape[0]):
        rowsum = c[i].sum()
        recent = model.index_context(i)[-1]
        if recent == RiskLevel.VIOLATED:
            probs[i, RiskLevel.VIOLATED] = 1.0
        elif smoothing_alpha > 0:
            probs[i] = (c[i] + smoothing_alpha) / (rowsum + N_LEVELS * smoothing_alpha)
        elif rowsum == 0:
            probs[i, recent] = 1.0
        else:
            probs[i] = c[i] / rowsum
    return model


def embed_higher_order(
    sequences: Iterable[Sequence[int]], order: int, smoothing_alpha: float = 0.0
) -> TransitionMatrix:
    """Fit an order-k chain as a first-order chain over level k-tuples."""
    if order not in (1, 2, 3):
        raise ValueError("supported orders are 1, 2, 3")
    return estimate_matrix(count_transitions(sequences, order), smoothing_alpha)


def next_state_metrics(
    model: TransitionMatrix, sequences: Iterable[Sequence[int]]
) -> tuple[float, float]:
    """(argmax accuracy, mean natural-log likelihood) over all transitions.

    Argmax ties break toward the lower level index. Transitions assigned
    probability zero contribute ln(LOG_FLOOR_P).
    """
    hits = 0
    total = 0
    ll = 0.0
    k = model.order
    for seq in sequences:
        levels = [int(x) for x in seq]
        for i in range(1, len(levels)):
            context = levels[max(0, i - k) : i]
            if len(context) < k:
                context = [levels[0]] * (k - len(context)) + context
            row = model.probs[model.context_index(context)]
            hits += int(np.argmax(row)) == levels[i]
            p = row[levels[i]]
            ll += math.log(p) if p > 0 else math.log(LOG_FLOOR_P)
            total += 1
    if total == 0:
        raise EmptyCorpus("no transitions to score")
    return hits / total, ll / total


def split_train_test(traces: Sequence, ratio: float, seed: int) -> tuple[list, list]:
    """Deterministic split stratified by (category, violated).

    Every stratum with at least two members contributes to both splits.
    Traces need ``category``, ``violated`` and ``trace_id`` attributes.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    strata: dict[tuple[str, bool], list] = {}
    for tr in traces:
        strata.setdefault((tr.category, tr.violated), []).append(tr)
    rng = random.Random(seed)
    train: list = []
    test: list = []
    for key in sorted(strata):
        group = sorted(strata[key], key=lambda t: t.trace_id)
        rng.shuffle(group)
        if len(group) == 1:
            n_train = 1
        else:
            n_train = min(len(group) - 1, max(1, round(ratio * len(group))))
        train.extend(group[:n_train])
        test.extend(group[n_train:])
    return train, test
