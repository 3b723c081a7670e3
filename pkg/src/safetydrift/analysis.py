"""Closed-form analytics for the absorbing risk-level chain.

VIOLATED is the single absorbing level. Splitting the transition matrix
into its transient block Q and absorbing column R gives the fundamental
matrix N = (I - Q)^-1, absorption probabilities B = N R and expected
steps to absorption t = N 1. Finite-horizon violation probabilities come
from iterated one-step recursion, which for an absorbing target equals
the corresponding entry of the h-th matrix power.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimation import N_LEVELS, TransitionMatrix
from .state_model import RiskLevel

TRANSIENT_LEVELS = (
    RiskLevel.SAFE,
    RiskLevel.MILD,
    RiskLevel.ELEVATED,
    RiskLevel.CRITICAL,
)

_ABSORBING_TOL = 1e-9


class NotAbsorbing(Exception):
    """The VIOLATED row is not a unit self-loop."""


class SingularChain(Exception):
    """A closed transient class makes I - Q singular."""


@dataclass
class AbsorbingDecomposition:
    transient: np.ndarray  # 4x4 block over SAFE..CRITICAL
    absorbing: np.ndarray  # 4-vector of per-level jump probabilities


@dataclass
class AbsorptionReport:
    fundamental: np.ndarray  # N, 4x4
    absorption_probs: np.ndarray  # B, 4-vector
    mean_steps: np.ndarray  # t, 4-vector


@dataclass
class HorizonCurve:
    """P(reach VIOLATED within h steps) per context row, h = 1..H."""

    order: int
    horizons: list[int]
    probs: np.ndarray  # shape (H, rows)

    def value(self, context: int | Sequence[int], h: int) -> float:
        if isinstance(context, (list, tuple)):
            idx = TransitionMatrix(self.order, self.probs).context_index(context)
        else:
            idx = int(context)
        return float(self.probs[h - 1, idx])

    def to_csv(self) -> str:
        """Long-format CSV: level, h, probability."""
        out = io.StringIO()
        out.write("level,h,probability\n")
        helper = TransitionMatrix(self.order, self.probs)
        for idx in range(self.probs.shape[1]):
            name = "|".join(
                RiskLevel(x).name for x in helper.index_context(idx)
            )
            for hi, h in enumerate(self.horizons):
                out.write(f"{name},{h},{self.probs[hi, idx]:.9f}\n")
        return out.getvalue()


def decompose(matrix: TransitionMatrix) -> AbsorbingDecomposition:
    """Split a first-order matrix into transient block and absorbing column."""
    if matrix.order != 1 or matrix.probs.shape != (N_LEVELS, N_LEVELS):
        raise ValueError("decomposition requires a first-order 5x5 matrix")
    violated_row = matrix.probs[RiskLevel.VIOLATED]
    expected = np.zeros(N_LEVELS)
    expected[RiskLevel.VIOLATED] = 1.0
    if not np.allclose(violated_row, expected, atol=_ABSORBING_TOL):
        raise NotAbsorbing(f"VIOLATED row is {violated_row.tolist()}, not absorbing")
    t = list(TRANSIENT_LEVELS)
    return AbsorbingDecomposition(
        transient=matrix.probs[np.ix_(t, t)].copy(),
        absorbing=matrix.probs[t, RiskLevel.VIOLATED].copy(),
    )


def absorption_report(dec: AbsorbingDecomposition) -> AbsorptionReport:
    """Fundamental matrix, absorption probabilities and mean passage times.

    Solves (I - Q) N = I with an LU factorization (partial pivoting).
    Raises SingularChain when some transient state has no path to
    VIOLATED, e.g. a category with no observed violations.
    """
    n = len(TRANSIENT_LEVELS)
    system = np.eye(n) - dec.transient
    try:
        fundamental = np.linalg.solve(system, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularChain("I - Q is singular; a transient class is closed") from exc
    if not np.all(np.isfinite(fundamental)) or np.max(
        np.abs(system @ fundamental - np.eye(n))
    ) > 1e-6:
        raise SingularChain("I - Q is numerically singular")
    return AbsorptionReport(
        fundamental=fundamental,
        absorption_probs=fundamental @ dec.absorbing,
        mean_steps=fundamental @ np.ones(n),
    )


def finite_horizon(matrix: TransitionMatrix, horizon: int) -> HorizonCurve:
    """Violation probabilities within 1..horizon steps, per context row.

    Uses the one-step recursion v_h(c) = sum_l P[c, l] * (l == VIOLATED
    or v_{h-1}(shift(c, l))); contexts whose most recent level is already
    VIOLATED have probability 1 at every horizon.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rows = matrix.rows
    # successor[c, l] = context index after observing level l in context c
    successors = np.empty((rows, N_LEVELS), dtype=np.int64)
    for c in range(rows):
        tail = (c % (N_LEVELS ** (matrix.order - 1))) if matrix.order > 1 else 0
        for level in range(N_LEVELS):
            successors[c, level] = tail * N_LEVELS + level if matrix.order > 1 else level
    absorbed = np.array(
        [matrix.index_context(c)[-1] == RiskLevel.VIOLATED for c in range(rows)]
    )
    # v_0 is 1 exactly on already-absorbed contexts; transitions into
    # VIOLATED land on an absorbed context, so the recursion needs no
    # separate hit term.
    v = absorbed.astype(float)
    out = np.empty((horizon, rows))
    for h in range(horizon):
        nxt = np.empty(rows)
        for c in range(rows):
            if absorbed[c]:
                nxt[c] = 1.0
            else:
                nxt[c] = float(np.dot(matrix.probs[c], v[successors[c]]))
        v = nxt
        out[h] = v
    return HorizonCurve(matrix.order, list(range(1, horizon + 1)), out)


def points_of_no_return(
    matrix: TransitionMatrix, horizon: int = 5, theta: float = 0.85
) -> set[RiskLevel]:
    """Transient levels whose violation probability within ``horizon``
    steps exceeds ``theta``."""
    if not 0 < theta < 1:
        raise ValueError("theta must be in (0, 1)")
    if matrix.order != 1:
        raise ValueError("points of no return are defined on the 5-level chain")
    curve = finite_horizon(matrix, horizon)
    return {
        level
        for level in TRANSIENT_LEVELS
        if curve.value(int(level), horizon) > theta
    }


def _matrix(rows: list[list[float]], category: str = "") -> TransitionMatrix:
    return TransitionMatrix(1, np.asarray(rows, dtype=float), None, category)


# Aggregate 5-level matrix estimated from the reference trace corpus
# (published rounded values). Exposed on the CLI as "appendixB".
BASELINE_AGGREGATE = _matrix(
    [
        [0.54, 0.32, 0.14, 0.00, 0.00],
        [0.00, 0.74, 0.13, 0.00, 0.13],
        [0.00, 0.00, 0.81, 0.12, 0.07],
        [0.00, 0.00, 0.00, 0.93, 0.07],
        [0.00, 0.00, 0.00, 0.00, 1.00],
    ],
    category="aggregate",
)
