"""Category-aware runtime monitor.

All chain arithmetic happens once, at configuration time: the monitor
precomputes the risk level of each of the 60 states and the
finite-horizon violation probability of each level. The per-step hot
path is three max operations and two table reads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from . import analysis
from .estimation import TransitionMatrix
from .state_model import (
    INITIAL_STATE,
    NUM_STATES,
    DEFAULT_RISK_RULES,
    ReversibilityPolicy,
    RiskLevel,
    RiskRule,
    SafetyState,
    StateDelta,
    state_from_index,
    synthesize_risk,
)


class InvalidConfig(Exception):
    pass


class SessionClosed(Exception):
    pass


class InsufficientCorpus(Exception):
    """Calibration needs both violating and safe traces."""


class InterventionMode(enum.Enum):
    BLOCK = "block"
    WARN = "warn"
    PAUSE_FOR_APPROVAL = "pause_for_approval"
    SUGGEST_ALTERNATIVE = "suggest_alternative"


# Calibration sweep grid: 0.05, 0.10, ..., 0.95.
THETA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))

DEFAULT_THRESHOLD = 0.45


@dataclass(frozen=True)
class MonitorConfig:
    category: str
    matrix: TransitionMatrix
    threshold: float = DEFAULT_THRESHOLD
    horizon: int = 5
    reversibility_policy: ReversibilityPolicy = ReversibilityPolicy.WORST_CASE
    intervention_mode: InterventionMode = InterventionMode.WARN
    risk_rules: Sequence[RiskRule] = DEFAULT_RISK_RULES


@dataclass(frozen=True, slots=True)
class Verdict:
    probability: float
    flagged: bool
    level: RiskLevel
    already_violated: bool
    mode: InterventionMode


class Monitor:
    """Holds the immutable per-category lookup tables; spawns sessions."""

    def __init__(self, config: MonitorConfig):
        if not 0 < config.threshold < 1:
            raise InvalidConfig(f"threshold {config.threshold} outside (0, 1)")
        if config.horizon < 1:
            raise InvalidConfig("horizon must be >= 1")
        if config.matrix.order != 1:
            raise InvalidConfig("monitor expects the 5-level first-order matrix")
        try:
            analysis.decompose(config.matrix)
        except analysis.NotAbsorbing as exc:
            raise InvalidConfig(str(exc)) from exc
        self.config = config
        # level of each of the 60 states, indexed by state_index
        self._level_by_state = [
            synthesize_risk(state_from_index(i), config.risk_rules)
            for i in range(NUM_STATES)
        ]
        curve = analysis.finite_horizon(config.matrix, config.horizon)
        self.horizon_curve = curve
        self._prob_by_level = [
            curve.value(int(level), config.horizon) for level in RiskLevel
        ]

    def probability_table(self) -> list[float]:
        """Violation probability at the configured horizon, per level."""
        return list(self._prob_by_level)

    def new_session(self) -> "Session":
        return Session(self)


class Session:
    """Single-writer per-session state; sessions share the monitor tables."""

    def __init__(self, monitor: Monitor):
        self._monitor = monitor
        self._threshold = monitor.config.threshold
        self._worst_case = (
            monitor.config.reversibility_policy is ReversibilityPolicy.WORST_CASE
        )
        self._levels = monitor._level_by_state
        self._probs = monitor._prob_by_level
        self._mode = monitor.config.intervention_mode
        self.current = INITIAL_STATE
        self.current_level = self._levels[0]
        self.step_count = 0
        self.flagged_at: Optional[int] = None
        self._closed = False

    def observe(self, delta: StateDelta) -> Verdict:
        if self._closed:
            raise SessionClosed("observe() after close()")
        s = self.current
        d = s.exposure if s.exposure >= delta.exposure else delta.exposure
        t = s.escalation if s.escalation >= delta.escalation else delta.escalation
        if self._worst_case:
            r = (
                s.reversibility
                if s.reversibility >= delta.reversibility
                else delta.reversibility
            )
        else:
            r = delta.reversibility
        self.current = SafetyState(d, t, r)
        level = self._levels[d * 12 + t * 3 + r]
        self.current_level = level
        already = level == RiskLevel.VIOLATED
        probability = 1.0 if already else self._probs[level]
        flagged = probability > self._threshold
        if flagged and self.flagged_at is None:
            self.flagged_at = self.step_count
        self.step_count += 1
        return Verdict(probability, flagged, level, already, self._mode)

    def close(self) -> None:
        self._closed = True


def calibrate_threshold(
    traces: Sequence,
    category: str,
    matrix: TransitionMatrix,
    horizon: int = 5,
    fpr_budget: float = 0.15,
    grid: Sequence[float] = THETA_GRID,
) -> float:
    """Pick the sweep threshold maximizing detection at bounded FPR.

    A violating trace counts as detected when some step before its first
    VIOLATED step has lookup probability above the threshold; a safe
    trace flags a false positive when any of its steps does. Ties break
    toward the higher threshold.
    """
    curve = analysis.finite_horizon(matrix, horizon)
    table = [curve.value(int(level), horizon) for level in RiskLevel]
    viol_max: list[float] = []
    safe_max: list[float] = []
    for tr in traces:
        if tr.category != category:
            continue
        levels = [step.level for step in tr.steps]
        first_violation = next(
            (i for i, lv in enumerate(levels) if lv == RiskLevel.VIOLATED), None
        )
        pre = levels[:first_violation] if first_violation is not None else levels
        peak = max((table[lv] for lv in pre), default=0.0)
        (viol_max if first_violation is not None else safe_max).append(peak)
    if not viol_max or not safe_max:
        raise InsufficientCorpus(
            f"category {category!r} needs both violating and safe traces"
        )
    best: Optional[tuple[float, float]] = None  # (detection, theta)
    for theta in grid:
        detection = sum(m > theta for m in viol_max) / len(viol_max)
        fpr = sum(m > theta for m in safe_max) / len(safe_max)
        if fpr <= fpr_budget and (best is None or detection >= best[0]):
            best = (detection, theta)
    if best is None:
        # every grid point blows the budget; fall back to the most
        # conservative sweep point
        return grid[-1]
    return best[1]
