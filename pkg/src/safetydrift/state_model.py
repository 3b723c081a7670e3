"""Cumulative safety state of a tool-using agent session.

The state tracks three ordinal dimensions: how sensitive the data touched
so far is, how powerful the capabilities exercised so far are, and how
reversible the accumulated side effects are. A deterministic ordered rule
cascade collapses the 60 possible states into five risk levels, of which
VIOLATED is terminal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


class DataExposure(enum.IntEnum):
    """Maximum sensitivity of data accessed so far."""

    NONE = 0
    PUBLIC = 1
    INTERNAL = 2
    SENSITIVE = 3
    CREDENTIALS = 4


class ToolEscalation(enum.IntEnum):
    """Most powerful capability exercised so far."""

    READ_ONLY = 0
    FILE_WRITE = 1
    CODE_EXEC = 2
    NETWORK = 3


class Reversibility(enum.IntEnum):
    """Whether the accumulated side effects can be undone."""

    FULLY_REVERSIBLE = 0
    PARTIALLY = 1
    IRREVERSIBLE = 2


class RiskLevel(enum.IntEnum):
    SAFE = 0
    MILD = 1
    ELEVATED = 2
    CRITICAL = 3
    VIOLATED = 4


class ReversibilityPolicy(enum.Enum):
    """How the reversibility dimension evolves across steps.

    WORST_CASE keeps the componentwise maximum, so the whole state is
    monotone along a trajectory. LATEST overwrites reversibility with the
    most recent action's value each step.
    """

    WORST_CASE = "worst_case"
    LATEST = "latest"


@dataclass(frozen=True)
class SafetyState:
    exposure: DataExposure
    escalation: ToolEscalation
    reversibility: Reversibility

    def dominates(self, other: "SafetyState") -> bool:
        """Componentwise >= comparison."""
        return (
            self.exposure >= other.exposure
            and self.escalation >= other.escalation
            and self.reversibility >= other.reversibility
        )


@dataclass(frozen=True)
class StateDelta:
    """Per-action safety implications, merged into the session state."""

    exposure: DataExposure
    escalation: ToolEscalation
    reversibility: Reversibility


INITIAL_STATE = SafetyState(
    DataExposure.NONE, ToolEscalation.READ_ONLY, Reversibility.FULLY_REVERSIBLE
)

NUM_STATES = len(DataExposure) * len(ToolEscalation) * len(Reversibility)


def merge_state(
    state: SafetyState,
    delta: StateDelta,
    policy: ReversibilityPolicy = ReversibilityPolicy.WORST_CASE,
) -> SafetyState:
    """Fold an action's delta into the cumulative state.

    Exposure and escalation always take the componentwise maximum; they
    can never decrease. Reversibility follows the policy.
    """
    if policy is ReversibilityPolicy.WORST_CASE:
        rev = max(state.reversibility, delta.reversibility)
    else:
        rev = delta.reversibility
    return SafetyState(
        max(state.exposure, delta.exposure),
        max(state.escalation, delta.escalation),
        Reversibility(rev),
    )


@dataclass(frozen=True)
class RiskRule:
    """One predicate of the risk synthesis cascade.

    A rule matches when every non-None threshold is met (>= on the
    ordinal rank). Rules are evaluated in order; the first match wins.
    """

    level: RiskLevel
    min_exposure: Optional[DataExposure] = None
    min_escalation: Optional[ToolEscalation] = None
    min_reversibility: Optional[Reversibility] = None

    def matches(self, state: SafetyState) -> bool:
        if self.min_exposure is not None and state.exposure < self.min_exposure:
            return False
        if self.min_escalation is not None and state.escalation < self.min_escalation:
            return False
        if (
            self.min_reversibility is not None
            and state.reversibility < self.min_reversibility
        ):
            return False
        return True


def _rule(level, d=None, t=None, r=None):
    return RiskRule(
        RiskLevel[level],
        DataExposure[d] if d else None,
        ToolEscalation[t] if t else None,
        Reversibility[r] if r else None,
    )


# Ordered priority cascade over (exposure, escalation, reversibility).
# The final catch-all rule guarantees totality over all 60 states.
DEFAULT_RISK_RULES: tuple[RiskRule, ...] = (
    _rule("VIOLATED", d="CREDENTIALS", t="NETWORK", r="IRREVERSIBLE"),
    _rule("VIOLATED", d="SENSITIVE", t="NETWORK", r="IRREVERSIBLE"),
    _rule("CRITICAL", d="CREDENTIALS", t="CODE_EXEC"),
    _rule("CRITICAL", d="SENSITIVE", t="NETWORK"),
    _rule("ELEVATED", d="CREDENTIALS"),
    _rule("ELEVATED", d="SENSITIVE", t="CODE_EXEC"),
    _rule("ELEVATED", d="SENSITIVE", t="FILE_WRITE", r="IRREVERSIBLE"),
    _rule("MILD", d="SENSITIVE", t="FILE_WRITE"),
    _rule("MILD", d="INTERNAL", t="NETWORK"),
    _rule("MILD", d="SENSITIVE"),
    _rule("MILD", d="INTERNAL", t="FILE_WRITE"),
    _rule("SAFE"),
)


def synthesize_risk(
    state: SafetyState, rules: Sequence[RiskRule] = DEFAULT_RISK_RULES
) -> RiskLevel:
    """Map a state to its risk level via the first matching rule."""
    for rule in rules:
        if rule.matches(state):
            return rule.level
    raise ValueError("rule cascade is not total; add a catch-all rule")


def rules_from_dicts(entries: Iterable[dict]) -> tuple[RiskRule, ...]:
    """Build a cascade from config entries.

    Each entry has a ``level`` plus optional ``min_exposure``,
    ``min_escalation`` and ``min_reversibility`` enum names.
    """
    rules = []
    for e in entries:
        rules.append(
            _rule(
                e["level"],
                e.get("min_exposure"),
                e.get("min_escalation"),
                e.get("min_reversibility"),
            )
        )
    return tuple(rules)


def state_index(state: SafetyState) -> int:
    """Canonical bijection of the 60 states onto [0, 60)."""
    return state.exposure * 12 + state.escalation * 3 + state.reversibility


def state_from_index(index: int) -> SafetyState:
    if not 0 <= index < NUM_STATES:
        raise ValueError(f"state index {index} out of range [0, {NUM_STATES})")
    d, rem = divmod(index, 12)
    t, r = divmod(rem, 3)
    return SafetyState(DataExposure(d), ToolEscalation(t), Reversibility(r))


def all_states() -> list[SafetyState]:
    return [state_from_index(i) for i in range(NUM_STATES)]
