"""Maps observed agent actions to safety state deltas.

Classification is table-driven: each tool name has a risk profile giving
its capability tier, reversibility, and a default data exposure used when
the touched resource carries no sensitivity tag. Unmapped tools fall
through to a pluggable judge; if the judge abstains too, the action is
unclassifiable.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .state_model import (
    DataExposure,
    Reversibility,
    StateDelta,
    ToolEscalation,
)


class UnclassifiableAction(Exception):
    """No rule matched and the judge abstained."""


@dataclass(frozen=True)
class ActionRecord:
    step_index: int
    tool: str
    sensitivity: Optional[DataExposure] = None
    args_digest: str = ""


@dataclass(frozen=True)
class ToolRiskProfile:
    tool: str
    escalation: ToolEscalation
    reversibility: Reversibility
    default_exposure: DataExposure = DataExposure.NONE


def _profile(tool, t, r, d="NONE"):
    return ToolRiskProfile(
        tool, ToolEscalation[t], Reversibility[r], DataExposure[d]
    )


# Minimal table covering all four capability tiers. Not authoritative for
# any particular deployment; real hosts should ship their own table.
DEFAULT_TOOL_PROFILES: dict[str, ToolRiskProfile] = {
    p.tool: p
    for p in (
        _profile("read_file", "READ_ONLY", "FULLY_REVERSIBLE"),
        _profile("write_file", "FILE_WRITE", "PARTIALLY"),
        _profile("run_command", "CODE_EXEC", "PARTIALLY"),
        _profile("send_email", "NETWORK", "IRREVERSIBLE"),
        _profile("http_request", "NETWORK", "PARTIALLY"),
        _profile("search_db", "READ_ONLY", "FULLY_REVERSIBLE", "INTERNAL"),
    )
}

# A judge returns a delta or None to abstain.
Judge = Callable[[ActionRecord], Optional[StateDelta]]


class TableJudge:
    """Deterministic judge backed by an explicit tool -> delta table.

    Stands in for an external content-aware judge; the interface is the
    contract, not this implementation.
    """

    def __init__(self, table: Mapping[str, StateDelta]):
        self._table = dict(table)

    def __call__(self, action: ActionRecord) -> Optional[StateDelta]:
        return self._table.get(action.tool)


class FileManifest:
    """Resolves resource paths to sensitivity tags.

    Entries are (pattern, exposure) pairs checked in order: exact matches
    first, then glob patterns. First match wins.
    """

    def __init__(self, entries: Sequence[tuple[str, DataExposure]]):
        self._exact = {p: e for p, e in entries if not _is_glob(p)}
        self._globs = [(p, e) for p, e in entries if _is_glob(p)]

    def resolve(self, path: str) -> Optional[DataExposure]:
        hit = self._exact.get(path)
        if hit is not None:
            return hit
        for pattern, exposure in self._globs:
            if fnmatch.fnmatchcase(path, pattern):
                return exposure
        return None


def _is_glob(pattern: str) -> bool:
    return any(c in pattern for c in "*?[")


@dataclass
class ActionClassifier:
    """Two-layer classifier: profile table first, judge fallback second.

    Keeps coverage counters so callers can report what fraction of steps
    needed the judge.
    """

    profiles: Mapping[str, ToolRiskProfile] = field(
        default_factory=lambda: dict(DEFAULT_TOOL_PROFILES)
    )
    judge: Optional[Judge] = None
    rule_steps: int = 0
    judge_steps: int = 0

    def classify(self, action: ActionRecord) -> StateDelta:
        profile = self.profiles.get(action.tool)
        if profile is not None:
            self.rule_steps += 1
            exposure = (
                action.sensitivity
                if action.sensitivity is not None
                else profile.default_exposure
            )
            return StateDelta(exposure, profile.escalation, profile.reversibility)
        if self.judge is not None:
            verdict = self.judge(action)
            if verdict is not None:
                self.judge_steps += 1
                return verdict
        raise UnclassifiableAction(
            f"no profile for tool {action.tool!r} and judge abstained"
        )

    def coverage(self) -> tuple[int, int]:
        """(steps resolved by rules, steps resolved by the judge)."""
        return self.rule_steps, self.judge_steps
