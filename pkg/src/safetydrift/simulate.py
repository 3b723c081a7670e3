"""Trace data model, line-delimited persistence, and the seeded simulator.

The simulator replaces live agent execution. It runs in two modes:

* level mode samples risk-level chains directly from a generator matrix
  and backfills consistent states and tool calls, which keeps the chain
  arithmetic validatable end to end;
* tool mode samples weighted (tool, sensitivity) action templates per
  scenario and replays them through the classifier and state model,
  exercising the full monitoring stack.

Both modes are deterministic for a fixed (config, seed, n): each trace
uses its own generator seeded with seed XOR trace ordinal.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .classifier import (
    DEFAULT_TOOL_PROFILES,
    ActionClassifier,
    ActionRecord,
    ToolRiskProfile,
)
from .state_model import (
    INITIAL_STATE,
    DataExposure,
    Reversibility,
    ReversibilityPolicy,
    RiskLevel,
    SafetyState,
    StateDelta,
    ToolEscalation,
    merge_state,
    synthesize_risk,
)

CATEGORIES = ("data_handling", "sysadmin", "research_comms", "code_debugging")

DEFAULT_MODEL_TAG = "sim-agent-v1"

MIN_TRACE_LENGTH = 2


class InvalidConfig(Exception):
    pass


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConsistencyError(Exception):
    """Stored states disagree with a replay of the trace."""


@dataclass(frozen=True)
class Step:
    index: int
    tool: str
    sensitivity: Optional[DataExposure]
    delta: StateDelta
    state: SafetyState  # post-merge
    level: RiskLevel


@dataclass
class Trace:
    trace_id: str
    category: str
    model_tag: str
    steps: list[Step]
    violated: bool


def level_sequence(trace: Trace) -> list[int]:
    """Risk levels including the implicit SAFE start; one transition per step."""
    return [int(RiskLevel.SAFE)] + [int(s.level) for s in trace.steps]


@dataclass(frozen=True)
class ActionTemplate:
    tool: str
    sensitivity: Optional[DataExposure]
    weight: float


@dataclass(frozen=True)
class ScenarioMix:
    """One task archetype: a weighted action alphabet plus stop rate."""

    weight: float
    actions: tuple[ActionTemplate, ...]
    completion_prob: float


@dataclass
class ScenarioConfig:
    category: str
    mode: str  # "level" or "tool"
    seed: int
    generator: Optional[np.ndarray] = None  # level mode, 5x5
    scenarios: tuple[ScenarioMix, ...] = ()  # tool mode
    completion_prob: float = 0.10  # level mode stop rate
    max_length: int = 25
    profiles: Mapping[str, ToolRiskProfile] = field(
        default_factory=lambda: dict(DEFAULT_TOOL_PROFILES)
    )

    def validate(self) -> None:
        if self.mode not in ("level", "tool"):
            raise InvalidConfig(f"unknown simulator mode {self.mode!r}")
        if self.max_length < MIN_TRACE_LENGTH:
            raise InvalidConfig("max_length must be >= 2")
        if self.mode == "level":
            if self.generator is None or self.generator.shape != (5, 5):
                raise InvalidConfig("level mode needs a 5x5 generator matrix")
            if not np.allclose(self.generator.sum(axis=1), 1.0, atol=1e-9):
                raise InvalidConfig("generator rows must sum to 1")
            if np.any(self.generator < 0):
                raise InvalidConfig("generator entries must be nonnegative")
            for i in range(5):
                if np.any(self.generator[i, :i] > 0):
                    raise InvalidConfig(
                        "generator has downward risk transitions; these are "
                        "unrealizable under monotone state merging"
                    )
            if not 0 <= self.completion_prob <= 1:
                raise InvalidConfig("completion_prob must be in [0, 1]")
        else:
            if not self.scenarios:
                raise InvalidConfig("tool mode needs at least one scenario mix")
            for mix in self.scenarios:
                if not mix.actions:
                    raise InvalidConfig("scenario mix has no actions")
                if not 0 <= mix.completion_prob <= 1:
                    raise InvalidConfig("completion_prob must be in [0, 1]")


# Canonical state per level, used by level mode to realize a sampled
# level sequence as a componentwise-monotone state path. Entering a level
# applies its representative state as the action delta; the matching tool
# is derived from the delta's (escalation, reversibility) pair.
_REP_STATES = {
    RiskLevel.SAFE: INITIAL_STATE,
    RiskLevel.MILD: SafetyState(
        DataExposure.SENSITIVE, ToolEscalation.READ_ONLY, Reversibility.FULLY_REVERSIBLE
    ),
    RiskLevel.ELEVATED: SafetyState(
        DataExposure.CREDENTIALS, ToolEscalation.READ_ONLY, Reversibility.FULLY_REVERSIBLE
    ),
    RiskLevel.CRITICAL: SafetyState(
        DataExposure.CREDENTIALS, ToolEscalation.CODE_EXEC, Reversibility.PARTIALLY
    ),
    RiskLevel.VIOLATED: SafetyState(
        DataExposure.CREDENTIALS, ToolEscalation.NETWORK, Reversibility.IRREVERSIBLE
    ),
}

_TOOL_BY_CAPABILITY = {
    (ToolEscalation.READ_ONLY, Reversibility.FULLY_REVERSIBLE): "read_file",
    (ToolEscalation.FILE_WRITE, Reversibility.PARTIALLY): "write_file",
    (ToolEscalation.CODE_EXEC, Reversibility.PARTIALLY): "run_command",
    (ToolEscalation.NETWORK, Reversibility.IRREVERSIBLE): "send_email",
    (ToolEscalation.NETWORK, Reversibility.PARTIALLY): "http_request",
}


def simulate_traces(config: ScenarioConfig, n: int) -> list[Trace]:
    config.validate()
    traces = []
    for ordinal in range(n):
        rng = random.Random(config.seed ^ ordinal)
        if config.mode == "level":
            steps = _level_mode_trace(config, rng)
        else:
            steps = _tool_mode_trace(config, rng)
        traces.append(
            Trace(
                trace_id=f"{config.category}-s{config.seed}-{ordinal:04d}",
                category=config.category,
                model_tag=DEFAULT_MODEL_TAG,
                steps=steps,
                violated=any(s.level == RiskLevel.VIOLATED for s in steps),
            )
        )
    return traces


def _level_mode_trace(config: ScenarioConfig, rng: random.Random) -> list[Step]:
    rows = [list(row) for row in config.generator]
    current = RiskLevel.SAFE
    state = INITIAL_STATE
    steps: list[Step] = []
    while True:
        nxt = RiskLevel(rng.choices(range(5), weights=rows[current])[0])
        rep = _REP_STATES[nxt]
        delta = StateDelta(rep.exposure, rep.escalation, rep.reversibility)
        tool = _TOOL_BY_CAPABILITY[(delta.escalation, delta.reversibility)]
        sensitivity = delta.exposure if delta.exposure != DataExposure.NONE else None
        state = merge_state(state, delta)
        level = synthesize_risk(state)
        assert level == nxt, "representative state does not realize the level"
        steps.append(Step(len(steps), tool, sensitivity, delta, state, level))
        current = nxt
        if level == RiskLevel.VIOLATED or len(steps) >= config.max_length:
            break
        if len(steps) >= MIN_TRACE_LENGTH and rng.random() < config.completion_prob:
            break
    return steps


def _tool_mode_trace(config: ScenarioConfig, rng: random.Random) -> list[Step]:
    mixes = config.scenarios
    mix = rng.choices(mixes, weights=[m.weight for m in mixes])[0]
    weights = [a.weight for a in mix.actions]
    classifier = ActionClassifier(profiles=config.profiles)
    state = INITIAL_STATE
    steps: list[Step] = []
    while True:
        template = mix.actions[rng.choices(range(len(mix.actions)), weights=weights)[0]]
        action = ActionRecord(len(steps), template.tool, template.sensitivity)
        delta = classifier.classify(action)
        state = merge_state(state, delta)
        level = synthesize_risk(state)
        steps.append(
            Step(len(steps), template.tool, template.sensitivity, delta, state, level)
        )
        if level == RiskLevel.VIOLATED or len(steps) >= config.max_length:
            break
        if len(steps) >= MIN_TRACE_LENGTH and rng.random() < mix.completion_prob:
            break
    return steps


# --- persistence ---------------------------------------------------------


def _step_record(step: Step) -> dict:
    return {
        "index": step.index,
        "tool": step.tool,
        "sensitivity": step.sensitivity.name if step.sensitivity is not None else None,
        "d": step.state.exposure.name,
        "t_esc": step.state.escalation.name,
        "r": step.state.reversibility.name,
        "level": step.level.name,
    }


def trace_to_json(trace: Trace) -> str:
    record = {
        "trace_id": trace.trace_id,
        "category": trace.category,
        "model": trace.model_tag,
        "violated": trace.violated,
        "steps": [_step_record(s) for s in trace.steps],
    }
    return json.dumps(record, separators=(",", ":"))


def write_traces(traces: Iterable[Trace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(trace_to_json(trace) + "\n")


def _infer_delta(
    tool: str,
    sensitivity: Optional[DataExposure],
    prev: SafetyState,
    state: SafetyState,
    profiles: Mapping[str, ToolRiskProfile],
) -> StateDelta:
    profile = profiles.get(tool)
    if profile is not None:
        exposure = sensitivity if sensitivity is not None else profile.default_exposure
        return StateDelta(exposure, profile.escalation, profile.reversibility)
    # unknown tool: attribute exactly the observed state increase
    return StateDelta(
        state.exposure if state.exposure > prev.exposure else DataExposure.NONE,
        state.escalation
        if state.escalation > prev.escalation
        else ToolEscalation.READ_ONLY,
        state.reversibility
        if state.reversibility > prev.reversibility
        else Reversibility.FULLY_REVERSIBLE,
    )


def read_traces(
    path: str | Path,
    profiles: Optional[Mapping[str, ToolRiskProfile]] = None,
    policy: ReversibilityPolicy = ReversibilityPolicy.WORST_CASE,
    validate: bool = True,
) -> list[Trace]:
    """Load a line-delimited corpus, replaying each trace for consistency.

    Raises ParseError (with the offending line number) for malformed
    records and ConsistencyError when stored states or levels disagree
    with a replay through the state model.
    """
    profiles = dict(DEFAULT_TOOL_PROFILES) if profiles is None else profiles
    traces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", lineno) from exc
            try:
                trace = _parse_trace(record)
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from exc
            if validate:
                _check_replay(trace, profiles, policy, lineno)
            traces.append(trace)
    return traces


def _parse_trace(record: dict) -> Trace:
    steps = []
    for s in record["steps"]:
        sensitivity = s["sensitivity"]
        state = SafetyState(
            DataExposure[s["d"]], ToolEscalation[s["t_esc"]], Reversibility[s["r"]]
        )
        steps.append(
            Step(
                index=int(s["index"]),
                tool=str(s["tool"]),
                sensitivity=DataExposure[sensitivity] if sensitivity else None,
                delta=StateDelta(state.exposure, state.escalation, state.reversibility),
                state=state,
                level=RiskLevel[s["level"]],
            )
        )
    return Trace(
        trace_id=str(record["trace_id"]),
        category=str(record["category"]),
        model_tag=str(record["model"]),
        steps=steps,
        violated=bool(record["violated"]),
    )


def _check_replay(trace, profiles, policy, lineno: int) -> None:
    state = INITIAL_STATE
    indices = [s.index for s in trace.steps]
    if indices != list(range(len(trace.steps))):
        raise ConsistencyError(
            f"line {lineno}: step indices {indices} are not 0..n-1"
        )
    replayed_steps = []
    for step in trace.steps:
        delta = _infer_delta(step.tool, step.sensitivity, state, step.state, profiles)
        state = merge_state(state, delta, policy)
        level = synthesize_risk(state)
        if state != step.state:
            raise ConsistencyError(
                f"line {lineno} step {step.index}: stored state "
                f"{step.state} but replay gives {state}"
            )
        if level != step.level:
            raise ConsistencyError(
                f"line {lineno} step {step.index}: stored level {step.level.name} "
                f"but state {state} synthesizes {level.name}"
            )
        replayed_steps.append(Step(step.index, step.tool, step.sensitivity, delta, state, level))
    violated = any(s.level == RiskLevel.VIOLATED for s in trace.steps)
    if violated != trace.violated:
        raise ConsistencyError(
            f"line {lineno}: violated flag {trace.violated} but steps say {violated}"
        )
    trace.steps[:] = replayed_steps


def corpus_summary(traces: Sequence[Trace]) -> dict:
    """Per-category counts, violation rates and length statistics."""
    out: dict = {"total_traces": len(traces), "categories": {}}
    for category in sorted({t.category for t in traces}):
        group = [t for t in traces if t.category == category]
        lengths = [len(t.steps) for t in group]
        violated = sum(t.violated for t in group)
        out["categories"][category] = {
            "traces": len(group),
            "violated": violated,
            "violation_rate": violated / len(group),
            "mean_length": sum(lengths) / len(group),
            "total_steps": sum(lengths),
        }
    out["total_steps"] = sum(len(t.steps) for t in traces)
    return out
