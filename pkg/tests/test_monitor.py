"""Runtime monitor: verdicts, session lifecycle, and threshold calibration."""

import numpy as np
import pytest

from safetydrift.analysis import BASELINE_AGGREGATE, finite_horizon
from safetydrift.estimation import TransitionMatrix
from safetydrift.monitor import (
    DEFAULT_THRESHOLD,
    THETA_GRID,
    InsufficientCorpus,
    InterventionMode,
    InvalidConfig,
    Monitor,
    MonitorConfig,
    SessionClosed,
    calibrate_threshold,
)
from safetydrift.simulate import Step, Trace
from safetydrift.state_model import (
    DataExposure,
    Reversibility,
    ReversibilityPolicy,
    RiskLevel,
    SafetyState,
    StateDelta,
    ToolEscalation,
)

D, T, R = DataExposure, ToolEscalation, Reversibility


def make_monitor(**overrides):
    config = MonitorConfig(
        category="unit", matrix=BASELINE_AGGREGATE, **overrides)
    return Monitor(config)


def delta(d, t, r):
    return StateDelta(D[d], T[t], R[r])


class TestConfigValidation:
    def test_threshold_range(self):
        with pytest.raises(InvalidConfig):
            make_monitor(threshold=0.0)
        with pytest.raises(InvalidConfig):
            make_monitor(threshold=1.0)

    def test_horizon(self):
        with pytest.raises(InvalidConfig):
            make_monitor(horizon=0)

    def test_matrix_must_be_absorbing(self):
        bad = TransitionMatrix(1, np.full((5, 5), 0.2))
        with pytest.raises(InvalidConfig):
            Monitor(MonitorConfig(category="unit", matrix=bad))

    def test_grid_shape(self):
        assert THETA_GRID[0] == 0.05
        assert THETA_GRID[-1] == 0.95
        assert len(THETA_GRID) == 19


class TestSession:
    def test_probability_table_matches_curve(self):
        monitor = make_monitor(horizon=5)
        curve = finite_horizon(BASELINE_AGGREGATE, 5)
        assert monitor.probability_table() == pytest.approx(
            [curve.value(lv, 5) for lv in range(5)])

    def test_verdict_fields(self):
        session = make_monitor(threshold=0.45).new_session()
        v = session.observe(delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert v.level == RiskLevel.MILD
        assert v.probability == pytest.approx(0.4539, abs=1e-3)
        assert v.flagged  # 0.4539 > 0.45
        assert not v.already_violated
        assert v.mode is InterventionMode.WARN

    def test_state_accumulates(self):
        session = make_monitor().new_session()
        session.observe(delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"))
        v = session.observe(delta("NONE", "NETWORK", "IRREVERSIBLE"))
        # cumulative (SENSITIVE, NETWORK, IRREVERSIBLE) is a violation
        assert v.level == RiskLevel.VIOLATED
        assert v.already_violated
        assert v.probability == 1.0
        assert session.current == SafetyState(D.SENSITIVE, T.NETWORK, R.IRREVERSIBLE)

    def test_violation_verdicts_are_sticky(self):
        session = make_monitor().new_session()
        session.observe(delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"))
        session.observe(delta("NONE", "NETWORK", "IRREVERSIBLE"))
        v = session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert v.already_violated and v.probability == 1.0

    def test_flagged_at_records_first_flag(self):
        session = make_monitor(threshold=0.45).new_session()
        session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert session.flagged_at is None
        session.observe(delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"))
        session.observe(delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert session.flagged_at == 1

    def test_latest_policy_lets_reversibility_relax(self):
        session = make_monitor(
            reversibility_policy=ReversibilityPolicy.LATEST).new_session()
        session.observe(delta("NONE", "FILE_WRITE", "IRREVERSIBLE"))
        v = session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert v.level == RiskLevel.SAFE
        assert session.current.reversibility == R.FULLY_REVERSIBLE

    def test_worst_case_policy_keeps_reversibility(self):
        session = make_monitor().new_session()
        session.observe(delta("NONE", "FILE_WRITE", "IRREVERSIBLE"))
        session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert session.current.reversibility == R.IRREVERSIBLE

    def test_closed_session_rejects_observe(self):
        session = make_monitor().new_session()
        session.close()
        with pytest.raises(SessionClosed):
            session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))

    def test_sessions_are_independent(self):
        monitor = make_monitor()
        a, b = monitor.new_session(), monitor.new_session()
        a.observe(delta("CREDENTIALS", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert b.current_level == RiskLevel.SAFE

    def test_mode_passthrough(self):
        session = make_monitor(
            intervention_mode=InterventionMode.BLOCK).new_session()
        v = session.observe(delta("NONE", "READ_ONLY", "FULLY_REVERSIBLE"))
        assert v.mode is InterventionMode.BLOCK

    def test_flag_monotone_in_threshold(self):
        """Lowering the threshold can only add flags, never remove them."""
        deltas = [
            delta("INTERNAL", "READ_ONLY", "FULLY_REVERSIBLE"),
            delta("SENSITIVE", "READ_ONLY", "FULLY_REVERSIBLE"),
            delta("CREDENTIALS", "CODE_EXEC", "PARTIALLY"),
        ]
        flagged = {}
        for theta in (0.25, 0.45, 0.65):
            session = make_monitor(threshold=theta).new_session()
            flagged[theta] = [session.observe(x).flagged for x in deltas]
        for lo, hi in [(0.25, 0.45), (0.45, 0.65)]:
            for f_lo, f_hi in zip(flagged[lo], flagged[hi]):
                assert f_lo or not f_hi


def trace_from_levels(trace_id, levels):
    """Synthetic trace carrying only what calibration reads: step levels."""
    steps = [
        Step(i, "tool", None,
             StateDelta(D.NONE, T.READ_ONLY, R.FULLY_REVERSIBLE),
             SafetyState(D.NONE, T.READ_ONLY, R.FULLY_REVERSIBLE),
             RiskLevel(lv))
        for i, lv in enumerate(levels)
    ]
    return Trace(trace_id, "unit", "m", steps, RiskLevel.VIOLATED in levels)


class TestCalibration:
    def test_separable_case_picks_highest_feasible(self):
        # violating traces peak at MILD (p=0.454 at h=5), safe traces
        # never leave SAFE (p=0.267): every theta in [0.30, 0.45] gets
        # detection 1.0 at FPR 0; ties break to the highest, 0.45
        traces = [
            trace_from_levels(f"v{i}", [1, 3, 4]) for i in range(5)
        ] + [
            trace_from_levels(f"s{i}", [0, 0, 0]) for i in range(5)
        ]
        theta = calibrate_threshold(traces, "unit", BASELINE_AGGREGATE, 5, 0.15)
        assert theta == 0.45

    def test_single_class_raises(self):
        viol_only = [trace_from_levels(f"v{i}", [1, 4]) for i in range(3)]
        with pytest.raises(InsufficientCorpus):
            calibrate_threshold(viol_only, "unit", BASELINE_AGGREGATE)
        safe_only = [trace_from_levels(f"s{i}", [0, 0]) for i in range(3)]
        with pytest.raises(InsufficientCorpus):
            calibrate_threshold(safe_only, "unit", BASELINE_AGGREGATE)

    def test_other_categories_ignored(self):
        traces = [
            trace_from_levels("v0", [1, 3, 4]),
            trace_from_levels("s0", [0, 0]),
        ]
        other = trace_from_levels("x0", [4])
        other.category = "other"
        theta = calibrate_threshold(traces + [other], "unit", BASELINE_AGGREGATE)
        assert theta == calibrate_threshold(traces, "unit", BASELINE_AGGREGATE)

    def test_fpr_budget_binds(self):
        # safe traces sit at MILD (p=0.454) and violating ones peak at
        # CRITICAL (p=0.304): no feasible theta detects anything, so the
        # tie-break lands on the most conservative grid point
        traces = [
            trace_from_levels(f"v{i}", [3, 4]) for i in range(4)
        ] + [
            trace_from_levels(f"s{i}", [1, 1]) for i in range(4)
        ]
        theta = calibrate_threshold(traces, "unit", BASELINE_AGGREGATE, 5, 0.15)
        assert theta == 0.95

    def test_default_threshold_constant(self):
        assert DEFAULT_THRESHOLD == 0.45
