"""Action classification: profile table, manifest resolution, judge fallback."""

import pytest

from safetydrift.classifier import (
    DEFAULT_TOOL_PROFILES,
    ActionClassifier,
    ActionRecord,
    FileManifest,
    TableJudge,
    UnclassifiableAction,
)
from safetydrift.state_model import (
    DataExposure,
    Reversibility,
    StateDelta,
    ToolEscalation,
)

D, T, R = DataExposure, ToolEscalation, Reversibility


class TestProfiles:
    def test_all_capability_tiers_covered(self):
        tiers = {p.escalation for p in DEFAULT_TOOL_PROFILES.values()}
        assert tiers == set(ToolEscalation)

    def test_read_file_defaults(self):
        c = ActionClassifier()
        delta = c.classify(ActionRecord(0, "read_file"))
        assert delta == StateDelta(D.NONE, T.READ_ONLY, R.FULLY_REVERSIBLE)

    def test_sensitivity_overrides_default_exposure(self):
        c = ActionClassifier()
        delta = c.classify(ActionRecord(0, "read_file", D.CREDENTIALS))
        assert delta.exposure == D.CREDENTIALS
        assert delta.escalation == T.READ_ONLY

    def test_search_db_has_internal_default(self):
        c = ActionClassifier()
        delta = c.classify(ActionRecord(0, "search_db"))
        assert delta.exposure == D.INTERNAL

    def test_send_email_is_irreversible_network(self):
        c = ActionClassifier()
        delta = c.classify(ActionRecord(0, "send_email"))
        assert (delta.escalation, delta.reversibility) == (T.NETWORK, R.IRREVERSIBLE)


class TestJudgeFallback:
    def test_unknown_tool_without_judge_raises(self):
        c = ActionClassifier()
        with pytest.raises(UnclassifiableAction):
            c.classify(ActionRecord(0, "teleport"))

    def test_judge_resolves_unknown_tool(self):
        verdict = StateDelta(D.PUBLIC, T.NETWORK, R.PARTIALLY)
        c = ActionClassifier(judge=TableJudge({"teleport": verdict}))
        assert c.classify(ActionRecord(0, "teleport")) == verdict

    def test_judge_abstain_raises(self):
        c = ActionClassifier(judge=TableJudge({}))
        with pytest.raises(UnclassifiableAction):
            c.classify(ActionRecord(0, "teleport"))

    def test_coverage_counters(self):
        c = ActionClassifier(judge=TableJudge({"x": StateDelta(D.NONE, T.READ_ONLY, R.FULLY_REVERSIBLE)}))
        c.classify(ActionRecord(0, "read_file"))
        c.classify(ActionRecord(1, "read_file"))
        c.classify(ActionRecord(2, "x"))
        assert c.coverage() == (2, 1)


class TestManifest:
    def make(self):
        return FileManifest(
            [
                ("config/credentials.env", D.CREDENTIALS),
                ("secrets/*", D.CREDENTIALS),
                ("hr/*", D.SENSITIVE),
                ("public/*", D.PUBLIC),
            ]
        )

    def test_exact_match(self):
        assert self.make().resolve("config/credentials.env") == D.CREDENTIALS

    def test_glob_match(self):
        m = self.make()
        assert m.resolve("secrets/prod/api.key") == D.CREDENTIALS
        assert m.resolve("hr/salaries.csv") == D.SENSITIVE

    def test_first_glob_match_wins(self):
        m = FileManifest([("hr/*", D.SENSITIVE), ("hr/p*", D.PUBLIC)])
        assert m.resolve("hr/phonebook") == D.SENSITIVE

    def test_exact_beats_glob(self):
        m = FileManifest([("hr/*", D.SENSITIVE), ("hr/readme", D.PUBLIC)])
        # "hr/readme" has no glob chars, so it lives in the exact table
        assert m.resolve("hr/readme") == D.PUBLIC

    def test_no_match_returns_none(self):
        assert self.make().resolve("scratch/notes.txt") is None
