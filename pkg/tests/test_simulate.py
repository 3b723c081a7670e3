"""Simulator determinism, serialization round trips, and replay validation."""

import json
import random

import numpy as np
import pytest

from safetydrift import config as cfg
from safetydrift.simulate import (
    DEFAULT_MODEL_TAG,
    ActionTemplate,
    ConsistencyError,
    InvalidConfig,
    ParseError,
    ScenarioConfig,
    ScenarioMix,
    Trace,
    corpus_summary,
    level_sequence,
    read_traces,
    simulate_traces,
    trace_to_json,
    write_traces,
)
from safetydrift.state_model import DataExposure, RiskLevel

RC_GENERATOR = np.array(
    [
        [0.40, 0.35, 0.15, 0.05, 0.05],
        [0.00, 0.42, 0.25, 0.05, 0.28],
        [0.00, 0.00, 0.25, 0.10, 0.65],
        [0.00, 0.00, 0.00, 0.70, 0.30],
        [0.00, 0.00, 0.00, 0.00, 1.00],
    ]
)


def level_config(seed=11, **overrides):
    params = dict(
        category="unit", mode="level", seed=seed,
        generator=RC_GENERATOR, completion_prob=0.05, max_length=25)
    params.update(overrides)
    return ScenarioConfig(**params)


def tool_config(seed=11):
    mix = ScenarioMix(
        weight=1.0,
        actions=(
            ActionTemplate("read_file", DataExposure.SENSITIVE, 0.4),
            ActionTemplate("send_email", None, 0.3),
            ActionTemplate("run_command", None, 0.3),
        ),
        completion_prob=0.05,
    )
    return ScenarioConfig(category="unit", mode="tool", seed=seed, scenarios=(mix,))


class TestValidation:
    def test_bad_mode(self):
        with pytest.raises(InvalidConfig):
            ScenarioConfig(category="x", mode="dream", seed=1).validate()

    def test_level_needs_generator(self):
        with pytest.raises(InvalidConfig):
            level_config(generator=None).validate()

    def test_rows_must_sum_to_one(self):
        bad = RC_GENERATOR.copy()
        bad[0, 0] += 0.1
        with pytest.raises(InvalidConfig):
            level_config(generator=bad).validate()

    def test_downward_transitions_rejected(self):
        bad = RC_GENERATOR.copy()
        bad[2, 1] = 0.10
        bad[2, 2] = 0.15
        with pytest.raises(InvalidConfig, match="downward"):
            level_config(generator=bad).validate()

    def test_tool_mode_needs_scenarios(self):
        with pytest.raises(InvalidConfig):
            ScenarioConfig(category="x", mode="tool", seed=1).validate()

    def test_completion_prob_zero_allowed(self):
        level_config(completion_prob=0.0).validate()


class TestSimulation:
    def test_deterministic_per_seed(self):
        a = simulate_traces(level_config(seed=11), 20)
        b = simulate_traces(level_config(seed=11), 20)
        assert [trace_to_json(t) for t in a] == [trace_to_json(t) for t in b]

    def test_seed_changes_output(self):
        a = simulate_traces(level_config(seed=11), 20)
        b = simulate_traces(level_config(seed=12), 20)
        assert [trace_to_json(t) for t in a] != [trace_to_json(t) for t in b]

    def test_prefix_stability(self):
        # per-trace seeding means the first n traces do not depend on n
        a = simulate_traces(level_config(), 5)
        b = simulate_traces(level_config(), 20)
        assert [trace_to_json(t) for t in a] == [trace_to_json(t) for t in b[:5]]

    def test_trace_ids(self):
        traces = simulate_traces(level_config(seed=11), 3)
        assert [t.trace_id for t in traces] == [
            "unit-s11-0000", "unit-s11-0001", "unit-s11-0002"]
        assert all(t.model_tag == DEFAULT_MODEL_TAG for t in traces)

    def test_stops_at_violation(self):
        for trace in simulate_traces(level_config(), 50):
            violated_steps = [s for s in trace.steps if s.level == RiskLevel.VIOLATED]
            if trace.violated:
                assert violated_steps == [trace.steps[-1]]
            else:
                assert not violated_steps

    def test_length_bounds(self):
        for trace in simulate_traces(level_config(), 50):
            assert 1 <= len(trace.steps) <= 25

    def test_level_mode_levels_follow_generator_support(self):
        # sampled transitions only use entries with positive mass
        for trace in simulate_traces(level_config(), 50):
            seq = level_sequence(trace)
            for a, b in zip(seq, seq[1:]):
                assert RC_GENERATOR[a, b] > 0

    def test_tool_mode_traces_are_consistent(self):
        for trace in simulate_traces(tool_config(), 50):
            for step in trace.steps:
                # post-merge state dominates the delta
                assert step.state.exposure >= step.delta.exposure
                assert step.state.escalation >= step.delta.escalation

    def test_level_mode_rollout_oracle(self):
        """Violation rate tracks an independent chain rollout within 1pp."""
        config = level_config(seed=31, completion_prob=0.05)
        traces = simulate_traces(config, 2000)
        observed = sum(t.violated for t in traces) / len(traces)

        rng = random.Random(99)
        hits = 0
        n = 20000
        for _ in range(n):
            level, steps = 0, 0
            while True:
                level = rng.choices(range(5), weights=RC_GENERATOR[level])[0]
                steps += 1
                if level == 4:
                    hits += 1
                    break
                if steps >= 25:
                    break
                if steps >= 2 and rng.random() < 0.05:
                    break
        assert observed == pytest.approx(hits / n, abs=0.015)


class TestPersistence:
    def test_json_schema(self):
        trace = simulate_traces(tool_config(), 1)[0]
        record = json.loads(trace_to_json(trace))
        assert set(record) == {"trace_id", "category", "model", "violated", "steps"}
        step = record["steps"][0]
        assert set(step) == {"index", "tool", "sensitivity", "d", "t_esc", "r", "level"}
        assert step["level"] in {"SAFE", "MILD", "ELEVATED", "CRITICAL", "VIOLATED"}

    def test_round_trip(self, tmp_path):
        traces = simulate_traces(tool_config(), 25)
        path = tmp_path / "t.jsonl"
        write_traces(traces, path)
        loaded = read_traces(path)
        assert [trace_to_json(t) for t in loaded] == [trace_to_json(t) for t in traces]

    def test_replay_accepts_all_simulated(self, corpus_file, app):
        loaded = read_traces(corpus_file, profiles=app.profiles)
        assert len(loaded) == 357

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = trace_to_json(simulate_traces(tool_config(), 1)[0])
        path.write_text(good + "\n{not json\n")
        with pytest.raises(ParseError) as err:
            read_traces(path)
        assert err.value.line == 2

    def test_missing_field_is_parse_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = json.loads(trace_to_json(simulate_traces(tool_config(), 1)[0]))
        del record["violated"]
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ParseError):
            read_traces(path)

    def test_inconsistent_level_rejected(self, tmp_path):
        # a MILD label on a (CREDENTIALS, NETWORK, IRREVERSIBLE) state
        # contradicts the cascade
        record = json.loads(trace_to_json(simulate_traces(tool_config(), 1)[0]))
        record["steps"] = [{
            "index": 0, "tool": "send_email", "sensitivity": "CREDENTIALS",
            "d": "CREDENTIALS", "t_esc": "NETWORK", "r": "IRREVERSIBLE",
            "level": "MILD",
        }]
        record["violated"] = False
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ConsistencyError):
            read_traces(path)

    def test_wrong_violated_flag_rejected(self, tmp_path):
        trace = next(t for t in simulate_traces(tool_config(), 20) if t.violated)
        record = json.loads(trace_to_json(trace))
        record["violated"] = False
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ConsistencyError):
            read_traces(path)

    def test_bad_step_indices_rejected(self, tmp_path):
        record = json.loads(trace_to_json(simulate_traces(tool_config(), 1)[0]))
        record["steps"][0]["index"] = 7
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ConsistencyError):
            read_traces(path)

    def test_validation_can_be_skipped(self, tmp_path):
        record = json.loads(trace_to_json(simulate_traces(tool_config(), 1)[0]))
        record["violated"] = not record["violated"]
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        assert len(read_traces(path, validate=False)) == 1


class TestDefaultCorpus:
    def test_category_counts(self, corpus, app):
        summary = corpus_summary(corpus)
        assert summary["total_traces"] == app.total_count == 357
        for name, settings in app.categories.items():
            assert summary["categories"][name]["traces"] == settings.count

    def test_seeded_violation_rate_goldens(self, app):
        """Rates stay inside the frozen ±5pp bands on every shipped seed."""
        bands = {
            "data_handling": (0.715, 0.05),
            "sysadmin": (0.04, 0.05),
            "research_comms": (1.0, 0.0),
            "code_debugging": (0.06, 0.05),
        }
        for seed in app.seeds:
            summary = corpus_summary(cfg.simulate_corpus(app, seed))
            for name, (center, tol) in bands.items():
                rate = summary["categories"][name]["violation_rate"]
                assert abs(rate - center) <= tol + 1e-9, (seed, name, rate)

    def test_category_seed_stability(self):
        assert cfg.category_seed(7, "data_handling") == cfg.category_seed(7, "data_handling")
        assert cfg.category_seed(7, "data_handling") != cfg.category_seed(7, "sysadmin")

    def test_level_sequence_starts_safe(self, corpus):
        for trace in corpus[:20]:
            seq = level_sequence(trace)
            assert seq[0] == int(RiskLevel.SAFE)
            assert len(seq) == len(trace.steps) + 1

    def test_level_mode_corpus_runs(self, app):
        traces = cfg.simulate_corpus(app, 7, n_total=40, mode="level")
        assert len(traces) == 40
        assert {t.category for t in traces} == set(app.categories)
