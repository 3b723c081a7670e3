"""Command-line entry point for the full pipeline.

Subcommands: simulate, fit, analyze, calibrate, monitor, evaluate,
validate-rules. Every subcommand is deterministic for fixed inputs and
seed. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, config as config_mod, estimation, evaluate as eval_mod
from . import monitor as monitor_mod
from . import simulate as sim_mod
from .classifier import ActionClassifier, ActionRecord, UnclassifiableAction
from .state_model import (
    DataExposure,
    ReversibilityPolicy,
    all_states,
    state_index,
    synthesize_risk,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

# built-in matrices addressable by name instead of a file path
BUILTIN_MATRICES = {"appendixB": analysis.BASELINE_AGGREGATE}

_DATA_ERRORS = (
    sim_mod.ParseError,
    sim_mod.ConsistencyError,
    sim_mod.InvalidConfig,
    estimation.EmptyCorpus,
    estimation.InvalidCount,
    analysis.NotAbsorbing,
    analysis.SingularChain,
    monitor_mod.InvalidConfig,
    monitor_mod.InsufficientCorpus,
    UnclassifiableAction,
    OSError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _load_matrix(ref: str) -> estimation.TransitionMatrix:
    if ref in BUILTIN_MATRICES:
        return BUILTIN_MATRICES[ref]
    return estimation.TransitionMatrix.load(ref)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    app = config_mod.load_config(args.config)
    corpus = config_mod.simulate_corpus(app, args.seed, args.n, args.mode)
    sim_mod.write_traces(corpus, args.out)
    summary = sim_mod.corpus_summary(corpus)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def _split(args, traces):
    return estimation.split_train_test(traces, args.ratio, args.seed)


def cmd_fit(args) -> int:
    traces = sim_mod.read_traces(args.traces)
    train, test = _split(args, traces)
    matrices = eval_mod.fit_category_matrices(train, args.alpha)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, matrix in sorted(matrices.items()):
        matrix.save(out_dir / f"{name}.json")
    split_info = {
        "train": sorted(t.trace_id for t in train),
        "test": sorted(t.trace_id for t in test),
    }
    _write(out_dir / "split.json", json.dumps(split_info, indent=1) + "\n")
    print(f"fitted {len(matrices)} matrices from {len(train)} training traces")
    return EXIT_OK


def cmd_analyze(args) -> int:
    matrix = _load_matrix(args.matrix)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = analysis.finite_horizon(matrix, args.horizon)
    _write(out_dir / "horizon_curve.csv", curve.to_csv())
    try:
        report = analysis.absorption_report(analysis.decompose(matrix))
        absorption = {
            "fundamental_matrix": np.round(report.fundamental, 9).tolist(),
            "absorption_probabilities": np.round(report.absorption_probs, 9).tolist(),
            "mean_steps_to_violation": np.round(report.mean_steps, 9).tolist(),
            "transient_levels": [lv.name for lv in analysis.TRANSIENT_LEVELS],
        }
    except analysis.SingularChain as exc:
        absorption = {"error": "singular_chain", "detail": str(exc)}
    _write(out_dir / "absorption.json", json.dumps(absorption, indent=1) + "\n")
    ponr_h = min(args.ponr_horizon, args.horizon)
    ponr = sorted(
        lv.name for lv in analysis.points_of_no_return(matrix, ponr_h, args.theta)
    )
    _write(
        out_dir / "ponr.json",
        json.dumps({"horizon": ponr_h, "theta": args.theta, "levels": ponr}, indent=1)
        + "\n",
    )
    print(f"points of no return at h={ponr_h}, theta={args.theta}: {ponr or 'none'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    app = config_mod.load_config(args.config)
    traces = sim_mod.read_traces(args.traces, profiles=app.profiles)
    train, _ = _split(args, traces)
    matrices = eval_mod.fit_category_matrices(train)
    thetas = eval_mod.calibrate_all(
        train, matrices, args.horizon, args.fpr_budget, app.default_threshold
    )
    text = json.dumps(thetas, indent=1, sort_keys=True) + "\n"
    _write(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_monitor(args) -> int:
    app = config_mod.load_config(args.config)
    matrix = _load_matrix(args.matrix)
    cfg = monitor_mod.MonitorConfig(
        category=args.category,
        matrix=matrix,
        threshold=args.theta,
        horizon=args.horizon,
        reversibility_policy=ReversibilityPolicy(args.policy),
        intervention_mode=monitor_mod.InterventionMode(args.mode),
        risk_rules=app.risk_rules,
    )
    session = monitor_mod.Monitor(cfg).new_session()
    classifier = ActionClassifier(profiles=app.profiles)
    for lineno, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            sensitivity = record.get("sensitivity")
            if sensitivity is None and "path" in record:
                resolved = app.manifest.resolve(record["path"])
                sensitivity = resolved.name if resolved is not None else None
            action = ActionRecord(
                step_index=lineno - 1,
                tool=record["tool"],
                sensitivity=DataExposure[sensitivity] if sensitivity else None,
            )
            delta = classifier.classify(action)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise sim_mod.ParseError(f"bad action record: {exc}", lineno) from exc
        verdict = session.observe(delta)
        print(
            json.dumps(
                {
                    "probability": round(verdict.probability, 9),
                    "flagged": verdict.flagged,
                    "level": verdict.level.name,
                    "already_violated": verdict.already_violated,
                    "mode": verdict.mode.value,
                },
                separators=(",", ":"),
            ),
            flush=True,
        )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    app = config_mod.load_config(args.config)
    traces = sim_mod.read_traces(args.traces, profiles=app.profiles)
    train, test = _split(args, traces)
    matrices = eval_mod.fit_category_matrices(train)
    thetas = eval_mod.calibrate_all(
        train, matrices, args.horizon, args.fpr_budget, app.default_threshold
    )
    monitors = {
        "no_monitor": eval_mod.no_monitor,
        "keyword": eval_mod.keyword_baseline,
        "markov": eval_mod.MarkovFlagger(matrices, thetas, args.horizon),
    }
    report = eval_mod.evaluate_monitors(test, monitors)
    report.metadata = {
        "seed": args.seed,
        "corpus_hash": eval_mod.corpus_hash(traces),
        "config_hash": hashlib.sha256(
            json.dumps(thetas, sort_keys=True).encode()
        ).hexdigest(),
        "train_traces": len(train),
        "test_traces": len(test),
        "thresholds": thetas,
    }
    sweep = eval_mod.threshold_sweep(test, matrices, args.horizon)
    order_rows = eval_mod.markov_order_table(train, test)
    full_acc = eval_mod.full_model_accuracy(train, test)
    ablation_rows = [("full", full_acc)] + [
        (dim, eval_mod.ablation(train, test, dim)) for dim in eval_mod.DIMENSIONS
    ]
    sizes = sorted({max(2, round(f * len(train))) for f in (0.125, 0.25, 0.5, 0.75, 1.0)})
    curve_rows = eval_mod.learning_curve(train, test, sizes, repeats=5, seed=args.seed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "report.csv", report.to_csv())
    _write(out_dir / "report.txt", report.to_text())
    _write(out_dir / "sweep.csv", sweep.to_csv())
    _write(
        out_dir / "order_table.csv",
        "order,train_accuracy,train_log_likelihood,test_accuracy,test_log_likelihood\n"
        + "".join(
            f"{r['order']},{r['train_accuracy']:.6f},{r['train_log_likelihood']:.6f},"
            f"{r['test_accuracy']:.6f},{r['test_log_likelihood']:.6f}\n"
            for r in order_rows
        ),
    )
    _write(
        out_dir / "ablation.csv",
        "clamped_dimension,test_accuracy\n"
        + "".join(f"{d},{a:.6f}\n" for d, a in ablation_rows),
    )
    _write(
        out_dir / "learning_curve.csv",
        "n_train,mean_accuracy,std_accuracy\n"
        + "".join(f"{n},{m:.6f},{s:.6f}\n" for n, m, s in curve_rows),
    )
    _write(
        out_dir / "metadata.json",
        json.dumps(report.metadata, indent=1, sort_keys=True) + "\n",
    )
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_validate_rules(args) -> int:
    app = config_mod.load_config(args.config)
    rules = app.risk_rules
    print("index,exposure,escalation,reversibility,level")
    levels = {}
    for state in all_states():
        level = synthesize_risk(state, rules)
        levels[state] = level
        print(
            f"{state_index(state)},{state.exposure.name},{state.escalation.name},"
            f"{state.reversibility.name},{level.name}"
        )
    violations = 0
    for state in all_states():
        for neighbor in _raised_neighbors(state):
            if levels[neighbor] < levels[state]:
                violations += 1
                print(f"monotonicity violation: {state} -> {neighbor}", file=sys.stderr)
    print(f"states: {len(levels)}; monotonicity violations: {violations}")
    return EXIT_OK if violations == 0 else EXIT_DATA


def _raised_neighbors(state):
    from .state_model import SafetyState, DataExposure, ToolEscalation, Reversibility

    if state.exposure < DataExposure.CREDENTIALS:
        yield SafetyState(
            DataExposure(state.exposure + 1), state.escalation, state.reversibility
        )
    if state.escalation < ToolEscalation.NETWORK:
        yield SafetyState(
            state.exposure, ToolEscalation(state.escalation + 1), state.reversibility
        )
    if state.reversibility < Reversibility.IRREVERSIBLE:
        yield SafetyState(
            state.exposure, state.escalation, Reversibility(state.reversibility + 1)
        )


def build_parser() -> _Parser:
    parser = _Parser(prog="safetydrift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, config=True):
        if config:
            p.add_argument("--config", default=None, help="TOML config file")
        if seed:
            p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("simulate", help="generate a seeded trace corpus")
    common(p)
    p.add_argument("--n", type=int, default=None, help="total traces (default: config)")
    p.add_argument("--mode", choices=["tool", "level"], default="tool")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate transition matrices from traces")
    common(p, config=False)
    p.add_argument("--traces", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.0, help="additive smoothing")
    p.add_argument("--ratio", type=float, default=0.8)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("analyze", help="absorption and finite-horizon analytics")
    p.add_argument("--matrix", required=True, help="matrix file or builtin name")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--theta", type=float, default=0.85)
    p.add_argument("--ponr-horizon", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="per-category threshold calibration")
    common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--fpr-budget", type=float, default=0.15)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("monitor", help="streaming verdicts: stdin actions, stdout verdicts")
    common(p, seed=False)
    p.add_argument("--category", required=True)
    p.add_argument("--matrix", required=True, help="matrix file or builtin name")
    p.add_argument("--theta", type=float, default=0.45)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument(
        "--policy",
        choices=[m.value for m in ReversibilityPolicy],
        default=ReversibilityPolicy.WORST_CASE.value,
    )
    p.add_argument(
        "--mode",
        choices=[m.value for m in monitor_mod.InterventionMode],
        default=monitor_mod.InterventionMode.WARN.value,
    )
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="full monitor comparison and reports")
    common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--fpr-budget", type=float, default=0.15)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate-rules", help="dump the 60-state cascade and check monotonicity")
    common(p, seed=False)
    p.set_defaults(func=cmd_validate_rules)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
