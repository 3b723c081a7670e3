"""Cumulative safety-state tracking and absorbing-chain risk forecasting
for tool-using agents.

The pipeline: classify actions into state deltas, merge them into a
monotone safety state, synthesize a risk level through a rule cascade,
fit absorbing Markov chains over risk-level trajectories, and answer
"probability of violation within h steps" in constant time per step.
"""

from .state_model import (
    DataExposure,
    ToolEscalation,
    Reversibility,
    RiskLevel,
    ReversibilityPolicy,
    SafetyState,
    StateDelta,
    RiskRule,
    DEFAULT_RISK_RULES,
    INITIAL_STATE,
    NUM_STATES,
    merge_state,
    synthesize_risk,
    state_index,
    state_from_index,
    all_states,
)
from .classifier import (
    ActionClassifier,
    ActionRecord,
    FileManifest,
    TableJudge,
    ToolRiskProfile,
    DEFAULT_TOOL_PROFILES,
    UnclassifiableAction,
)
from .estimation import (
    TransitionCounts,
    TransitionMatrix,
    WilsonInterval,
    count_transitions,
    estimate_matrix,
    embed_higher_order,
    next_state_metrics,
    split_train_test,
    wilson_ci,
    EmptyCorpus,
    InvalidCount,
)
from .analysis import (
    AbsorbingDecomposition,
    AbsorptionReport,
    HorizonCurve,
    BASELINE_AGGREGATE,
    decompose,
    absorption_report,
    finite_horizon,
    points_of_no_return,
    NotAbsorbing,
    SingularChain,
)
from .monitor import (
    InterventionMode,
    Monitor,
    MonitorConfig,
    Session,
    Verdict,
    calibrate_threshold,
    InsufficientCorpus,
    SessionClosed,
)
from .simulate import (
    Step,
    Trace,
    ScenarioConfig,
    ScenarioMix,
    ActionTemplate,
    simulate_traces,
    level_sequence,
    read_traces,
    write_traces,
    trace_to_json,
    corpus_summary,
    ParseError,
    ConsistencyError,
)
from .config import AppConfig, category_seed, load_config, simulate_corpus

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
