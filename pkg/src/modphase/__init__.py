"""Phase-aware anomaly detection for Modbus/TCP SCADA query traffic.

The pipeline: ingest captures into per-channel burst lists, fingerprint
windows of bursts, discover the phase count by clustering, train one
boolean transition DFA per phase, then enforce live traffic against the
best-matching phase DFA and quantify how permissive the result is.
"""

__version__ = "0.1.0"

from .dfa import (
    AdjMatrix,
    Alphabet,
    BurstCounters,
    boolean_or,
    build_adj_matrix,
    evaluate_burst,
)
from .ingest import (
    ChannelStream,
    IngestConfig,
    IngestFormatError,
    ParseResult,
    parse_records,
    split_bursts,
    split_channels,
)
from .kphase import (
    EnforcementResult,
    PhaseModel,
    SamplingPlan,
    assign_and_score,
    enforce,
    merged_dfa,
    sample_training_set,
    score_over_time,
    train_phase_model,
)
from .perm import (
    PermReport,
    count_paths_single,
    count_unique_paths,
    intersect,
    merged_report,
    permissiveness,
    permissiveness_model,
    permissiveness_single,
)
from .phases import (
    KSelection,
    PhaseAssignment,
    PhaseDetectConfig,
    WindowFingerprint,
    count_phase_shifts,
    distance_matrix,
    fingerprint_windows,
    kmeans,
    select_k,
    silhouette,
)
from .syngen import (
    GroundTruth,
    Injection,
    PhaseSpec,
    ScenarioSpec,
    SyngenError,
    builtin_scenarios,
    generate,
)
from .traffic import (
    MODBUS_MASTER_PORT,
    Burst,
    ChannelId,
    ModbusQuery,
    Symbol,
    channel_of,
    symbol_of,
)

__all__ = [name for name in dir() if not name.startswith("_")]
