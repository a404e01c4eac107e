"""The k-phase enforcement model: train, assign, score.

Training windows the TRAINING bursts, discovers the phase count, and
folds each cluster's window matrices into one boolean DFA per phase. At
enforcement time every burst is checked against all k DFAs and the one
that explains it best wins: fewest unknowns first, then fewest other
anomalies, then the lowest phase index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dfa import AdjMatrix, Alphabet, BurstCounters, boolean_or, evaluate_burst
from .phases import (
    PhaseDetectConfig,
    final_assignment,
    fingerprints_from_matrices,
    partition_even,
    partition_windows,
    select_k,
    window_matrices,
)
from .traffic import Burst, ChannelId

log = logging.getLogger(__name__)

DEFAULT_STRIDE = 3


@dataclass(frozen=True)
class SamplingPlan:
    """Keep every `stride`-th burst (starting at `offset`) for training."""

    stride: int = DEFAULT_STRIDE
    offset: int = 0

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0 <= self.offset < self.stride:
            raise ValueError("offset must lie in [0, stride)")


def sample_training_set(
    bursts: list[Burst], plan: SamplingPlan
) -> tuple[list[Burst], list[Burst]]:
    """Split bursts into (training, held-out) by the stride rule."""
    train: list[Burst] = []
    test: list[Burst] = []
    for i, burst in enumerate(bursts):
        if i % plan.stride == plan.offset:
            train.append(burst)
        else:
            test.append(burst)
    return train, test


@dataclass
class PhaseModel:
    """k boolean DFAs over one channel alphabet, plus training bookkeeping."""

    channel: ChannelId
    alphabet: Alphabet
    k: int
    dfas: list[AdjMatrix]
    phase_windows: dict[int, list[int]]
    single_phase: bool
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "channel": {
                "master_ip": self.channel.master_ip,
                "slave_ip": self.channel.slave_ip,
                "unit_id": self.channel.unit_id,
                "slave_port": self.channel.slave_port,
            },
            "alphabet": [list(sym.as_tuple()) for sym in self.alphabet.symbols],
            "k": self.k,
            "dfas": [
                [int(v) for v in dfa.counts.reshape(-1)] for dfa in self.dfas
            ],
            "phase_windows": {str(p): idxs for p, idxs in self.phase_windows.items()},
            "single_phase": self.single_phase,
            "meta": self.meta,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PhaseModel":
        from .traffic import Symbol

        try:
            ch = data["channel"]
            channel = ChannelId(
                str(ch["master_ip"]), str(ch["slave_ip"]),
                int(ch["unit_id"]), int(ch["slave_port"]),
            )
            symbols = [Symbol(*map(int, triple)) for triple in data["alphabet"]]
            k = int(data["k"])
            flat_dfas = data["dfas"]
            phase_windows = {
                int(p): [int(i) for i in idxs]
                for p, idxs in data["phase_windows"].items()
            }
            single_phase = bool(data["single_phase"])
            meta = dict(data.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed model payload: {exc}") from exc
        alphabet = Alphabet(symbols)
        if list(alphabet.symbols) != symbols:
            raise ValueError("model alphabet must be sorted and duplicate-free")
        side = alphabet.size + 2
        dfas = []
        for flat in flat_dfas:
            if len(flat) != side * side:
                raise ValueError("model DFA size does not match its alphabet")
            counts = np.array([int(v) for v in flat], dtype=np.int64).reshape(side, side)
            dfas.append(AdjMatrix(alphabet, counts))
        if len(dfas) != k:
            raise ValueError(f"model declares k={k} but carries {len(dfas)} DFAs")
        return cls(channel, alphabet, k, dfas, phase_windows, single_phase, meta)


def train_phase_model(
    channel: ChannelId,
    train_bursts: list[Burst],
    cfg: PhaseDetectConfig,
    seed=None,
) -> PhaseModel:
    """Fit the per-phase DFAs from an already-sampled training burst list."""
    if not train_bursts:
        raise ValueError("cannot train on an empty burst list")
    alphabet = Alphabet.from_bursts(train_bursts)
    eff_cfg = replace(cfg, num_windows=min(cfg.num_windows, len(train_bursts)))
    windows = partition_windows(train_bursts, eff_cfg)
    matrices = window_matrices(windows, alphabet)
    fps = fingerprints_from_matrices(matrices, windows)
    selection = select_k(fps, eff_cfg, seed)
    assignment = final_assignment(fps, selection, eff_cfg, seed)
    phase_windows: dict[int, list[int]] = {p: [] for p in range(1, selection.k + 1)}
    for idx, label in enumerate(assignment.labels):
        phase_windows[int(label)].append(idx)
    dfas = []
    for p in range(1, selection.k + 1):
        members = [matrices[i] for i in phase_windows[p]]
        dfas.append(boolean_or(members).as_boolean())
    meta = {
        "train_bursts": len(train_bursts),
        "num_windows": len(windows),
        "mean_silhouette": assignment.mean_silhouette,
        "best_silhouette": selection.best_silhouette,
    }
    if seed is not None:
        meta["seed"] = seed
    return PhaseModel(
        channel, alphabet, selection.k, dfas, phase_windows, selection.single_phase, meta
    )


def assign_and_score(model: PhaseModel, burst: Burst) -> tuple[int, BurstCounters]:
    """Pick the phase whose DFA explains the burst best.

    Ranking is lexicographic: fewest unknowns, then fewest other
    anomalies (miss + retransmit + wrong beginning + wrong ending), then
    the lowest phase index.
    """
    best_key: tuple[int, int, int] | None = None
    best: tuple[int, BurstCounters] | None = None
    for phase, dfa in enumerate(model.dfas, start=1):
        counters = evaluate_burst(dfa, burst)
        anomalies = (
            counters.miss
            + counters.retransmit
            + counters.wrong_beginning
            + counters.wrong_ending
        )
        key = (counters.unknown, anomalies, phase)
        if best_key is None or key < best_key:
            best_key = key
            best = (phase, counters)
    assert best is not None
    return best


@dataclass
class EnforcementResult:
    """Channel-level outcome of checking a burst list against a model."""

    per_burst: list[tuple[int, BurstCounters]]
    channel_totals: BurstCounters
    burst_count: int
    total_queries: int
    normal_ratio: float | None
    nmr_ratio: float | None
    miss_ratio: float | None
    unknown_ratio: float | None
    retransmit_ratio: float | None
    bad_beginning_ratio: float | None
    bad_ending_ratio: float | None

    def anomaly_ratio(self) -> float | None:
        """Unknown + miss + retransmit checks per query."""
        if self.total_queries == 0:
            return None
        return (
            self.channel_totals.unknown
            + self.channel_totals.miss
            + self.channel_totals.retransmit
        ) / self.total_queries


def enforce(model: PhaseModel, bursts: list[Burst]) -> EnforcementResult:
    """Score every burst and aggregate query-level ratios.

    The denominator is the number of queries (the sum of burst lengths),
    not the number of checks: per burst the ending check is excluded and
    the begin check stands in for the first query, i.e. the burst
    contributes normal - (1 - wrong_ending) normal *queries*. The two
    boundary-failure ratios are per burst instead.
    """
    per_burst: list[tuple[int, BurstCounters]] = []
    totals = BurstCounters()
    total_queries = 0
    normal_queries = 0
    for burst in bursts:
        phase, counters = assign_and_score(model, burst)
        per_burst.append((phase, counters))
        totals = totals + counters
        total_queries += len(burst)
        normal_queries += counters.normal - (1 - counters.wrong_ending)
    n_bursts = len(bursts)
    if total_queries == 0:
        return EnforcementResult(
            per_burst, totals, 0, 0, None, None, None, None, None, None, None
        )
    nmr = normal_queries + totals.miss + totals.retransmit
    return EnforcementResult(
        per_burst=per_burst,
        channel_totals=totals,
        burst_count=n_bursts,
        total_queries=total_queries,
        normal_ratio=normal_queries / total_queries,
        nmr_ratio=nmr / total_queries,
        miss_ratio=totals.miss / total_queries,
        unknown_ratio=totals.unknown / total_queries,
        retransmit_ratio=totals.retransmit / total_queries,
        bad_beginning_ratio=totals.wrong_beginning / n_bursts,
        bad_ending_ratio=totals.wrong_ending / n_bursts,
    )


@dataclass
class PartScore:
    """Enforcement ratios over one contiguous slice of the burst list."""

    part: int
    burst_count: int
    query_count: int
    normal_ratio: float | None
    nmr_ratio: float | None
    miss_ratio: float | None
    unknown_ratio: float | None
    retransmit_ratio: float | None
    bad_beginning_ratio: float | None
    bad_ending_ratio: float | None


def score_over_time(
    model: PhaseModel, bursts: list[Burst], num_parts: int
) -> list[PartScore]:
    """Enforce over `num_parts` contiguous equal-count slices of the bursts.

    Slice sizes differ by at most one, with the earliest slices taking
    the remainder; empty slices report not-applicable ratios.
    """
    parts = partition_even(bursts, num_parts)
    out: list[PartScore] = []
    for i, part in enumerate(parts):
        res = enforce(model, part)
        out.append(
            PartScore(
                part=i,
                burst_count=res.burst_count,
                query_count=res.total_queries,
                normal_ratio=res.normal_ratio,
                nmr_ratio=res.nmr_ratio,
                miss_ratio=res.miss_ratio,
                unknown_ratio=res.unknown_ratio,
                retransmit_ratio=res.retransmit_ratio,
                bad_beginning_ratio=res.bad_beginning_ratio,
                bad_ending_ratio=res.bad_ending_ratio,
            )
        )
    return out


def merged_dfa(model: PhaseModel) -> AdjMatrix:
    """Boolean OR of all phase DFAs: the phase-blind comparison model."""
    return boolean_or(model.dfas)
