"""Synthetic Modbus/TCP query traffic with known phase structure.

A scenario is a schedule of phase segments; each segment draws its
bursts from that phase's grammar list (a grammar is a fixed symbol
sequence). Timing is rigid by construction: queries inside a burst sit
`intra_burst_gap` apart and consecutive bursts sit `inter_burst_gap`
apart, with intra < burst-gap threshold < inter, so ingestion recovers
exactly the generated burst boundaries.

Anomaly injections run as a deterministic post-pass over the generated
burst list. Transaction ids are assigned after injection and timestamps
are rebuilt only inside mutated bursts, so the clean and injected
variants of one scenario carry identical base traffic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import DEFAULT_BURST_GAP
from .traffic import ChannelId, ModbusQuery, Symbol

INJECTION_KINDS = (
    "unknown_symbol",
    "reorder",
    "retransmit",
    "truncate_burst",
    "foreign_prefix",
)

_UNKNOWN_FC = 102  # function code no shipped grammar uses


class SyngenError(Exception):
    """A scenario that cannot be generated as specified."""


@dataclass(frozen=True)
class PhaseSpec:
    """One schedule segment: bursts drawn from this phase's grammars."""

    phase_id: str
    grammars: tuple[tuple[Symbol, ...], ...]
    burst_count: int
    intra_burst_gap: float = 0.005
    inter_burst_gap: float = 2.0


@dataclass(frozen=True)
class Injection:
    """Mutate the burst at `position` (global index) with one anomaly kind."""

    position: int
    kind: str


@dataclass(frozen=True)
class ScenarioSpec:
    channel: ChannelId
    schedule: tuple[PhaseSpec, ...]
    injections: tuple[Injection, ...] = ()
    rng_seed: int = 0


@dataclass
class GroundTruth:
    """What the generator actually emitted, burst by burst."""

    phase_by_burst: list[str] = field(default_factory=list)
    phase_onsets: list[dict] = field(default_factory=list)
    injections: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "phase_by_burst": self.phase_by_burst,
            "phase_onsets": self.phase_onsets,
            "injections": self.injections,
        }


def validate_scenario(spec: ScenarioSpec) -> list[str]:
    """Collect every spec violation; an empty list means generable."""
    problems: list[str] = []
    if not spec.schedule:
        problems.append("schedule is empty")
    total_bursts = 0
    for i, seg in enumerate(spec.schedule):
        where = f"segment {i} ({seg.phase_id!r})"
        if seg.burst_count < 1:
            problems.append(f"{where}: burst_count must be >= 1")
        if not seg.grammars:
            problems.append(f"{where}: no grammars")
        for j, grammar in enumerate(seg.grammars):
            if len(grammar) < 1:
                problems.append(f"{where}: grammar {j} is empty")
            for a, b in zip(grammar, grammar[1:]):
                if a == b:
                    problems.append(
                        f"{where}: grammar {j} repeats {a} adjacently "
                        "(would read as a retransmit)"
                    )
        if not seg.intra_burst_gap > 0:
            problems.append(f"{where}: intra_burst_gap must be positive")
        if not seg.intra_burst_gap < DEFAULT_BURST_GAP < seg.inter_burst_gap:
            problems.append(
                f"{where}: gaps must satisfy intra < {DEFAULT_BURST_GAP} < inter, "
                f"got intra={seg.intra_burst_gap} inter={seg.inter_burst_gap}"
            )
        total_bursts += max(seg.burst_count, 0)
    if spec.rng_seed < 0:
        problems.append("rng_seed must be nonnegative")
    seen: set[int] = set()
    for inj in spec.injections:
        if inj.kind not in INJECTION_KINDS:
            problems.append(f"injection at {inj.position}: unknown kind {inj.kind!r}")
        if not 0 <= inj.position < total_bursts:
            problems.append(
                f"injection at {inj.position}: outside the {total_bursts} generated bursts"
            )
        if inj.position in seen:
            problems.append(f"injection at {inj.position}: burst injected twice")
        seen.add(inj.position)
    return problems


def scenario_alphabet(spec: ScenarioSpec) -> set[Symbol]:
    return {
        sym for seg in spec.schedule for grammar in seg.grammars for sym in grammar
    }


def generate(spec: ScenarioSpec) -> tuple[list[ModbusQuery], GroundTruth]:
    """Emit the scenario's query stream plus its ground truth."""
    problems = validate_scenario(spec)
    if problems:
        raise SyngenError("; ".join(problems))
    rng = np.random.default_rng([int(spec.rng_seed)])

    # Base traffic: pick a grammar per burst, lay out rigid timestamps.
    sequences: list[list[Symbol]] = []
    starts: list[float] = []
    gaps: list[float] = []  # intra gap per burst, for rebuilds after injection
    truth = GroundTruth()
    cursor = 0.0
    for seg in spec.schedule:
        onset = len(sequences)
        for _ in range(seg.burst_count):
            grammar = seg.grammars[int(rng.integers(len(seg.grammars)))]
            sequences.append(list(grammar))
            starts.append(cursor)
            gaps.append(seg.intra_burst_gap)
            truth.phase_by_burst.append(seg.phase_id)
            cursor += (len(grammar) - 1) * seg.intra_burst_gap + seg.inter_burst_gap
        truth.phase_onsets.append({"phase": seg.phase_id, "burst_index": onset})

    for inj in spec.injections:
        detail = _apply_injection(sequences, inj, spec)
        truth.injections.append(detail)

    queries: list[ModbusQuery] = []
    tid = 0
    for seq, start, gap in zip(sequences, starts, gaps):
        for j, sym in enumerate(seq):
            queries.append(
                ModbusQuery(
                    timestamp=start + j * gap,
                    transaction_id=tid % 0x10000,
                    unit_id=spec.channel.unit_id,
                    function_code=sym.function_code,
                    reference_number=sym.reference_number,
                    count=sym.count,
                    master_ip=spec.channel.master_ip,
                    slave_ip=spec.channel.slave_ip,
                    slave_port=spec.channel.slave_port,
                )
            )
            tid += 1
    return queries, truth


def _apply_injection(
    sequences: list[list[Symbol]], inj: Injection, spec: ScenarioSpec
) -> dict:
    seq = sequences[inj.position]
    detail: dict = {"position": inj.position, "kind": inj.kind}
    if inj.kind == "unknown_symbol":
        if len(seq) < 4:
            raise SyngenError(
                f"unknown_symbol at {inj.position} needs a burst of >= 4 queries"
            )
        foreign = Symbol(_UNKNOWN_FC, 9000 + inj.position % 1000, 1)
        if foreign in scenario_alphabet(spec):
            raise SyngenError("generated foreign symbol collides with a grammar symbol")
        seq[1] = foreign
        seq[2] = foreign
        detail["symbol"] = list(foreign.as_tuple())
    elif inj.kind == "reorder":
        if len(seq) < 4 or seq[1] == seq[2]:
            raise SyngenError(
                f"reorder at {inj.position} needs >= 4 queries with distinct "
                "symbols at positions 1 and 2"
            )
        seq[1], seq[2] = seq[2], seq[1]
        detail["swapped"] = [1, 2]
    elif inj.kind == "retransmit":
        if len(seq) < 2:
            raise SyngenError(f"retransmit at {inj.position} needs >= 2 queries")
        seq.insert(2, seq[1])
        detail["duplicated_index"] = 1
    elif inj.kind == "truncate_burst":
        if len(seq) < 2:
            raise SyngenError(f"truncate_burst at {inj.position} needs >= 2 queries")
        detail["dropped"] = list(seq.pop().as_tuple())
    elif inj.kind == "foreign_prefix":
        prefix = _foreign_prefix_symbol(seq, inj.position, spec)
        seq.insert(0, prefix)
        detail["prefix"] = list(prefix.as_tuple())
    else:  # pragma: no cover - validate_scenario already rejected it
        raise SyngenError(f"unknown injection kind {inj.kind!r}")
    return detail


def _phase_of_burst(position: int, spec: ScenarioSpec) -> PhaseSpec:
    offset = 0
    for seg in spec.schedule:
        if position < offset + seg.burst_count:
            return seg
        offset += seg.burst_count
    raise SyngenError(f"burst position {position} outside the schedule")


def _foreign_prefix_symbol(
    seq: list[Symbol], position: int, spec: ScenarioSpec
) -> Symbol:
    """Find a symbol z to prepend such that ONLY the beginning check fails.

    z must feed the burst's current first symbol inside the burst's own
    phase grammars (so the z -> first transition is trained), differ
    from that first symbol, and never open any grammar in the scenario
    (so z is not a trained burst starter anywhere).
    """
    first = seq[0]
    seg = _phase_of_burst(position, spec)
    openers = {grammar[0] for s in spec.schedule for grammar in s.grammars}
    for grammar in seg.grammars:
        for j in range(1, len(grammar)):
            z = grammar[j - 1]
            if grammar[j] == first and z != first and z not in openers:
                return z
    raise SyngenError(
        f"foreign_prefix at {position}: no symbol feeds {first} inside its "
        "own phase without also opening a grammar"
    )


# ---------------------------------------------------------------------------
# Shipped scenario library.
#
# Eight symbols, three grammars. The grammars share interior symbols but
# no transitions, and no symbol opens or closes more than one grammar,
# which keeps phase DFAs cleanly separable and the injected anomaly
# signatures unambiguous.

_S1 = Symbol(3, 1000, 8)
_S2 = Symbol(3, 1010, 4)
_S3 = Symbol(3, 1020, 2)
_S4 = Symbol(16, 1030, 4)
_S5 = Symbol(4, 2000, 6)
_S6 = Symbol(16, 2010, 2)
_S7 = Symbol(3, 3000, 2)
_S8 = Symbol(16, 3010, 1)

GRAMMAR_A = (_S1, _S2, _S3, _S4)
GRAMMAR_B = (_S5, _S3, _S2, _S6)
GRAMMAR_C = (_S7, _S3, _S7, _S8)

_CHANNEL = ChannelId("10.0.0.1", "10.0.0.2", 1, 49152)

_THREE_PHASE_SCHEDULE = (
    PhaseSpec("filling", (GRAMMAR_A,), 90),
    PhaseSpec("dosing", (GRAMMAR_B,), 46),
    PhaseSpec("mixing", (GRAMMAR_C,), 64),
)

_INJECTIONS = (
    Injection(10, "unknown_symbol"),
    Injection(40, "reorder"),
    Injection(100, "retransmit"),
    Injection(130, "truncate_burst"),
    Injection(160, "foreign_prefix"),
)


def builtin_scenarios() -> dict[str, ScenarioSpec]:
    """Named scenarios shipped with the toolkit.

    All are sized to 200 bursts x 4 queries = 800 queries, comfortably
    above the default per-channel floor, and 200 bursts split evenly
    into the default 100 windows (2 bursts each). Phase boundaries in
    the block scenario land on even burst indices, i.e. exactly on
    window edges.
    """
    churn_schedule = tuple(
        PhaseSpec(("scan-a", "scan-b", "scan-c")[i % 3], (
            (GRAMMAR_A, GRAMMAR_B, GRAMMAR_C)[i % 3],
        ), 1)
        for i in range(200)
    )
    return {
        "single-phase": ScenarioSpec(
            channel=_CHANNEL,
            schedule=(PhaseSpec("steady", (GRAMMAR_A,), 200),),
            rng_seed=11,
        ),
        "three-phase-block": ScenarioSpec(
            channel=_CHANNEL,
            schedule=_THREE_PHASE_SCHEDULE,
            rng_seed=12,
        ),
        "three-phase-injected": ScenarioSpec(
            channel=_CHANNEL,
            schedule=_THREE_PHASE_SCHEDULE,
            injections=_INJECTIONS,
            rng_seed=12,
        ),
        "high-churn": ScenarioSpec(
            channel=_CHANNEL,
            schedule=churn_schedule,
            rng_seed=13,
        ),
    }


def scenario_to_json_dict(spec: ScenarioSpec) -> dict:
    return {
        "channel": {
            "master_ip": spec.channel.master_ip,
            "slave_ip": spec.channel.slave_ip,
            "unit_id": spec.channel.unit_id,
            "slave_port": spec.channel.slave_port,
        },
        "schedule": [
            {
                "phase_id": seg.phase_id,
                "grammars": [
                    [list(sym.as_tuple()) for sym in grammar] for grammar in seg.grammars
                ],
                "burst_count": seg.burst_count,
                "intra_burst_gap": seg.intra_burst_gap,
                "inter_burst_gap": seg.inter_burst_gap,
            }
            for seg in spec.schedule
        ],
        "injections": [
            {"position": inj.position, "kind": inj.kind} for inj in spec.injections
        ],
        "rng_seed": spec.rng_seed,
    }


def scenario_from_json_dict(data: dict) -> ScenarioSpec:
    try:
        ch = data["channel"]
        channel = ChannelId(
            str(ch["master_ip"]), str(ch["slave_ip"]),
            int(ch["unit_id"]), int(ch["slave_port"]),
        )
        schedule = tuple(
            PhaseSpec(
                phase_id=str(seg["phase_id"]),
                grammars=tuple(
                    tuple(Symbol(*map(int, sym)) for sym in grammar)
                    for grammar in seg["grammars"]
                ),
                burst_count=int(seg["burst_count"]),
                intra_burst_gap=float(seg.get("intra_burst_gap", 0.005)),
                inter_burst_gap=float(seg.get("inter_burst_gap", 2.0)),
            )
            for seg in data["schedule"]
        )
        injections = tuple(
            Injection(int(inj["position"]), str(inj["kind"]))
            for inj in data.get("injections", [])
        )
        seed = int(data.get("rng_seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise SyngenError(f"malformed scenario payload: {exc}") from exc
    return ScenarioSpec(channel, schedule, injections, seed)
