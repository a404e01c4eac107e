"""Transition-count DFAs over query symbols, built from bursts.

A DFA is an (s+2) x (s+2) nonnegative integer matrix over the sorted
channel alphabet plus two virtual states: the burst start state (index
s) and the burst end state (index s+1). Entry [i][j] counts observed
transitions from state i to state j, except the edge into the end
state, which records support only: it is set to 1, never incremented.
Consequences: the start column and the end row are always zero, and the
start row sums to the number of bursts used to build the matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .traffic import Burst, Symbol


class Alphabet:
    """Sorted symbol set with a stable symbol -> index map."""

    __slots__ = ("symbols", "_index")

    def __init__(self, symbols: Iterable[Symbol]):
        self.symbols: tuple[Symbol, ...] = tuple(sorted(set(symbols)))
        self._index = {sym: i for i, sym in enumerate(self.symbols)}

    @classmethod
    def from_bursts(cls, bursts: Iterable[Burst]) -> "Alphabet":
        return cls(sym for burst in bursts for sym in burst.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index_of(self, symbol: Symbol) -> int:
        return self._index[symbol]

    def __contains__(self, symbol: object) -> bool:
        return symbol in self._index

    def __iter__(self) -> Iterator[Symbol]:
        return iter(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"Alphabet({len(self.symbols)} symbols)"


@dataclass
class AdjMatrix:
    """Transition-count matrix over an alphabet plus start/end states."""

    alphabet: Alphabet
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        expected = self.alphabet.size + 2
        if self.counts.shape != (expected, expected):
            raise ValueError(
                f"counts shape {self.counts.shape} does not match "
                f"alphabet size {self.alphabet.size} (+2 virtual states)"
            )
        if (self.counts < 0).any():
            raise ValueError("transition counts must be nonnegative")
        if self.counts[:, self.start_index].any():
            raise ValueError("the start state must have no incoming edges")
        if self.counts[self.end_index, :].any():
            raise ValueError("the end state must have no outgoing edges")

    @property
    def start_index(self) -> int:
        return self.alphabet.size

    @property
    def end_index(self) -> int:
        return self.alphabet.size + 1

    def support(self) -> np.ndarray:
        """Boolean edge-presence view of the matrix."""
        return self.counts > 0

    def as_boolean(self) -> "AdjMatrix":
        return AdjMatrix(self.alphabet, (self.counts > 0).astype(np.int64))

    @property
    def is_boolean(self) -> bool:
        return bool((self.counts <= 1).all())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdjMatrix):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.counts, other.counts)

    def to_json_dict(self) -> dict:
        """Serializable form: symbol triples plus the flat row-major count list."""
        return {
            "alphabet": [list(sym.as_tuple()) for sym in self.alphabet.symbols],
            "counts": [int(v) for v in self.counts.reshape(-1)],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "AdjMatrix":
        try:
            symbols = [Symbol(*map(int, triple)) for triple in data["alphabet"]]
            flat = [int(v) for v in data["counts"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed DFA payload: {exc}") from exc
        alphabet = Alphabet(symbols)
        if len(alphabet) != len(symbols):
            raise ValueError("DFA payload repeats alphabet symbols")
        if list(alphabet.symbols) != symbols:
            raise ValueError("DFA payload alphabet is not sorted")
        side = alphabet.size + 2
        if len(flat) != side * side:
            raise ValueError(
                f"DFA payload has {len(flat)} counts, expected {side * side}"
            )
        counts = np.array(flat, dtype=np.int64).reshape(side, side)
        return cls(alphabet, counts)


def build_adj_matrix(bursts: Sequence[Burst], alphabet: Alphabet) -> AdjMatrix:
    """Accumulate one DFA from a burst list.

    Every burst contributes a start edge into its first symbol, interior
    transition counts, and a support-only edge from its last symbol into
    the end state. Symbols outside the alphabet are a caller error.
    """
    side = alphabet.size + 2
    counts = np.zeros((side, side), dtype=np.int64)
    start, end = alphabet.size, alphabet.size + 1
    for burst in bursts:
        prev = start
        for sym in burst.symbols:
            try:
                idx = alphabet.index_of(sym)
            except KeyError:
                raise ValueError(f"symbol {sym} is not in the alphabet") from None
            counts[prev, idx] += 1
            prev = idx
        counts[prev, end] = 1
    return AdjMatrix(alphabet, counts)


def boolean_or(matrices: Sequence[AdjMatrix]) -> AdjMatrix:
    """Union of edge supports; frequencies are deliberately erased."""
    if not matrices:
        raise ValueError("boolean_or needs at least one matrix")
    alphabet = matrices[0].alphabet
    for mat in matrices[1:]:
        if mat.alphabet != alphabet:
            raise ValueError("cannot OR matrices over different alphabets")
    union = np.zeros_like(matrices[0].counts, dtype=bool)
    for mat in matrices:
        union |= mat.support()
    return AdjMatrix(alphabet, union.astype(np.int64))


@dataclass(frozen=True)
class BurstCounters:
    """Outcome tallies for one burst checked against one DFA.

    A burst of length b yields exactly b+1 classifications: one begin
    check, b-1 interior checks, one end check.
    """

    normal: int = 0
    miss: int = 0
    unknown: int = 0
    retransmit: int = 0
    wrong_beginning: int = 0
    wrong_ending: int = 0

    def __add__(self, other: "BurstCounters") -> "BurstCounters":
        if not isinstance(other, BurstCounters):
            return NotImplemented
        return BurstCounters(
            self.normal + other.normal,
            self.miss + other.miss,
            self.unknown + other.unknown,
            self.retransmit + other.retransmit,
            self.wrong_beginning + other.wrong_beginning,
            self.wrong_ending + other.wrong_ending,
        )

    def total(self) -> int:
        return (
            self.normal
            + self.miss
            + self.unknown
            + self.retransmit
            + self.wrong_beginning
            + self.wrong_ending
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "normal": self.normal,
            "miss": self.miss,
            "unknown": self.unknown,
            "retransmit": self.retransmit,
            "wrong_beginning": self.wrong_beginning,
            "wrong_ending": self.wrong_ending,
        }


def evaluate_burst(dfa: AdjMatrix, burst: Burst) -> BurstCounters:
    """Classify every check of one burst against a DFA.

    Begin check: Normal iff the start state has a trained edge into the
    first symbol, else Wrong-Beginning. Interior checks, in priority
    order: Unknown if the next symbol is outside the alphabet; else
    Retransmit if the next symbol repeats the current one (even when the
    self-loop happens to be trained); else Normal if the transition is
    trained; else Miss. End check: Normal iff the last symbol has an
    edge into the end state, else Wrong-Ending. A symbol outside the
    alphabet has no trained edges, so a burst beginning (ending) with
    one scores Wrong-Beginning (Wrong-Ending).
    """
    alphabet = dfa.alphabet
    counts = dfa.counts
    start, end = dfa.start_index, dfa.end_index
    idx = [alphabet.index_of(sym) if sym in alphabet else None for sym in burst.symbols]

    normal = miss = unknown = retransmit = wrong_beginning = wrong_ending = 0

    if idx[0] is not None and counts[start, idx[0]] > 0:
        normal += 1
    else:
        wrong_beginning += 1

    for i in range(len(idx) - 1):
        nxt = idx[i + 1]
        if nxt is None:
            unknown += 1
        elif burst.symbols[i] == burst.symbols[i + 1]:
            retransmit += 1
        elif idx[i] is not None and counts[idx[i], nxt] > 0:
            normal += 1
        else:
            miss += 1

    if idx[-1] is not None and counts[idx[-1], end] > 0:
        normal += 1
    else:
        wrong_ending += 1

    return BurstCounters(normal, miss, unknown, retransmit, wrong_beginning, wrong_ending)
