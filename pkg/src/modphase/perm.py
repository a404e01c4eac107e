"""Permissiveness: how much of the symbol-sequence space a model accepts.

The number of length-b bursts a boolean DFA accepts equals the number of
walks of length b+1 from the start state to the end state, computed here
as an exact matrix power over arbitrary-precision Python integers
(floats would overflow and round long before realistic sizes). The
permissiveness ratio normalizes that count against the s^b sequences an
all-accepting model would admit: ratio = allowed^(1/b) / s.

For a k-phase model the DFAs overlap, so the union count comes from
inclusion-exclusion over nonempty DFA subsets, where each subset's
intersection DFA is the elementwise AND of the members' edge sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .dfa import AdjMatrix, boolean_or

MAX_MODEL_DFAS = 15


@dataclass(frozen=True)
class PermReport:
    """Permissiveness of one model at one burst length."""

    channel_label: str
    alphabet_size: int
    burst_length: int
    allowed_paths: int
    ratio: float
    has_paths: bool


def _bool_int_matrix(dfa: AdjMatrix) -> list[list[int]]:
    if not dfa.is_boolean:
        raise ValueError("path counting takes a boolean DFA; call as_boolean() first")
    return [[int(v) for v in row] for row in dfa.counts]


def _mat_mul(a: list[list[int]], b: list[list[int]]) -> list[list[int]]:
    bt = list(zip(*b))
    return [[sum(x * y for x, y in zip(row, col)) for col in bt] for row in a]


def _mat_pow(m: list[list[int]], exponent: int) -> list[list[int]]:
    n = len(m)
    result = [[1 if i == j else 0 for j in range(n)] for i in range(n)]
    base = m
    e = exponent
    while e > 0:
        if e & 1:
            result = _mat_mul(result, base)
        base = _mat_mul(base, base)
        e >>= 1
    return result


def count_paths_single(dfa: AdjMatrix, burst_length: int) -> int:
    """Exact number of length-b symbol sequences the DFA accepts.

    A length-b burst is a start -> s_1 -> ... -> s_b -> end walk, i.e. a
    walk of b+1 edges, so the count is (A^(b+1))[start][end].
    """
    if burst_length < 1:
        raise ValueError("burst length must be >= 1")
    m = _bool_int_matrix(dfa)
    powered = _mat_pow(m, burst_length + 1)
    return powered[dfa.start_index][dfa.end_index]


def permissiveness(allowed_paths: int, alphabet_size: int, burst_length: int) -> float:
    """allowed^(1/b) / s, via logs to stay exact-ish at big-int scale."""
    if allowed_paths < 0:
        raise ValueError("path counts cannot be negative")
    if alphabet_size < 1:
        raise ValueError("alphabet must be nonempty")
    if burst_length < 1:
        raise ValueError("burst length must be >= 1")
    if allowed_paths == 0:
        return 0.0
    if allowed_paths == 1:
        return 1.0 / alphabet_size
    return math.exp(_log_big(allowed_paths) / burst_length) / alphabet_size


def _log_big(value: int) -> float:
    # math.log handles ints beyond float range fine, but be explicit anyway.
    return math.log(value)


def permissiveness_single(dfa: AdjMatrix, burst_length: int, label: str = "") -> PermReport:
    paths = count_paths_single(dfa, burst_length)
    return PermReport(
        channel_label=label,
        alphabet_size=dfa.alphabet.size,
        burst_length=burst_length,
        allowed_paths=paths,
        ratio=permissiveness(paths, dfa.alphabet.size, burst_length),
        has_paths=paths > 0,
    )


def intersect(dfas: Sequence[AdjMatrix]) -> AdjMatrix:
    """Elementwise AND of edge supports (all DFAs share one alphabet)."""
    if not dfas:
        raise ValueError("intersect needs at least one DFA")
    alphabet = dfas[0].alphabet
    for dfa in dfas[1:]:
        if dfa.alphabet != alphabet:
            raise ValueError("cannot intersect DFAs over different alphabets")
    meet = np.ones_like(dfas[0].counts, dtype=bool)
    for dfa in dfas:
        meet &= dfa.support()
    return AdjMatrix(alphabet, meet.astype(np.int64))


def count_unique_paths(dfas: Sequence[AdjMatrix], burst_length: int) -> int:
    """Sequences accepted by at least one of the DFAs, without double counting.

    Inclusion-exclusion over nonempty subsets: |union| = sum over subsets
    of (-1)^(|subset|+1) * |intersection|. Subset count is exponential in
    k, so models beyond 15 DFAs are refused outright.
    """
    k = len(dfas)
    if k == 0:
        raise ValueError("count_unique_paths needs at least one DFA")
    if k > MAX_MODEL_DFAS:
        raise ValueError(
            f"refusing inclusion-exclusion over {k} DFAs "
            f"(2^{k} subsets; the supported maximum is {MAX_MODEL_DFAS})"
        )
    total = 0
    for size in range(1, k + 1):
        sign = 1 if size % 2 == 1 else -1
        for subset in combinations(range(k), size):
            meet = intersect([dfas[i] for i in subset])
            total += sign * count_paths_single(meet, burst_length)
    return total


def permissiveness_model(
    dfas: Sequence[AdjMatrix], burst_length: int, label: str = ""
) -> PermReport:
    """Permissiveness of a k-phase model: union count, then the b-th root."""
    paths = count_unique_paths(dfas, burst_length)
    alphabet_size = dfas[0].alphabet.size
    return PermReport(
        channel_label=label,
        alphabet_size=alphabet_size,
        burst_length=burst_length,
        allowed_paths=paths,
        ratio=permissiveness(paths, alphabet_size, burst_length),
        has_paths=paths > 0,
    )


def merged_report(dfas: Sequence[AdjMatrix], burst_length: int, label: str = "") -> PermReport:
    """Permissiveness of the phase-blind OR of the same DFAs, for comparison."""
    return permissiveness_single(boolean_or(list(dfas)).as_boolean(), burst_length, label)
