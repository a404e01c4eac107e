"""Phase structure discovery over windowed burst fingerprints.

A channel's burst list is cut into windows, each window's bursts are
folded into one transition-count matrix, and the flattened L2-normalized
matrix is the window's fingerprint. Fingerprints are clustered with a
from-scratch Lloyd's k-means; the cluster count is picked by a repeated
silhouette sweep that keeps the smallest of the per-run optima.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, TypeVar

import numpy as np

from .dfa import AdjMatrix, Alphabet, build_adj_matrix
from .traffic import Burst

log = logging.getLogger(__name__)

T = TypeVar("T")

# Salts keep the derived RNG streams of distinct call sites apart.
_SALT_SWEEP = 1
_SALT_FINAL = 2


@dataclass
class PhaseDetectConfig:
    """Windowing and clustering knobs."""

    num_windows: int = 100
    k_max: int = 15
    k_selection_runs: int = 3
    kmeans_max_iters: int = 100
    kmeans_restarts: int = 5
    rng_seed: int = 0
    window_mode: str = "count"  # "count" or "duration"
    silhouette_floor: float = 0.5

    def __post_init__(self) -> None:
        if self.num_windows < 1:
            raise ValueError("num_windows must be >= 1")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.k_selection_runs < 1:
            raise ValueError("k_selection_runs must be >= 1")
        if self.kmeans_max_iters < 1:
            raise ValueError("kmeans_max_iters must be >= 1")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")
        if self.window_mode not in ("count", "duration"):
            raise ValueError(f"unknown window_mode {self.window_mode!r}")


@dataclass
class WindowFingerprint:
    """One window's normalized transition vector plus its time extent."""

    window_index: int
    vector: np.ndarray
    empty: bool
    start_time: float | None
    end_time: float | None


@dataclass
class PhaseAssignment:
    """A clustering of window fingerprints; labels are 1-based."""

    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    mean_silhouette: float | None = None


@dataclass
class SilhouetteResult:
    values: np.ndarray
    mean: float


@dataclass
class KSelection:
    """Outcome of the repeated k sweep."""

    k: int
    single_phase: bool
    best_silhouette: float | None
    run_optima: list[int] = field(default_factory=list)
    table: list[tuple[int, int, float]] = field(default_factory=list)  # (run, k, mean sil)


def partition_even(items: Sequence[T], parts: int) -> list[list[T]]:
    """Split a sequence into `parts` contiguous groups of near-equal size.

    When the length is not divisible, the earliest groups take one extra
    element each.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    n = len(items)
    base, extra = divmod(n, parts)
    out: list[list[T]] = []
    pos = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        out.append(list(items[pos : pos + size]))
        pos += size
    return out


def partition_windows(bursts: Sequence[Burst], cfg: PhaseDetectConfig) -> list[list[Burst]]:
    """Group bursts into windows by count (default) or by equal duration.

    Count mode refuses to emit empty windows: with fewer bursts than
    windows, the window count drops to the burst count (logged).
    Duration mode keeps the requested count and may produce empty
    windows.
    """
    if not bursts:
        raise ValueError("cannot window an empty burst list")
    if cfg.window_mode == "count":
        effective = min(cfg.num_windows, len(bursts))
        if effective < cfg.num_windows:
            log.warning(
                "only %d bursts for %d windows; using %d single-burst windows",
                len(bursts), cfg.num_windows, effective,
            )
        return partition_even(bursts, effective)
    # Duration mode: equal time slices between the first start and last end,
    # with bursts assigned by start time and the final edge inclusive.
    t0 = bursts[0].start_time
    t1 = bursts[-1].end_time
    span = t1 - t0
    windows: list[list[Burst]] = [[] for _ in range(cfg.num_windows)]
    if span <= 0:
        windows[0] = list(bursts)
        return windows
    for burst in bursts:
        slot = int((burst.start_time - t0) / span * cfg.num_windows)
        slot = min(slot, cfg.num_windows - 1)
        windows[slot].append(burst)
    return windows


def window_matrices(
    windows: Sequence[Sequence[Burst]], alphabet: Alphabet
) -> list[AdjMatrix]:
    return [build_adj_matrix(window, alphabet) for window in windows]


def fingerprint_windows(
    bursts: Sequence[Burst],
    alphabet: Alphabet,
    cfg: PhaseDetectConfig,
) -> list[WindowFingerprint]:
    """Window the bursts and emit one normalized fingerprint per window."""
    windows = partition_windows(bursts, cfg)
    matrices = window_matrices(windows, alphabet)
    return fingerprints_from_matrices(matrices, windows)


def fingerprints_from_matrices(
    matrices: Sequence[AdjMatrix], windows: Sequence[Sequence[Burst]]
) -> list[WindowFingerprint]:
    out: list[WindowFingerprint] = []
    for i, (mat, window) in enumerate(zip(matrices, windows)):
        vec = mat.counts.astype(np.float64).reshape(-1)
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec = vec / norm
        if window:
            start, end = window[0].start_time, window[-1].end_time
        else:
            start = end = None
        out.append(WindowFingerprint(i, vec, not window, start, end))
    return out


def fingerprint_vectors(fps: Sequence[WindowFingerprint]) -> np.ndarray:
    return np.stack([fp.vector for fp in fps])


def distance_matrix(fps: Sequence[WindowFingerprint]) -> np.ndarray:
    """Pairwise Euclidean distances between window fingerprints."""
    vectors = fingerprint_vectors(fps)
    return _pairwise(vectors)


def _pairwise(vectors: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - vectors[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _rng(seed_entropy: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(list(seed_entropy))


def _entropy(seed, cfg: PhaseDetectConfig) -> list[int]:
    """Normalize a seed argument (int, int sequence, or None) to an int list."""
    if seed is None:
        return [cfg.rng_seed]
    if isinstance(seed, int):
        return [seed]
    return [int(v) for v in seed]


def _lloyd(
    vectors: np.ndarray,
    k: int,
    max_iters: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, float, list[float], int]:
    """One Lloyd's run: (labels0, centroids, inertia, inertia_trace, repairs).

    Initial centroids are k distinct points sampled uniformly without
    replacement. Distance ties assign to the lowest cluster index. A
    cluster left empty is repaired by force-assigning the point farthest
    from its own centroid; a repair may bump inertia upward, which is
    why the repair count is reported alongside the trace.
    """
    n = vectors.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    centroids = vectors[rng.choice(n, size=k, replace=False)].astype(np.float64).copy()
    labels = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    repairs = 0
    for _ in range(max_iters):
        dists = np.linalg.norm(vectors[:, None, :] - centroids[None, :, :], axis=2)
        new_labels = np.argmin(dists, axis=1)
        for c in range(k):
            if not (new_labels == c).any():
                # Steal the farthest point, but only from a cluster that
                # keeps at least one member (such a cluster must exist).
                sizes = np.bincount(new_labels, minlength=k)
                own = dists[np.arange(n), new_labels]
                own = np.where(sizes[new_labels] >= 2, own, -1.0)
                new_labels[int(np.argmax(own))] = c
                repairs += 1
        trace.append(float((np.linalg.norm(vectors - centroids[new_labels], axis=1) ** 2).sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = vectors[labels == c].mean(axis=0)
    inertia = float((np.linalg.norm(vectors - centroids[labels], axis=1) ** 2).sum())
    return labels, centroids, inertia, trace, repairs


def kmeans(
    fps: Sequence[WindowFingerprint],
    k: int,
    cfg: PhaseDetectConfig,
    seed: int | None = None,
) -> PhaseAssignment:
    """One seeded Lloyd's run over the fingerprints; labels come back 1-based."""
    vectors = fingerprint_vectors(fps)
    rng = _rng(_entropy(seed, cfg))
    labels, centroids, inertia, _, _ = _lloyd(vectors, k, cfg.kmeans_max_iters, rng)
    assignment = PhaseAssignment(k, labels + 1, centroids, inertia)
    sil = silhouette(vectors, assignment.labels, centroids)
    assignment.mean_silhouette = None if sil is None else sil.mean
    return assignment


def best_kmeans(
    vectors: np.ndarray,
    k: int,
    cfg: PhaseDetectConfig,
    seed_entropy: Sequence[int],
) -> PhaseAssignment:
    """Best of `kmeans_restarts` Lloyd's runs, judged by inertia (ties: first)."""
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for restart in range(cfg.kmeans_restarts):
        rng = _rng([*seed_entropy, restart])
        labels, centroids, inertia, _, _ = _lloyd(vectors, k, cfg.kmeans_max_iters, rng)
        if best is None or inertia < best[0]:
            best = (inertia, labels, centroids)
    inertia, labels, centroids = best
    assignment = PhaseAssignment(k, labels + 1, centroids, inertia)
    sil = silhouette(vectors, assignment.labels, centroids)
    assignment.mean_silhouette = None if sil is None else sil.mean
    return assignment


def silhouette(
    vectors: np.ndarray,
    labels: np.ndarray,
    centroids: np.ndarray,
) -> SilhouetteResult | None:
    """Per-point silhouette values (b - a) / max(a, b); None when k < 2.

    a(i) is the mean distance to the other members of i's cluster (0 for
    a singleton, which scores 0 overall). b(i) is the mean distance to
    the members of the cluster whose CENTROID is nearest to i among the
    other clusters. Degenerate a = b = 0 scores 0.
    """
    k = centroids.shape[0]
    if k < 2:
        return None
    n = vectors.shape[0]
    dists = _pairwise(vectors)
    cdists = np.linalg.norm(vectors[:, None, :] - centroids[None, :, :], axis=2)
    cluster_sizes = np.array([(labels == c + 1).sum() for c in range(k)])
    values = np.zeros(n, dtype=np.float64)
    for i in range(n):
        own = labels[i] - 1
        if cluster_sizes[own] <= 1:
            values[i] = 0.0
            continue
        mask_own = labels == labels[i]
        a = dists[i][mask_own].sum() / (cluster_sizes[own] - 1)
        cd = cdists[i].copy()
        cd[own] = np.inf
        cd[cluster_sizes == 0] = np.inf
        neighbor = int(np.argmin(cd))
        if not np.isfinite(cd[neighbor]):
            values[i] = 0.0
            continue
        b = dists[i][labels == neighbor + 1].mean()
        denom = max(a, b)
        values[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return SilhouetteResult(values, float(values.mean()))


def pick_final_k(run_optima: Sequence[int]) -> int:
    """The sweep keeps the smallest of the per-run optima."""
    if not run_optima:
        raise ValueError("no run optima to choose from")
    return min(run_optima)


def count_distinct(fps: Sequence[WindowFingerprint]) -> int:
    vectors = fingerprint_vectors(fps)
    return int(np.unique(vectors, axis=0).shape[0])


def select_k(
    fps: Sequence[WindowFingerprint],
    cfg: PhaseDetectConfig,
    seed: "int | Sequence[int] | None" = None,
) -> KSelection:
    """Pick the number of phases by a repeated silhouette sweep.

    Each run sweeps k = 2 .. min(k_max, n) with restarted k-means and
    takes the k with the highest mean silhouette (ties go to the lowest
    k). The final k is the minimum over runs. Fewer than 3 distinct
    fingerprints, or a best silhouette below the floor, flags the
    channel as single-phase (k = 1).
    """
    base = _entropy(seed, cfg)
    n = len(fps)
    if count_distinct(fps) < 3:
        return KSelection(k=1, single_phase=True, best_silhouette=None)
    vectors = fingerprint_vectors(fps)
    k_hi = min(cfg.k_max, n)
    run_optima: list[int] = []
    run_best_scores: list[float] = []
    table: list[tuple[int, int, float]] = []
    for run in range(cfg.k_selection_runs):
        best_k = None
        best_score = -np.inf
        for k in range(2, k_hi + 1):
            assignment = best_kmeans(vectors, k, cfg, [*base, _SALT_SWEEP, run, k])
            score = assignment.mean_silhouette
            table.append((run, k, score))
            if score > best_score:
                best_score = score
                best_k = k
        run_optima.append(best_k)
        run_best_scores.append(best_score)
    final_k = pick_final_k(run_optima)
    best_silhouette = max(run_best_scores)
    if best_silhouette < cfg.silhouette_floor:
        return KSelection(
            k=1,
            single_phase=True,
            best_silhouette=best_silhouette,
            run_optima=run_optima,
            table=table,
        )
    return KSelection(
        k=final_k,
        single_phase=False,
        best_silhouette=best_silhouette,
        run_optima=run_optima,
        table=table,
    )


def final_assignment(
    fps: Sequence[WindowFingerprint],
    selection: KSelection,
    cfg: PhaseDetectConfig,
    seed: "int | Sequence[int] | None" = None,
) -> PhaseAssignment:
    """Cluster at the selected k (trivial single cluster when k = 1)."""
    base = _entropy(seed, cfg)
    vectors = fingerprint_vectors(fps)
    if selection.k == 1:
        centroid = vectors.mean(axis=0, keepdims=True)
        inertia = float((np.linalg.norm(vectors - centroid, axis=1) ** 2).sum())
        return PhaseAssignment(
            1, np.ones(len(fps), dtype=np.int64), centroid, inertia, None
        )
    return best_kmeans(vectors, selection.k, cfg, [*base, _SALT_FINAL, selection.k])


def count_phase_shifts(labels: Sequence[int]) -> int:
    """Number of adjacent window pairs whose labels differ."""
    arr = np.asarray(labels)
    if arr.size < 2:
        return 0
    return int((arr[1:] != arr[:-1]).sum())
