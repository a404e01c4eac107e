"""Acceptance gate: ten scripted checks, one printed verdict line each.

Each test covers one shipped guarantee of the toolkit, from exact path
counting against brute-force enumeration up to byte-level determinism of
the whole pipeline. Every test prints `acceptance NN <name>: PASS|FAIL`
so the gate can be read off the terminal at a glance.
"""

import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from modphase import cli
from modphase.dfa import AdjMatrix, Alphabet, build_adj_matrix
from modphase.ingest import IngestConfig, split_bursts, split_channels
from modphase.kphase import (
    SamplingPlan,
    assign_and_score,
    enforce,
    sample_training_set,
    score_over_time,
    train_phase_model,
)
from modphase.perm import (
    count_paths_single,
    count_unique_paths,
    merged_report,
    permissiveness,
    permissiveness_model,
    permissiveness_single,
)
from modphase.phases import (
    PhaseDetectConfig,
    count_phase_shifts,
    final_assignment,
    fingerprint_windows,
    select_k,
    silhouette,
)
from modphase.syngen import (
    GRAMMAR_A,
    GRAMMAR_B,
    GRAMMAR_C,
    PhaseSpec,
    ScenarioSpec,
    builtin_scenarios,
    generate,
)
from modphase.traffic import ChannelId

from oracles import (
    count_paths_brute,
    count_union_brute,
    random_boolean_dfa,
    toy_alphabet,
)


@contextmanager
def verdict(capsys, number, name):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"acceptance {number:02d} {name}: FAIL")
        raise
    with capsys.disabled():
        print(f"acceptance {number:02d} {name}: PASS")


def scenario_bursts(name):
    queries, truth = generate(builtin_scenarios()[name])
    streams, _ = split_channels(queries, IngestConfig(min_channel_packets=0))
    assert len(streams) == 1
    return split_bursts(streams[0], IngestConfig()), truth


@pytest.fixture(scope="module")
def block():
    return scenario_bursts("three-phase-block")


@pytest.fixture(scope="module")
def stride3_model(block):
    bursts, _ = block
    train, test = sample_training_set(bursts, SamplingPlan(stride=3, offset=0))
    channel = builtin_scenarios()["three-phase-block"].channel
    model = train_phase_model(channel, train, PhaseDetectConfig(), seed=0)
    return model, train, test


def test_01_path_counts_match_enumeration(capsys):
    with verdict(capsys, 1, "path counts vs enumeration"):
        started = time.perf_counter()
        rng = np.random.default_rng(101)
        for _ in range(200):
            size = int(rng.integers(1, 6))
            b = int(rng.integers(1, 6))
            dfa = random_boolean_dfa(rng, size, edge_prob=float(rng.uniform(0.2, 0.9)))
            assert count_paths_single(dfa, b) == count_paths_brute(dfa, b)
        assert time.perf_counter() - started < 10.0


def test_02_union_counts_match_enumeration(capsys):
    with verdict(capsys, 2, "union counts vs enumeration"):
        started = time.perf_counter()
        rng = np.random.default_rng(202)
        for _ in range(100):
            k = int(rng.integers(1, 4))
            size = int(rng.integers(2, 5))
            b = int(rng.integers(2, 5))
            dfas = [
                random_boolean_dfa(rng, size, edge_prob=float(rng.uniform(0.3, 0.8)))
                for _ in range(k)
            ]
            assert count_unique_paths(dfas, b) == count_union_brute(dfas, b)
        assert time.perf_counter() - started < 30.0


def test_03_ratio_bounds_and_exact_endpoints(capsys):
    with verdict(capsys, 3, "permissiveness ratio bounds"):
        rng = np.random.default_rng(303)
        for _ in range(100):
            k = int(rng.integers(1, 4))
            size = int(rng.integers(2, 5))
            b = int(rng.integers(2, 5))
            dfas = [random_boolean_dfa(rng, size) for _ in range(k)]
            report = permissiveness_model(dfas, b)
            if not report.has_paths:
                assert report.ratio == 0.0
                continue
            assert report.ratio >= 1.0 / size - 1e-12
            assert report.ratio <= 1.0 + 1e-12
        # one straight-line grammar: exactly one accepted sequence -> 1/s
        chain = build_adj_matrix(
            [scenario_bursts("single-phase")[0][0]], Alphabet(GRAMMAR_A)
        ).as_boolean()
        assert permissiveness_single(chain, 4).ratio == 1.0 / 4.0
        # complete transition graph: everything accepted -> 1
        side = 3 + 2
        counts = np.zeros((side, side), dtype=np.int64)
        counts[3, :3] = 1
        counts[:3, :3] = 1
        counts[:3, 4] = 1
        full = AdjMatrix(toy_alphabet(3), counts)
        assert abs(permissiveness_single(full, 5).ratio - 1.0) <= 1e-12
        assert abs(permissiveness(3**5, 3, 5) - 1.0) <= 1e-12


def test_04_phase_split_model_is_less_permissive(capsys, stride3_model):
    with verdict(capsys, 4, "k-phase beats merged permissiveness"):
        model, _, _ = stride3_model
        assert model.k == 3
        split = permissiveness_model(model.dfas, 4)
        merged = merged_report(model.dfas, 4)
        # each phase admits exactly its own grammar sequence
        assert [count_paths_single(d, 4) for d in model.dfas] == [1, 1, 1]
        assert split.allowed_paths == 3
        # the merged DFA also admits cross-grammar walks
        assert merged.allowed_paths == 5
        assert split.ratio < merged.ratio
        assert split.ratio == pytest.approx(math.exp(math.log(3) / 4) / 8, abs=1e-12)


def test_05_phase_structure_recovery(capsys, block):
    with verdict(capsys, 5, "phase count and shift positions"):
        started = time.perf_counter()
        cfg = PhaseDetectConfig()
        bursts, truth = block
        alphabet = Alphabet.from_bursts(bursts)
        fps = fingerprint_windows(bursts, alphabet, cfg)
        selection = select_k(fps, cfg, seed=0)
        assert selection.k == 3
        assert not selection.single_phase
        labels = final_assignment(fps, selection, cfg, seed=0).labels
        assert count_phase_shifts(labels) == 2
        positions = [i for i in range(len(labels) - 1) if labels[i] != labels[i + 1]]
        # ground truth: onsets at bursts 90 and 136, two bursts per window
        onsets = [d["burst_index"] for d in truth.phase_onsets[1:]]
        expected = [onset // 2 - 1 for onset in onsets]
        assert len(positions) == len(expected) == 2
        for got, want in zip(positions, expected):
            assert abs(got - want) <= 1

        single_bursts, _ = scenario_bursts("single-phase")
        single_fps = fingerprint_windows(
            single_bursts, Alphabet.from_bursts(single_bursts), cfg
        )
        single_sel = select_k(single_fps, cfg, seed=0)
        assert single_sel.single_phase
        assert single_sel.k == 1
        assert time.perf_counter() - started < 60.0


def test_06_prefix_training_drifts_but_stride_training_holds(capsys, block, stride3_model):
    with verdict(capsys, 6, "stride sampling beats prefix training"):
        bursts, truth = block
        channel = builtin_scenarios()["three-phase-block"].channel

        # first 33%: 66 bursts, all inside the first scheduled phase
        prefix, rest = bursts[:66], bursts[66:]
        assert set(truth.phase_by_burst[:66]) == {"filling"}
        prefix_model = train_phase_model(channel, prefix, PhaseDetectConfig(), seed=0)
        assert prefix_model.k == 1
        parts = score_over_time(prefix_model, rest, 10)
        assert parts[0].unknown_ratio == 0.0
        assert parts[0].normal_ratio == 1.0
        # the second scheduled phase starts at burst 90 = held-out index 24,
        # which lands in part 1; unknown traffic appears there and onward
        assert truth.phase_onsets[1]["burst_index"] == 90
        assert 14 <= 24 < 28
        assert parts[1].unknown_ratio > 0.0
        for part in parts[1:]:
            assert part.unknown_ratio > 0.0

        stride_model, _, test = stride3_model
        res = enforce(stride_model, test)
        assert res.normal_ratio >= 0.999
        assert res.channel_totals.unknown == 0
        for part in score_over_time(stride_model, test, 10):
            assert part.normal_ratio >= 0.999
            assert part.unknown_ratio == 0.0


def test_07_injection_taxonomy(capsys):
    with verdict(capsys, 7, "anomaly taxonomy on injected traffic"):
        bursts, truth = scenario_bursts("three-phase-injected")
        injected_at = {d["position"]: d["kind"] for d in truth.injections}
        # the shipped injection positions all avoid the stride-3 training set
        assert all(pos % 3 != 0 for pos in injected_at)
        train, _ = sample_training_set(bursts, SamplingPlan(stride=3, offset=0))
        channel = builtin_scenarios()["three-phase-injected"].channel
        model = train_phase_model(channel, train, PhaseDetectConfig(), seed=0)

        res = enforce(model, bursts)
        flagged = {
            i for i, (_, c) in enumerate(res.per_burst) if c.total() != c.normal
        }
        assert flagged == set(injected_at)

        # (normal, miss, unknown, retransmit, wrong_beginning, wrong_ending)
        want = {
            "unknown_symbol": (2, 1, 2, 0, 0, 0),
            "reorder": (2, 3, 0, 0, 0, 0),
            "retransmit": (5, 0, 0, 1, 0, 0),
            "truncate_burst": (3, 0, 0, 0, 0, 1),
            "foreign_prefix": (5, 0, 0, 0, 1, 0),
        }
        dominant_field = {
            "unknown_symbol": "unknown",
            "reorder": "miss",
            "retransmit": "retransmit",
            "truncate_burst": "wrong_ending",
            "foreign_prefix": "wrong_beginning",
        }
        for pos, kind in injected_at.items():
            _, c = res.per_burst[pos]
            got = (c.normal, c.miss, c.unknown, c.retransmit,
                   c.wrong_beginning, c.wrong_ending)
            assert got == want[kind], (pos, kind, got)
            anomalies = {
                "miss": c.miss, "unknown": c.unknown, "retransmit": c.retransmit,
                "wrong_beginning": c.wrong_beginning, "wrong_ending": c.wrong_ending,
            }
            top = anomalies.pop(dominant_field[kind])
            assert top > max(anomalies.values())

        # the clean sibling scenario flags nothing at all
        clean_bursts, _ = scenario_bursts("three-phase-block")
        clean_res = enforce(model, clean_bursts)
        assert all(c.total() == c.normal for _, c in clean_res.per_burst)


def test_08_models_accept_their_own_training_traffic(capsys):
    with verdict(capsys, 8, "self-consistency on random scenarios"):
        rng = np.random.default_rng(808)
        grammars = (GRAMMAR_A, GRAMMAR_B, GRAMMAR_C)
        channel = ChannelId("10.2.0.1", "10.2.0.2", 1, 502)
        cfg = PhaseDetectConfig(
            num_windows=20, k_max=6, k_selection_runs=2, kmeans_restarts=2
        )
        for trial in range(50):
            schedule = tuple(
                PhaseSpec(
                    phase_id=f"p{i}",
                    grammars=tuple(
                        grammars[j]
                        for j in rng.choice(
                            3, size=int(rng.integers(1, 4)), replace=False
                        )
                    ),
                    burst_count=int(rng.integers(3, 25)),
                )
                for i in range(int(rng.integers(1, 5)))
            )
            spec = ScenarioSpec(channel, schedule, rng_seed=trial)
            queries, _ = generate(spec)
            streams, _ = split_channels(queries, IngestConfig(min_channel_packets=0))
            bursts = split_bursts(streams[0], IngestConfig())
            train, _ = sample_training_set(bursts, SamplingPlan(stride=3, offset=0))
            model = train_phase_model(channel, train, cfg, seed=trial)
            res = enforce(model, train)
            for _, c in res.per_burst:
                assert c.miss == 0
                assert c.unknown == 0
                assert c.wrong_beginning == 0
                assert c.wrong_ending == 0
            assert res.nmr_ratio == 1.0


def test_09_silhouette_matches_hand_computation(capsys):
    with verdict(capsys, 9, "silhouette exactness and bounds"):
        # two 2-point clusters at the short ends of a 2 x 9 rectangle
        vectors = np.array([[0.0, 0.0], [0.0, 2.0], [9.0, 0.0], [9.0, 2.0]])
        labels = np.array([1, 1, 2, 2])
        centroids = np.array([[0.0, 1.0], [9.0, 1.0]])
        result = silhouette(vectors, labels, centroids)
        a = 2.0
        b = (9.0 + math.sqrt(85.0)) / 2.0
        expected = (b - a) / b
        assert np.all(np.abs(result.values - expected) <= 1e-12)
        assert abs(result.mean - expected) <= 1e-12

        rng = np.random.default_rng(909)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            d = int(rng.integers(2, 6))
            k = int(rng.integers(2, min(6, n) + 1))
            vectors = rng.random((n, d))
            labels = np.array([1 + i % k for i in range(n)])
            rng.shuffle(labels)
            centroids = np.vstack(
                [vectors[labels == c + 1].mean(axis=0) for c in range(k)]
            )
            values = silhouette(vectors, labels, centroids).values
            assert np.all(values >= -1.0 - 1e-12)
            assert np.all(values <= 1.0 + 1e-12)


def test_10_pipeline_is_deterministic(capsys, tmp_path):
    with verdict(capsys, 10, "byte-identical pipeline reruns"):
        fast = ["--k-max", "6", "--runs", "2", "--restarts", "3"]
        roots = []
        for run_dir in ("one", "two"):
            root = str(tmp_path / run_dir)
            steps = [
                ["generate", "--scenario", "three-phase-block", "--out-dir", root],
                ["ingest",
                 os.path.join(root, "generated", "three-phase-block.ndjson"),
                 "--out-dir", root],
                ["phases", "--out-dir", root, *fast],
                ["train", "--out-dir", root, *fast],
                ["enforce", "--out-dir", root, "--parts", "4"],
                ["perm", "--out-dir", root],
            ]
            for argv in steps:
                assert cli.main(argv) == 0, argv
            roots.append(root)

        def snapshot(root):
            files = {}
            for dirpath, _, names in os.walk(root):
                for name in names:
                    full = os.path.join(dirpath, name)
                    rel = os.path.relpath(full, root)
                    with open(full, "rb") as fp:
                        files[rel] = fp.read()
            return files

        one, two = snapshot(roots[0]), snapshot(roots[1])
        assert set(one) == set(two)
        compared = 0
        for rel in sorted(one):
            if os.path.basename(rel).startswith("manifest_"):
                continue  # manifests carry wall-clock timestamps by design
            assert one[rel] == two[rel], f"{rel} differs between reruns"
            compared += 1
        assert compared >= 10
