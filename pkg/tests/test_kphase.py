"""Training, burst-to-phase assignment, and enforcement scoring."""

import json

import numpy as np
import pytest

from modphase.dfa import Alphabet, build_adj_matrix, evaluate_burst
from modphase.kphase import (
    DEFAULT_STRIDE,
    PhaseModel,
    SamplingPlan,
    assign_and_score,
    enforce,
    merged_dfa,
    sample_training_set,
    score_over_time,
    train_phase_model,
)
from modphase.phases import PhaseDetectConfig
from modphase.traffic import ChannelId

from oracles import burst, bursts_from, random_bursts, sym

CHANNEL = ChannelId("192.168.0.10", "192.168.0.20", 1, 502)


def small_cfg(**overrides):
    base = dict(
        num_windows=100, k_max=6, k_selection_runs=2, kmeans_restarts=3, rng_seed=0
    )
    base.update(overrides)
    return PhaseDetectConfig(**base)


def three_block_bursts():
    return bursts_from(["abc"] * 20 + ["def"] * 20 + ["ghi"] * 20)


def train_three_phase():
    return train_phase_model(CHANNEL, three_block_bursts(), small_cfg(), seed=7)


# --- training-set sampling --------------------------------------------------


def test_default_stride_keeps_every_third_burst():
    assert DEFAULT_STRIDE == 3
    bursts = bursts_from(["ab"] * 10)
    train, test = sample_training_set(bursts, SamplingPlan())
    assert [bursts.index(b) for b in train] == [0, 3, 6, 9]
    assert len(test) == 6
    assert train + test != bursts  # interleaving, not a prefix split
    assert sorted(train + test, key=lambda b: b.start_time) == bursts


def test_stride_one_trains_on_everything():
    bursts = bursts_from(["ab"] * 5)
    train, test = sample_training_set(bursts, SamplingPlan(stride=1))
    assert train == bursts
    assert test == []


def test_offset_moves_the_kept_positions():
    bursts = bursts_from(["ab"] * 8)
    train, _ = sample_training_set(bursts, SamplingPlan(stride=4, offset=2))
    assert [bursts.index(b) for b in train] == [2, 6]


def test_sampling_plan_rejects_bad_parameters():
    with pytest.raises(ValueError):
        SamplingPlan(stride=0)
    with pytest.raises(ValueError):
        SamplingPlan(stride=3, offset=3)
    with pytest.raises(ValueError):
        SamplingPlan(stride=3, offset=-1)


# --- training ---------------------------------------------------------------


def test_training_on_identical_bursts_yields_one_phase():
    bursts = bursts_from(["abc"] * 9)
    model = train_phase_model(CHANNEL, bursts, small_cfg(), seed=1)
    assert model.k == 1
    assert model.single_phase
    assert len(model.dfas) == 1
    whole = build_adj_matrix(bursts, model.alphabet).as_boolean()
    assert np.array_equal(model.dfas[0].counts, whole.counts)
    assert model.meta["train_bursts"] == 9
    assert model.meta["num_windows"] == 9
    assert model.meta["seed"] == 1


def test_training_recovers_three_grammar_blocks():
    model = train_three_phase()
    assert model.k == 3
    assert not model.single_phase
    blocks = {
        frozenset(range(0, 20)),
        frozenset(range(20, 40)),
        frozenset(range(40, 60)),
    }
    assert {frozenset(idxs) for idxs in model.phase_windows.values()} == blocks
    # each phase DFA is exactly the boolean matrix of one grammar,
    # expressed over the shared alphabet
    want = {
        build_adj_matrix([burst(word)], model.alphabet).counts.tobytes()
        for word in ("abc", "def", "ghi")
    }
    got = {dfa.counts.tobytes() for dfa in model.dfas}
    assert got == want
    assert all(dfa.is_boolean for dfa in model.dfas)


def test_training_rejects_an_empty_burst_list():
    with pytest.raises(ValueError):
        train_phase_model(CHANNEL, [], small_cfg())


# --- assignment -------------------------------------------------------------


def test_assignment_prefers_the_explaining_phase():
    model = train_three_phase()
    for word in ("abc", "def", "ghi"):
        phase, counters = assign_and_score(model, burst(word))
        window0 = {"abc": 0, "def": 20, "ghi": 40}[word]
        assert window0 in model.phase_windows[phase]
        assert counters.normal == 4
        assert counters.total() == 4


def test_assignment_counts_anomalies_not_similarity():
    model = train_three_phase()
    # "abd" against the abc phase: begin ok, a->b ok, b->d miss, d-end miss
    phase, counters = assign_and_score(model, burst("abd"))
    assert 0 in model.phase_windows[phase]
    assert counters.normal == 2
    assert counters.miss == 1
    assert counters.wrong_ending == 1


def test_assignment_tie_goes_to_the_lowest_phase():
    one = build_adj_matrix([burst("ab")], Alphabet([sym("a"), sym("b")])).as_boolean()
    model = PhaseModel(CHANNEL, one.alphabet, 2, [one, one], {1: [0], 2: [1]}, False)
    phase, _ = assign_and_score(model, burst("ab"))
    assert phase == 1


def test_assignment_is_lexicographic_in_anomaly_count():
    alpha = Alphabet([sym(ch) for ch in "abc"])
    straight = build_adj_matrix([burst("abc")], alpha).as_boolean()
    swapped = build_adj_matrix([burst("acb")], alpha).as_boolean()
    model = PhaseModel(CHANNEL, alpha, 2, [swapped, straight], {1: [0], 2: [1]}, False)
    phase, counters = assign_and_score(model, burst("abc"))
    assert phase == 2
    assert counters.total() == counters.normal == 4
    phase, counters = assign_and_score(model, burst("acb"))
    assert phase == 1
    assert counters.normal == 4


# --- enforcement ------------------------------------------------------------


def test_enforcing_the_training_traffic_is_clean():
    bursts = bursts_from(["abc"] * 12)
    model = train_phase_model(CHANNEL, bursts, small_cfg(), seed=0)
    res = enforce(model, bursts_from(["abc"] * 5))
    assert res.burst_count == 5
    assert res.total_queries == 15
    assert res.normal_ratio == 1.0
    assert res.nmr_ratio == 1.0
    assert res.miss_ratio == 0.0
    assert res.unknown_ratio == 0.0
    assert res.retransmit_ratio == 0.0
    assert res.bad_beginning_ratio == 0.0
    assert res.bad_ending_ratio == 0.0
    assert res.anomaly_ratio() == 0.0


def test_enforcement_ratios_for_an_unknown_symbol():
    model = train_phase_model(CHANNEL, bursts_from(["abc"] * 12), small_cfg(), seed=0)
    bursts = bursts_from(["abc"] * 4 + ["abz"])
    res = enforce(model, bursts)
    # the z query is unknown and the burst cannot end correctly
    assert res.total_queries == 15
    assert res.unknown_ratio == 1 / 15
    assert res.normal_ratio == 14 / 15
    assert res.nmr_ratio == 14 / 15
    assert res.bad_ending_ratio == 1 / 5
    assert res.bad_beginning_ratio == 0.0
    assert res.anomaly_ratio() == 1 / 15
    flagged = [i for i, (_, c) in enumerate(res.per_burst) if c.total() != c.normal]
    assert flagged == [4]


def test_enforcing_nothing_reports_not_applicable():
    model = train_phase_model(CHANNEL, bursts_from(["ab"] * 4), small_cfg())
    res = enforce(model, [])
    assert res.burst_count == 0
    assert res.total_queries == 0
    assert res.normal_ratio is None
    assert res.nmr_ratio is None
    assert res.anomaly_ratio() is None


def test_enforcement_accounting_balances_on_random_traffic():
    model = train_three_phase()
    rng = np.random.default_rng(21)
    symbols = [sym(ch) for ch in "abcdefghi"] + [sym("z")]
    for trial in range(25):
        bursts = random_bursts(rng, symbols, int(rng.integers(1, 12)))
        res = enforce(model, bursts)
        totals = res.channel_totals
        normal_q = totals.normal - (res.burst_count - totals.wrong_ending)
        balance = (
            normal_q
            + totals.miss
            + totals.unknown
            + totals.retransmit
            + totals.wrong_beginning
        )
        assert balance == res.total_queries
        assert res.nmr_ratio >= res.normal_ratio - 1e-12
        for ratio in (
            res.normal_ratio, res.nmr_ratio, res.miss_ratio, res.unknown_ratio,
            res.retransmit_ratio, res.bad_beginning_ratio, res.bad_ending_ratio,
        ):
            assert 0.0 <= ratio <= 1.0


def test_merged_model_is_never_stricter_than_the_chosen_phase():
    model = train_three_phase()
    merged = merged_dfa(model)
    rng = np.random.default_rng(33)
    symbols = [sym(ch) for ch in "abcdefghi"] + [sym("z")]
    for b in random_bursts(rng, symbols, 60):
        _, chosen = assign_and_score(model, b)
        loose = evaluate_burst(merged, b)
        assert loose.unknown == chosen.unknown
        assert loose.retransmit == chosen.retransmit
        assert loose.miss <= chosen.miss
        assert loose.wrong_beginning <= chosen.wrong_beginning
        assert loose.wrong_ending <= chosen.wrong_ending
        assert loose.normal >= chosen.normal
        assert loose.total() == chosen.total() == len(b) + 1


def test_score_over_time_slices_evenly_and_scores_each_part():
    model = train_phase_model(CHANNEL, bursts_from(["abc"] * 12), small_cfg())
    parts = score_over_time(model, bursts_from(["abc"] * 10), 4)
    assert [p.burst_count for p in parts] == [3, 3, 2, 2]
    assert [p.part for p in parts] == [0, 1, 2, 3]
    assert all(p.normal_ratio == 1.0 for p in parts)
    assert all(p.query_count == 3 * p.burst_count for p in parts)


def test_score_over_time_with_empty_parts():
    model = train_phase_model(CHANNEL, bursts_from(["ab"] * 4), small_cfg())
    parts = score_over_time(model, bursts_from(["ab"] * 3), 5)
    assert [p.burst_count for p in parts] == [1, 1, 1, 0, 0]
    assert parts[-1].normal_ratio is None
    assert parts[-1].query_count == 0


def test_merged_dfa_is_the_union_of_the_phase_dfas():
    model = train_three_phase()
    merged = merged_dfa(model)
    stacked = np.stack([dfa.counts for dfa in model.dfas])
    assert np.array_equal(merged.counts, (stacked.max(axis=0) > 0).astype(np.int64))


# --- persistence ------------------------------------------------------------


def test_model_json_roundtrip_preserves_everything():
    model = train_three_phase()
    payload = json.loads(json.dumps(model.to_json_dict(), sort_keys=True))
    back = PhaseModel.from_json_dict(payload)
    assert back.channel == model.channel
    assert back.alphabet == model.alphabet
    assert back.k == model.k
    assert back.single_phase == model.single_phase
    assert back.phase_windows == model.phase_windows
    assert back.meta == model.meta
    for mine, theirs in zip(model.dfas, back.dfas):
        assert np.array_equal(mine.counts, theirs.counts)


def test_model_payload_validation():
    model = train_three_phase()
    good = model.to_json_dict()

    bad = json.loads(json.dumps(good))
    bad["alphabet"][0], bad["alphabet"][1] = bad["alphabet"][1], bad["alphabet"][0]
    with pytest.raises(ValueError, match="sorted"):
        PhaseModel.from_json_dict(bad)

    bad = json.loads(json.dumps(good))
    bad["k"] = bad["k"] + 1
    with pytest.raises(ValueError, match="carries"):
        PhaseModel.from_json_dict(bad)

    bad = json.loads(json.dumps(good))
    bad["dfas"][0] = bad["dfas"][0][:-1]
    with pytest.raises(ValueError, match="size"):
        PhaseModel.from_json_dict(bad)

    bad = json.loads(json.dumps(good))
    del bad["channel"]
    with pytest.raises(ValueError, match="malformed"):
        PhaseModel.from_json_dict(bad)
