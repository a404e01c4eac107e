"""Artifact store: serialization round-trips, labels, manifests."""

import os

import pytest

from modphase import store
from modphase.ingest import parse_records
from modphase.syngen import builtin_scenarios, generate
from modphase.traffic import Burst, ChannelId, Symbol

from oracles import bursts_from


def test_channel_label_roundtrip():
    channels = [
        ChannelId("10.0.0.1", "10.0.0.2", 1, 49152),
        ChannelId("192.168.250.9", "172.16.0.4", 255, 502),
        ChannelId("1.2.3.4", "5.6.7.8", 0, 1),
    ]
    for ch in channels:
        assert store.channel_from_label(ch.label()) == ch


def test_channel_label_rejects_garbage():
    for bad in ("nope", "a_b_c_d", "1.1.1.1_2.2.2.2_x1_p502", "a_b_u1"):
        with pytest.raises(ValueError):
            store.channel_from_label(bad)


def test_burst_ndjson_roundtrip(tmp_path):
    bursts = bursts_from(["abc", "a", "abcd"], spacing=3.5)
    path = str(tmp_path / "bursts.ndjson")
    store.write_bursts(path, bursts)
    assert store.read_bursts(path) == bursts


def test_query_ndjson_is_readable_by_the_ingest_parser(tmp_path):
    queries, _ = generate(builtin_scenarios()["single-phase"])
    path = str(tmp_path / "q.ndjson")
    store.write_query_ndjson(path, queries)
    result = parse_records(path, "ndjson")
    assert result.queries == queries
    assert result.malformed == 0


def test_write_csv_renders_none_as_empty(tmp_path):
    path = str(tmp_path / "t.csv")
    store.write_csv(path, ("a", "b"), [(1, None), ("x", 2.5)])
    with open(path) as fp:
        assert fp.read() == "a,b\n1,\nx,2.5\n"


def test_write_json_is_sorted_and_newline_terminated(tmp_path):
    path = str(tmp_path / "t.json")
    store.write_json(path, {"b": 1, "a": 2})
    with open(path) as fp:
        text = fp.read()
    assert text == '{\n  "a": 2,\n  "b": 1\n}\n'


def test_channel_listing_orders_numerically(tmp_path):
    root = str(tmp_path)
    bursts = [Burst((Symbol(3, 0, 1),), 0.0, 0.0)]
    channels = [
        ChannelId("10.0.0.9", "10.0.0.1", 1, 502),
        ChannelId("10.0.0.10", "10.0.0.1", 1, 502),  # after .9 numerically
        ChannelId("2.0.0.1", "10.0.0.1", 1, 502),
    ]
    for ch in channels:
        store.write_bursts(
            os.path.join(store.channel_dir(root, ch), "bursts.ndjson"), bursts
        )
    assert store.list_channel_labels(root) == [
        "2.0.0.1_10.0.0.1_u1_p502",
        "10.0.0.9_10.0.0.1_u1_p502",
        "10.0.0.10_10.0.0.1_u1_p502",
    ]


def test_listings_are_empty_for_a_fresh_store(tmp_path):
    assert store.list_channel_labels(str(tmp_path)) == []
    assert store.list_model_labels(str(tmp_path)) == []


def test_manifest_records_inputs_with_digests(tmp_path):
    root = str(tmp_path)
    data = tmp_path / "input.bin"
    data.write_bytes(b"hello")
    path = store.write_manifest(root, "ingest", 7, {"x": 1}, [str(data)])
    assert os.path.basename(path) == "manifest_ingest.json"
    manifest = store.read_json(path)
    assert manifest["command"] == "ingest"
    assert manifest["seed"] == 7
    assert manifest["config"] == {"x": 1}
    (entry,) = manifest["inputs"]
    assert entry["sha256"] == store.sha256_file(str(data))
    assert "created_at" in manifest
