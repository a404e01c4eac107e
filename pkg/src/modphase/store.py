"""On-disk artifact store shared by the CLI subcommands.

Everything lives under one output directory:

    generated/<scenario>.ndjson + .truth.json   synthetic streams
    channels/<label>/bursts.ndjson              segmented bursts per channel
    ingest_summary.csv, ingest_dropped.csv      ingest outcome
    phases/<label>/...                          phase discovery artifacts
    models/<label>.json                         trained k-phase models
    enforce/<label>/...                         enforcement reports
    perm/permissiveness.csv                     permissiveness table
    report/*.png                                rendered figures
    manifest_<command>.json                     per-command run manifest

Writers are deterministic: sorted JSON keys, fixed column orders, "\n"
newlines, floats via repr. Manifests are the one deliberate exception
(they carry wall-clock timestamps).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from typing import Iterable, Sequence

from . import __version__
from .ingest import ChannelStream
from .kphase import PhaseModel
from .traffic import Burst, ChannelId, ModbusQuery, Symbol


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path: str, obj: object) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fp:
        return json.load(fp)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def write_query_ndjson(path: str, queries: Iterable[ModbusQuery]) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as fp:
        for q in queries:
            rec = {
                "ts": q.timestamp,
                "mip": q.master_ip,
                "sip": q.slave_ip,
                "uid": q.unit_id,
                "sport": q.slave_port,
                "tid": q.transaction_id,
                "fc": q.function_code,
                "rn": q.reference_number,
                "cnt": q.count,
            }
            fp.write(json.dumps(rec) + "\n")


def write_bursts(path: str, bursts: Iterable[Burst]) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as fp:
        for burst in bursts:
            rec = {
                "start": burst.start_time,
                "end": burst.end_time,
                "symbols": [list(sym.as_tuple()) for sym in burst.symbols],
            }
            fp.write(json.dumps(rec) + "\n")


def read_bursts(path: str) -> list[Burst]:
    bursts: list[Burst] = []
    with open(path, "r", encoding="utf-8") as fp:
        for line in fp:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            symbols = tuple(Symbol(*map(int, triple)) for triple in rec["symbols"])
            bursts.append(Burst(symbols, float(rec["start"]), float(rec["end"])))
    return bursts


def channel_dir(root: str, channel: ChannelId) -> str:
    return os.path.join(root, "channels", channel.label())


def write_channel_bursts(root: str, stream: ChannelStream, bursts: list[Burst]) -> str:
    path = os.path.join(ensure_dir(channel_dir(root, stream.channel)), "bursts.ndjson")
    write_bursts(path, bursts)
    return path


def channel_from_label(label: str) -> ChannelId:
    """Invert ChannelId.label(); labels are <mip>_<sip>_u<uid>_p<port>."""
    parts = label.split("_")
    if len(parts) != 4 or not parts[2].startswith("u") or not parts[3].startswith("p"):
        raise ValueError(f"not a channel label: {label!r}")
    return ChannelId(parts[0], parts[1], int(parts[2][1:]), int(parts[3][1:]))


def list_channel_labels(root: str) -> list[str]:
    base = os.path.join(root, "channels")
    if not os.path.isdir(base):
        return []
    labels = [
        name
        for name in os.listdir(base)
        if os.path.isfile(os.path.join(base, name, "bursts.ndjson"))
    ]
    return sorted(labels, key=lambda lab: channel_from_label(lab).sort_key())


def load_channel_bursts(root: str, label: str) -> list[Burst]:
    return read_bursts(os.path.join(root, "channels", label, "bursts.ndjson"))


def model_path(root: str, channel: ChannelId) -> str:
    return os.path.join(root, "models", channel.label() + ".json")


def save_model(root: str, model: PhaseModel) -> str:
    path = model_path(root, model.channel)
    write_json(path, model.to_json_dict())
    return path


def load_model(path: str) -> PhaseModel:
    return PhaseModel.from_json_dict(read_json(path))


def list_model_labels(root: str) -> list[str]:
    base = os.path.join(root, "models")
    if not os.path.isdir(base):
        return []
    labels = [
        name[: -len(".json")] for name in os.listdir(base) if name.endswith(".json")
    ]
    return sorted(labels, key=lambda lab: channel_from_label(lab).sort_key())


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    root: str,
    command: str,
    seed: int,
    config: dict,
    inputs: Sequence[str] = (),
) -> str:
    """Record what a subcommand ran with; excluded from determinism checks."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": [
            {"path": path, "sha256": sha256_file(path)}
            for path in inputs
            if os.path.isfile(path)
        ],
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime()),
    }
    path = os.path.join(ensure_dir(root), f"manifest_{command}.json")
    write_json(path, manifest)
    return path
