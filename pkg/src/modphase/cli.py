"""Command-line pipeline: generate, ingest, phases, train, enforce, perm, report.

Subcommands share one output directory (the artifact store) and a few
global options. Precedence for every option: explicit flag, then the
--config JSON file, then the built-in default. Each successful command
drops a manifest_<command>.json recording what it ran with; manifests
carry timestamps and are the only non-reproducible artifact.

Exit status is 0 unless something fatal happened (unreadable input,
missing prerequisite artifacts, invalid options). Detected anomalies are
results, not errors; they never change the exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__, store, syngen
from .dfa import Alphabet
from .ingest import (
    DEFAULT_BURST_GAP,
    DEFAULT_MIN_CHANNEL_PACKETS,
    IngestConfig,
    IngestFormatError,
    parse_records,
    split_bursts,
    split_channels,
)
from .kphase import (
    DEFAULT_STRIDE,
    SamplingPlan,
    enforce,
    sample_training_set,
    score_over_time,
    train_phase_model,
)
from .perm import MAX_MODEL_DFAS, merged_report, permissiveness_model
from .phases import (
    PhaseDetectConfig,
    count_phase_shifts,
    distance_matrix,
    final_assignment,
    fingerprint_windows,
    select_k,
)
from .syngen import SyngenError

log = logging.getLogger(__name__)


class CliError(Exception):
    """Fatal, user-facing; the message should say how to fix it."""


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modphase",
        description="Phase-aware anomaly detection for Modbus/TCP query traffic.",
    )
    parser.add_argument("--version", action="version", version=f"modphase {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=None,
                        help="root RNG seed (default 0)")
    common.add_argument("--out-dir", default=None,
                        help="artifact store directory (default ./out)")
    common.add_argument("--jobs", type=_positive_int, default=None,
                        help="parallel workers across channels (default 1)")
    common.add_argument("--config", default=None,
                        help="JSON file of option defaults")
    common.add_argument("--verbose", action="store_true", help="chatty logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="emit a synthetic scenario as an NDJSON stream")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--scenario", help="built-in scenario name")
    group.add_argument("--scenario-file", help="scenario spec JSON file")
    p.add_argument("--list", action="store_true", help="list built-in scenarios")

    p = sub.add_parser("ingest", parents=[common],
                       help="parse a capture into per-channel burst lists")
    p.add_argument("input", help="capture file")
    p.add_argument("--format", choices=("ndjson", "csv", "pcap"), default=None,
                   help="input format (default ndjson)")
    p.add_argument("--burst-gap", type=float, default=None,
                   help=f"burst gap threshold in seconds (default {DEFAULT_BURST_GAP})")
    p.add_argument("--min-packets", type=_nonneg_int, default=None,
                   help="drop channels with fewer queries "
                        f"(default {DEFAULT_MIN_CHANNEL_PACKETS})")

    p = sub.add_parser("phases", parents=[common],
                       help="discover each channel's phase structure")
    _add_clustering_flags(p)

    p = sub.add_parser("train", parents=[common],
                       help="train one k-phase model per channel")
    _add_clustering_flags(p)
    p.add_argument("--stride", type=_positive_int, default=None,
                   help=f"train on every n-th burst (default {DEFAULT_STRIDE})")
    p.add_argument("--offset", type=_nonneg_int, default=None,
                   help="index of the first training burst (default 0)")

    p = sub.add_parser("enforce", parents=[common],
                       help="score channel bursts against trained models")
    p.add_argument("--split", choices=("test", "train", "all"), default=None,
                   help="which bursts to score, per the model's sampling plan "
                        "(default test)")
    p.add_argument("--parts", type=_positive_int, default=None,
                   help="also score over N contiguous slices of the chosen bursts")

    p = sub.add_parser("perm", parents=[common],
                       help="measure model permissiveness")
    p.add_argument("--burst-length", type=_positive_int, default=None,
                   help="override the per-channel burst length "
                        "(default: round of the channel's mean)")

    sub.add_parser("report", parents=[common],
                   help="render figures from the store's artifacts")

    return parser


def _add_clustering_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-windows", type=_positive_int, default=None,
                   help="windows per channel (default 100)")
    p.add_argument("--k-max", type=_positive_int, default=None,
                   help="largest cluster count to try (default 15)")
    p.add_argument("--runs", type=_positive_int, default=None,
                   help="independent k sweeps (default 3)")
    p.add_argument("--restarts", type=_positive_int, default=None,
                   help="k-means restarts per k (default 5)")
    p.add_argument("--window-mode", choices=("count", "duration"), default=None,
                   help="window by burst count or by equal duration (default count)")


class _Options:
    """Flag > config file > default resolution."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        if args.config:
            try:
                with open(args.config, "r", encoding="utf-8") as fp:
                    self.config = json.load(fp)
            except (OSError, json.JSONDecodeError) as exc:
                raise CliError(f"cannot read config {args.config}: {exc}") from exc
            if not isinstance(self.config, dict):
                raise CliError(f"config {args.config} must hold a JSON object")
        self.resolved: dict = {}

    def get(self, name: str, default):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is None:
            value = self.config.get(name, default)
        self.resolved[name] = value
        return value


def _phase_config(opts: _Options) -> PhaseDetectConfig:
    return PhaseDetectConfig(
        num_windows=opts.get("num-windows", 100),
        k_max=opts.get("k-max", 15),
        k_selection_runs=opts.get("runs", 3),
        kmeans_restarts=opts.get("restarts", 5),
        window_mode=opts.get("window-mode", "count"),
        rng_seed=opts.get("seed", 0),
    )


def _store_root(opts: _Options) -> str:
    return opts.get("out-dir", "out")


def _run_per_channel(labels, worker, jobs: int):
    """Run worker(label, index) for every channel, results in label order."""
    if jobs <= 1:
        return [worker(label, i) for i, label in enumerate(labels)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(worker, label, i) for i, label in enumerate(labels)]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(opts: _Options) -> int:
    args = opts.args
    if args.list:
        for name in sorted(syngen.builtin_scenarios()):
            print(name)
        return 0
    root = _store_root(opts)
    if args.scenario_file:
        try:
            spec = syngen.scenario_from_json_dict(store.read_json(args.scenario_file))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read scenario file: {exc}") from exc
        name = os.path.splitext(os.path.basename(args.scenario_file))[0]
        inputs = [args.scenario_file]
    elif args.scenario:
        library = syngen.builtin_scenarios()
        if args.scenario not in library:
            raise CliError(
                f"unknown scenario {args.scenario!r}; try: " + ", ".join(sorted(library))
            )
        spec = library[args.scenario]
        name = args.scenario
        inputs = []
    else:
        raise CliError("generate needs --scenario, --scenario-file or --list")
    if opts.args.seed is not None or "seed" in opts.config:
        spec = dataclasses.replace(spec, rng_seed=opts.get("seed", 0))
    queries, truth = syngen.generate(spec)
    gen_dir = os.path.join(root, "generated")
    stream_path = os.path.join(gen_dir, f"{name}.ndjson")
    store.write_query_ndjson(stream_path, queries)
    store.write_json(os.path.join(gen_dir, f"{name}.truth.json"), truth.to_json_dict())
    store.write_json(
        os.path.join(gen_dir, f"{name}.scenario.json"), syngen.scenario_to_json_dict(spec)
    )
    store.write_manifest(root, "generate", spec.rng_seed,
                         {**opts.resolved, "scenario": name}, inputs)
    print(f"generate: {name}: {len(queries)} queries, "
          f"{len(truth.phase_by_burst)} bursts, "
          f"{len(truth.injections)} injections -> {stream_path}")
    return 0


def cmd_ingest(opts: _Options) -> int:
    args = opts.args
    root = _store_root(opts)
    fmt = opts.get("format", "ndjson")
    cfg = IngestConfig(
        burst_gap_threshold=opts.get("burst-gap", DEFAULT_BURST_GAP),
        min_channel_packets=opts.get("min-packets", DEFAULT_MIN_CHANNEL_PACKETS),
    )
    if not os.path.isfile(args.input):
        raise CliError(f"input file not found: {args.input}")
    result = parse_records(args.input, fmt)
    kept, dropped = split_channels(result.queries, cfg)
    summary_rows = []
    for stream in kept:
        bursts = split_bursts(stream, cfg)
        store.write_channel_bursts(root, stream, bursts)
        summary_rows.append(
            (stream.channel.label(), len(stream.queries), len(bursts))
        )
    store.write_csv(os.path.join(root, "ingest_summary.csv"),
                    ("channel", "queries", "bursts"), summary_rows)
    store.write_csv(os.path.join(root, "ingest_dropped.csv"),
                    ("channel", "queries"),
                    [(ch.label(), n) for ch, n in dropped])
    store.write_manifest(root, "ingest", opts.get("seed", 0),
                         {**opts.resolved,
                          "malformed": result.malformed,
                          "dropped_non_query": result.dropped_non_query},
                         [args.input])
    print(f"ingest: {len(result.queries)} queries "
          f"({result.malformed} malformed records skipped, "
          f"{result.dropped_non_query} non-query packets), "
          f"{len(kept)} channels kept, {len(dropped)} dropped")
    for label, n_queries, n_bursts in summary_rows:
        print(f"  {label}: {n_queries} queries, {n_bursts} bursts")
    return 0


def cmd_phases(opts: _Options) -> int:
    root = _store_root(opts)
    cfg = _phase_config(opts)
    seed = opts.get("seed", 0)
    jobs = opts.get("jobs", 1)
    labels = store.list_channel_labels(root)
    if not labels:
        raise CliError(f"no ingested channels under {root}; run `modphase ingest` first")

    def worker(label: str, index: int):
        bursts = store.load_channel_bursts(root, label)
        alphabet = Alphabet.from_bursts(bursts)
        fps = fingerprint_windows(bursts, alphabet, cfg)
        selection = select_k(fps, cfg, [seed, index])
        assignment = final_assignment(fps, selection, cfg, [seed, index])
        return label, fps, selection, assignment

    results = _run_per_channel(labels, worker, jobs)
    hist: dict[int, int] = {}
    for label, fps, selection, assignment in results:
        chan_dir = os.path.join(root, "phases", label)
        dist = distance_matrix(fps)
        n = dist.shape[0]
        store.write_csv(
            os.path.join(chan_dir, "distances.csv"),
            ["window"] + [str(j) for j in range(n)],
            [[i] + [repr(float(v)) for v in dist[i]] for i in range(n)],
        )
        store.write_csv(
            os.path.join(chan_dir, "silhouette.csv"),
            ("run", "k", "mean_silhouette"),
            [(run, k, repr(score)) for run, k, score in selection.table],
        )
        shifts = count_phase_shifts(assignment.labels)
        payload = {
            "k": selection.k,
            "labels": [int(v) for v in assignment.labels],
            "shifts": shifts,
            "mean_silhouette": assignment.mean_silhouette,
            "single_phase": selection.single_phase,
            "best_silhouette": selection.best_silhouette,
            "run_optima": selection.run_optima,
            "empty_windows": [fp.window_index for fp in fps if fp.empty],
            "windows": [
                {
                    "index": fp.window_index,
                    "start": fp.start_time,
                    "end": fp.end_time,
                }
                for fp in fps
            ],
        }
        store.write_json(os.path.join(chan_dir, "phases.json"), payload)
        hist[shifts] = hist.get(shifts, 0) + 1
        flag = " [single-phase]" if selection.single_phase else ""
        print(f"phases: {label}: k={selection.k}, {shifts} shifts{flag}")
    store.write_csv(
        os.path.join(root, "phases", "shifts_histogram.csv"),
        ("shifts", "channels"),
        sorted(hist.items()),
    )
    store.write_manifest(root, "phases", seed, opts.resolved)
    return 0


def cmd_train(opts: _Options) -> int:
    root = _store_root(opts)
    cfg = _phase_config(opts)
    seed = opts.get("seed", 0)
    jobs = opts.get("jobs", 1)
    plan = SamplingPlan(
        stride=opts.get("stride", DEFAULT_STRIDE),
        offset=opts.get("offset", 0),
    )
    labels = store.list_channel_labels(root)
    if not labels:
        raise CliError(f"no ingested channels under {root}; run `modphase ingest` first")

    def worker(label: str, index: int):
        bursts = store.load_channel_bursts(root, label)
        train, _ = sample_training_set(bursts, plan)
        if not train:
            raise CliError(f"{label}: sampling left no training bursts")
        model = train_phase_model(
            store.channel_from_label(label), train, cfg, [seed, index]
        )
        model.meta.update(
            {
                "stride": plan.stride,
                "offset": plan.offset,
                "source_bursts": len(bursts),
                "seed": seed,
            }
        )
        return label, model

    results = _run_per_channel(labels, worker, jobs)
    for label, model in results:
        path = store.save_model(root, model)
        flag = " [single-phase]" if model.single_phase else ""
        print(f"train: {label}: k={model.k}{flag} -> {path}")
    store.write_manifest(root, "train", seed, opts.resolved)
    return 0


def cmd_enforce(opts: _Options) -> int:
    root = _store_root(opts)
    split = opts.get("split", "test")
    parts = opts.get("parts", None)
    jobs = opts.get("jobs", 1)
    labels = store.list_model_labels(root)
    if not labels:
        raise CliError(f"no models under {root}; run `modphase train` first")

    def worker(label: str, index: int):
        model = store.load_model(store.model_path(root, store.channel_from_label(label)))
        bursts_path = os.path.join(root, "channels", label, "bursts.ndjson")
        if not os.path.isfile(bursts_path):
            raise CliError(
                f"{label}: model exists but channel bursts are missing; "
                "run `modphase ingest` into the same store"
            )
        bursts = store.read_bursts(bursts_path)
        plan = SamplingPlan(
            stride=int(model.meta.get("stride", 1)),
            offset=int(model.meta.get("offset", 0)),
        )
        train, test = sample_training_set(bursts, plan)
        chosen = {"test": test, "train": train, "all": bursts}[split]
        result = enforce(model, chosen)
        part_scores = score_over_time(model, chosen, parts) if parts else None
        return label, model, result, part_scores

    results = _run_per_channel(labels, worker, jobs)
    channels_payload = []
    for label, model, result, part_scores in results:
        chan_dir = os.path.join(root, "enforce", label)
        totals = result.channel_totals
        rows = [
            ("bursts", result.burst_count),
            ("queries", result.total_queries),
            ("normal", totals.normal),
            ("miss", totals.miss),
            ("unknown", totals.unknown),
            ("retransmit", totals.retransmit),
            ("wrong_beginning", totals.wrong_beginning),
            ("wrong_ending", totals.wrong_ending),
            ("normal_ratio", _ratio_str(result.normal_ratio)),
            ("nmr_ratio", _ratio_str(result.nmr_ratio)),
            ("miss_ratio", _ratio_str(result.miss_ratio)),
            ("unknown_ratio", _ratio_str(result.unknown_ratio)),
            ("retransmit_ratio", _ratio_str(result.retransmit_ratio)),
            ("bad_beginning_ratio", _ratio_str(result.bad_beginning_ratio)),
            ("bad_ending_ratio", _ratio_str(result.bad_ending_ratio)),
            ("anomaly_ratio", _ratio_str(result.anomaly_ratio())),
        ]
        store.write_csv(os.path.join(chan_dir, "summary.csv"), ("metric", "value"), rows)
        flagged = 0
        burst_rows = []
        for i, (phase, counters) in enumerate(result.per_burst):
            is_flagged = int(counters.total() != counters.normal)
            flagged += is_flagged
            burst_rows.append(
                (
                    i,
                    phase,
                    counters.normal,
                    counters.miss,
                    counters.unknown,
                    counters.retransmit,
                    counters.wrong_beginning,
                    counters.wrong_ending,
                    is_flagged,
                )
            )
        store.write_csv(
            os.path.join(chan_dir, "bursts.csv"),
            ("burst_index", "phase", "normal", "miss", "unknown", "retransmit",
             "wrong_beginning", "wrong_ending", "flagged"),
            burst_rows,
        )
        if part_scores is not None:
            store.write_csv(
                os.path.join(chan_dir, "parts.csv"),
                ("part", "burst_count", "query_count", "normal_ratio", "nmr_ratio",
                 "miss_ratio", "unknown_ratio", "retransmit_ratio",
                 "bad_beginning_ratio", "bad_ending_ratio"),
                [
                    (
                        p.part, p.burst_count, p.query_count,
                        _ratio_str(p.normal_ratio), _ratio_str(p.nmr_ratio),
                        _ratio_str(p.miss_ratio), _ratio_str(p.unknown_ratio),
                        _ratio_str(p.retransmit_ratio),
                        _ratio_str(p.bad_beginning_ratio),
                        _ratio_str(p.bad_ending_ratio),
                    )
                    for p in part_scores
                ],
            )
        channels_payload.append(
            {
                "channel": label,
                "k": model.k,
                "split": split,
                "bursts": result.burst_count,
                "queries": result.total_queries,
                "normal_ratio": result.normal_ratio,
                "nmr_ratio": result.nmr_ratio,
                "anomaly_ratio": result.anomaly_ratio(),
                "bad_beginning_ratio": result.bad_beginning_ratio,
                "bad_ending_ratio": result.bad_ending_ratio,
                "flagged_bursts": flagged,
            }
        )
        print(
            f"enforce: {label}: {result.burst_count} bursts ({split}), "
            f"normal_ratio={_ratio_str(result.normal_ratio) or 'n/a'}, "
            f"{flagged} flagged"
        )
    store.write_json(os.path.join(root, "enforce", "summary.json"),
                     {"channels": channels_payload})
    store.write_manifest(root, "enforce", opts.get("seed", 0), opts.resolved)
    return 0


def _ratio_str(value: float | None) -> str | None:
    return None if value is None else repr(value)


def cmd_perm(opts: _Options) -> int:
    root = _store_root(opts)
    override_b = opts.get("burst-length", None)
    jobs = opts.get("jobs", 1)
    labels = store.list_model_labels(root)
    if not labels:
        raise CliError(f"no models under {root}; run `modphase train` first")

    def worker(label: str, index: int):
        model = store.load_model(store.model_path(root, store.channel_from_label(label)))
        if override_b is not None:
            b = override_b
        else:
            bursts_path = os.path.join(root, "channels", label, "bursts.ndjson")
            if not os.path.isfile(bursts_path):
                raise CliError(
                    f"{label}: need channel bursts to derive the burst length; "
                    "pass --burst-length or ingest into this store"
                )
            bursts = store.read_bursts(bursts_path)
            b = max(1, round(sum(len(x) for x in bursts) / len(bursts)))
        if model.k > MAX_MODEL_DFAS:
            raise CliError(
                f"{label}: {model.k} phase DFAs exceed the inclusion-exclusion "
                f"limit of {MAX_MODEL_DFAS}"
            )
        kreport = permissiveness_model(model.dfas, b, label)
        mreport = merged_report(model.dfas, b, label)
        return label, kreport, mreport

    results = _run_per_channel(labels, worker, jobs)
    rows = []
    for label, kreport, mreport in results:
        rows.append(
            (
                label,
                kreport.alphabet_size,
                kreport.burst_length,
                str(kreport.allowed_paths),
                repr(kreport.ratio),
                str(mreport.allowed_paths),
                repr(mreport.ratio),
                int(kreport.has_paths),
            )
        )
        print(
            f"perm: {label}: s={kreport.alphabet_size} b={kreport.burst_length} "
            f"allowed={kreport.allowed_paths} r_perm={kreport.ratio:.6f} "
            f"(merged {mreport.ratio:.6f})"
        )
    store.write_csv(
        os.path.join(root, "perm", "permissiveness.csv"),
        ("channel", "s", "b", "allowed_paths", "r_perm",
         "merged_allowed_paths", "merged_r_perm", "has_paths"),
        rows,
    )
    store.write_manifest(root, "perm", opts.get("seed", 0), opts.resolved)
    return 0


def cmd_report(opts: _Options) -> int:
    from .report import render_report

    root = _store_root(opts)
    written = render_report(root)
    if not written:
        raise CliError(
            f"nothing to render under {root}; run the analysis commands first"
        )
    store.write_manifest(root, "report", opts.get("seed", 0), opts.resolved)
    print(f"report: {len(written)} figures -> {os.path.join(root, 'report')}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "phases": cmd_phases,
    "train": cmd_train,
    "enforce": cmd_enforce,
    "perm": cmd_perm,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        opts = _Options(args)
        return _COMMANDS[args.command](opts)
    except (CliError, IngestFormatError, SyngenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
