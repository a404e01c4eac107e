"""Capture ingestion: record parsing, channel separation, burst segmentation.

Three input formats produce the same normalized query stream: NDJSON
records, CSV with a header row, and classic pcap files (see pcap.py).
Individually broken records are skipped and counted; container-level
problems (unreadable header, wrong address family, truncated pcap) are
fatal and raise :class:`IngestFormatError`.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
from dataclasses import dataclass, field

from .traffic import Burst, ChannelId, ModbusQuery, channel_of, symbol_of

log = logging.getLogger(__name__)

DEFAULT_BURST_GAP = 0.1
DEFAULT_MIN_CHANNEL_PACKETS = 500

RECORD_FIELDS = ("ts", "mip", "sip", "uid", "sport", "tid", "fc", "rn", "cnt")
_INT_FIELDS = ("uid", "sport", "tid", "fc", "rn", "cnt")


class IngestFormatError(Exception):
    """Fatal input problem: bad container, bad header, wrong address family."""


class _RecordError(Exception):
    """One broken record; the stream continues."""


@dataclass
class IngestConfig:
    """Knobs for burst segmentation and channel filtering."""

    burst_gap_threshold: float = DEFAULT_BURST_GAP
    min_channel_packets: int = DEFAULT_MIN_CHANNEL_PACKETS

    def __post_init__(self) -> None:
        if not self.burst_gap_threshold > 0:
            raise ValueError("burst_gap_threshold must be positive")
        if self.min_channel_packets < 0:
            raise ValueError("min_channel_packets must be >= 0")


@dataclass
class ParseResult:
    """Queries recovered from one input plus skip tallies."""

    queries: list[ModbusQuery] = field(default_factory=list)
    malformed: int = 0
    dropped_non_query: int = 0


@dataclass
class ChannelStream:
    """All queries of one channel, in capture order."""

    channel: ChannelId
    queries: list[ModbusQuery]


def _require_ipv4(value: object, where: str) -> str:
    try:
        addr = ipaddress.ip_address(str(value))
    except ValueError:
        raise _RecordError(f"{where}: bad IP address {value!r}") from None
    if isinstance(addr, ipaddress.IPv6Address):
        raise IngestFormatError(
            f"{where}: IPv6 address {value!r}; only IPv4 captures are supported"
        )
    return str(addr)


def _record_to_query(rec: dict, where: str) -> ModbusQuery:
    missing = [name for name in RECORD_FIELDS if name not in rec]
    if missing:
        raise _RecordError(f"{where}: missing fields {missing}")
    try:
        ts = float(rec["ts"])
    except (TypeError, ValueError):
        raise _RecordError(f"{where}: bad timestamp {rec['ts']!r}") from None
    values = {}
    for name in _INT_FIELDS:
        raw = rec[name]
        try:
            values[name] = int(raw)
        except (TypeError, ValueError):
            raise _RecordError(f"{where}: bad integer field {name}={raw!r}") from None
    mip = _require_ipv4(rec["mip"], where)
    sip = _require_ipv4(rec["sip"], where)
    try:
        return ModbusQuery(
            timestamp=ts,
            transaction_id=values["tid"],
            unit_id=values["uid"],
            function_code=values["fc"],
            reference_number=values["rn"],
            count=values["cnt"],
            master_ip=mip,
            slave_ip=sip,
            slave_port=values["sport"],
        )
    except ValueError as exc:
        raise _RecordError(f"{where}: {exc}") from None


def parse_ndjson(path: str) -> ParseResult:
    """One JSON object per line; unknown keys ignored, blank lines skipped."""
    result = ParseResult()
    last_ts = None
    with open(path, "r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"line {lineno}"
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise _RecordError(f"{where}: record is not an object")
                query = _record_to_query(rec, where)
                last_ts = _check_order(query, last_ts, where)
            except json.JSONDecodeError:
                result.malformed += 1
                log.debug("skipping %s: not valid JSON", where)
            except _RecordError as exc:
                result.malformed += 1
                log.debug("skipping %s", exc)
            else:
                result.queries.append(query)
    return result


def parse_csv(path: str) -> ParseResult:
    """CSV with a header naming at least the nine record fields."""
    result = ParseResult()
    last_ts = None
    with open(path, "r", encoding="utf-8", newline="") as fp:
        reader = csv.DictReader(fp)
        header = reader.fieldnames
        if header is None:
            return result  # empty file, empty stream
        missing = [name for name in RECORD_FIELDS if name not in header]
        if missing:
            raise IngestFormatError(f"CSV header is missing columns {missing}")
        for rowno, row in enumerate(reader, start=2):
            where = f"row {rowno}"
            try:
                query = _record_to_query(row, where)
                last_ts = _check_order(query, last_ts, where)
            except _RecordError as exc:
                result.malformed += 1
                log.debug("skipping %s", exc)
            else:
                result.queries.append(query)
    return result


def _check_order(query: ModbusQuery, last_ts: float | None, where: str) -> float:
    if last_ts is not None and query.timestamp < last_ts:
        raise _RecordError(
            f"{where}: timestamp {query.timestamp} regresses below {last_ts}"
        )
    return query.timestamp


def parse_records(path: str, fmt: str) -> ParseResult:
    """Dispatch on input format name: ndjson, csv or pcap."""
    if fmt == "ndjson":
        return parse_ndjson(path)
    if fmt == "csv":
        return parse_csv(path)
    if fmt == "pcap":
        from .pcap import read_pcap_queries

        return read_pcap_queries(path)
    raise ValueError(f"unknown input format {fmt!r}")


def split_channels(
    queries: list[ModbusQuery], cfg: IngestConfig
) -> tuple[list[ChannelStream], list[tuple[ChannelId, int]]]:
    """Group queries by channel, dropping channels below the query floor.

    Returns kept streams plus (channel, query_count) pairs for dropped
    channels, both sorted by channel key.
    """
    grouped: dict[ChannelId, list[ModbusQuery]] = {}
    for query in queries:
        grouped.setdefault(channel_of(query), []).append(query)
    kept: list[ChannelStream] = []
    dropped: list[tuple[ChannelId, int]] = []
    for channel in sorted(grouped, key=ChannelId.sort_key):
        stream = grouped[channel]
        if len(stream) < cfg.min_channel_packets:
            dropped.append((channel, len(stream)))
        else:
            kept.append(ChannelStream(channel, stream))
    return kept, dropped


def split_bursts(stream: ChannelStream, cfg: IngestConfig) -> list[Burst]:
    """Cut one channel's query sequence into bursts.

    A gap strictly greater than the threshold closes the current burst;
    a gap equal to the threshold does not. Burst boundaries depend on
    timestamps only, never on symbol content.
    """
    bursts: list[Burst] = []
    if not stream.queries:
        return bursts
    symbols = [symbol_of(stream.queries[0])]
    start = stream.queries[0].timestamp
    prev_ts = start
    for query in stream.queries[1:]:
        if query.timestamp - prev_ts > cfg.burst_gap_threshold:
            bursts.append(Burst(tuple(symbols), start, prev_ts))
            symbols = []
            start = query.timestamp
        symbols.append(symbol_of(query))
        prev_ts = query.timestamp
    bursts.append(Burst(tuple(symbols), start, prev_ts))
    return bursts
