"""Domain vocabulary for Modbus/TCP query traffic.

Everything downstream works with three projections of a query stream:
the query type (:class:`Symbol`), the conversation it belongs to
(:class:`ChannelId`), and maximal runs of closely spaced queries on one
channel (:class:`Burst`).
"""

from __future__ import annotations

from dataclasses import dataclass

MODBUS_MASTER_PORT = 502

_U8_MAX = 0xFF
_U16_MAX = 0xFFFF


@dataclass(frozen=True, order=True)
class Symbol:
    """Query type triple.

    Field order matters: lexicographic comparison of (function_code,
    reference_number, count) defines the alphabet ordering everywhere.
    """

    function_code: int
    reference_number: int
    count: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.function_code, self.reference_number, self.count)


@dataclass(frozen=True)
class ChannelId:
    """Conversation key: master IP, slave IP, unit id, master-side TCP port.

    The slave-side port is always the Modbus master port (502) for
    queries, so it carries no information and is not part of the key.
    """

    master_ip: str
    slave_ip: str
    unit_id: int
    slave_port: int

    def label(self) -> str:
        """Filesystem-safe name used for per-channel artifact paths."""
        return f"{self.master_ip}_{self.slave_ip}_u{self.unit_id}_p{self.slave_port}"

    def sort_key(self) -> tuple:
        """Deterministic ordering key (numeric on IPv4 octets, not lexical)."""
        return (_ip_key(self.master_ip), _ip_key(self.slave_ip), self.unit_id, self.slave_port)


def _ip_key(ip: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in ip.split("."))
    except ValueError:
        # Non-dotted-quad strings still need a stable order.
        return (len(ip),) + tuple(ord(ch) for ch in ip)


@dataclass(frozen=True)
class ModbusQuery:
    """One Modbus/TCP query (master -> slave direction only)."""

    timestamp: float
    transaction_id: int
    unit_id: int
    function_code: int
    reference_number: int
    count: int
    master_ip: str
    slave_ip: str
    slave_port: int

    def __post_init__(self) -> None:
        if not self.timestamp >= 0.0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp!r}")
        for name, value, limit in (
            ("transaction_id", self.transaction_id, _U16_MAX),
            ("unit_id", self.unit_id, _U8_MAX),
            ("function_code", self.function_code, _U8_MAX),
            ("reference_number", self.reference_number, _U16_MAX),
            ("count", self.count, _U16_MAX),
            ("slave_port", self.slave_port, _U16_MAX),
        ):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{name} must be an int, got {value!r}")
            if not 0 <= value <= limit:
                raise ValueError(f"{name} out of range [0, {limit}]: {value}")


def symbol_of(query: ModbusQuery) -> Symbol:
    """Project a query onto its type; the transaction id is deliberately dropped."""
    return Symbol(query.function_code, query.reference_number, query.count)


def channel_of(query: ModbusQuery) -> ChannelId:
    return ChannelId(query.master_ip, query.slave_ip, query.unit_id, query.slave_port)


@dataclass(frozen=True)
class Burst:
    """A maximal run of closely spaced queries on one channel.

    Holds the symbol sequence plus the first/last query timestamps.
    """

    symbols: tuple[Symbol, ...]
    start_time: float
    end_time: float

    def __post_init__(self) -> None:
        if len(self.symbols) == 0:
            raise ValueError("a burst holds at least one query")
        if self.end_time < self.start_time:
            raise ValueError(
                f"burst end {self.end_time!r} precedes start {self.start_time!r}"
            )

    def __len__(self) -> int:
        return len(self.symbols)
