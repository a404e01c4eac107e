"""Minimal classic-pcap reader that extracts Modbus/TCP queries.

Handles little- and big-endian captures with microsecond or nanosecond
timestamps, Ethernet (optionally VLAN-tagged) and raw-IPv4 link types.
Only TCP segments addressed TO port 502 are queries; everything else
(responses, other protocols, non-IPv4 frames) is counted and dropped.
A segment may carry several MBAP frames back to back; each one becomes
a query. Timestamps are normalized to seconds since the first packet.

This is deliberately not a general pcap library: it reads exactly what
the toolkit needs and fails loudly, with byte offsets, on anything that
suggests a corrupt container.
"""

from __future__ import annotations

import struct

from .ingest import IngestFormatError, ParseResult
from .traffic import MODBUS_MASTER_PORT, ModbusQuery

# magic -> (byte order, timestamp fraction divisor)
_MAGICS = {
    0xA1B2C3D4: ("<", 1e6),
    0xA1B23C4D: ("<", 1e9),
}

_LINKTYPE_ETHERNET = 1
_LINKTYPE_RAW_IPV4 = 101

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_VLAN = 0x8100


def read_pcap_queries(path: str) -> ParseResult:
    with open(path, "rb") as fp:
        data = fp.read()
    return _parse_pcap_bytes(data)


def _parse_pcap_bytes(data: bytes) -> ParseResult:
    if len(data) < 24:
        raise IngestFormatError("pcap: file shorter than the 24-byte global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    magic_be = struct.unpack_from(">I", data, 0)[0]
    if magic_le in _MAGICS:
        order, divisor = _MAGICS[magic_le]
    elif magic_be in _MAGICS:
        order, divisor = _MAGICS[magic_be]
        order = ">"
    else:
        raise IngestFormatError(
            f"pcap: unknown magic 0x{magic_le:08x} at offset 0"
        )
    linktype = struct.unpack_from(order + "I", data, 20)[0]
    if linktype not in (_LINKTYPE_ETHERNET, _LINKTYPE_RAW_IPV4):
        raise IngestFormatError(f"pcap: unsupported link type {linktype}")

    result = ParseResult()
    first_ts: float | None = None
    last_query_ts: float | None = None
    offset = 24
    header = struct.Struct(order + "IIII")
    while offset < len(data):
        if offset + 16 > len(data):
            raise IngestFormatError(
                f"pcap: truncated packet header at offset {offset}"
            )
        ts_sec, ts_frac, incl_len, _orig_len = header.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > len(data):
            raise IngestFormatError(
                f"pcap: packet body at offset {offset} runs past end of file"
            )
        frame = data[offset : offset + incl_len]
        offset += incl_len
        ts = ts_sec + ts_frac / divisor
        if first_ts is None:
            first_ts = ts
        parsed = _parse_frame(frame, linktype)
        if parsed is None:
            result.dropped_non_query += 1
            continue
        src_ip, dst_ip, src_port, dst_port, payload = parsed
        if dst_port != MODBUS_MASTER_PORT:
            result.dropped_non_query += 1
            continue
        if not payload:
            result.dropped_non_query += 1  # bare ACK toward the master port
            continue
        rel_ts = ts - first_ts
        if last_query_ts is not None and rel_ts < last_query_ts:
            result.malformed += 1
            continue
        queries = _parse_mbap_payload(
            payload, rel_ts, src_ip, dst_ip, src_port, result
        )
        if queries:
            last_query_ts = rel_ts
        result.queries.extend(queries)
    return result


def _parse_frame(frame: bytes, linktype: int):
    """Return (src_ip, dst_ip, src_port, dst_port, tcp_payload) or None."""
    if linktype == _LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return None
        ethertype = struct.unpack_from(">H", frame, 12)[0]
        ip_start = 14
        if ethertype == _ETHERTYPE_VLAN:
            if len(frame) < 18:
                return None
            ethertype = struct.unpack_from(">H", frame, 16)[0]
            ip_start = 18
        if ethertype != _ETHERTYPE_IPV4:
            return None
        ip = frame[ip_start:]
    else:
        ip = frame
    if len(ip) < 20:
        return None
    version_ihl = ip[0]
    if version_ihl >> 4 != 4:
        return None  # non-IPv4 (IPv6 included) is simply not Modbus/TCP here
    ihl = (version_ihl & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return None
    total_len = struct.unpack_from(">H", ip, 2)[0]
    protocol = ip[9]
    if protocol != 6:
        return None
    src_ip = ".".join(str(b) for b in ip[12:16])
    dst_ip = ".".join(str(b) for b in ip[16:20])
    end = min(total_len, len(ip))
    tcp = ip[ihl:end]
    if len(tcp) < 20:
        return None
    src_port, dst_port = struct.unpack_from(">HH", tcp, 0)
    data_offset = (tcp[12] >> 4) * 4
    if data_offset < 20 or len(tcp) < data_offset:
        return None
    return src_ip, dst_ip, src_port, dst_port, tcp[data_offset:]


def _parse_mbap_payload(
    payload: bytes,
    ts: float,
    src_ip: str,
    dst_ip: str,
    src_port: int,
    result: ParseResult,
) -> list[ModbusQuery]:
    """Walk back-to-back MBAP frames in one TCP segment."""
    queries: list[ModbusQuery] = []
    pos = 0
    while len(payload) - pos >= 8:
        tid, proto, length, uid = struct.unpack_from(">HHHB", payload, pos)
        if proto != 0 or length < 2:
            result.malformed += 1
            break
        frame_end = pos + 6 + length
        if frame_end > len(payload):
            result.malformed += 1  # truncated MBAP frame
            break
        pdu = payload[pos + 7 : frame_end]
        fc = pdu[0]
        # Short PDUs zero-fill the reference number and count fields.
        rn = struct.unpack_from(">H", pdu, 1)[0] if len(pdu) >= 3 else 0
        cnt = struct.unpack_from(">H", pdu, 3)[0] if len(pdu) >= 5 else 0
        queries.append(
            ModbusQuery(
                timestamp=ts,
                transaction_id=tid,
                unit_id=uid,
                function_code=fc,
                reference_number=rn,
                count=cnt,
                master_ip=src_ip,
                slave_ip=dst_ip,
                slave_port=src_port,
            )
        )
        pos = frame_end
    if 0 < len(payload) - pos < 8 and not queries:
        result.malformed += 1  # lone fragment too short for an MBAP header
    return queries
