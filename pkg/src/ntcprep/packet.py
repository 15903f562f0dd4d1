"""Ethernet/IPv4/TCP/UDP dissection into byte-range field maps.

Every occludable field is located as an ``(offset, length)`` pair relative
to the start of the frame so that later stages can rewrite the exact bytes
without re-serialising the packet.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Optional

from .pcapio import RawPacket

Range = tuple[int, int]  # (offset, length)

ETH_HDR = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100

PROTO_TCP = 6
PROTO_UDP = 17

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


class FiveTuple(NamedTuple):
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str  # "TCP" | "UDP"

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def __str__(self) -> str:
        return f"{self.protocol}_{self.src_ip}_{self.src_port}_{self.dst_ip}_{self.dst_port}"


@dataclass(frozen=True)
class FieldMap:
    mac_dst: Optional[Range] = None
    mac_src: Optional[Range] = None
    ip_src: Optional[Range] = None
    ip_dst: Optional[Range] = None
    ip_id: Optional[Range] = None
    ip_checksum: Optional[Range] = None
    tcp_src_port: Optional[Range] = None
    tcp_dst_port: Optional[Range] = None
    tcp_seq: Optional[Range] = None
    tcp_ack: Optional[Range] = None
    tcp_window: Optional[Range] = None
    tcp_options_full: Optional[Range] = None
    tcp_ts_val: Optional[Range] = None
    tcp_ts_ecr: Optional[Range] = None
    udp_src_port: Optional[Range] = None
    udp_dst_port: Optional[Range] = None
    payload: Optional[Range] = None
    sni: Optional[Range] = None

    def items(self) -> list[tuple[str, Range]]:
        """Present ranges as (name, range) pairs in declaration order."""
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                out.append((f.name, value))
        return out


# Ranges allowed to nest inside another range.
NESTED_IN = {
    "tcp_ts_val": "tcp_options_full",
    "tcp_ts_ecr": "tcp_options_full",
    "sni": "payload",
}


@dataclass(frozen=True)
class ParsedPacket:
    raw: RawPacket
    tuple: Optional[FiveTuple] = None
    fields: FieldMap = field(default_factory=FieldMap)
    tcp_flags: Optional[int] = None
    tcp_seq: Optional[int] = None
    ip_proto: Optional[int] = None
    fragment: bool = False
    ipv6: bool = False
    error: Optional[str] = None

    @property
    def ts(self) -> float:
        return self.raw.ts

    @property
    def index(self) -> int:
        return self.raw.index

    @property
    def payload(self) -> bytes:
        rng = self.fields.payload
        if rng is None:
            return b""
        return self.raw.data[rng[0] : rng[0] + rng[1]]

    def with_sni(self, sni: Optional[Range]) -> "ParsedPacket":
        return replace(self, fields=replace(self.fields, sni=sni))


def _ip(b: bytes) -> str:
    return socket.inet_ntoa(b)


def _find_tcp_timestamp(data: bytes, start: int, end: int) -> Optional[int]:
    """Offset of the TSval bytes of option kind 8, walking the option list."""
    i = start
    while i < end:
        kind = data[i]
        if kind == 0:  # end of option list
            return None
        if kind == 1:  # NOP
            i += 1
            continue
        if i + 1 >= end:
            return None
        length = data[i + 1]
        if length < 2 or i + length > end:
            return None
        if kind == 8 and length == 10:
            return i + 2
        i += length
    return None


def parse_packet(raw: RawPacket) -> ParsedPacket:
    """Dissect one Ethernet frame.

    Malformed frames never raise: the error is recorded on the returned
    packet and only the ranges known to be valid are kept.
    """
    data = raw.data
    n = len(data)
    if n < ETH_HDR:
        return ParsedPacket(raw=raw, error="frame shorter than Ethernet header")
    l2 = dict(mac_dst=(0, 6), mac_src=(6, 6))
    ethertype = struct.unpack_from("!H", data, 12)[0]
    off = ETH_HDR
    if ethertype == ETHERTYPE_VLAN:
        if n < off + 4:
            return ParsedPacket(raw=raw, fields=FieldMap(**l2), error="truncated VLAN tag")
        ethertype = struct.unpack_from("!H", data, off + 2)[0]
        off += 4
    if ethertype == ETHERTYPE_IPV6:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2), ipv6=True)
    if ethertype != ETHERTYPE_IPV4:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2))

    ip = off
    if n < ip + 20:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2), error="truncated IPv4 header")
    ver_ihl = data[ip]
    ihl = (ver_ihl & 0x0F) * 4
    if ver_ihl >> 4 != 4 or ihl < 20:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2), error="bad IPv4 version/IHL")
    if n < ip + ihl:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2), error="IPv4 header exceeds capture")
    total_len = struct.unpack_from("!H", data, ip + 2)[0]
    frag = struct.unpack_from("!H", data, ip + 6)[0]
    proto = data[ip + 9]
    l3 = dict(
        ip_id=(ip + 4, 2),
        ip_checksum=(ip + 10, 2),
        ip_src=(ip + 12, 4),
        ip_dst=(ip + 16, 4),
    )
    src_ip = _ip(data[ip + 12 : ip + 16])
    dst_ip = _ip(data[ip + 16 : ip + 20])
    if total_len < ihl:
        return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3), ip_proto=proto, error="IPv4 total length < IHL")
    # bytes beyond total_len are Ethernet trailer padding
    ip_end = min(n, ip + total_len)
    l4 = ip + ihl

    if frag & 0x1FFF:
        # non-first fragment: no transport header here
        body = (l4, ip_end - l4) if ip_end > l4 else None
        return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3, payload=body), ip_proto=proto, fragment=True)

    if proto == PROTO_TCP:
        if ip_end < l4 + 20:
            return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3), ip_proto=proto, error="truncated TCP header")
        doff = (data[l4 + 12] >> 4) * 4
        if doff < 20 or ip_end < l4 + doff:
            return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3), ip_proto=proto, error="bad TCP data offset")
        sport, dport, seq = struct.unpack_from("!HHI", data, l4)
        flags = data[l4 + 13]
        tcp = dict(
            tcp_src_port=(l4, 2),
            tcp_dst_port=(l4 + 2, 2),
            tcp_seq=(l4 + 4, 4),
            tcp_ack=(l4 + 8, 4),
            tcp_window=(l4 + 14, 2),
        )
        if doff > 20:
            tcp["tcp_options_full"] = (l4 + 20, doff - 20)
            ts = _find_tcp_timestamp(data, l4 + 20, l4 + doff)
            if ts is not None:
                tcp["tcp_ts_val"] = (ts, 4)
                tcp["tcp_ts_ecr"] = (ts + 4, 4)
        pay_start = l4 + doff
        payload = (pay_start, ip_end - pay_start) if ip_end > pay_start else None
        fm = FieldMap(**l2, **l3, **tcp, payload=payload)
        tup = FiveTuple(src_ip, dst_ip, sport, dport, "TCP")
        pp = ParsedPacket(
            raw=raw,
            tuple=tup,
            fields=fm,
            tcp_flags=flags,
            tcp_seq=seq,
            ip_proto=proto,
            fragment=bool(frag & 0x2000),
        )
        if payload is not None:
            pp = pp.with_sni(_frame_sni(data, payload))
        return pp

    if proto == PROTO_UDP:
        if ip_end < l4 + 8:
            return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3), ip_proto=proto, error="truncated UDP header")
        sport, dport = struct.unpack_from("!HH", data, l4)
        pay_start = l4 + 8
        payload = (pay_start, ip_end - pay_start) if ip_end > pay_start else None
        fm = FieldMap(**l2, **l3, udp_src_port=(l4, 2), udp_dst_port=(l4 + 2, 2), payload=payload)
        return ParsedPacket(
            raw=raw,
            tuple=FiveTuple(src_ip, dst_ip, sport, dport, "UDP"),
            fields=fm,
            ip_proto=proto,
            fragment=bool(frag & 0x2000),
        )

    return ParsedPacket(raw=raw, fields=FieldMap(**l2, **l3), ip_proto=proto)


def _frame_sni(data: bytes, payload: Range) -> Optional[Range]:
    # local import: tls depends on this module's Range type only
    from .tls import parse_tls_records

    start, length = payload
    for info in parse_tls_records([data[start : start + length]]):
        if info.sni_range is not None:
            _, off, ln = info.sni_range
            return (start + off, ln)
    return None


def parse_all(packets) -> list[ParsedPacket]:
    """Parse a capture and locate SNI hostnames split across TCP segments."""
    from .tls import annotate_sni

    return annotate_sni([parse_packet(p) for p in packets])
