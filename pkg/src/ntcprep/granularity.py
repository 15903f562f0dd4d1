"""Grouping of packets into traffic units."""

from __future__ import annotations

import math
import socket
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .packet import TCP_ACK, TCP_SYN, FiveTuple, ParsedPacket

DEFAULT_BURST_GAP = 1.0

Endpoint = tuple[str, int]


class NonPositiveGap(ValueError):
    pass


def _endpoint_order(ep: Endpoint) -> tuple[bytes, int]:
    return socket.inet_aton(ep[0]), ep[1]


@dataclass(frozen=True, eq=False)
class SessionKey:
    """Bidirectional conversation key.

    ``endpoint_a`` is the initiator. Equality and hashing ignore direction,
    so the key built from either direction of a conversation compares equal.
    """

    endpoint_a: Endpoint
    endpoint_b: Endpoint
    protocol: str

    @classmethod
    def of(cls, tup: FiveTuple) -> "SessionKey":
        return cls((tup.src_ip, tup.src_port), (tup.dst_ip, tup.dst_port), tup.protocol)

    def canonical(self) -> tuple:
        a, b = sorted((self.endpoint_a, self.endpoint_b), key=_endpoint_order)
        return (self.protocol, a, b)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SessionKey):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __str__(self) -> str:
        (ia, pa), (ib, pb) = self.endpoint_a, self.endpoint_b
        return f"{self.protocol}_{ia}_{pa}_{ib}_{pb}"


@dataclass(frozen=True)
class BurstKey:
    parent: Union[SessionKey, FiveTuple, None]
    ordinal: int

    def __str__(self) -> str:
        prefix = "capture" if self.parent is None else str(self.parent)
        return f"{prefix}_burst{self.ordinal}"


@dataclass(frozen=True)
class PacketKey:
    index: int

    def __str__(self) -> str:
        return f"pkt{self.index}"


UnitKey = Union[SessionKey, FiveTuple, BurstKey, PacketKey]


@dataclass
class TrafficUnit:
    kind: str  # "packet" | "burst" | "flow" | "session"
    key: UnitKey
    packets: list[ParsedPacket] = field(default_factory=list)

    @property
    def unit_id(self) -> str:
        return str(self.key)

    @property
    def protocol(self) -> str | None:
        for p in self.packets:
            if p.tuple is not None:
                return p.tuple.protocol
        return None


GRANULARITIES = ("packet", "burst", "flow", "session")


def _order(packets: Iterable[ParsedPacket]) -> list[ParsedPacket]:
    return sorted(packets, key=lambda p: (p.raw.ts_ns, p.index))


def _initiator(first: ParsedPacket) -> Endpoint:
    tup = first.tuple
    src, dst = (tup.src_ip, tup.src_port), (tup.dst_ip, tup.dst_port)
    if tup.protocol == "TCP" and first.tcp_flags is not None:
        syn = first.tcp_flags & TCP_SYN
        ack = first.tcp_flags & TCP_ACK
        if syn and not ack:
            return src
        if syn and ack:
            return dst
        # capture started mid-connection: the direction is unknowable
        return min(src, dst, key=_endpoint_order)
    return src


def split_sessions(packets: Sequence[ParsedPacket]) -> dict[SessionKey, TrafficUnit]:
    """Partition tuple-bearing packets into bidirectional sessions.

    Packets without a 5-tuple (non-IP, IPv6, fragments, malformed) are skipped.
    """
    groups: dict[SessionKey, list[ParsedPacket]] = {}
    for pp in _order(packets):
        if pp.tuple is None:
            continue
        groups.setdefault(SessionKey.of(pp.tuple), []).append(pp)
    out: dict[SessionKey, TrafficUnit] = {}
    for members in groups.values():
        first = members[0]
        a = _initiator(first)
        tup = first.tuple
        b = (tup.dst_ip, tup.dst_port) if a == (tup.src_ip, tup.src_port) else (tup.src_ip, tup.src_port)
        key = SessionKey(a, b, tup.protocol)
        out[key] = TrafficUnit("session", key, members)
    return out


def split_flows(packets: Sequence[ParsedPacket]) -> dict[FiveTuple, TrafficUnit]:
    out: dict[FiveTuple, TrafficUnit] = {}
    for pp in _order(packets):
        if pp.tuple is None:
            continue
        unit = out.get(pp.tuple)
        if unit is None:
            unit = out[pp.tuple] = TrafficUnit("flow", pp.tuple)
        unit.packets.append(pp)
    return out


def split_bursts(
    packets: Sequence[ParsedPacket],
    gap: float = DEFAULT_BURST_GAP,
    parent: Union[SessionKey, FiveTuple, None] = None,
) -> list[TrafficUnit]:
    """Cut at every inter-arrival strictly greater than ``gap`` seconds.

    The comparison is exact: timestamps are integer nanoseconds and the gap
    is converted without rounding, so a gap equal to ``gap`` stays inside.
    """
    if not gap > 0:
        raise NonPositiveGap(f"burst gap must be > 0, got {gap}")
    if math.isinf(gap):
        gap_ns = math.inf
    else:
        # go through the shortest decimal repr so 0.3 means 3/10, not the binary float below it
        exact = Fraction(repr(gap)) if isinstance(gap, float) else Fraction(gap)
        gap_ns = exact * 1_000_000_000
    bursts: list[TrafficUnit] = []
    prev_ns = None
    for pp in _order(packets):
        ns = pp.raw.ts_ns
        if prev_ns is None or ns - prev_ns > gap_ns:
            bursts.append(TrafficUnit("burst", BurstKey(parent, len(bursts))))
        bursts[-1].packets.append(pp)
        prev_ns = ns
    return bursts


def split_packets(packets: Sequence[ParsedPacket]) -> list[TrafficUnit]:
    return [TrafficUnit("packet", PacketKey(pp.index), [pp]) for pp in _order(packets) if pp.tuple is not None]


def units_for(
    packets: Sequence[ParsedPacket],
    granularity: str,
    gap: float = DEFAULT_BURST_GAP,
    global_bursts: bool = False,
) -> list[TrafficUnit]:
    """All units of one granularity for a capture, in deterministic order."""
    if granularity == "session":
        return list(split_sessions(packets).values())
    if granularity == "flow":
        return list(split_flows(packets).values())
    if granularity == "packet":
        return split_packets(packets)
    if granularity == "burst":
        if global_bursts:
            return split_bursts([p for p in packets if p.tuple is not None], gap)
        out = []
        for key, sess in split_sessions(packets).items():
            out.extend(split_bursts(sess.packets, gap, parent=key))
        return out
    raise ValueError(f"unknown granularity {granularity!r}")


def sub_units(session: TrafficUnit, granularity: str, gap: float = DEFAULT_BURST_GAP) -> list[TrafficUnit]:
    """Units of ``granularity`` drawn from a single session."""
    if granularity == "session":
        return [session]
    if granularity == "flow":
        return list(split_flows(session.packets).values())
    if granularity == "burst":
        return split_bursts(session.packets, gap, parent=session.key)
    if granularity == "packet":
        return split_packets(session.packets)
    raise ValueError(f"unknown granularity {granularity!r}")
