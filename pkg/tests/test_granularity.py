import sys

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ntcprep import forge
from ntcprep.granularity import (
    NonPositiveGap,
    SessionKey,
    split_bursts,
    split_flows,
    split_packets,
    split_sessions,
    units_for,
)
from ntcprep.packet import FiveTuple, parse_packet
from ntcprep.pcapio import RawPacket


def tcp_pkt(index, src, dst, flags="A", t_ns=None):
    seg = forge.tcp(src[0], dst[0], src[1], dst[1], 1, 1, flags)
    frame = forge.ethernet("02:00:00:00:00:01", "02:00:00:00:00:02", 0x0800, forge.ipv4(src[0], dst[0], 6, seg))
    t_ns = index * 1_000_000 if t_ns is None else t_ns
    return parse_packet(RawPacket(index, t_ns // 10**9, (t_ns % 10**9) // 1000, len(frame), frame))


def timed(ts_ns: list[int]):
    return [tcp_pkt(i, ("10.0.0.1", 1), ("10.0.0.2", 2), t_ns=t) for i, t in enumerate(ts_ns)]


A, B, C, D = ("10.0.0.1", 1234), ("10.0.0.2", 443), ("10.0.0.3", 5555), ("10.0.0.4", 80)


def test_single_packet_session():
    (key,) = split_sessions([tcp_pkt(0, A, B, "S")])
    assert key.endpoint_a == A and key.endpoint_b == B


def test_interleaved_handshakes():
    pkts = [tcp_pkt(0, A, B, "S"), tcp_pkt(1, C, D, "S"), tcp_pkt(2, B, A, "SA"), tcp_pkt(3, D, C, "SA"), tcp_pkt(4, A, B)]
    sessions = split_sessions(pkts)
    assert len(sessions) == 2
    got = {frozenset(k.canonical()[1:]): [p.index for p in u.packets] for k, u in sessions.items()}
    assert got == {frozenset((A, B)): [0, 2, 4], frozenset((C, D)): [1, 3]}


def test_bidirectional_merge_and_key_equality():
    pkts = [tcp_pkt(0, A, B), tcp_pkt(1, B, A)]
    (unit,) = split_sessions(pkts).values()
    assert len(unit.packets) == 2
    t = FiveTuple(A[0], B[0], A[1], B[1], "TCP")
    assert SessionKey.of(t) == SessionKey.of(t.reversed())
    assert hash(SessionKey.of(t)) == hash(SessionKey.of(t.reversed()))


def test_initiator_from_synack_when_syn_missing():
    (key,) = split_sessions([tcp_pkt(0, B, A, "SA"), tcp_pkt(1, A, B)])
    assert key.endpoint_a == A


def test_initiator_tiebreak_mid_connection():
    (key,) = split_sessions([tcp_pkt(0, B, A, "PA"), tcp_pkt(1, A, B)])
    assert key.endpoint_a == A  # 10.0.0.1 < 10.0.0.2


def test_flows_directional():
    pkts = [tcp_pkt(0, A, B), tcp_pkt(1, B, A), tcp_pkt(2, A, B)]
    flows = split_flows(pkts)
    assert len(flows) == 2
    assert split_flows([]) == {}


def test_bursts_examples():
    s = 10**9
    assert [len(b.packets) for b in split_bursts(timed([0, s // 10, s // 5]), 1.0)] == [3]
    assert [len(b.packets) for b in split_bursts(timed([0, s // 10, 2 * s, 2 * s + s // 20]), 1.0)] == [2, 2]
    assert [len(b.packets) for b in split_bursts(timed([0, s]), 1.0)] == [2]
    assert len(split_bursts(timed([0, s + 1000]), 1.0)) == 2
    # 0.3 is below 3/10 as a binary float; the boundary must still be inclusive
    assert len(split_bursts(timed([0, 3 * s // 10]), 0.3)) == 1


def test_burst_gap_must_be_positive():
    with pytest.raises(NonPositiveGap):
        split_bursts(timed([0]), 0)
    with pytest.raises(NonPositiveGap):
        split_bursts(timed([0]), -1.0)


def test_burst_extreme_gaps():
    ts = [0, 5_000, 2_000_000, 3_000_000_000]
    assert len(split_bursts(timed(ts), sys.float_info.max)) == 1
    assert len(split_bursts(timed(ts), float("inf"))) == 1
    assert len(split_bursts(timed(ts), 1e-9)) == len(ts)


def test_non_ip_excluded():
    arp = parse_packet(RawPacket(9, 0, 0, 42, forge.arp_frame()))
    assert split_sessions([arp]) == {}
    assert split_packets([arp]) == []


def test_units_for_global_vs_per_session_bursts():
    s = 10**9
    pkts = [tcp_pkt(0, A, B, t_ns=0), tcp_pkt(1, C, D, t_ns=s // 2), tcp_pkt(2, A, B, t_ns=s)]
    assert len(units_for(pkts, "burst")) == 2
    assert len(units_for(pkts, "burst", global_bursts=True)) == 1


endpoints = st.tuples(st.sampled_from(["10.0.0.1", "10.0.0.2", "10.0.0.3", "192.168.1.9"]), st.sampled_from([53, 80, 443, 40000]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(endpoints, endpoints, st.sampled_from(["TCP", "UDP"]), st.integers(0, 3 * 10**9)), max_size=40))
def test_partition_laws(spec):
    pkts = []
    for i, (src, dst, proto, t) in enumerate(spec):
        if proto == "TCP":
            pkts.append(tcp_pkt(i, src, dst, t_ns=t))
        else:
            frame = forge.udp_frame(src, dst, b"x")
            pkts.append(parse_packet(RawPacket(i, t // 10**9, (t % 10**9) // 1000, len(frame), frame)))
    sessions = split_sessions(pkts)
    flows = split_flows(pkts)
    sidx = sorted(p.index for u in sessions.values() for p in u.packets)
    fidx = sorted(p.index for u in flows.values() for p in u.packets)
    assert sidx == fidx == list(range(len(pkts)))
    assert len(sessions) <= len(flows) <= 2 * len(sessions)
    for key, unit in flows.items():
        assert all(p.tuple == key for p in unit.packets)
    for key, unit in sessions.items():
        members = {p.index for p in unit.packets}
        union = set()
        for f in flows.values():
            if SessionKey.of(f.key) == key:
                union |= {p.index for p in f.packets}
        assert members == union
        ts = [(p.raw.ts_ns, p.index) for p in unit.packets]
        assert ts == sorted(ts)
        assert split_sessions(pkts).keys() == sessions.keys()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5 * 10**6), max_size=30), st.sampled_from(["0.000001", "0.0005", "0.001", "0.3", "1.0"]))
def test_burst_rule_matches_oracle(deltas_us, gap):
    ts, t = [], 0
    for d in deltas_us:
        t += d * 1000
        ts.append(t)
    got = [len(b.packets) for b in split_bursts(timed(ts), float(gap))]
    assert got == oracles.burst_sizes(ts, gap)
