import struct

import dpkt
import pytest
from hypothesis import given, settings, strategies as st

from ntcprep.pcapio import (
    CaptureMeta,
    InvalidPacket,
    RawPacket,
    TruncatedHeader,
    TruncatedRecord,
    UnrecognizedMagic,
    UnsupportedLinkType,
    open_capture,
    read_capture,
    write_capture,
)


def _frame(fill: int) -> bytes:
    return bytes([fill]) * 60


def two_packets_bytes(endian: str = "<") -> bytes:
    """Hand-packed fixture: two 60-byte frames at 1.000000 and 1.000500."""
    out = struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    for usec, fill in ((0, 0xAA), (500, 0xBB)):
        out += struct.pack(endian + "IIII", 1, usec, 60, 60) + _frame(fill)
    return out


@pytest.fixture
def two_packets(tmp_path):
    p = tmp_path / "two_packets.pcap"
    p.write_bytes(two_packets_bytes())
    return p


def test_empty_capture(tmp_path):
    p = tmp_path / "empty.pcap"
    p.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
    meta, stream = open_capture(p)
    assert meta.link_type == 1
    assert list(stream) == []


def test_two_packets_timestamps_exact(two_packets):
    _, stream = open_capture(two_packets)
    pkts = list(stream)
    assert [(p.ts_sec, p.ts_frac) for p in pkts] == [(1, 0), (1, 500)]
    assert [p.ts for p in pkts] == [1.0, 1.0005]
    assert [p.index for p in pkts] == [0, 1]
    assert pkts[1].data == _frame(0xBB)


def test_two_packets_match_dpkt(two_packets):
    with open(two_packets, "rb") as fh:
        ref = [(ts, bytes(buf)) for ts, buf in dpkt.pcap.Reader(fh)]
    _, stream = open_capture(two_packets)
    assert [(p.ts, p.data) for p in stream] == ref


def test_byte_swapped_magic_same_stream(tmp_path, two_packets):
    swapped = tmp_path / "swapped.pcap"
    swapped.write_bytes(two_packets_bytes(">"))
    meta, stream = open_capture(swapped)
    assert meta.endianness == "big"
    a = [(p.ts_sec, p.ts_frac, p.original_len, p.data) for p in stream]
    b = [(p.ts_sec, p.ts_frac, p.original_len, p.data) for p in open_capture(two_packets)[1]]
    assert a == b


def test_nanosecond_magic(tmp_path):
    p = tmp_path / "nano.pcap"
    data = struct.pack("<IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 1)
    data += struct.pack("<IIII", 5, 123_456_789, 60, 60) + _frame(1)
    p.write_bytes(data)
    meta, stream = open_capture(p)
    (pkt,) = list(stream)
    assert meta.ts_resolution == "nano"
    assert pkt.ts_ns == 5_123_456_789


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.pcap"
    p.write_bytes(b"\x0a\x0d\x0d\x0a" + bytes(20))
    with pytest.raises(UnrecognizedMagic):
        open_capture(p)


def test_truncated_global_header(tmp_path):
    p = tmp_path / "short.pcap"
    p.write_bytes(two_packets_bytes()[:10])
    with pytest.raises(TruncatedHeader):
        open_capture(p)


def test_unsupported_link_type(tmp_path):
    p = tmp_path / "raw.pcap"
    p.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101))
    with pytest.raises(UnsupportedLinkType):
        open_capture(p)


@pytest.mark.parametrize("cut", [24 + 16 + 60 + 5, 24 + 16 + 60 + 16 + 30])
def test_truncated_record_yields_prefix(tmp_path, cut):
    p = tmp_path / "cut.pcap"
    p.write_bytes(two_packets_bytes()[:cut])
    _, stream = open_capture(p)
    got = []
    with pytest.raises(TruncatedRecord) as exc:
        for pkt in stream:
            got.append(pkt)
    assert len(got) == 1
    assert exc.value.packets_read == 1
    _, pkts, err = read_capture(p)
    assert len(pkts) == 1 and isinstance(err, TruncatedRecord)


def test_write_rejects_invalid_packet(tmp_path):
    bad = RawPacket(0, 1, 0, 10, bytes(20))
    with pytest.raises(InvalidPacket):
        write_capture(CaptureMeta(), [bad], tmp_path / "x.pcap")
    assert not (tmp_path / "x.pcap").exists()


def test_write_empty_roundtrip(tmp_path):
    p = tmp_path / "e.pcap"
    write_capture(CaptureMeta(), [], p)
    assert list(open_capture(p)[1]) == []


def test_roundtrip_two_packets_byte_identical(tmp_path, two_packets):
    meta, pkts, _ = read_capture(two_packets)
    out = tmp_path / "rt.pcap"
    write_capture(meta, pkts, out)
    assert out.read_bytes() == two_packets.read_bytes()


packet_st = st.builds(
    lambda sec, usec, data, extra: (sec, usec, data, len(data) + extra),
    st.integers(0, 2**32 - 1),
    st.integers(0, 999_999),
    st.binary(max_size=200),
    st.integers(0, 100),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(packet_st, max_size=20), st.sampled_from(["little", "big"]), st.sampled_from(["micro", "nano"]))
def test_roundtrip_property(tmp_path_factory, recs, endian, res):
    meta = CaptureMeta(endianness=endian, ts_resolution=res)
    pkts = [RawPacket(i, s, u, o, d, meta.ts_scale) for i, (s, u, d, o) in enumerate(recs)]
    d = tmp_path_factory.mktemp("rt")
    write_capture(meta, pkts, d / "a.pcap")
    meta2, again, err = read_capture(d / "a.pcap")
    assert err is None and meta2 == meta
    assert again == pkts
    write_capture(meta2, again, d / "b.pcap")
    assert (d / "a.pcap").read_bytes() == (d / "b.pcap").read_bytes()
