"""TLS/DTLS record framing, hello parsing, QUIC detection, minimal TCP reassembly.

Detection is driven by record framing only; ports are never consulted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .packet import ParsedPacket

CT_CHANGE_CIPHER_SPEC = 20
CT_ALERT = 21
CT_HANDSHAKE = 22
CT_APPLICATION_DATA = 23
TLS_CONTENT_TYPES = (20, 21, 22, 23)

HS_CLIENT_HELLO = 1
HS_SERVER_HELLO = 2

EXT_SERVER_NAME = 0
EXT_SUPPORTED_VERSIONS = 43

# TLSCiphertext.length may not exceed 2^14 + 2048
MAX_RECORD_LEN = 2**14 + 2048

DTLS_VERSIONS = (b"\xfe\xff", b"\xfe\xfd", b"\xfe\xfc")
QUIC_VERSIONS = {0x00000001, 0x6B3343CF, 0x51303433, 0x51303436, 0x51303530}


class Encryption(str, Enum):
    NONE = "none"
    TLS = "TLS"
    DTLS = "DTLS"
    QUIC = "QUIC"


@dataclass(frozen=True)
class TlsHandshakeInfo:
    """One observation of TLS framing.

    Handshake records produce one entry per handshake message. Every other
    record (and encrypted handshake records) produces a single ``Other``
    entry, so an empty result means no TLS framing was seen at all.
    """

    role: str  # "ClientHello" | "ServerHello" | "Other"
    content_type: int
    legacy_version: bytes
    handshake_type: Optional[int] = None
    cipher_suite: Optional[int] = None
    selected_version: Optional[int] = None
    sni_host: Optional[str] = None
    # (segment index, offset within segment, length) for each piece of the hostname
    sni_pieces: tuple[tuple[int, int, int], ...] = ()

    @property
    def sni_range(self) -> Optional[tuple[int, int, int]]:
        if len(self.sni_pieces) == 1:
            return self.sni_pieces[0]
        return None


class _Reader:
    """Bounds-checked cursor; every read raises IndexError past the end."""

    def __init__(self, buf: bytes, pos: int = 0, end: Optional[int] = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else min(end, len(buf))

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise IndexError
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def u24(self) -> int:
        return int.from_bytes(self.take(3), "big")

    def vec(self, len_bytes: int) -> bytes:
        n = int.from_bytes(self.take(len_bytes), "big")
        return self.take(n)


def _parse_hello_tail(r: _Reader, is_client: bool, dtls: bool = False) -> dict:
    """Parse a ClientHello/ServerHello body; truncated input yields what was read."""
    out: dict = {}
    try:
        out["version"] = r.take(2)
        r.take(32)  # random
        r.vec(1)  # session id
        if is_client:
            if dtls:
                r.vec(1)  # cookie
            r.vec(2)  # cipher suites
            r.vec(1)  # compression methods
        else:
            out["cipher_suite"] = r.u16()
            r.u8()  # compression method
        ext_total = r.u16()
        ext_end = min(r.pos + ext_total, r.end)
        while r.pos + 4 <= ext_end:
            etype = r.u16()
            elen = r.u16()
            estart = r.pos
            if is_client and etype == EXT_SERVER_NAME:
                sr = _Reader(r.buf, estart, estart + elen)
                list_len = sr.u16()
                list_end = sr.pos + list_len
                while sr.pos < list_end:
                    name_type = sr.u8()
                    name_len = sr.u16()
                    name_start = sr.pos
                    name = sr.take(name_len)
                    if name_type == 0 and "sni" not in out:
                        out["sni"] = (name, name_start, name_len)
            elif not is_client and etype == EXT_SUPPORTED_VERSIONS and elen == 2:
                out["selected_version"] = struct.unpack("!H", r.buf[estart : estart + 2])[0]
            r.pos = estart + elen
    except IndexError:
        pass
    return out


def _valid_tls_header(buf: bytes, i: int) -> bool:
    if len(buf) - i < 5:
        return False
    if buf[i] not in TLS_CONTENT_TYPES or buf[i + 1] != 3 or buf[i + 2] > 4:
        return False
    length = (buf[i + 3] << 8) | buf[i + 4]
    return 0 < length <= MAX_RECORD_LEN


class _HandshakeBuffer:
    """Handshake byte stream with a map back to stream offsets."""

    def __init__(self):
        self.buf = bytearray()
        self.chunks: list[tuple[int, int, int]] = []  # (buf_off, stream_off, length)
        self.consumed = 0

    def append(self, data: bytes, stream_off: int) -> None:
        if data:
            self.chunks.append((len(self.buf), stream_off, len(data)))
            self.buf += data

    def to_stream(self, off: int, length: int) -> list[tuple[int, int]]:
        pieces = []
        for b_off, s_off, ln in self.chunks:
            lo = max(off, b_off)
            hi = min(off + length, b_off + ln)
            if lo < hi:
                pieces.append((s_off + (lo - b_off), hi - lo))
        return pieces


def _stream_to_segments(pieces, bounds: list[int]) -> tuple[tuple[int, int, int], ...]:
    out = []
    for s_off, ln in pieces:
        end = s_off + ln
        for seg, seg_start in enumerate(bounds[:-1]):
            seg_end = bounds[seg + 1]
            lo = max(s_off, seg_start)
            hi = min(end, seg_end)
            if lo < hi:
                out.append((seg, lo - seg_start, hi - lo))
    return tuple(out)


def _emit_handshake(hs: _HandshakeBuffer, record_version: bytes, bounds, infos, final: bool) -> None:
    buf = bytes(hs.buf)
    while True:
        start = hs.consumed
        if len(buf) - start < 4:
            return
        msg_type = buf[start]
        msg_len = int.from_bytes(buf[start + 1 : start + 4], "big")
        complete = len(buf) - start - 4 >= msg_len
        if not complete and not final:
            return
        body_end = start + 4 + msg_len
        if msg_type in (HS_CLIENT_HELLO, HS_SERVER_HELLO):
            is_client = msg_type == HS_CLIENT_HELLO
            parsed = _parse_hello_tail(_Reader(buf, start + 4, body_end), is_client)
            info_kw: dict = dict(
                role="ClientHello" if is_client else "ServerHello",
                content_type=CT_HANDSHAKE,
                legacy_version=parsed.get("version", record_version),
                handshake_type=msg_type,
            )
            if is_client and "sni" in parsed:
                name, off, ln = parsed["sni"]
                try:
                    info_kw["sni_host"] = name.decode("ascii")
                except UnicodeDecodeError:
                    info_kw["sni_host"] = name.decode("latin-1")
                info_kw["sni_pieces"] = _stream_to_segments(hs.to_stream(off, ln), bounds)
            if not is_client:
                if "cipher_suite" not in parsed:
                    # ServerHello cut before the suite: not a usable ServerHello
                    info_kw["role"] = "Other"
                else:
                    info_kw["cipher_suite"] = parsed["cipher_suite"]
                    info_kw["selected_version"] = parsed.get("selected_version")
            infos.append(TlsHandshakeInfo(**info_kw))
        else:
            infos.append(TlsHandshakeInfo("Other", CT_HANDSHAKE, record_version, handshake_type=msg_type))
        if not complete:
            hs.consumed = len(buf)
            return
        hs.consumed = body_end


def parse_tls_records(payloads: Sequence[bytes]) -> list[TlsHandshakeInfo]:
    """Scan one direction's in-order payloads for TLS records.

    Record chains may start at any segment boundary, which catches TLS that
    begins after a plaintext prologue (STARTTLS).
    """
    bounds = [0]
    for p in payloads:
        bounds.append(bounds[-1] + len(p))
    stream = b"".join(payloads)
    infos: list[TlsHandshakeInfo] = []
    hs = _HandshakeBuffer()
    encrypted_hs = False
    pos = 0
    for boundary in bounds[:-1]:
        if boundary < pos:
            continue
        i = boundary
        while _valid_tls_header(stream, i):
            ctype = stream[i]
            version = stream[i + 1 : i + 3]
            length = (stream[i + 3] << 8) | stream[i + 4]
            body_start = i + 5
            body = stream[body_start : body_start + length]
            if ctype == CT_HANDSHAKE and not encrypted_hs:
                hs.append(body, body_start)
                _emit_handshake(hs, version, bounds, infos, final=False)
            else:
                infos.append(TlsHandshakeInfo("Other", ctype, version))
                if ctype == CT_CHANGE_CIPHER_SPEC:
                    encrypted_hs = True
            i = body_start + length
        pos = i
    if hs.consumed < len(hs.buf):
        _emit_handshake(hs, b"\x03\x01", bounds, infos, final=True)
    return infos


# --- DTLS ---------------------------------------------------------------


def _dtls_records(payload: bytes):
    i = 0
    while len(payload) - i >= 13:
        ctype = payload[i]
        version = payload[i + 1 : i + 3]
        if ctype not in TLS_CONTENT_TYPES or version not in DTLS_VERSIONS:
            return
        epoch = struct.unpack_from("!H", payload, i + 3)[0]
        length = struct.unpack_from("!H", payload, i + 11)[0]
        if length == 0 or i + 13 + length > len(payload):
            return
        yield ctype, version, epoch, payload[i + 13 : i + 13 + length]
        i += 13 + length


def parse_dtls_records(payloads: Sequence[bytes]) -> list[TlsHandshakeInfo]:
    infos = []
    for p in payloads:
        for ctype, version, epoch, body in _dtls_records(p):
            if ctype != CT_HANDSHAKE or epoch != 0 or len(body) < 12:
                infos.append(TlsHandshakeInfo("Other", ctype, version))
                continue
            msg_type = body[0]
            frag_off = int.from_bytes(body[6:9], "big")
            if msg_type in (HS_CLIENT_HELLO, HS_SERVER_HELLO) and frag_off == 0:
                is_client = msg_type == HS_CLIENT_HELLO
                parsed = _parse_hello_tail(_Reader(body, 12), is_client, dtls=True)
                kw: dict = dict(
                    role="ClientHello" if is_client else "ServerHello",
                    content_type=ctype,
                    legacy_version=parsed.get("version", version),
                    handshake_type=msg_type,
                )
                if is_client and "sni" in parsed:
                    kw["sni_host"] = parsed["sni"][0].decode("latin-1")
                if not is_client and "cipher_suite" in parsed:
                    kw["cipher_suite"] = parsed["cipher_suite"]
                elif not is_client:
                    kw["role"] = "Other"
                infos.append(TlsHandshakeInfo(**kw))
            else:
                infos.append(TlsHandshakeInfo("Other", ctype, version, handshake_type=msg_type))
    return infos


def is_dtls(payload: bytes) -> bool:
    return next(_dtls_records(payload), None) is not None


def is_quic_long_header(payload: bytes) -> bool:
    if len(payload) < 7 or payload[0] & 0xC0 != 0xC0:
        return False
    version = struct.unpack_from("!I", payload, 1)[0]
    if version not in QUIC_VERSIONS and (version >> 8) != 0xFF0000 and (version & 0xFFFFFFF0) != 0xFACEB000:
        return False
    dcid_len = payload[5]
    return dcid_len <= 20 and len(payload) >= 6 + dcid_len + 1


def detect_udp_encryption(session_payloads: Sequence[bytes]) -> Encryption:
    """Tell from its payloads whether a UDP session carries DTLS or QUIC."""
    for p in session_payloads:
        if is_dtls(p):
            return Encryption.DTLS
    # a recognized long header anywhere marks the session (short-header
    # packets alone carry no version and are not enough)
    for p in session_payloads:
        if is_quic_long_header(p):
            return Encryption.QUIC
    return Encryption.NONE


# --- TCP reassembly -----------------------------------------------------


@dataclass(frozen=True)
class Segment:
    position: int  # index into the packet list passed to reassemble()
    frame_offset: int  # where this segment's bytes start inside the frame
    data: bytes


def reassemble(direction: Sequence[ParsedPacket]) -> list[Segment]:
    """Order one TCP direction's payloads by sequence number.

    Duplicates and overlapping prefixes are discarded. The stream stops at
    the first gap.
    """
    base = None
    for pp in direction:
        if pp.tcp_seq is None:
            continue
        if pp.tcp_flags is not None and pp.tcp_flags & 0x02:
            base = (pp.tcp_seq + 1) & 0xFFFFFFFF
            break
    candidates = []
    for pos, pp in enumerate(direction):
        rng = pp.fields.payload
        if rng is None or pp.tcp_seq is None:
            continue
        if base is None:
            base = pp.tcp_seq
        rel = (pp.tcp_seq - base) & 0xFFFFFFFF
        if rel >= 0x80000000:
            # before the base: retransmitted pre-SYN data or wrap noise
            continue
        candidates.append((rel, pos, rng))
    candidates.sort(key=lambda c: (c[0], c[1]))
    out: list[Segment] = []
    expected = None
    for rel, pos, (off, length) in candidates:
        if expected is None:
            expected = rel
        if rel > expected:
            break
        end = rel + length
        if end <= expected:
            continue
        skip = expected - rel
        data = direction[pos].raw.data[off + skip : off + length]
        out.append(Segment(pos, off + skip, data))
        expected = end
    return out


def annotate_sni(parsed: list[ParsedPacket]) -> list[ParsedPacket]:
    """Attach SNI ranges found by reassembling each TCP flow.

    Per-frame parsing already finds a hostname that sits in one segment
    together with its ClientHello header. This pass also covers hellos
    split across segments: each frame gets the piece of the hostname it
    carries. Returns a new list in the same order.
    """
    flows: dict = {}
    for i, pp in enumerate(parsed):
        if pp.tuple is not None and pp.tuple.protocol == "TCP" and pp.fields.payload is not None:
            flows.setdefault(pp.tuple, []).append(i)
    out = list(parsed)
    for members in flows.values():
        direction = [parsed[i] for i in members]
        segs = reassemble(direction)
        if not any(_valid_tls_header(s.data, 0) for s in segs):
            continue
        for info in parse_tls_records([s.data for s in segs]):
            if info.role != "ClientHello" or not info.sni_pieces:
                continue
            for seg_idx, off, ln in info.sni_pieces:
                seg = segs[seg_idx]
                idx = members[seg.position]
                current = out[idx].fields.sni
                rng = (seg.frame_offset + off, ln)
                if current is None or current[1] < ln:
                    out[idx] = out[idx].with_sni(rng)
    return out
