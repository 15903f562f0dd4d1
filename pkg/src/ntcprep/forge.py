"""Synthetic frame and conversation builder.

Used to produce fixture captures with valid checksums and realistic header
layouts.
"""

from __future__ import annotations

import os
import random
import socket
import struct
from dataclasses import dataclass, field
from typing import Optional

from .pcapio import RawPacket

TCP_FLAGS = {"F": 0x01, "S": 0x02, "R": 0x04, "P": 0x08, "A": 0x10}


def checksum16(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def mac(s: str) -> bytes:
    return bytes(int(x, 16) for x in s.split(":"))


def ethernet(src: str, dst: str, ethertype: int, payload: bytes, vlan: Optional[int] = None) -> bytes:
    hdr = mac(dst) + mac(src)
    if vlan is not None:
        hdr += struct.pack("!HH", 0x8100, vlan & 0x0FFF)
    return hdr + struct.pack("!H", ethertype) + payload


def ipv4(
    src: str,
    dst: str,
    proto: int,
    payload: bytes,
    ident: int = 0,
    ttl: int = 64,
    flags_frag: int = 0x4000,
    options: bytes = b"",
) -> bytes:
    ihl = 5 + len(options) // 4
    hdr = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | ihl,
        0,
        ihl * 4 + len(payload),
        ident & 0xFFFF,
        flags_frag,
        ttl,
        proto,
        0,
        socket.inet_aton(src),
        socket.inet_aton(dst),
    ) + options
    csum = checksum16(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:] + payload


def tcp(
    src: str,
    dst: str,
    sport: int,
    dport: int,
    seq: int,
    ack: int,
    flags: str,
    payload: bytes = b"",
    window: int = 64240,
    options: bytes = b"",
) -> bytes:
    if len(options) % 4:
        options += b"\x00" * (4 - len(options) % 4)
    doff = 5 + len(options) // 4
    fl = sum(TCP_FLAGS[c] for c in flags)
    hdr = struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, doff << 4, fl, window, 0, 0)
    seg = hdr + options + payload
    pseudo = socket.inet_aton(src) + socket.inet_aton(dst) + struct.pack("!BBH", 0, 6, len(seg))
    csum = checksum16(pseudo + seg)
    return seg[:16] + struct.pack("!H", csum) + seg[18:]


def udp(src: str, dst: str, sport: int, dport: int, payload: bytes) -> bytes:
    length = 8 + len(payload)
    seg = struct.pack("!HHHH", sport, dport, length, 0) + payload
    pseudo = socket.inet_aton(src) + socket.inet_aton(dst) + struct.pack("!BBH", 0, 17, length)
    csum = checksum16(pseudo + seg) or 0xFFFF
    return seg[:6] + struct.pack("!H", csum) + seg[8:]


def tcp_options(mss: Optional[int] = 1460, ts: Optional[tuple[int, int]] = None, wscale: Optional[int] = None) -> bytes:
    opts = b""
    if mss is not None:
        opts += struct.pack("!BBH", 2, 4, mss)
    if ts is not None:
        opts += b"\x01\x01" + struct.pack("!BBII", 8, 10, ts[0], ts[1])
    if wscale is not None:
        opts += b"\x01" + struct.pack("!BBB", 3, 3, wscale)
    return opts


# --- TLS ----------------------------------------------------------------


def tls_record(content_type: int, body: bytes, version: bytes = b"\x03\x03") -> bytes:
    return struct.pack("!B2sH", content_type, version, len(body)) + body


def handshake(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + len(body).to_bytes(3, "big") + body


def _ext(etype: int, data: bytes) -> bytes:
    return struct.pack("!HH", etype, len(data)) + data


def sni_extension(host: str) -> bytes:
    name = host.encode("ascii")
    entry = b"\x00" + struct.pack("!H", len(name)) + name
    return _ext(0, struct.pack("!H", len(entry)) + entry)


DEFAULT_OFFER = (0x1301, 0x1302, 0x1303, 0xC02B, 0xC02F, 0xC02C, 0xC030, 0xCCA9, 0xCCA8, 0xC013, 0xC014, 0x009C, 0x002F)


def client_hello(
    host: Optional[str],
    suites=DEFAULT_OFFER,
    rng: Optional[random.Random] = None,
    sni_first: bool = True,
    dtls: bool = False,
) -> bytes:
    """ClientHello handshake body (without handshake header)."""
    rng = rng or random.Random(0)
    exts = []
    if host is not None:
        exts.append(sni_extension(host))
    exts.append(_ext(10, struct.pack("!H", 6) + b"\x00\x1d\x00\x17\x00\x18"))  # supported_groups
    exts.append(_ext(13, struct.pack("!H", 4) + b"\x04\x03\x08\x04"))  # signature_algorithms
    exts.append(_ext(43, b"\x04\x03\x04\x03\x03"))  # supported_versions
    exts.append(_ext(51, struct.pack("!HHH", 36, 0x001D, 32) + rng.randbytes(32)))  # key_share
    exts.append(_ext(16, struct.pack("!H", 3) + b"\x02h2"))  # ALPN
    if not sni_first and host is not None:
        exts.append(exts.pop(0))
    ext_blob = b"".join(exts)
    body = (b"\xfe\xfd" if dtls else b"\x03\x03") + rng.randbytes(32)
    body += b"\x20" + rng.randbytes(32)
    if dtls:
        body += b"\x00"  # empty cookie
    body += struct.pack("!H", 2 * len(suites)) + b"".join(struct.pack("!H", s) for s in suites)
    body += b"\x01\x00"
    body += struct.pack("!H", len(ext_blob)) + ext_blob
    return body


def server_hello(suite: int, tls13: bool = True, rng: Optional[random.Random] = None, dtls: bool = False) -> bytes:
    rng = rng or random.Random(1)
    body = (b"\xfe\xfd" if dtls else b"\x03\x03") + rng.randbytes(32) + b"\x20" + rng.randbytes(32)
    body += struct.pack("!H", suite) + b"\x00"
    exts = b""
    if tls13:
        exts += _ext(43, b"\x03\x04")
        exts += _ext(51, struct.pack("!HH", 0x001D, 32) + rng.randbytes(32))
    body += struct.pack("!H", len(exts)) + exts
    return body


def client_hello_record(host: Optional[str], **kw) -> bytes:
    return tls_record(22, handshake(1, client_hello(host, **kw)), b"\x03\x01")


def server_flight(suite: int, tls13: bool = True, rng: Optional[random.Random] = None) -> bytes:
    rng = rng or random.Random(2)
    out = tls_record(22, handshake(2, server_hello(suite, tls13, rng)))
    if tls13:
        out += tls_record(20, b"\x01")
        out += tls_record(23, rng.randbytes(rng.randint(600, 1400)))
    else:
        out += tls_record(22, handshake(11, rng.randbytes(rng.randint(600, 1200))))
        out += tls_record(22, handshake(14, b""))
    return out


def app_data(size: int, rng: Optional[random.Random] = None) -> bytes:
    rng = rng or random.Random(3)
    return tls_record(23, rng.randbytes(size))


def dtls_record(content_type: int, body: bytes, epoch: int = 0, seq: int = 0, version: bytes = b"\xfe\xfd") -> bytes:
    return struct.pack("!B2sH", content_type, version, epoch) + seq.to_bytes(6, "big") + struct.pack("!H", len(body)) + body


def dtls_handshake(msg_type: int, body: bytes, message_seq: int = 0) -> bytes:
    n = len(body).to_bytes(3, "big")
    return bytes([msg_type]) + n + struct.pack("!H", message_seq) + b"\x00\x00\x00" + n + body


def quic_initial(version: int = 1, rng: Optional[random.Random] = None, size: int = 1200) -> bytes:
    rng = rng or random.Random(4)
    dcid = rng.randbytes(8)
    scid = rng.randbytes(8)
    hdr = bytes([0xC3]) + struct.pack("!I", version) + bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid
    hdr += b"\x00"  # token length
    rest = size - len(hdr) - 2
    hdr += struct.pack("!H", 0x4000 | rest)
    return hdr + rng.randbytes(rest)


def quic_short(size: int = 100, rng: Optional[random.Random] = None) -> bytes:
    rng = rng or random.Random(5)
    return bytes([0x40 | rng.randint(0, 0x3F)]) + rng.randbytes(size - 1)


def dns_query(name: str, txid: int = 0x1234) -> bytes:
    q = b"".join(bytes([len(label)]) + label.encode() for label in name.split(".")) + b"\x00"
    return struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, 0) + q + struct.pack("!HH", 1, 1)


def dns_response(name: str, txid: int = 0x1234, addr: str = "93.184.216.34") -> bytes:
    q = b"".join(bytes([len(label)]) + label.encode() for label in name.split(".")) + b"\x00"
    ans = b"\xc0\x0c" + struct.pack("!HHIH", 1, 1, 300, 4) + socket.inet_aton(addr)
    return struct.pack("!HHHHHH", txid, 0x8180, 1, 1, 0, 0) + q + struct.pack("!HH", 1, 1) + ans


def http_get(host: str, path: str = "/") -> bytes:
    return f"GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: forge\r\nAccept: */*\r\n\r\n".encode()


def http_response(body_len: int = 512) -> bytes:
    return (f"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {body_len}\r\n\r\n" + "x" * body_len).encode()


# --- conversations ------------------------------------------------------


@dataclass
class Clock:
    t_ns: int = 1_600_000_000 * 1_000_000_000
    step_ns: int = 500_000

    def tick(self, ns: Optional[int] = None) -> int:
        self.t_ns += self.step_ns if ns is None else ns
        return self.t_ns


def raw_packet(index: int, t_ns: int, frame: bytes) -> RawPacket:
    return RawPacket(index, t_ns // 1_000_000_000, (t_ns % 1_000_000_000) // 1000, len(frame), frame)


@dataclass
class Capture:
    """Accumulates frames from any number of conversations in time order."""

    clock: Clock = field(default_factory=Clock)
    frames: list[tuple[int, bytes]] = field(default_factory=list)

    def add(self, frame: bytes, gap_ns: Optional[int] = None) -> None:
        self.frames.append((self.clock.tick(gap_ns), frame))

    def packets(self) -> list[RawPacket]:
        ordered = sorted(enumerate(self.frames), key=lambda item: (item[1][0], item[0]))
        return [raw_packet(i, t, f) for i, (_, (t, f)) in enumerate(ordered)]


@dataclass
class TcpConversation:
    capture: Capture
    client: tuple[str, int]
    server: tuple[str, int]
    client_mac: str = "02:00:00:00:00:01"
    server_mac: str = "02:00:00:00:00:02"
    timestamps: bool = True
    rng: random.Random = field(default_factory=lambda: random.Random(7))
    mss: int = 1460

    def __post_init__(self):
        self.seq = {True: self.rng.getrandbits(32), False: self.rng.getrandbits(32)}
        self.ipid = {True: self.rng.getrandbits(16), False: self.rng.getrandbits(16)}
        self.tsval = {True: self.rng.getrandbits(31), False: self.rng.getrandbits(31)}
        self.acked = {True: 0, False: 0}

    def _frame(self, from_client: bool, flags: str, payload: bytes = b"", opts: bytes = b"") -> bytes:
        src, dst = (self.client, self.server) if from_client else (self.server, self.client)
        smac, dmac = (self.client_mac, self.server_mac) if from_client else (self.server_mac, self.client_mac)
        if self.timestamps and not opts:
            self.tsval[from_client] += 1
            opts = b"\x01\x01" + struct.pack("!BBII", 8, 10, self.tsval[from_client], self.tsval[not from_client])
        ack = self.acked[from_client] if "A" in flags else 0
        seg = tcp(src[0], dst[0], src[1], dst[1], self.seq[from_client], ack, flags, payload, options=opts)
        self.ipid[from_client] = (self.ipid[from_client] + 1) & 0xFFFF
        pkt = ipv4(src[0], dst[0], 6, seg, ident=self.ipid[from_client])
        return ethernet(smac, dmac, 0x0800, pkt)

    def _advance(self, from_client: bool, n: int) -> None:
        self.seq[from_client] = (self.seq[from_client] + n) & 0xFFFFFFFF
        self.acked[not from_client] = self.seq[from_client]

    def handshake(self) -> "TcpConversation":
        ts = (self.tsval[True], 0) if self.timestamps else None
        self.capture.add(self._frame(True, "S", opts=tcp_options(self.mss, ts, 7)))
        self._advance(True, 1)
        ts = (self.tsval[False], self.tsval[True]) if self.timestamps else None
        self.capture.add(self._frame(False, "SA", opts=tcp_options(self.mss, ts, 7)))
        self._advance(False, 1)
        self.capture.add(self._frame(True, "A"))
        return self

    def send(self, from_client: bool, data: bytes, gap_ns: Optional[int] = None) -> "TcpConversation":
        for i in range(0, len(data), self.mss):
            chunk = data[i : i + self.mss]
            self.capture.add(self._frame(from_client, "PA", chunk), gap_ns if i == 0 else None)
            self._advance(from_client, len(chunk))
        return self

    def ack(self, from_client: bool) -> "TcpConversation":
        self.capture.add(self._frame(from_client, "A"))
        return self

    def close(self) -> "TcpConversation":
        self.capture.add(self._frame(True, "FA"))
        self._advance(True, 1)
        self.capture.add(self._frame(False, "FA"))
        self._advance(False, 1)
        self.capture.add(self._frame(True, "A"))
        return self


def udp_frame(src: tuple[str, int], dst: tuple[str, int], payload: bytes, ident: int = 1, smac="02:00:00:00:00:01", dmac="02:00:00:00:00:02") -> bytes:
    return ethernet(smac, dmac, 0x0800, ipv4(src[0], dst[0], 17, udp(src[0], dst[0], src[1], dst[1], payload), ident=ident))


def arp_frame() -> bytes:
    body = struct.pack("!HHBBH", 1, 0x0800, 6, 4, 1) + mac("02:00:00:00:00:01") + socket.inet_aton("10.0.0.1")
    body += b"\x00" * 6 + socket.inet_aton("10.0.0.2")
    return ethernet("02:00:00:00:00:01", "ff:ff:ff:ff:ff:ff", 0x0806, body)


# --- canned sessions ----------------------------------------------------


def tls_session(
    cap: Capture,
    client: tuple[str, int],
    server: tuple[str, int],
    host: Optional[str],
    suite: int,
    tls13: bool = True,
    app_records: int = 3,
    rng: Optional[random.Random] = None,
) -> TcpConversation:
    rng = rng or random.Random(hash((client, server, host, suite)) & 0xFFFF)
    conv = TcpConversation(cap, client, server, rng=rng).handshake()
    offer = DEFAULT_OFFER if tls13 else tuple(s for s in DEFAULT_OFFER if s < 0x1300) + (suite,)
    conv.send(True, client_hello_record(host, suites=offer, rng=rng))
    conv.send(False, server_flight(suite, tls13, rng))
    if not tls13:
        conv.send(True, tls_record(22, handshake(16, rng.randbytes(66))) + tls_record(20, b"\x01") + tls_record(22, rng.randbytes(40)))
        conv.send(False, tls_record(20, b"\x01") + tls_record(22, rng.randbytes(40)))
    for _ in range(app_records):
        conv.send(True, app_data(rng.randint(40, 300), rng))
        conv.send(False, app_data(rng.randint(200, 3000), rng))
    conv.close()
    return conv


def resumed_tls_session(cap: Capture, client, server, rng: Optional[random.Random] = None) -> TcpConversation:
    """Encrypted records only: the capture starts after the handshake."""
    rng = rng or random.Random(11)
    conv = TcpConversation(cap, client, server, rng=rng)
    for _ in range(3):
        conv.send(True, app_data(rng.randint(40, 200), rng))
        conv.send(False, app_data(rng.randint(200, 1500), rng))
    return conv


def http_session(cap: Capture, client, server, host: str = "example.org", rng=None) -> TcpConversation:
    conv = TcpConversation(cap, client, server, rng=rng or random.Random(13)).handshake()
    conv.send(True, http_get(host)).send(False, http_response(900)).close()
    return conv


def dns_exchange(cap: Capture, client, server, name: str = "example.com", txid: int = 0x4242) -> None:
    cap.add(udp_frame(client, server, dns_query(name, txid)))
    cap.add(udp_frame(server, client, dns_response(name, txid), smac="02:00:00:00:00:02", dmac="02:00:00:00:00:01"))


def quic_session(cap: Capture, client, server, rng=None, short_packets: int = 4) -> None:
    rng = rng or random.Random(17)
    cap.add(udp_frame(client, server, quic_initial(1, rng)))
    cap.add(udp_frame(server, client, quic_initial(1, rng, 1000), smac="02:00:00:00:00:02", dmac="02:00:00:00:00:01"))
    for i in range(short_packets):
        src, dst = (client, server) if i % 2 == 0 else (server, client)
        cap.add(udp_frame(src, dst, quic_short(rng.randint(40, 1200), rng)))


def dtls_session(cap: Capture, client, server, suite: int = 0xC02B, host: Optional[str] = "dtls.example", rng=None) -> None:
    rng = rng or random.Random(19)
    ch = dtls_record(22, dtls_handshake(1, client_hello(host, suites=(0xC02B, 0xC02F, 0xC00A), rng=rng, dtls=True)))
    cap.add(udp_frame(client, server, ch))
    sh = dtls_record(22, dtls_handshake(2, server_hello(suite, tls13=False, rng=rng, dtls=True)), seq=0)
    cap.add(udp_frame(server, client, sh, smac="02:00:00:00:00:02", dmac="02:00:00:00:00:01"))
    for i in range(3):
        cap.add(udp_frame(client, server, dtls_record(23, rng.randbytes(rng.randint(50, 400)), epoch=1, seq=i + 1)))


def random_hostname(rng: random.Random) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    labels = [
        "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 20))) for _ in range(rng.randint(1, 4))
    ]
    return ".".join(labels + [rng.choice(["com", "net", "org", "io", "dev"])])


def write_demo_corpus(out_dir: str, seed: int = 0) -> list[str]:
    """A small mixed corpus for trying the CLI."""
    from .pcapio import CaptureMeta, write_capture

    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(seed)
    paths = []
    hosts = ["alpha.example.com", "beta.example.net"]
    for i in range(8):
        cap = Capture()
        host = hosts[i % 2]
        for j in range(3):
            suite = (0x1301, 0x1302, 0x1303)[(i + j) % 3]
            tls_session(cap, (f"10.0.{i}.2", 40000 + j), ("93.184.216.34", 443), host, suite, rng=random.Random(rng.random()))
        dns_exchange(cap, (f"10.0.{i}.2", 53000 + i), ("10.0.0.53", 53), host)
        http_session(cap, (f"10.0.{i}.2", 41000), ("93.184.216.80", 80))
        path = os.path.join(out_dir, f"capture_{i:02d}.pcap")
        write_capture(CaptureMeta(), cap.packets(), path)
        paths.append(path)
    return paths
