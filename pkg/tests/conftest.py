from __future__ import annotations

import random
import ssl
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ntcprep import forge  # noqa: E402
from ntcprep.pcapio import CaptureMeta, write_capture  # noqa: E402

import oracles  # noqa: E402

TLS13_SUITES = (0x1301, 0x1302, 0x1303)
LEGACY_SUITES = (0xC013, 0x0035, 0x000A, 0x0005, 0xC02F)


def replay(cap: forge.Capture, client, server, flights, rng: random.Random, handshake: bool = True):
    conv = forge.TcpConversation(cap, client, server, rng=rng)
    if handshake:
        conv.handshake()
    for from_client, data in flights:
        conv.send(from_client, data)
    conv.close()
    return conv


def build_corpus(out_dir: Path, n_files: int = 24, seed: int = 1) -> list[Path]:
    """Mixed corpus of plaintext and encrypted sessions over TCP and UDP.

    Each file draws a different mix so per-file counts vary.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    real13 = oracles.tls_loopback("real13.example")[0]
    real12 = oracles.tls_loopback("real12.example", ssl.TLSVersion.TLSv1_2, "ECDHE-ECDSA-AES128-SHA")[0]
    paths = []
    for i in range(n_files):
        cap = forge.Capture()
        host = f"10.{i}.0.2"
        port = iter(range(40000, 41000))
        kinds = ["http", "dns", "tls13", "tls12", "resumed", "quic", "dtls", "real13", "real12", "arp", "retx"]
        picked = [k for k in kinds if rng.random() < 0.55] or ["tls13"]
        for kind in picked:
            r = random.Random(rng.random())
            c = (host, next(port))
            if kind == "http":
                forge.http_session(cap, c, ("93.184.216.80", 80), rng=r)
            elif kind == "dns":
                forge.dns_exchange(cap, (host, 53000 + i), ("10.0.0.53", 53), forge.random_hostname(r), r.getrandbits(16))
            elif kind == "tls13":
                suite = TLS13_SUITES[r.randrange(3)]
                srv_port = r.choice((443, 8443, 993))
                forge.tls_session(cap, c, ("93.184.216.34", srv_port), forge.random_hostname(r), suite, rng=r)
            elif kind == "tls12":
                forge.tls_session(cap, c, ("93.184.216.35", 443), forge.random_hostname(r), r.choice(LEGACY_SUITES), tls13=False, rng=r)
            elif kind == "resumed":
                forge.resumed_tls_session(cap, c, ("93.184.216.36", 443), rng=r)
            elif kind == "quic":
                forge.quic_session(cap, (host, 50000 + i), ("142.250.0.1", 443), rng=r)
            elif kind == "dtls":
                forge.dtls_session(cap, (host, 51000 + i), ("10.9.9.9", 4433), suite=r.choice((0xC02B, 0xC02F, 0xC00A)), rng=r)
            elif kind == "real13":
                replay(cap, c, ("198.51.100.7", 443), real13, r)
            elif kind == "real12":
                replay(cap, c, ("198.51.100.8", 443), real12, r)
            elif kind == "arp":
                cap.add(forge.arp_frame())
            elif kind == "retx":
                # client hello sent twice (retransmission) on a nonstandard port
                conv = forge.TcpConversation(cap, c, ("203.0.113.9", 9999), rng=r).handshake()
                hello = forge.client_hello_record(forge.random_hostname(r))
                seq = conv.seq[True]
                conv.send(True, hello)
                conv.seq[True] = seq
                conv.send(True, hello)
                conv.send(False, forge.server_flight(0x1301, True, r))
        path = out_dir / f"fixture_{i:02d}.pcap"
        write_capture(CaptureMeta(), cap.packets(), path)
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> list[Path]:
    return build_corpus(tmp_path_factory.mktemp("corpus"))


def build_four_session(out_dir: Path) -> list[Path]:
    """Three files holding four sessions.

    a.pcap: TLS 1.3 with suite 0x1301.
    b.pcap: TLS 1.3 with suite 0x1302, plus a plain HTTP exchange.
    c.pcap: application-data records only, the handshake was never captured.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(4)
    a, b, c = forge.Capture(), forge.Capture(), forge.Capture()
    forge.tls_session(a, ("10.0.0.1", 40001), ("93.184.216.34", 443), "a.example", 0x1301, rng=rng)
    forge.tls_session(b, ("10.0.0.1", 40002), ("93.184.216.34", 443), "b.example", 0x1302, rng=rng)
    forge.http_session(b, ("10.0.0.1", 40003), ("93.184.216.80", 80), rng=rng)
    conv = forge.TcpConversation(c, ("10.0.0.1", 40004), ("93.184.216.34", 443), rng=rng)
    conv.send(True, forge.app_data(200, rng)).send(False, forge.app_data(900, rng)).close()
    paths = []
    for name, cap in (("a.pcap", a), ("b.pcap", b), ("c.pcap", c)):
        write_capture(CaptureMeta(), cap.packets(), out_dir / name)
        paths.append(out_dir / name)
    return paths


@pytest.fixture
def four_session(tmp_path) -> list[Path]:
    return build_four_session(tmp_path / "fixtures")


def pytest_terminal_summary(terminalreporter):
    import checks

    if checks.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in checks.RESULTS:
            terminalreporter.write_line(line)
