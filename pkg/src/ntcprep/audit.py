"""Dataset encryption audit: per-session encryption status and cipher tallies."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .granularity import TrafficUnit, split_sessions
from .packet import ParsedPacket, parse_packet
from .pcapio import CaptureError, read_capture
from .tls import Encryption, detect_udp_encryption, parse_dtls_records, parse_tls_records, reassemble

log = logging.getLogger(__name__)

ALGORITHMS = (
    "AES-128-GCM",
    "AES-256-GCM",
    "CHACHA20-POLY1305",
    "AES-128-CBC",
    "AES-256-CBC",
    "3DES",
    "RC4",
    "OTHER",
)

# IANA code -> suite name. Algorithm buckets are derived from the name.
SUITE_NAMES: dict[int, str] = {
    0x0001: "TLS_RSA_WITH_NULL_MD5",
    0x0002: "TLS_RSA_WITH_NULL_SHA",
    0x0004: "TLS_RSA_WITH_RC4_128_MD5",
    0x0005: "TLS_RSA_WITH_RC4_128_SHA",
    0x000A: "TLS_RSA_WITH_3DES_EDE_CBC_SHA",
    0x0013: "TLS_DHE_DSS_WITH_3DES_EDE_CBC_SHA",
    0x0016: "TLS_DHE_RSA_WITH_3DES_EDE_CBC_SHA",
    0x002F: "TLS_RSA_WITH_AES_128_CBC_SHA",
    0x0032: "TLS_DHE_DSS_WITH_AES_128_CBC_SHA",
    0x0033: "TLS_DHE_RSA_WITH_AES_128_CBC_SHA",
    0x0035: "TLS_RSA_WITH_AES_256_CBC_SHA",
    0x0038: "TLS_DHE_DSS_WITH_AES_256_CBC_SHA",
    0x0039: "TLS_DHE_RSA_WITH_AES_256_CBC_SHA",
    0x003C: "TLS_RSA_WITH_AES_128_CBC_SHA256",
    0x003D: "TLS_RSA_WITH_AES_256_CBC_SHA256",
    0x0041: "TLS_RSA_WITH_CAMELLIA_128_CBC_SHA",
    0x0067: "TLS_DHE_RSA_WITH_AES_128_CBC_SHA256",
    0x006B: "TLS_DHE_RSA_WITH_AES_256_CBC_SHA256",
    0x0084: "TLS_RSA_WITH_CAMELLIA_256_CBC_SHA",
    0x008C: "TLS_PSK_WITH_AES_128_CBC_SHA",
    0x008D: "TLS_PSK_WITH_AES_256_CBC_SHA",
    0x009C: "TLS_RSA_WITH_AES_128_GCM_SHA256",
    0x009D: "TLS_RSA_WITH_AES_256_GCM_SHA384",
    0x009E: "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256",
    0x009F: "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384",
    0x00A8: "TLS_PSK_WITH_AES_128_GCM_SHA256",
    0x00A9: "TLS_PSK_WITH_AES_256_GCM_SHA384",
    0x1301: "TLS_AES_128_GCM_SHA256",
    0x1302: "TLS_AES_256_GCM_SHA384",
    0x1303: "TLS_CHACHA20_POLY1305_SHA256",
    0x1304: "TLS_AES_128_CCM_SHA256",
    0x1305: "TLS_AES_128_CCM_8_SHA256",
    0xC007: "TLS_ECDHE_ECDSA_WITH_RC4_128_SHA",
    0xC008: "TLS_ECDHE_ECDSA_WITH_3DES_EDE_CBC_SHA",
    0xC009: "TLS_ECDHE_ECDSA_WITH_AES_128_CBC_SHA",
    0xC00A: "TLS_ECDHE_ECDSA_WITH_AES_256_CBC_SHA",
    0xC011: "TLS_ECDHE_RSA_WITH_RC4_128_SHA",
    0xC012: "TLS_ECDHE_RSA_WITH_3DES_EDE_CBC_SHA",
    0xC013: "TLS_ECDHE_RSA_WITH_AES_128_CBC_SHA",
    0xC014: "TLS_ECDHE_RSA_WITH_AES_256_CBC_SHA",
    0xC023: "TLS_ECDHE_ECDSA_WITH_AES_128_CBC_SHA256",
    0xC024: "TLS_ECDHE_ECDSA_WITH_AES_256_CBC_SHA384",
    0xC027: "TLS_ECDHE_RSA_WITH_AES_128_CBC_SHA256",
    0xC028: "TLS_ECDHE_RSA_WITH_AES_256_CBC_SHA384",
    0xC02B: "TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256",
    0xC02C: "TLS_ECDHE_ECDSA_WITH_AES_256_GCM_SHA384",
    0xC02F: "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
    0xC030: "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384",
    0xCCA8: "TLS_ECDHE_RSA_WITH_CHACHA20_POLY1305_SHA256",
    0xCCA9: "TLS_ECDHE_ECDSA_WITH_CHACHA20_POLY1305_SHA256",
    0xCCAA: "TLS_DHE_RSA_WITH_CHACHA20_POLY1305_SHA256",
    0xCCAB: "TLS_PSK_WITH_CHACHA20_POLY1305_SHA256",
}

_NAME_MARKERS = (
    ("AES_128_GCM", "AES-128-GCM"),
    ("AES_256_GCM", "AES-256-GCM"),
    ("CHACHA20_POLY1305", "CHACHA20-POLY1305"),
    ("AES_128_CBC", "AES-128-CBC"),
    ("AES_256_CBC", "AES-256-CBC"),
    ("3DES_EDE_CBC", "3DES"),
    ("RC4_128", "RC4"),
)


def algorithm_of(code: int) -> str:
    name = SUITE_NAMES.get(code, "")
    for marker, algo in _NAME_MARKERS:
        if marker in name:
            return algo
    return "OTHER"


SUITE_REGISTRY: dict[int, tuple[str, str]] = {code: (name, algorithm_of(code)) for code, name in SUITE_NAMES.items()}


@dataclass
class Counts:
    total_sessions: int = 0
    unencrypted: int = 0
    encrypted: int = 0
    unknown: int = 0
    per_algorithm: dict[str, int] = field(default_factory=lambda: {a: 0 for a in ALGORITHMS})

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(
            self.total_sessions + other.total_sessions,
            self.unencrypted + other.unencrypted,
            self.encrypted + other.encrypted,
            self.unknown + other.unknown,
            {a: self.per_algorithm[a] + other.per_algorithm[a] for a in ALGORITHMS},
        )

    def check(self) -> None:
        assert self.encrypted + self.unencrypted == self.total_sessions
        assert self.unknown + sum(self.per_algorithm.values()) == self.encrypted

    def percentages(self) -> dict[str, float]:
        """Stacked-bar segments as percentages of all sessions."""
        total = self.total_sessions
        segs = {"unencrypted": self.unencrypted, "unknown": self.unknown, **self.per_algorithm}
        pct = {k: (100.0 * v / total if total else 0.0) for k, v in segs.items()}
        pct["encrypted"] = 100.0 * self.encrypted / total if total else 0.0
        return pct


@dataclass
class AuditStats(Counts):
    per_file: dict[str, Counts] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    # non-first IPv4 fragments per file; they carry no ports and join no session
    fragments: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_file(cls, name: str, counts: Counts, error: Optional[str] = None, fragments: int = 0) -> "AuditStats":
        stats = cls(
            counts.total_sessions,
            counts.unencrypted,
            counts.encrypted,
            counts.unknown,
            dict(counts.per_algorithm),
            per_file={name: counts},
            fragments={name: fragments},
        )
        if error:
            stats.errors[name] = error
        return stats

    def merge(self, other: "AuditStats") -> "AuditStats":
        base = Counts.__add__(self, other)
        return AuditStats(
            base.total_sessions,
            base.unencrypted,
            base.encrypted,
            base.unknown,
            base.per_algorithm,
            per_file={**self.per_file, **other.per_file},
            errors={**self.errors, **other.errors},
            fragments={**self.fragments, **other.fragments},
        )

    def aggregate(self) -> Counts:
        return Counts(self.total_sessions, self.unencrypted, self.encrypted, self.unknown, dict(self.per_algorithm))


def _directions(unit: TrafficUnit) -> tuple[list[ParsedPacket], list[ParsedPacket]]:
    a = unit.key.endpoint_a
    fwd, rev = [], []
    for p in unit.packets:
        (fwd if (p.tuple.src_ip, p.tuple.src_port) == a else rev).append(p)
    return fwd, rev


def _tls_infos(unit: TrafficUnit):
    for direction in _directions(unit):
        segs = reassemble(direction)
        yield parse_tls_records([s.data for s in segs])


def _udp_payloads(unit: TrafficUnit) -> list[bytes]:
    return [p.payload for p in unit.packets if p.payload]


def classify_session(unit: TrafficUnit) -> Encryption:
    if unit.protocol == "TCP":
        return Encryption.TLS if any(infos for infos in _tls_infos(unit)) else Encryption.NONE
    return detect_udp_encryption(_udp_payloads(unit))


def cipher_suite_of(unit: TrafficUnit, kind: Optional[Encryption] = None) -> Optional[int]:
    """Suite selected by the ServerHello, or None when it cannot be determined."""
    kind = kind or classify_session(unit)
    if kind is Encryption.TLS:
        for infos in _tls_infos(unit):
            for info in infos:
                if info.role == "ServerHello":
                    return info.cipher_suite
    elif kind is Encryption.DTLS:
        for info in parse_dtls_records(_udp_payloads(unit)):
            if info.role == "ServerHello":
                return info.cipher_suite
    return None


def audit_sessions(sessions: Iterable[TrafficUnit]) -> Counts:
    c = Counts()
    for unit in sessions:
        c.total_sessions += 1
        kind = classify_session(unit)
        if kind is Encryption.NONE:
            c.unencrypted += 1
            continue
        c.encrypted += 1
        suite = cipher_suite_of(unit, kind)
        if suite is None:
            c.unknown += 1
        else:
            c.per_algorithm[algorithm_of(suite)] += 1
    return c


def audit_file(path: str | Path) -> AuditStats:
    name = str(path)
    try:
        _, raw, err = read_capture(path)
    except (CaptureError, OSError) as exc:
        log.warning("%s: %s", name, exc)
        return AuditStats(errors={name: f"{type(exc).__name__}: {exc}"})
    parsed = [parse_packet(r) for r in raw]
    counts = audit_sessions(split_sessions(parsed).values())
    frags = sum(1 for p in parsed if p.fragment and p.tuple is None)
    error = f"{type(err).__name__}: {err}" if err else None
    return AuditStats.for_file(name, counts, error, frags)


def expand_inputs(inputs: Iterable[str | Path]) -> list[Path]:
    """Files as given plus every *.pcap / *.cap found under directories, sorted."""
    out: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            out.extend(sorted(q for q in p.rglob("*") if q.is_file() and q.suffix.lower() in (".pcap", ".cap")))
        else:
            out.append(p)
    return out


def audit_dataset(paths: Sequence[str | Path], workers: int = 1) -> AuditStats:
    stats = AuditStats()
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(audit_file, paths))
    else:
        results = [audit_file(p) for p in paths]
    for r in results:
        stats = stats.merge(r)
    return stats


CSV_COLUMNS = ("file", "total", "unencrypted", "encrypted", "unknown") + ALGORITHMS
AGGREGATE_ROW = "ALL"


def _row(name: str, c: Counts) -> list:
    return [name, c.total_sessions, c.unencrypted, c.encrypted, c.unknown] + [c.per_algorithm[a] for a in ALGORITHMS]


def render_report(stats: AuditStats, csv_path: Optional[str | Path] = None, json_path: Optional[str | Path] = None) -> dict:
    """Write the CSV and/or JSON report; returns the JSON document."""
    files = sorted(stats.per_file)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for name in files:
                w.writerow(_row(name, stats.per_file[name]))
            w.writerow(_row(AGGREGATE_ROW, stats.aggregate()))
    agg = stats.aggregate()
    doc = {
        "total_sessions": agg.total_sessions,
        "unencrypted": agg.unencrypted,
        "encrypted": agg.encrypted,
        "unknown": agg.unknown,
        "per_algorithm": agg.per_algorithm,
        "percentages": {k: round(v, 4) for k, v in agg.percentages().items()},
        "per_file": {
            name: {
                **asdict(stats.per_file[name]),
                "percentages": {k: round(v, 4) for k, v in stats.per_file[name].percentages().items()},
                "fragments": stats.fragments.get(name, 0),
            }
            for name in files
        },
        "errors": dict(sorted(stats.errors.items())),
    }
    if json_path is not None:
        Path(json_path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def default_workers() -> int:
    return os.cpu_count() or 1
