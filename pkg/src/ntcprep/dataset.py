"""From captured sessions to labeled, session-disjoint sample bundles.

Record files use a fixed little-endian layout so that any consumer can read
them without this package::

    b"NTCS" | u16 version (=1) | u16 label index | u32 sample length | bytes

One record file is written per split, next to an index CSV that locates
every record. A JSON manifest records the configuration together with the
SHA-256 digest of each file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .audit import classify_session
from .extraction import ExtractionSpec, IncompatibleSpec, extract, spans_to_fields
from .granularity import DEFAULT_BURST_GAP, TrafficUnit, split_sessions, sub_units
from .occlusion import OcclusionSeed, applicability, apply_strategy, get_strategy
from .packet import parse_all
from .pcapio import read_capture
from .tls import Encryption, parse_tls_records, reassemble

log = logging.getLogger(__name__)

RECORD_MAGIC = b"NTCS"
RECORD_VERSION = 1
RECORD_HEADER = struct.Struct("<4sHHI")
FORMAT_VERSION = 1

# DNS, mDNS, LLMNR, NTP, DHCP, NetBIOS, SSDP
NOISE_PORTS = frozenset({53, 5353, 5355, 123, 67, 68, 137, 138, 1900})


class ClassTooSmall(ValueError):
    def __init__(self, label: str, sessions: int, splits: int):
        super().__init__(f"class {label!r} has {sessions} session(s) for {splits} splits")
        self.label = label
        self.sessions = sessions
        self.splits = splits


class IoFailure(OSError):
    pass


@dataclass
class LabeledSession:
    unit: TrafficUnit
    label: str
    label_source: str = "Sni"  # Sni | FileName | Manual
    sni_conflict: bool = False
    source: str = ""

    def __post_init__(self):
        if not self.label:
            raise ValueError("label must be non-empty")

    @property
    def session_id(self) -> str:
        return session_id(self.source, self.unit)


def session_id(source: str, unit: TrafficUnit) -> str:
    (ia, pa), (ib, pb) = unit.key.endpoint_a, unit.key.endpoint_b
    return f"{Path(source).name}:{unit.key.protocol}:{ia}:{pa}-{ib}:{pb}"


@dataclass
class SourcedSession:
    """A session together with the capture it came from."""

    unit: TrafficUnit
    source: str = ""

    @property
    def session_id(self) -> str:
        return session_id(self.source, self.unit)


def load_sessions(paths: Iterable[str | Path]) -> list[SourcedSession]:
    """Parse captures and split them into sessions, tolerating truncated files."""
    out = []
    for path in paths:
        _, raw, err = read_capture(path)
        if err is not None:
            log.warning("%s: %s (kept %d packets)", path, err, len(raw))
        parsed = parse_all(raw)
        out.extend(SourcedSession(unit, str(path)) for unit in split_sessions(parsed).values())
    return out


# --- labeling -----------------------------------------------------------


def session_snis(unit: TrafficUnit) -> list[str]:
    """Every ClientHello SNI hostname seen in the session, in stream order."""
    if unit.protocol != "TCP":
        return []
    by_dir: dict[tuple, list] = {}
    for p in unit.packets:
        by_dir.setdefault((p.tuple.src_ip, p.tuple.src_port), []).append(p)
    a = unit.key.endpoint_a
    hosts = []
    for ep in sorted(by_dir, key=lambda e: e != a):
        segs = reassemble(by_dir[ep])
        for info in parse_tls_records([s.data for s in segs]):
            if info.role == "ClientHello" and info.sni_host:
                hosts.append(info.sni_host)
    return hosts


def collapse_host(host: str) -> str:
    """Keep the last two labels: ``a.b.example.com`` -> ``example.com``."""
    labels = host.rstrip(".").split(".")
    return ".".join(labels[-2:])


def label_by_sni(sessions: Sequence, collapse_subdomains: bool = False) -> tuple[list[LabeledSession], list]:
    """Label sessions by their first ClientHello SNI.

    Accepts bare TrafficUnits or SourcedSessions. Sessions whose hellos carry
    different hostnames keep the first and are flagged ``sni_conflict``.
    """
    labeled, unlabeled = [], []
    for s in sessions:
        unit, source = (s.unit, s.source) if isinstance(s, SourcedSession) else (s, "")
        hosts = session_snis(unit)
        if not hosts:
            unlabeled.append(s)
            continue
        if collapse_subdomains:
            hosts = [collapse_host(h) for h in hosts]
        conflict = len(set(hosts)) > 1
        labeled.append(LabeledSession(unit, hosts[0], "Sni", conflict, source))
    return labeled, unlabeled


def _ports(unit: TrafficUnit) -> set[int]:
    (_, pa), (_, pb) = unit.key.endpoint_a, unit.key.endpoint_b
    return {pa, pb}


def filter_noise(sessions: Sequence) -> list:
    """Drop unencrypted sessions and infrastructure chatter (DNS, NTP, ...)."""
    out = []
    for s in sessions:
        unit = s.unit if hasattr(s, "unit") else s
        if _ports(unit) & NOISE_PORTS:
            continue
        if classify_session(unit) is Encryption.NONE:
            continue
        out.append(s)
    return out


def write_label_csv(labeled: Sequence[LabeledSession], path: str | Path) -> None:
    rows = sorted(labeled, key=lambda ls: ls.session_id)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "session", "label", "label_source", "sni_conflict"])
        for ls in rows:
            w.writerow([Path(ls.source).name, str(ls.unit.key), ls.label, ls.label_source, int(ls.sni_conflict)])


# --- splitting ----------------------------------------------------------


def split_names(k: int) -> tuple[str, ...]:
    if k == 2:
        return ("train", "test")
    if k == 3:
        return ("train", "val", "test")
    return tuple(f"split{i}" for i in range(k))


def _apportion(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; ties go to the earlier split."""
    # exact rationals so that e.g. 0.29 * 100 is 29, not 28.999...
    raw = [Fraction(r).limit_denominator(10**9) * total for r in ratios]
    counts = [int(x) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


@dataclass
class SplitAssignment:
    names: tuple[str, ...]
    ratios: tuple[float, ...]
    seed: int
    by_session: dict[str, str] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)

    def sessions_in(self, split: str) -> list[str]:
        return sorted(sid for sid, s in self.by_session.items() if s == split)


def split_train_test(
    labeled: Sequence[LabeledSession],
    ratios: Sequence[float],
    seed: int,
    allow_small: bool = False,
    strict: bool = False,
) -> SplitAssignment:
    """Stratified, session-level split.

    Each class is shuffled with its own generator seeded from ``seed`` and the
    label, so adding a class never perturbs the others. A class with fewer
    sessions than splits is dropped (and reported) unless ``allow_small``;
    with ``strict`` it raises :class:`ClassTooSmall` instead.
    """
    ratios = tuple(float(r) for r in ratios)
    if not ratios or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    names = split_names(len(ratios))
    result = SplitAssignment(names, ratios, seed)
    by_class: dict[str, list[str]] = {}
    for ls in labeled:
        by_class.setdefault(ls.label, []).append(ls.session_id)
    for label in sorted(by_class):
        ids = sorted(set(by_class[label]))
        if len(ids) < len(ratios) and not allow_small:
            if strict:
                raise ClassTooSmall(label, len(ids), len(ratios))
            log.warning("%s", ClassTooSmall(label, len(ids), len(ratios)))
            result.dropped[label] = len(ids)
            continue
        random.Random(f"{seed}:{label}").shuffle(ids)
        start = 0
        for name, count in zip(names, _apportion(len(ids), ratios)):
            for sid in ids[start : start + count]:
                result.by_session[sid] = name
            start += count
    return result


# --- export -------------------------------------------------------------


@dataclass
class DatasetBundle:
    out_dir: Path
    manifest: dict
    record_files: dict[str, Path]

    @property
    def digests(self) -> dict[str, str]:
        return dict(self.manifest["files"])


def encode_record(label: int, data: bytes) -> bytes:
    return RECORD_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, label, len(data)) + data


def read_records(path: str | Path) -> list[tuple[int, bytes]]:
    blob = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(blob):
        if pos + RECORD_HEADER.size > len(blob):
            raise ValueError(f"{path}: truncated record header at byte {pos}")
        magic, version, label, length = RECORD_HEADER.unpack_from(blob, pos)
        if magic != RECORD_MAGIC or version != RECORD_VERSION:
            raise ValueError(f"{path}: bad record header at byte {pos}")
        pos += RECORD_HEADER.size
        if pos + length > len(blob):
            raise ValueError(f"{path}: truncated record body at byte {pos}")
        out.append((label, blob[pos : pos + length]))
        pos += length
    return out


def _session_records(job) -> list[tuple[str, str, int, bytes]]:
    """(session id, unit id, window, bytes) for every sample of one session."""
    sid, unit, spec, strategy_id, granularity, gap, seed = job
    strategy = get_strategy(strategy_id)
    out = []
    for sub in sub_units(unit, granularity, gap):
        for sample in extract(sub, spec):
            oseed = OcclusionSeed(seed, sid, sub.unit_id, sample.window_index)
            occluded = apply_strategy(sample, spans_to_fields(sample, sub.packets), strategy, oseed, spec.pad_byte)
            out.append((sid, sub.unit_id, sample.window_index, occluded.data))
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def check_applicable(strategy_id: str, granularity: str, spec: ExtractionSpec) -> None:
    if not applicability(strategy_id, granularity, spec):
        raise IncompatibleSpec(
            f"strategy {strategy_id} is not applicable to {granularity} granularity with "
            f"{spec.strategy}/{spec.selection} extraction"
        )


def export_bundle(
    labeled: Sequence[LabeledSession],
    assignment: SplitAssignment,
    spec: ExtractionSpec,
    strategy_id: str,
    granularity: str,
    seed: int,
    out_dir: str | Path,
    gap: float = DEFAULT_BURST_GAP,
    workers: int = 1,
) -> DatasetBundle:
    check_applicable(strategy_id, granularity, spec)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc

    members = sorted((ls for ls in labeled if ls.session_id in assignment.by_session), key=lambda ls: ls.session_id)
    class_map = {label: i for i, label in enumerate(sorted({ls.label for ls in members}))}
    label_of = {ls.session_id: class_map[ls.label] for ls in members}
    jobs = [(ls.session_id, ls.unit, spec, strategy_id, granularity, gap, seed) for ls in members]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_session_records, jobs, chunksize=max(1, len(jobs) // (workers * 4))))
    else:
        results = [_session_records(j) for j in jobs]

    per_split: dict[str, list] = {name: [] for name in assignment.names}
    for recs in results:
        for rec in recs:
            per_split[assignment.by_session[rec[0]]].append(rec)

    files: dict[str, str] = {}
    record_files: dict[str, Path] = {}
    counts: dict[str, int] = {}
    try:
        for name, recs in per_split.items():
            recs.sort(key=lambda r: (r[0], r[1], r[2]))
            rec_path = out_dir / f"{name}.ntcs"
            idx_path = out_dir / f"{name}.index.csv"
            with open(rec_path, "wb") as fh:
                for sid, _, _, data in recs:
                    fh.write(encode_record(label_of[sid], data))
            with open(idx_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["record", "session", "unit", "window", "label"])
                for i, (sid, uid, win, _) in enumerate(recs):
                    w.writerow([i, sid, uid, win, label_of[sid]])
            record_files[name] = rec_path
            counts[name] = len(recs)
            files[rec_path.name] = _sha256(rec_path)
            files[idx_path.name] = _sha256(idx_path)

        manifest = {
            "format_version": FORMAT_VERSION,
            "granularity": granularity,
            "extraction": asdict(spec),
            "occlusion": strategy_id,
            "seed": seed,
            "class_map": class_map,
            "split_ratios": dict(zip(assignment.names, assignment.ratios)),
            "split_sessions": {name: len(assignment.sessions_in(name)) for name in assignment.names},
            "dropped_classes": dict(sorted(assignment.dropped.items())),
            "counts": counts,
            "files": dict(sorted(files.items())),
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"writing bundle to {out_dir} failed: {exc}") from exc
    return DatasetBundle(out_dir, manifest, record_files)


def default_workers() -> int:
    return os.cpu_count() or 1
