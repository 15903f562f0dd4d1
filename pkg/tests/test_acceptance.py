"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criterion 2 needs the public datasets; point NTC_PUBLIC_DATASETS at a
directory holding ISCXVPN2016/, USTC-TFC2016/, ISCXTor2016/ and
CrossPlatform/ sub-directories of captures to run it.
"""

import csv
import json
import os
import random
import struct
import time
from fractions import Fraction
from pathlib import Path

import dpkt
import pytest

import checks
import oracles
from conftest import build_corpus, build_four_session
from ntcprep import forge
from ntcprep.audit import ALGORITHMS, audit_dataset, expand_inputs
from ntcprep.cli import main
from ntcprep.dataset import export_bundle, filter_noise, label_by_sni, load_sessions, split_train_test
from ntcprep.extraction import ExtractionSpec, extract, preset_spec
from ntcprep.granularity import SessionKey, split_bursts, split_flows, split_sessions, units_for
from ntcprep.occlusion import STRATEGY_IDS, OcclusionSeed, applicability, get_strategy, occlude_frame
from ntcprep.packet import parse_all, parse_packet
from ntcprep.pcapio import CaptureMeta, RawPacket, read_capture, write_capture

# --- 1 --------------------------------------------------------------------


def test_criterion_1_audit_oracle_equivalence(tmp_path):
    paths = build_corpus(tmp_path / "corpus", n_files=24) + build_four_session(tmp_path / "corpus" / "extra")
    out = tmp_path / "audit.csv"
    start = time.perf_counter()
    code = main(["audit", "--input", str(tmp_path / "corpus"), "--csv", str(out), "-q", "--workers", "1"])
    elapsed = time.perf_counter() - start
    rows = {r["file"]: r for r in csv.DictReader(open(out))}
    mismatched = []
    agg = {k: 0 for k in ["total", "unencrypted", "encrypted", "unknown", *ALGORITHMS]}
    for path in paths:
        want = oracles.brute_force_audit(path)
        got = {k: int(v) for k, v in rows[str(path)].items() if k != "file"}
        if got != want:
            mismatched.append(path.name)
        for k in agg:
            agg[k] += want[k]
    aggregate_ok = {k: int(v) for k, v in rows["ALL"].items() if k != "file"} == agg
    # the mix must exercise every bucket the criterion names
    mix_ok = agg["unencrypted"] > 0 and agg["unknown"] > 0 and all(agg[a] > 0 for a in ALGORITHMS if a != "OTHER")
    ok = code == 0 and not mismatched and aggregate_ok and mix_ok and len(paths) >= 20 and elapsed < 5.0
    checks.verdict(1, "audit counts equal brute-force oracle", ok,
                   f"{len(paths)} files, {agg['total']} sessions, {elapsed:.2f} s, mismatched={mismatched}")
    assert ok


# --- 2 --------------------------------------------------------------------

PUBLISHED_UNENCRYPTED = {"ISCXVPN2016": 98.9, "USTC-TFC2016": 94.7, "ISCXTor2016": 89.3, "CrossPlatform": 69.7}


def test_criterion_2_public_dataset_percentages():
    root = os.environ.get("NTC_PUBLIC_DATASETS")
    present = {name: Path(root) / name for name in PUBLISHED_UNENCRYPTED if root and (Path(root) / name).is_dir()}
    if not present:
        checks.verdict(2, "public dataset percentages", "SKIP", "NTC_PUBLIC_DATASETS not supplied")
        pytest.skip("public datasets not supplied")
    results = {}
    for name, path in present.items():
        stats = audit_dataset(expand_inputs([path]), workers=os.cpu_count() or 1)
        results[name] = round(stats.percentages()["unencrypted"], 2)
    ok = all(abs(results[n] - PUBLISHED_UNENCRYPTED[n]) <= 2.0 for n in results)
    checks.verdict(2, "public dataset percentages within 2 points", ok, json.dumps(results))
    assert ok


# --- 3 --------------------------------------------------------------------

_IPS = ["10.0.0.1", "10.0.0.2", "10.0.0.3", "192.168.1.9", "172.16.0.5"]
_PORTS = [53, 80, 443, 40000, 40001]
_GAPS = ["0.000001", "0.0005", "0.001", "0.05", "0.3", "1.0"]


def _random_stream(rng: random.Random):
    pkts, t_us = [], 0
    for i in range(rng.randint(0, 60)):
        src = (rng.choice(_IPS), rng.choice(_PORTS))
        dst = (rng.choice(_IPS), rng.choice(_PORTS))
        t_us += rng.choice([0, rng.randint(0, 2), rng.randint(0, 2_000), rng.randint(0, 2 * 10**6)])
        if rng.random() < 0.6:
            seg = forge.tcp(src[0], dst[0], src[1], dst[1], 1, 1, rng.choice(["S", "SA", "A", "PA"]))
            frame = forge.ethernet("02:00:00:00:00:01", "02:00:00:00:00:02", 0x0800, forge.ipv4(src[0], dst[0], 6, seg))
        else:
            frame = forge.udp_frame(src, dst, b"x")
        pkts.append(parse_packet(RawPacket(i, t_us // 10**6, t_us % 10**6, len(frame), frame)))
    return pkts


def _partition_ok(pkts, gap: str) -> bool:
    sessions = split_sessions(pkts)
    flows = split_flows(pkts)
    everything = list(range(len(pkts)))
    if sorted(p.index for u in sessions.values() for p in u.packets) != everything:
        return False
    if sorted(p.index for u in flows.values() for p in u.packets) != everything:
        return False
    if not len(sessions) <= len(flows) <= 2 * len(sessions):
        return False
    for key, unit in sessions.items():
        union = {p.index for f in flows.values() if SessionKey.of(f.key) == key for p in f.packets}
        if {p.index for p in unit.packets} != union:
            return False
    ts = [p.raw.ts_ns for p in pkts]
    bursts = split_bursts(pkts, float(gap))
    if [len(b.packets) for b in bursts] != oracles.burst_sizes(ts, gap):
        return False
    limit = Fraction(gap) * 10**9
    for b in bursts:
        inner = [q.raw.ts_ns - p.raw.ts_ns for p, q in zip(b.packets, b.packets[1:])]
        if any(d > limit for d in inner):
            return False
    for a, b in zip(bursts, bursts[1:]):
        if b.packets[0].raw.ts_ns - a.packets[-1].raw.ts_ns <= limit:
            return False
    return True


def test_criterion_3_granularity_partition_laws():
    rng = random.Random(2024)
    start = time.perf_counter()
    failures = [i for i in range(1000) if not _partition_ok(_random_stream(rng), _GAPS[i % len(_GAPS)])]
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30.0
    checks.verdict(3, "session/flow/burst partition laws on 1000 streams", ok,
                   f"{elapsed:.2f} s, failing streams={failures[:5]}")
    assert ok


# --- 4 --------------------------------------------------------------------

PRESET_LENGTHS = [
    ("etbert", "packet", "T1", 128),
    ("yatc", "packet", "T1", 1600),
    ("etbert", "flow", "T1", 640),
    ("etbert", "flow", "T2", 640),
    ("etbert", "flow", "T3", 128 * 5),
    ("yatc", "flow", "T3", 320 * 5),
    ("yatc", "session", "T1", 1600),
    ("yatc", "session", "T2", 1600),
    ("yatc", "session", "T3", 320 * 5),
    ("etbert", "session", "T3", 128 * 5),
    ("etbert", "burst", "T3", 128 * 5),
    ("yatc", "burst", "T2", 1600),
]


def test_criterion_4_extraction_length_laws(corpus):
    parsed = [parse_all(read_capture(p)[1]) for p in corpus[:12]]
    bad, samples, windows = [], 0, 0
    for preset, gran, strat, expected in PRESET_LENGTHS:
        base = preset_spec(preset, gran, strat)
        variants = [base]
        if strat != "T1":
            variants.append(ExtractionSpec(strat, base.m, base.n, "any", stride=1))
        for spec in variants:
            if spec.sample_len != expected:
                bad.append((preset, gran, strat, spec.sample_len))
            for pk in parsed:
                for unit in units_for(pk, gran):
                    got = extract(unit, spec)
                    samples += len(got)
                    bad.extend((preset, gran, strat, len(s.data)) for s in got if len(s.data) != expected)
                    if spec.selection == "any" and len(unit.packets) >= spec.n:
                        windows += 1
                        if len(got) != len(unit.packets) - spec.n + 1:
                            bad.append((gran, strat, "windows", len(unit.packets), len(got)))
    ok = not bad and samples > 1000 and windows > 50
    checks.verdict(4, "preset sample lengths and stride-1 window counts", ok,
                   f"{samples} samples, {windows} multi-window units, violations={bad[:3]}")
    assert ok


# --- 5 --------------------------------------------------------------------


def test_criterion_5_occlusion_field_isolation(corpus):
    samples = checks.build_samples(corpus, 500)
    problems = {}
    for sid in STRATEGY_IDS:
        found = checks.p1_failures(samples) if sid == "P1" else checks.isolation_failures(samples, sid)
        if found:
            problems[sid] = len(found)
    if checks.identity_failures(samples):
        problems["A1 identity"] = True
    for sid in checks.IDEMPOTENT:
        if checks.idempotence_failures(samples, sid):
            problems[f"{sid} idempotence"] = True
    for sid in STRATEGY_IDS:
        if not checks.worker_outputs_match(samples, sid, workers=4):
            problems[f"{sid} workers"] = True
    ok = not problems
    checks.verdict(5, "occlusion field isolation, identity, idempotence, worker determinism", ok,
                   f"500 samples x 13 strategies, problems={problems}")
    assert ok


# --- 6 --------------------------------------------------------------------


def _sni_name_length(payload: bytes):
    records, _ = dpkt.ssl.tls_multi_factory(payload)
    hello = dpkt.ssl.TLSHandshake(records[0].data)
    for etype, edata in hello.data.extensions:
        if etype == 0:
            list_len, kind, name_len = struct.unpack("!HBH", edata[:5])
            return records[0].length, hello.length, len(edata), list_len, name_len
    return None


def test_criterion_6_sni_handling():
    rng = random.Random(66)
    d2 = get_strategy("D2")
    located = changed = preserved = 0
    for i in range(100):
        host = forge.random_hostname(rng)
        hello = oracles.client_hello_bytes(host)
        seg = forge.tcp("10.0.0.1", "93.184.216.34", 40000 + i, 443, 1, 1, "PA", hello)
        frame = forge.ethernet("02:00:00:00:00:01", "02:00:00:00:00:02", 0x0800,
                               forge.ipv4("10.0.0.1", "93.184.216.34", 6, seg))
        (pp,) = parse_all([RawPacket(i, 1, 0, len(frame), frame)])
        if pp.fields.sni is None:
            continue
        off, ln = pp.fields.sni
        located += frame[off : off + ln] == host.encode()
        out = occlude_frame(pp, d2, OcclusionSeed(9, "sni", "frame", i)).data
        changed += out[off : off + ln] != host.encode()
        p_off, p_len = pp.fields.payload
        before, after = frame[p_off : p_off + p_len], out[p_off : p_off + p_len]
        outside_same = before[: off - p_off] == after[: off - p_off] and before[off - p_off + ln :] == after[off - p_off + ln :]
        preserved += outside_same and _sni_name_length(after) == _sni_name_length(before) is not None
    ok = located == changed == preserved == 100
    checks.verdict(6, "SNI located byte-exactly and destroyed by D2 with lengths intact", ok,
                   f"located={located} changed={changed} lengths_preserved={preserved} of 100")
    assert ok


# --- 7 --------------------------------------------------------------------


def _ten_per_class(d: Path):
    paths = []
    for i, h in enumerate(("alpha", "beta", "gamma")):
        rng = random.Random(i)
        cap = forge.Capture()
        for k in range(10):
            forge.tls_session(cap, ("10.0.0.1", 40000 + k), ("93.184.216.34", 443), f"{h}.example", 0x1301,
                              app_records=rng.randint(2, 8), rng=rng)
        write_capture(CaptureMeta(), cap.packets(), d / f"{h}.pcap")
        paths.append(d / f"{h}.pcap")
    return label_by_sni(filter_noise(load_sessions(paths)))[0]


MATRIX_SPECS = [
    ExtractionSpec("T1", 640),
    ExtractionSpec("T2", 640, 5, "first"),
    ExtractionSpec("T2", 1600, 5, "any", stride=1),
    ExtractionSpec("T3", 320, 5, "first"),
    ExtractionSpec("T3", 128, 5, "any", stride=2),
]


def test_criterion_7_dataset_leakage_guard(tmp_path):
    labeled = _ten_per_class(tmp_path)
    assignment = split_train_test(labeled, (0.8, 0.1, 0.1), seed=7)
    bundles = leaks = digest_diffs = 0
    for gran in ("packet", "burst", "flow", "session"):
        for spec in MATRIX_SPECS:
            for sid in ("A1", "D2", "C", "E2T25"):
                if not applicability(sid, gran, spec):
                    continue
                out = tmp_path / f"{gran}-{spec.strategy}{spec.selection}-{sid}"
                first = export_bundle(labeled, assignment, spec, sid, gran, 5, out / "a")
                again = export_bundle(labeled, assignment, spec, sid, gran, 5, out / "b", workers=2)
                bundles += 1
                digest_diffs += first.digests != again.digests
                owner = {}
                for name in assignment.names:
                    for row in csv.DictReader(open(out / "a" / f"{name}.index.csv")):
                        if owner.setdefault(row["session"], name) != name:
                            leaks += 1
    ok = bundles >= 20 and leaks == 0 and digest_diffs == 0
    checks.verdict(7, "no session in two splits and identical digests on re-export", ok,
                   f"{bundles} bundles, leaks={leaks}, digest mismatches={digest_diffs}")
    assert ok


# --- 8 --------------------------------------------------------------------


def test_criterion_8_catalog_fidelity():
    problems = checks.catalog_mismatches()
    ok = not problems
    checks.verdict(8, "strategy catalog matches the golden catalog file", ok, "; ".join(problems) or "13 rows")
    assert ok
