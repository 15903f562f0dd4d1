"""Feature occlusion: deterministic byte rewrites of protocol fields.

Thirteen strategies are catalogued, from the untouched baseline (A1) to
payload-only views with masked and truncated ciphertext. Randomised actions
draw from a keyed stream derived from the global seed and the sample's
identity, so results never depend on processing order or worker count.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .extraction import ExtractionSpec, Sample, SampleFieldMap, Span, spans_to_fields
from .packet import ParsedPacket
from .pcapio import RawPacket


class RangeOutOfBounds(IndexError):
    pass


class Action(str, Enum):
    ERADICATE = "E"
    RANDOMIZE = "R"
    MASK_FF = "MSK"
    OBFUSCATE = "OBF"


class FieldClass(str, Enum):
    MAC_SRC = "MacSrc"
    MAC_DST = "MacDst"
    IP_SRC = "IpSrc"
    IP_DST = "IpDst"
    IP_ID = "IpId"
    IP_CHECKSUM = "IpChecksum"
    PORTS = "Ports"
    SEQ_ACK = "SeqAck"
    WINDOW_SIZE = "WindowSize"
    TCP_OPTIONS = "TcpOptions"
    PAYLOAD = "Payload"
    SNI = "Sni"


FIELD_NAMES: dict[FieldClass, tuple[str, ...]] = {
    FieldClass.MAC_SRC: ("mac_src",),
    FieldClass.MAC_DST: ("mac_dst",),
    FieldClass.IP_SRC: ("ip_src",),
    FieldClass.IP_DST: ("ip_dst",),
    FieldClass.IP_ID: ("ip_id",),
    FieldClass.IP_CHECKSUM: ("ip_checksum",),
    FieldClass.PORTS: ("tcp_src_port", "tcp_dst_port", "udp_src_port", "udp_dst_port"),
    FieldClass.SEQ_ACK: ("tcp_seq", "tcp_ack"),
    FieldClass.WINDOW_SIZE: ("tcp_window",),
    FieldClass.TCP_OPTIONS: ("tcp_options_full",),
    FieldClass.PAYLOAD: ("payload",),
    FieldClass.SNI: ("sni",),
}


@dataclass(frozen=True)
class OcclusionStrategy:
    id: str
    name: str
    rules: tuple[tuple[FieldClass, Action], ...]
    payload_policy: str = "Keep"  # Keep | Eradicate | Encrypted | MaskFF | Obfuscate
    truncation_factor: float = 1.0
    strip_options: bool = False

    def targets(self, fc: FieldClass) -> Optional[Action]:
        for cls, action in self.rules:
            if cls == fc:
                return action
        return None


def _rules(action: Action, *classes: FieldClass) -> tuple[tuple[FieldClass, Action], ...]:
    return tuple((c, action) for c in classes)


F = FieldClass
R, E = Action.RANDOMIZE, Action.ERADICATE
SII = (F.MAC_SRC, F.MAC_DST, F.IP_SRC, F.IP_DST, F.PORTS)
CONTEXTUAL = (F.IP_ID, F.IP_CHECKSUM, F.SEQ_ACK)
TEMPORAL = (F.WINDOW_SIZE, F.TCP_OPTIONS)
ALL_HEADERS = SII + CONTEXTUAL + TEMPORAL

_E_HEADERS = _rules(E, *ALL_HEADERS)

_CATALOG = (
    OcclusionStrategy("A1", "All Data", ()),
    OcclusionStrategy("D1", "Anonymized SII", _rules(R, *SII)),
    OcclusionStrategy("D2", "Anonymized SNI", _rules(R, *SII, F.SNI)),
    OcclusionStrategy("C", "w/o Contextual O.", _rules(R, *SII, *CONTEXTUAL)),
    OcclusionStrategy("T", "w/o Temporal O.", _rules(R, *SII, *TEMPORAL)),
    OcclusionStrategy("CTD", "w/o Overfitting", _rules(R, *ALL_HEADERS, F.SNI)),
    OcclusionStrategy("H1", "Header Only", _rules(R, *SII) + ((F.PAYLOAD, E), (F.SNI, R)), payload_policy="Eradicate"),
    OcclusionStrategy("P1", "Payload Only", _E_HEADERS, strip_options=True),
    OcclusionStrategy("E1", "Encrypted Payload Only", _E_HEADERS + ((F.SNI, E),), payload_policy="Encrypted"),
    OcclusionStrategy(
        "E2", "E1 - Masked", _E_HEADERS + ((F.PAYLOAD, Action.MASK_FF), (F.SNI, E)), payload_policy="MaskFF"
    ),
    OcclusionStrategy(
        "E3", "E1 - Obfuscated", _E_HEADERS + ((F.PAYLOAD, Action.OBFUSCATE), (F.SNI, E)), payload_policy="Obfuscate"
    ),
    OcclusionStrategy(
        "E2T25",
        "E2 - payload truncated by 25%",
        _E_HEADERS + ((F.PAYLOAD, Action.MASK_FF), (F.SNI, E)),
        payload_policy="MaskFF",
        truncation_factor=0.75,
    ),
    OcclusionStrategy(
        "E2T50",
        "E2 - payload truncated by 50%",
        _E_HEADERS + ((F.PAYLOAD, Action.MASK_FF), (F.SNI, E)),
        payload_policy="MaskFF",
        truncation_factor=0.5,
    ),
)


def strategy_catalog() -> list[OcclusionStrategy]:
    return list(_CATALOG)


def get_strategy(strategy_id: str) -> OcclusionStrategy:
    for s in _CATALOG:
        if s.id == strategy_id:
            return s
    raise KeyError(f"unknown occlusion strategy {strategy_id!r}")


STRATEGY_IDS = tuple(s.id for s in _CATALOG)


# --- seeding ------------------------------------------------------------


class SeedStream:
    """Counter-mode BLAKE2b byte stream."""

    def __init__(self, key: bytes):
        self._key = key
        self._counter = 0
        self._buf = b""

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.blake2b(self._counter.to_bytes(8, "little"), key=self._key, digest_size=64).digest()
            self._buf += block
            self._counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out


@dataclass(frozen=True)
class OcclusionSeed:
    global_seed: int
    source: str = ""
    unit_key: str = ""
    window_index: int = 0

    def derive(self) -> bytes:
        ident = f"{self.source}\x00{self.unit_key}\x00{self.window_index}".encode()
        key = (self.global_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
        return hashlib.blake2b(ident, key=key, digest_size=32).digest()

    def stream(self) -> SeedStream:
        return SeedStream(self.derive())


# --- actions ------------------------------------------------------------


def _apply_inplace(buf: bytearray, rng: tuple[int, int], action: Action, stream: Optional[SeedStream]) -> None:
    off, length = rng
    if off < 0 or length < 0 or off + length > len(buf):
        raise RangeOutOfBounds(f"range {rng} outside buffer of {len(buf)} bytes")
    if action is Action.ERADICATE:
        buf[off : off + length] = bytes(length)
    elif action is Action.MASK_FF:
        buf[off : off + length] = b"\xff" * length
    else:
        if stream is None:
            raise ValueError(f"{action.value} needs a seed stream")
        buf[off : off + length] = stream.take(length)


def apply_action(data: bytes, rng: tuple[int, int], action: Action, seed_stream: Optional[SeedStream] = None) -> bytes:
    buf = bytearray(data)
    _apply_inplace(buf, rng, action, seed_stream)
    return bytes(buf)


def _truncate_payload(buf: bytearray, fmap: SampleFieldMap, factor: float, pad: int) -> None:
    frac = Fraction(factor)
    for off, length in fmap.ranges("payload"):
        keep = length * frac.numerator // frac.denominator
        buf[off + keep : off + length] = bytes([pad]) * (length - keep)


def _strip_options(buf: bytearray, sample: Sample, fmap: SampleFieldMap, pad: int) -> bytearray:
    """Delete TCP option bytes and re-pad, per vector for T3 samples."""
    cuts = sorted(fmap.ranges("tcp_options_full"))
    if not cuts:
        return buf
    seg_len = sample.m if sample.strategy == "T3" else len(buf)
    out = bytearray()
    for seg_start in range(0, len(buf), seg_len):
        seg_end = seg_start + seg_len
        kept = bytearray()
        pos = seg_start
        for off, length in cuts:
            if off >= seg_end or off + length <= seg_start:
                continue
            kept += buf[pos:off]
            pos = off + length
        kept += buf[pos:seg_end]
        kept += bytes([pad]) * (seg_len - len(kept))
        out += kept
    return out


def apply_strategy(
    sample: Sample,
    field_map: SampleFieldMap,
    strategy: OcclusionStrategy,
    seed: OcclusionSeed,
    pad_byte: int = 0x00,
) -> Sample:
    """Apply every rule of ``strategy`` to the sample's bytes.

    Field classes with no range in the sample (e.g. TCP fields of a UDP
    sample) are skipped. Output length always equals input length.
    """
    if not strategy.rules and not strategy.strip_options and strategy.truncation_factor == 1.0:
        return sample.with_data(sample.data, occlusion=strategy.id)
    buf = bytearray(sample.data)
    stream = seed.stream()
    for fc, action in strategy.rules:
        for name in FIELD_NAMES[fc]:
            for rng in field_map.ranges(name):
                _apply_inplace(buf, rng, action, stream)
    if strategy.truncation_factor < 1.0:
        _truncate_payload(buf, field_map, strategy.truncation_factor, pad_byte)
    if strategy.strip_options:
        buf = _strip_options(buf, sample, field_map, pad_byte)
    sni_flag = ("sni" in field_map) if strategy.targets(FieldClass.SNI) else None
    return sample.with_data(bytes(buf), occlusion=strategy.id, sni_present=sni_flag)


def occlude_frame(pp: ParsedPacket, strategy: OcclusionStrategy, seed: OcclusionSeed) -> RawPacket:
    """Frame-level occlusion for writing anonymised captures."""
    raw = pp.raw
    n = len(raw.data)
    sample = Sample(raw.data, "T1", n, 1, seed.unit_key, seed.window_index, (Span(0, 0, 0, n),)) if n else None
    if sample is None:
        return raw
    out = apply_strategy(sample, spans_to_fields(sample, [pp]), strategy, seed)
    return RawPacket(raw.index, raw.ts_sec, raw.ts_frac, raw.original_len, out.data, raw.ts_scale)


# --- applicability ------------------------------------------------------

# Strategies meaningful only when the sample may contain handshake plaintext
_SESSION_START = {"D2"}
# Strategies meaningful only when one session is split into many samples
_SPLIT_SESSION = {"C", "T", "CTD", "E1", "E2", "E3", "E2T25", "E2T50"}


def applicability(strategy_id: str, granularity: str, extraction: ExtractionSpec) -> bool:
    """Whether a strategy is a meaningful experiment for this design choice."""
    if granularity == "packet" and extraction.strategy != "T1":
        return False
    splits_session = granularity in ("packet", "burst") or (
        extraction.strategy in ("T2", "T3") and extraction.selection == "any"
    )
    if strategy_id in _SESSION_START:
        return not splits_session
    if strategy_id in _SPLIT_SESSION:
        return splits_session
    get_strategy(strategy_id)
    return True


def occlude_samples(
    samples: Sequence[Sample],
    packets: Sequence[ParsedPacket],
    strategy: OcclusionStrategy,
    global_seed: int,
    source: str = "",
    pad_byte: int = 0x00,
) -> list[Sample]:
    out = []
    for s in samples:
        seed = OcclusionSeed(global_seed, source, s.unit_key, s.window_index)
        out.append(apply_strategy(s, spans_to_fields(s, packets), strategy, seed, pad_byte))
    return out

