"""Fixed-size byte representations of traffic units (Type 1/2/3 extraction)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

from .granularity import TrafficUnit
from .packet import ParsedPacket

STRATEGIES = ("T1", "T2", "T3")
SELECTIONS = ("first", "any")


class IncompatibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionSpec:
    strategy: str = "T1"
    m: int = 128
    n: int = 1
    selection: str = "first"
    stride: Optional[int] = None  # defaults to n: non-overlapping windows
    pad_byte: int = 0x00
    drop_short: bool = False
    payload_only_concat: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise IncompatibleSpec(f"unknown extraction strategy {self.strategy!r}")
        if self.selection not in SELECTIONS:
            raise IncompatibleSpec(f"unknown packet selection {self.selection!r}")
        if self.m <= 0 or self.n <= 0:
            raise IncompatibleSpec("m and n must be positive")
        if self.stride is not None and self.stride < 1:
            raise IncompatibleSpec("stride must be >= 1")
        if not 0 <= self.pad_byte <= 255:
            raise IncompatibleSpec("pad_byte must be a byte value")

    @property
    def window_stride(self) -> int:
        return self.stride if self.stride is not None else self.n

    @property
    def sample_len(self) -> int:
        return self.m * self.n if self.strategy == "T3" else self.m


# (m, n) per model preset; "packet" is T1 over a single frame
PRESETS: dict[str, dict[str, tuple[int, int]]] = {
    "etbert": {"packet": (128, 1), "T1": (640, 1), "T2": (640, 5), "T3": (128, 5)},
    "yatc": {"packet": (1600, 1), "T1": (1600, 1), "T2": (1600, 5), "T3": (320, 5)},
}


def preset_spec(preset: str, granularity: str, strategy: str = "T3", selection: str = "first", **kw) -> ExtractionSpec:
    try:
        table = PRESETS[preset]
    except KeyError:
        raise IncompatibleSpec(f"unknown preset {preset!r}") from None
    if granularity == "packet":
        if strategy != "T1":
            raise IncompatibleSpec("packet granularity supports T1 only")
        m, n = table["packet"]
        return ExtractionSpec("T1", m, n, **kw)
    m, n = table[strategy]
    return ExtractionSpec(strategy, m, n, selection, **kw)


class Span(NamedTuple):
    position: int  # index into unit.packets
    sample_offset: int
    frame_offset: int
    length: int


@dataclass(frozen=True)
class Sample:
    data: bytes
    strategy: str
    m: int
    n: int
    unit_key: str
    window_index: int = 0
    packet_spans: tuple[Span, ...] = ()
    occlusion: Optional[str] = None
    sni_present: Optional[bool] = None

    @property
    def vectors(self) -> list[bytes]:
        if self.strategy != "T3":
            return [self.data]
        return [self.data[i * self.m : (i + 1) * self.m] for i in range(self.n)]

    def with_data(self, data: bytes, **kw) -> "Sample":
        return replace(self, data=data, **kw)


def _frame_piece(pp: ParsedPacket, payload_only: bool) -> tuple[int, bytes]:
    if not payload_only:
        return 0, pp.raw.data
    rng = pp.fields.payload
    if rng is None:
        return 0, b""
    return rng[0], pp.raw.data[rng[0] : rng[0] + rng[1]]


def _concat(packets: Sequence[ParsedPacket], positions: Sequence[int], m: int, pad: int, payload_only: bool):
    buf = bytearray()
    spans = []
    for k, pos in enumerate(positions):
        if len(buf) >= m:
            break
        # only frames after the first lose their headers in payload-only mode
        frame_off, piece = _frame_piece(packets[pos], payload_only and k > 0)
        take = piece[: m - len(buf)]
        if take:
            spans.append(Span(pos, len(buf), frame_off, len(take)))
            buf += take
    buf += bytes([pad]) * (m - len(buf))
    return bytes(buf), tuple(spans)


def _windows(p: int, spec: ExtractionSpec) -> list[int]:
    n = spec.n
    if p < n:
        return [] if spec.drop_short else [0]
    if spec.selection == "first":
        return [0]
    return list(range(0, p - n + 1, spec.window_stride))


def extract(unit: TrafficUnit, spec: ExtractionSpec) -> list[Sample]:
    """Cut a unit into fixed-length samples according to ``spec``."""
    if unit.kind == "packet" and spec.strategy != "T1":
        raise IncompatibleSpec(f"{spec.strategy} needs several packets; packet units support T1 only")
    packets = unit.packets
    key = unit.unit_id
    pad = spec.pad_byte
    if not packets:
        return []

    if spec.strategy == "T1":
        data, spans = _concat(packets, range(len(packets)), spec.m, pad, spec.payload_only_concat)
        return [Sample(data, "T1", spec.m, 1, key, 0, spans)]

    samples = []
    for w in _windows(len(packets), spec):
        positions = [i for i in range(w, w + spec.n) if i < len(packets)]
        if spec.strategy == "T2":
            data, spans = _concat(packets, positions, spec.m, pad, spec.payload_only_concat)
        else:
            buf = bytearray()
            span_list = []
            for k in range(spec.n):
                base = k * spec.m
                if k < len(positions):
                    frame = packets[positions[k]].raw.data[: spec.m]
                    if frame:
                        span_list.append(Span(positions[k], base, 0, len(frame)))
                    buf += frame
                # phantom packets and short frames are padded to m
                buf += bytes([pad]) * (base + spec.m - len(buf))
            data, spans = bytes(buf), tuple(span_list)
        samples.append(Sample(data, spec.strategy, spec.m, spec.n, key, len(samples), spans))
    return samples


class SampleFieldMap:
    """Field ranges re-based into sample coordinates.

    Each field maps to a list of ``(offset, length)`` pairs, one per
    contributing packet whose copy of the field survived truncation.
    """

    def __init__(self):
        self._ranges: dict[str, list[tuple[int, int]]] = {}
        self._owner: dict[str, list[int]] = {}

    def add(self, name: str, rng: tuple[int, int], position: int) -> None:
        self._ranges.setdefault(name, []).append(rng)
        self._owner.setdefault(name, []).append(position)

    def ranges(self, name: str) -> list[tuple[int, int]]:
        return list(self._ranges.get(name, ()))

    def owners(self, name: str) -> list[int]:
        return list(self._owner.get(name, ()))

    def names(self) -> list[str]:
        return list(self._ranges)

    def __contains__(self, name: str) -> bool:
        return name in self._ranges

    def __repr__(self) -> str:
        return f"SampleFieldMap({self._ranges!r})"


def spans_to_fields(sample: Sample, packets: Sequence[ParsedPacket]) -> SampleFieldMap:
    fmap = SampleFieldMap()
    for span in sample.packet_spans:
        lo_frame = span.frame_offset
        hi_frame = span.frame_offset + span.length
        for name, (off, length) in packets[span.position].fields.items():
            lo = max(off, lo_frame)
            hi = min(off + length, hi_frame)
            if lo < hi:
                fmap.add(name, (span.sample_offset + lo - lo_frame, hi - lo), span.position)
    return fmap
