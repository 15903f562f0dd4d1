"""Classic libpcap file reading and writing.

Only the classic format is handled (no pcapng). Timestamps are kept as the
integer pair stored in the file so that a read/write round trip is lossless;
``RawPacket.ts`` gives the float view.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

LINKTYPE_ETHERNET = 1

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class CaptureError(Exception):
    """Base class for capture file problems."""


class UnrecognizedMagic(CaptureError):
    pass


class TruncatedHeader(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    def __init__(self, message: str, packets_read: int):
        super().__init__(message)
        self.packets_read = packets_read


class UnsupportedLinkType(CaptureError):
    pass


class InvalidPacket(CaptureError):
    """A packet violates the RawPacket invariants (raised before writing)."""


@dataclass(frozen=True)
class CaptureMeta:
    link_type: int = LINKTYPE_ETHERNET
    snaplen: int = 65535
    endianness: str = "little"  # "little" | "big"
    ts_resolution: str = "micro"  # "micro" | "nano"
    version: tuple[int, int] = (2, 4)
    thiszone: int = 0
    sigfigs: int = 0

    @property
    def ts_scale(self) -> int:
        return 1_000_000_000 if self.ts_resolution == "nano" else 1_000_000


@dataclass(frozen=True)
class RawPacket:
    index: int
    ts_sec: int
    ts_frac: int
    original_len: int
    data: bytes
    ts_scale: int = 1_000_000

    @property
    def captured_len(self) -> int:
        return len(self.data)

    @property
    def ts(self) -> float:
        return self.ts_sec + self.ts_frac / self.ts_scale

    @property
    def ts_ns(self) -> int:
        """Exact timestamp in integer nanoseconds."""
        return self.ts_sec * 1_000_000_000 + self.ts_frac * (1_000_000_000 // self.ts_scale)

    def validate(self) -> None:
        if self.captured_len > self.original_len:
            raise InvalidPacket(
                f"packet {self.index}: captured_len {self.captured_len} > original_len {self.original_len}"
            )
        if self.ts_sec < 0 or self.ts_frac < 0 or self.ts_frac >= self.ts_scale:
            raise InvalidPacket(f"packet {self.index}: invalid timestamp {self.ts_sec}.{self.ts_frac}")


def _parse_global_header(header: bytes) -> tuple[CaptureMeta, str]:
    if len(header) < 4:
        raise TruncatedHeader(f"global header has {len(header)} of {GLOBAL_HEADER_LEN} bytes")
    magic_le = struct.unpack("<I", header[:4])[0]
    magic_be = struct.unpack(">I", header[:4])[0]
    if magic_le in (MAGIC_MICRO, MAGIC_NANO):
        endian, magic = "<", magic_le
    elif magic_be in (MAGIC_MICRO, MAGIC_NANO):
        endian, magic = ">", magic_be
    else:
        raise UnrecognizedMagic(f"magic 0x{magic_be:08X} is not a classic pcap magic")
    if len(header) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"global header has {len(header)} of {GLOBAL_HEADER_LEN} bytes")
    vmaj, vmin, thiszone, sigfigs, snaplen, linktype = struct.unpack(endian + "HHiIII", header[4:24])
    # upper 16 bits of the link type field may carry FCS info
    linktype &= 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype} is not Ethernet")
    meta = CaptureMeta(
        link_type=linktype,
        snaplen=snaplen,
        endianness="little" if endian == "<" else "big",
        ts_resolution="nano" if magic == MAGIC_NANO else "micro",
        version=(vmaj, vmin),
        thiszone=thiszone,
        sigfigs=sigfigs,
    )
    return meta, endian


def _iter_records(path: Path, meta: CaptureMeta, endian: str) -> Iterator[RawPacket]:
    scale = meta.ts_scale
    rec = struct.Struct(endian + "IIII")
    with open(path, "rb") as fh:
        fh.seek(GLOBAL_HEADER_LEN)
        index = 0
        while True:
            hdr = fh.read(RECORD_HEADER_LEN)
            if not hdr:
                return
            if len(hdr) < RECORD_HEADER_LEN:
                raise TruncatedRecord(f"record {index}: header cut at {len(hdr)} bytes", index)
            ts_sec, ts_frac, incl_len, orig_len = rec.unpack(hdr)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord(f"record {index}: data cut at {len(data)} of {incl_len} bytes", index)
            # some writers store orig_len < incl_len; never let that break the invariant
            yield RawPacket(index, ts_sec, ts_frac, max(orig_len, incl_len), data, scale)
            index += 1


def open_capture(path: str | Path) -> tuple[CaptureMeta, Iterator[RawPacket]]:
    """Validate the global header and return a lazy record stream.

    Header problems raise immediately. A file that ends mid-record yields
    every complete record and then raises :class:`TruncatedRecord`.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(GLOBAL_HEADER_LEN)
    meta, endian = _parse_global_header(header)
    return meta, _iter_records(path, meta, endian)


def read_capture(path: str | Path) -> tuple[CaptureMeta, list[RawPacket], CaptureError | None]:
    """Eager variant for batch use: returns packets read plus any terminal error."""
    meta, stream = open_capture(path)
    packets: list[RawPacket] = []
    try:
        for pkt in stream:
            packets.append(pkt)
    except TruncatedRecord as exc:
        return meta, packets, exc
    return meta, packets, None


def write_capture(meta: CaptureMeta, packets: Sequence[RawPacket], path: str | Path) -> None:
    for pkt in packets:
        pkt.validate()
    endian = "<" if meta.endianness == "little" else ">"
    magic = MAGIC_NANO if meta.ts_resolution == "nano" else MAGIC_MICRO
    scale = meta.ts_scale
    out = bytearray()
    out += struct.pack(
        endian + "IHHiIII",
        magic,
        meta.version[0],
        meta.version[1],
        meta.thiszone,
        meta.sigfigs,
        meta.snaplen,
        meta.link_type,
    )
    rec = struct.Struct(endian + "IIII")
    for pkt in packets:
        frac = pkt.ts_frac
        if pkt.ts_scale != scale:
            frac = frac * scale // pkt.ts_scale
        out += rec.pack(pkt.ts_sec, frac, len(pkt.data), pkt.original_len)
        out += pkt.data
    Path(path).write_bytes(bytes(out))
