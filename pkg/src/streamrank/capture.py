"""Capture-file and feature-file I/O.

Reads classic pcap (both byte orders, microsecond and nanosecond variants,
Ethernet link type only), joins optional ground-truth labels from a sidecar
CSV, and round-trips the 43-feature CSV schema `f01..f43,label` with
shortest round-trip float formatting.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .features import (
    F,
    FEATURE_NAMES,
    LINKTYPE_ETHERNET,
    N_FEATURES,
    ExtractedRecord,
    FlowTable,
    PacketDecodeError,
    RawPacket,
    decode_packet,
)

logger = logging.getLogger(__name__)

_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

CSV_HEADER = [f"f{i:02d}" for i in range(1, N_FEATURES + 1)] + ["label"]


class CaptureFormatError(ValueError):
    """The capture file itself is unusable (bad magic, wrong link type)."""


class LabelSource:
    """Ground-truth labels for capture packets, from a sidecar CSV.

    Two schemas are accepted, selected by the header row:
      packet_index,label                          (0-based index in the file)
      ip_src,ip_dst,proto,t_start,t_end,label     (5-tuple + time range)
    """

    def __init__(self, by_index: dict[int, int], rules: list[tuple[str, str, int, float, float, int]]):
        self._by_index = by_index
        self._rules = rules

    @classmethod
    def load(cls, path: str | Path) -> "LabelSource":
        by_index: dict[int, int] = {}
        rules: list[tuple[str, str, int, float, float, int]] = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header == ["packet_index", "label"]:
                for row in reader:
                    by_index[int(row[0])] = int(row[1])
            elif header == ["ip_src", "ip_dst", "proto", "t_start", "t_end", "label"]:
                for row in reader:
                    rules.append(
                        (row[0], row[1], int(row[2]), float(row[3]), float(row[4]), int(row[5]))
                    )
            else:
                raise CaptureFormatError(f"unrecognized label sidecar header: {header}")
        return cls(by_index, rules)

    def label_for(self, packet_index: int, record: ExtractedRecord) -> int | None:
        if packet_index in self._by_index:
            return self._by_index[packet_index]
        if self._rules:
            src = _dotted(record.features, F["ip_src_1"])
            dst = _dotted(record.features, F["ip_dst_1"])
            proto = int(record.features[F["ip_protocol"]])
            for r_src, r_dst, r_proto, t0, t1, label in self._rules:
                if (r_src, r_dst, r_proto) == (src, dst, proto) and t0 <= record.timestamp <= t1:
                    return label
        return None


def _dotted(features: np.ndarray, base: int) -> str:
    return ".".join(str(int(features[base + i])) for i in range(4))


class CaptureReader:
    """Iterates decoded records of one pcap file in capture order.

    Undecodable packets are skipped and counted in `skipped`; a truncated
    tail stops iteration with a warning, leaving the prefix valid.
    """

    def __init__(self, path: str | Path, label_source: LabelSource | None = None):
        self.path = Path(path)
        self.label_source = label_source
        self.skipped = 0
        with open(self.path, "rb") as fh:
            header = fh.read(24)
        if len(header) < 24 or header[:4] not in _MAGICS:
            raise CaptureFormatError(f"{self.path}: not a classic pcap file")
        self._endian, self._tick = _MAGICS[header[:4]]
        network = struct.unpack(self._endian + "I", header[20:24])[0]
        if network != LINKTYPE_ETHERNET:
            raise CaptureFormatError(
                f"{self.path}: unsupported link type {network} (only Ethernet is supported)"
            )

    def __iter__(self) -> Iterator[ExtractedRecord]:
        flows = FlowTable()
        rec_hdr = struct.Struct(self._endian + "IIII")
        base: tuple[int, int] | None = None
        index = 0
        with open(self.path, "rb") as fh:
            fh.seek(24)
            while True:
                hdr = fh.read(16)
                if not hdr:
                    break
                if len(hdr) < 16:
                    logger.warning("%s: truncated record header at end of file", self.path)
                    break
                sec, frac, incl_len, _orig_len = rec_hdr.unpack(hdr)
                data = fh.read(incl_len)
                if len(data) < incl_len:
                    logger.warning("%s: truncated packet data at end of file", self.path)
                    break
                if base is None:
                    base = (sec, frac)
                ts = (sec - base[0]) + (frac - base[1]) * self._tick
                try:
                    record = decode_packet(RawPacket(timestamp=ts, data=data), flows)
                except PacketDecodeError as exc:
                    self.skipped += 1
                    logger.debug("%s: skipping packet %d: %s", self.path, index, exc)
                    index += 1
                    continue
                if self.label_source is not None:
                    record.label = self.label_source.label_for(index, record)
                index += 1
                yield record


def read_capture(path: str | Path, label_source: LabelSource | None = None) -> CaptureReader:
    """Open a pcap file for decoding; iterate the result to get records."""
    return CaptureReader(path, label_source)


def _format_value(v: float) -> str:
    return repr(float(v))


def write_feature_csv(records: Iterable[ExtractedRecord], path: str | Path) -> int:
    """Write records to the `f01..f43,label` schema; returns the row count.

    Feature values use the shortest decimal representation that round-trips,
    so writing and re-reading a stream reproduces identical floats.  Unknown
    labels are written as -1.
    """
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            if rec.features.shape[0] != N_FEATURES:
                raise ValueError(f"record has {rec.features.shape[0]} features, expected {N_FEATURES}")
            label = -1 if rec.label is None else int(rec.label)
            writer.writerow([_format_value(v) for v in rec.features] + [str(label)])
            count += 1
    return count


def read_feature_csv(path: str | Path) -> Iterator[ExtractedRecord]:
    """Yield records from a feature CSV; row order is stream order.

    The schema carries no timestamps, so each record's timestamp is its row
    index (windowing in the engine is count-based and never looks at it).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise CaptureFormatError(f"{path}: unexpected feature CSV header")
        for i, row in enumerate(reader):
            if len(row) != N_FEATURES + 1:
                raise CaptureFormatError(f"{path}: row {i} has {len(row)} columns")
            label = int(row[-1])
            yield ExtractedRecord(
                features=np.array([float(v) for v in row[:-1]]),
                timestamp=float(i),
                label=None if label < 0 else label,
            )
