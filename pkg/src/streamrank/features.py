"""Per-packet feature extraction: Ethernet/IPv4/TCP/UDP/ICMP header fields
plus stateful flow features (connection timing, fragmentation, overlap,
retransmission) for a fixed 43-feature schema.

Only Ethernet link frames carrying IPv4 are decoded in depth; anything else
gets the link-layer features and zeros for every absent protocol layer.
Flow identity is the direction-sensitive 5-tuple, so each direction of a TCP
conversation is its own flow and the retransmission check stays unambiguous.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_NAMES: tuple[str, ...] = (
    "eth_type",
    "mac_src_1", "mac_src_2", "mac_src_3", "mac_src_4", "mac_src_5", "mac_src_6",
    "mac_dst_1", "mac_dst_2", "mac_dst_3", "mac_dst_4", "mac_dst_5", "mac_dst_6",
    "ip_header_len",
    "ip_tos",
    "ip_total_len",
    "ip_ttl",
    "ip_protocol",
    "ip_src_1", "ip_src_2", "ip_src_3", "ip_src_4",
    "ip_dst_1", "ip_dst_2", "ip_dst_3", "ip_dst_4",
    "tcp_src_port",
    "tcp_dst_port",
    "udp_src_port",
    "udp_dst_port",
    "l4_length",
    "icmp_type",
    "icmp_code",
    "flow_duration",
    "flow_start_time",
    "is_fragment",
    "frag_overlap",
    "tcp_ack",
    "tcp_retransmission",
    "tcp_psh",
    "tcp_syn",
    "tcp_fin",
    "tcp_urg",
)

N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 43

ETHERTYPE_IPV4 = 0x0800
PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

LINKTYPE_ETHERNET = 1

# 0-based positions of the named features, for readable decoder code.
F = {name: i for i, name in enumerate(FEATURE_NAMES)}


class PacketDecodeError(ValueError):
    """A single packet is truncated or structurally invalid; skip and count it."""


@dataclass
class RawPacket:
    """One captured frame: seconds since capture start plus the link bytes."""

    timestamp: float
    data: bytes
    link_type: int = LINKTYPE_ETHERNET


@dataclass(frozen=True)
class FlowKey:
    """Direction-sensitive 5-tuple; ports are 0 when the packet has none."""

    ip_src: int
    ip_dst: int
    port_src: int
    port_dst: int
    protocol: int


@dataclass
class FlowState:
    start_time: float
    last_seen: float
    # Disjoint, sorted, half-open [start, end) byte ranges of TCP payload
    # already seen in this direction.
    seen_tcp_ranges: list[tuple[int, int]] = field(default_factory=list)


def _overlaps(ranges: list[tuple[int, int]], start: int, end: int) -> bool:
    return any(start < e and end > s for s, e in ranges)


def _insert_range(ranges: list[tuple[int, int]], start: int, end: int) -> None:
    """Insert [start, end) and merge so the list stays disjoint and sorted."""
    merged = []
    for s, e in ranges:
        if e < start or s > end:
            merged.append((s, e))
        else:
            start = min(start, s)
            end = max(end, e)
    merged.append((start, end))
    merged.sort()
    ranges[:] = merged


class FlowTable:
    """Per-flow and per-datagram state for the stateful features.

    Flows idle longer than `idle_timeout` seconds are treated as new
    connections; a sweep every `sweep_every` packets bounds memory on long
    captures.
    """

    def __init__(self, idle_timeout: float = 300.0, sweep_every: int = 4096):
        self.idle_timeout = idle_timeout
        self.sweep_every = sweep_every
        self._flows: dict[FlowKey, FlowState] = {}
        # (ip_src, ip_dst, ip_id, protocol) -> (last_seen, fragment ranges)
        self._datagrams: dict[tuple[int, int, int, int], tuple[float, list[tuple[int, int]]]] = {}
        self._since_sweep = 0

    def __len__(self) -> int:
        return len(self._flows)

    def flow(self, key: FlowKey, now: float) -> FlowState:
        st = self._flows.get(key)
        if st is None or now - st.last_seen > self.idle_timeout:
            st = FlowState(start_time=now, last_seen=now)
            self._flows[key] = st
        self._maybe_sweep(now)
        return st

    def fragment_ranges(self, key: tuple[int, int, int, int], now: float) -> list[tuple[int, int]]:
        entry = self._datagrams.get(key)
        if entry is None or now - entry[0] > self.idle_timeout:
            entry = (now, [])
        self._datagrams[key] = (now, entry[1])
        return entry[1]

    def _maybe_sweep(self, now: float) -> None:
        self._since_sweep += 1
        if self._since_sweep < self.sweep_every:
            return
        self._since_sweep = 0
        cutoff = now - self.idle_timeout
        self._flows = {k: v for k, v in self._flows.items() if v.last_seen >= cutoff}
        self._datagrams = {k: v for k, v in self._datagrams.items() if v[0] >= cutoff}


@dataclass
class ExtractedRecord:
    """The 43 raw feature values of one packet, in schema order."""

    features: np.ndarray
    timestamp: float
    label: int | None = None


def decode_packet(pkt: RawPacket, flows: FlowTable) -> ExtractedRecord:
    """Decode one frame into its feature vector, updating flow state.

    Raises PacketDecodeError when the frame is too short for a layer it
    claims to carry; callers should skip and count such packets.
    """
    if pkt.link_type != LINKTYPE_ETHERNET:
        raise PacketDecodeError(f"unsupported link type {pkt.link_type}")
    data = pkt.data
    if len(data) < 14:
        raise PacketDecodeError(f"frame of {len(data)} bytes is shorter than Ethernet header")

    f = np.zeros(N_FEATURES)
    ethertype = int.from_bytes(data[12:14], "big")
    f[F["eth_type"]] = ethertype
    for i in range(6):
        f[F["mac_src_1"] + i] = data[6 + i]   # sender address
        f[F["mac_dst_1"] + i] = data[i]       # receiver address

    if ethertype != ETHERTYPE_IPV4:
        return ExtractedRecord(features=f, timestamp=pkt.timestamp)

    ip = data[14:]
    if len(ip) < 20:
        raise PacketDecodeError("truncated IPv4 header")
    version = ip[0] >> 4
    ihl = (ip[0] & 0x0F) * 4
    if version != 4 or ihl < 20 or len(ip) < ihl:
        raise PacketDecodeError("malformed IPv4 header")

    total_len = int.from_bytes(ip[2:4], "big")
    ip_id = int.from_bytes(ip[4:6], "big")
    flags_frag = int.from_bytes(ip[6:8], "big")
    more_fragments = bool(flags_frag & 0x2000)
    frag_offset = (flags_frag & 0x1FFF) * 8
    proto = ip[9]
    src = int.from_bytes(ip[12:16], "big")
    dst = int.from_bytes(ip[16:20], "big")

    f[F["ip_header_len"]] = ihl
    f[F["ip_tos"]] = ip[1]
    f[F["ip_total_len"]] = total_len
    f[F["ip_ttl"]] = ip[8]
    f[F["ip_protocol"]] = proto
    for i in range(4):
        f[F["ip_src_1"] + i] = ip[12 + i]
        f[F["ip_dst_1"] + i] = ip[16 + i]

    now = pkt.timestamp
    is_fragment = more_fragments or frag_offset > 0
    if is_fragment:
        f[F["is_fragment"]] = 1.0
        frag_len = max(0, total_len - ihl)
        if frag_len > 0:
            ranges = flows.fragment_ranges((src, dst, ip_id, proto), now)
            lo, hi = frag_offset, frag_offset + frag_len
            if _overlaps(ranges, lo, hi):
                f[F["frag_overlap"]] = 1.0
            _insert_range(ranges, lo, hi)

    # Transport headers exist only in the first fragment.
    sport = dport = 0
    tcp_payload_range: tuple[int, int] | None = None
    if frag_offset == 0:
        l4 = ip[ihl:]
        if proto == PROTO_TCP:
            if len(l4) < 20:
                raise PacketDecodeError("truncated TCP header")
            sport = int.from_bytes(l4[0:2], "big")
            dport = int.from_bytes(l4[2:4], "big")
            seq = int.from_bytes(l4[4:8], "big")
            doff = (l4[12] >> 4) * 4
            tcp_flags = l4[13]
            payload_len = max(0, total_len - ihl - doff)
            f[F["tcp_src_port"]] = sport
            f[F["tcp_dst_port"]] = dport
            f[F["l4_length"]] = payload_len
            f[F["tcp_ack"]] = (tcp_flags >> 4) & 1
            f[F["tcp_psh"]] = (tcp_flags >> 3) & 1
            f[F["tcp_syn"]] = (tcp_flags >> 1) & 1
            f[F["tcp_fin"]] = tcp_flags & 1
            f[F["tcp_urg"]] = (tcp_flags >> 5) & 1
            if payload_len > 0:
                tcp_payload_range = (seq, seq + payload_len)
        elif proto == PROTO_UDP:
            if len(l4) < 8:
                raise PacketDecodeError("truncated UDP header")
            sport = int.from_bytes(l4[0:2], "big")
            dport = int.from_bytes(l4[2:4], "big")
            f[F["udp_src_port"]] = sport
            f[F["udp_dst_port"]] = dport
            f[F["l4_length"]] = int.from_bytes(l4[4:6], "big")
        elif proto == PROTO_ICMP:
            if len(l4) < 4:
                raise PacketDecodeError("truncated ICMP header")
            f[F["icmp_type"]] = l4[0]
            f[F["icmp_code"]] = l4[1]

    key = FlowKey(ip_src=src, ip_dst=dst, port_src=sport, port_dst=dport, protocol=proto)
    flow = flows.flow(key, now)
    f[F["flow_duration"]] = now - flow.start_time
    f[F["flow_start_time"]] = flow.start_time
    flow.last_seen = now

    if tcp_payload_range is not None:
        lo, hi = tcp_payload_range
        if _overlaps(flow.seen_tcp_ranges, lo, hi):
            f[F["tcp_retransmission"]] = 1.0
        _insert_range(flow.seen_tcp_ranges, lo, hi)

    return ExtractedRecord(features=f, timestamp=now)
