"""Hand-rolled packet and pcap builders for test captures.

Every header field is spelled out by the caller, so expected feature values
can be derived on paper straight from the arguments.  Checksums are written
as zero; the extractor never validates them.
"""

import struct

TCP_FLAG_BITS = {"F": 1, "S": 2, "R": 4, "P": 8, "A": 16, "U": 32}


def mac(text: str) -> bytes:
    return bytes(int(part, 16) for part in text.split(":"))


def ip4(text: str) -> bytes:
    return bytes(int(part) for part in text.split("."))


def ethernet(src: str, dst: str, ethertype: int, payload: bytes = b"") -> bytes:
    return mac(dst) + mac(src) + struct.pack(">H", ethertype) + payload


def ipv4(
    src: str,
    dst: str,
    proto: int,
    payload: bytes = b"",
    *,
    ttl: int = 64,
    tos: int = 0,
    ident: int = 0,
    mf: bool = False,
    frag_offset: int = 0,  # in 8-byte units
    total_length: int | None = None,
) -> bytes:
    if total_length is None:
        total_length = 20 + len(payload)
    flags_frag = (0x2000 if mf else 0) | (frag_offset & 0x1FFF)
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,  # version 4, IHL 5 words
        tos,
        total_length,
        ident,
        flags_frag,
        ttl,
        proto,
        0,
        ip4(src),
        ip4(dst),
    )
    return header + payload


def tcp(sport: int, dport: int, seq: int = 0, ack: int = 0, flags: str = "", payload: bytes = b"") -> bytes:
    bits = 0
    for ch in flags:
        bits |= TCP_FLAG_BITS[ch]
    header = struct.pack(">HHIIBBHHH", sport, dport, seq, ack, 5 << 4, bits, 8192, 0, 0)
    return header + payload


def udp(sport: int, dport: int, payload: bytes = b"", length: int | None = None) -> bytes:
    if length is None:
        length = 8 + len(payload)
    return struct.pack(">HHHH", sport, dport, length, 0) + payload


def icmp(icmp_type: int, code: int, rest: bytes = b"\x00" * 8) -> bytes:
    return struct.pack(">BBH", icmp_type, code, 0) + rest


def pcap_bytes(
    packets: list[tuple[int, int, bytes]],
    *,
    endian: str = "<",
    nanos: bool = False,
    snaplen: int = 65535,
    network: int = 1,
) -> bytes:
    """Classic pcap file from (sec, frac, frame bytes) tuples."""
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, snaplen, network)
    for sec, frac, data in packets:
        out += struct.pack(endian + "IIII", sec, frac, len(data), len(data)) + data
    return out
