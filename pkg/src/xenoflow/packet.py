"""Ethernet/IPv4/UDP frame construction, parsing and wire-size arithmetic."""

import random
import struct
from dataclasses import dataclass, field

ETH_HLEN = 14
IPV4_HLEN = 20
UDP_HLEN = 8
HEADERS_LEN = ETH_HLEN + IPV4_HLEN + UDP_HLEN  # 42
MAX_PAYLOAD = 1500 - HEADERS_LEN  # 1458: full frame stays within 1500 bytes

ETHERTYPE_IPV4 = 0x0800
PROTO_UDP = 17

IP_TTL_DEFAULT = 64

# Fixed offsets for builder frames (IHL = 5).
OFF_ETH_DST = 0
OFF_ETH_SRC = 6
OFF_ETHERTYPE = 12
OFF_IP = 14
OFF_IP_TOTLEN = 16
OFF_IP_PROTO = 23
OFF_IP_CKSUM = 24
OFF_IP_SRC = 26
OFF_IP_DST = 30
OFF_UDP = 34
OFF_UDP_SRC = 34
OFF_UDP_DST = 36
OFF_UDP_LEN = 38
OFF_UDP_CKSUM = 40

# Per-frame wire overhead: 4 FCS + 8 preamble + 12 inter-frame gap.
# Frame-level counters exclude the FCS; wire-level rate math adds all 24.
WIRE_OVERHEAD = 24

META_REGS = 4  # 32-bit scratch registers, zero on ingress


class ParseError(ValueError):
    """Frame cannot be parsed for the load-balanced path."""


class TruncatedFrame(ParseError):
    pass


class UnsupportedEthertype(ParseError):
    """Non-IPv4 frame; slow-path candidate, not a crash."""


class UnsupportedProtocol(ParseError):
    """Non-UDP IPv4 packet; slow-path candidate, not a crash."""


def mac_to_int(mac) -> int:
    if isinstance(mac, int):
        return mac
    if isinstance(mac, (bytes, bytearray)):
        return int.from_bytes(mac, "big")
    return int(mac.replace(":", "").replace("-", ""), 16)


def int_to_mac(value: int) -> str:
    return ":".join(f"{(value >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def ip_to_int(ip) -> int:
    if isinstance(ip, int):
        return ip
    a, b, c, d = (int(x) for x in ip.split("."))
    return (a << 24) | (b << 16) | (c << 8) | d


def int_to_ip(value: int) -> str:
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


@dataclass
class Packet:
    """A frame plus the per-packet state the pipeline operates on."""

    frame: bytearray
    ingress_port: int = 0
    arrival_ns: int = 0
    meta: list = field(default_factory=lambda: [0] * META_REGS)

    def copy(self) -> "Packet":
        return Packet(bytearray(self.frame), self.ingress_port, self.arrival_ns,
                      list(self.meta))

    def __len__(self) -> int:
        return len(self.frame)


@dataclass
class HeaderView:
    """Parsed Ethernet/IPv4/UDP fields over a frame.

    Re-serializing an unmodified view reproduces the original bytes exactly;
    modified fields are written back verbatim (checksums are not recomputed).
    """

    eth_dst: int
    eth_src: int
    ip_src: int
    ip_dst: int
    ip_proto: int
    udp_src: int
    udp_dst: int
    udp_payload_len: int
    _frame: bytes = b""
    _udp_off: int = OFF_UDP

    def payload(self) -> bytes:
        return bytes(self._frame[self._udp_off + UDP_HLEN:])

    def to_bytes(self) -> bytes:
        buf = bytearray(self._frame)
        buf[OFF_ETH_DST:OFF_ETH_DST + 6] = self.eth_dst.to_bytes(6, "big")
        buf[OFF_ETH_SRC:OFF_ETH_SRC + 6] = self.eth_src.to_bytes(6, "big")
        buf[OFF_IP_PROTO] = self.ip_proto
        buf[OFF_IP_SRC:OFF_IP_SRC + 4] = self.ip_src.to_bytes(4, "big")
        buf[OFF_IP_DST:OFF_IP_DST + 4] = self.ip_dst.to_bytes(4, "big")
        struct.pack_into(">HH", buf, self._udp_off, self.udp_src, self.udp_dst)
        return bytes(buf)


def ipv4_header_checksum(header) -> int:
    """Standard Internet checksum over a 20-byte header (checksum field zeroed)."""
    if len(header) != IPV4_HLEN:
        raise ValueError(f"expected {IPV4_HLEN}-byte header, got {len(header)}")
    return _ones_complement(header)


def _ones_complement(data) -> int:
    s = 0
    for i in range(0, len(data) - 1, 2):
        s += (data[i] << 8) | data[i + 1]
    if len(data) & 1:
        s += data[-1] << 8
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return (~s) & 0xFFFF


def _udp_checksum(ip_src: int, ip_dst: int, udp_segment) -> int:
    pseudo = struct.pack(">IIxBH", ip_src, ip_dst, PROTO_UDP, len(udp_segment))
    c = _ones_complement(pseudo + bytes(udp_segment))
    return c if c != 0 else 0xFFFF  # 0 means "no checksum" on the wire


def build_udp_packet(src_mac, dst_mac, ip_src, ip_dst, sport: int, dport: int,
                     payload: bytes = b"", *, ingress_port: int = 0,
                     arrival_ns: int = 0) -> Packet:
    """Build a checksummed Ethernet/IPv4/UDP frame; length = 42 + payload."""
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload too large: {len(payload)} > {MAX_PAYLOAD}")
    src_mac = mac_to_int(src_mac)
    dst_mac = mac_to_int(dst_mac)
    ip_src = ip_to_int(ip_src)
    ip_dst = ip_to_int(ip_dst)

    udp_len = UDP_HLEN + len(payload)
    udp = bytearray(struct.pack(">HHHH", sport, dport, udp_len, 0)) + payload
    struct.pack_into(">H", udp, 6, _udp_checksum(ip_src, ip_dst, udp))

    total_len = IPV4_HLEN + udp_len
    ip = bytearray(struct.pack(">BBHHHBBHII", 0x45, 0, total_len, 0, 0,
                               IP_TTL_DEFAULT, PROTO_UDP, 0, ip_src, ip_dst))
    struct.pack_into(">H", ip, 10, ipv4_header_checksum(ip))

    eth = dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big") + \
        struct.pack(">H", ETHERTYPE_IPV4)
    return Packet(bytearray(eth) + ip + udp, ingress_port, arrival_ns)


def parse(frame) -> HeaderView:
    """Parse Ethernet/IPv4/UDP headers; rejects anything else for the fast path."""
    if len(frame) < ETH_HLEN:
        raise TruncatedFrame(f"{len(frame)}-byte frame, below Ethernet header")
    ethertype = (frame[OFF_ETHERTYPE] << 8) | frame[OFF_ETHERTYPE + 1]
    if ethertype != ETHERTYPE_IPV4:
        raise UnsupportedEthertype(f"ethertype {ethertype:#06x}")
    if len(frame) < ETH_HLEN + IPV4_HLEN:
        raise TruncatedFrame("frame too short for IPv4 header")
    vihl = frame[OFF_IP]
    if vihl >> 4 != 4:
        raise ParseError(f"IP version {vihl >> 4}")
    ihl = (vihl & 0x0F) * 4
    if ihl < IPV4_HLEN:
        raise ParseError(f"bad IHL {ihl}")
    proto = frame[OFF_IP_PROTO]
    if proto != PROTO_UDP:
        raise UnsupportedProtocol(f"ip protocol {proto}")
    udp_off = ETH_HLEN + ihl
    if len(frame) < udp_off + UDP_HLEN:
        raise TruncatedFrame("frame too short for UDP header")
    sport, dport, udp_len = struct.unpack_from(">HHH", frame, udp_off)
    return HeaderView(
        eth_dst=int.from_bytes(frame[OFF_ETH_DST:OFF_ETH_DST + 6], "big"),
        eth_src=int.from_bytes(frame[OFF_ETH_SRC:OFF_ETH_SRC + 6], "big"),
        ip_src=int.from_bytes(frame[OFF_IP_SRC:OFF_IP_SRC + 4], "big"),
        ip_dst=int.from_bytes(frame[OFF_IP_DST:OFF_IP_DST + 4], "big"),
        ip_proto=proto,
        udp_src=sport,
        udp_dst=dport,
        udp_payload_len=udp_len - UDP_HLEN,
        _frame=bytes(frame),
        _udp_off=udp_off,
    )


def dns_query(name: str, txid: int | None = None,
              rng: random.Random | None = None) -> bytes:
    """Encode an A/IN DNS query message for `name` (dot-separated labels)."""
    if txid is None:
        txid = (rng or random).getrandbits(16)
    out = bytearray(struct.pack(">HHHHHH", txid, 0x0100, 1, 0, 0, 0))
    if name:
        for label in name.split("."):
            raw = label.encode("ascii")
            if len(raw) > 63:
                raise ValueError(f"label too long: {len(raw)} > 63")
            out.append(len(raw))
            out += raw
    out.append(0)
    out += struct.pack(">HH", 1, 1)  # QTYPE A, QCLASS IN
    return bytes(out)


def wire_size(frame_len: int) -> int:
    """Bytes a frame occupies on the wire (frame_len >= 42 expected)."""
    return frame_len + WIRE_OVERHEAD
