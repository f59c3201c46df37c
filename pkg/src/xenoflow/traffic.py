"""Deterministic packet-stream generation: pacing, source-IP distributions,
DNS payloads and latency probes.

Pacing is exact in simulated time: packet k is emitted at
``start + (k * num) // den`` nanoseconds where ``num/den`` is the rational
inter-arrival 1e9/rate_pps, so there is no cumulative drift.

The PRNG is SplitMix64 (state advances by 0x9E3779B97F4A7C15 per draw; output
is the xor-shift/multiply finalizer), chosen because it is trivially
reproducible across implementations and vectorizes as a counter-based
generator.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import packet as pkt
from . import pcapio

SPLITMIX64_GAMMA = 0x9E3779B97F4A7C15
_U64 = np.uint64
_MASK64 = (1 << 64) - 1

PROBE_DST_PORT = 5533  # distinguishes probe packets from background traffic
DEFAULT_PROBE_NAME = "a.de"  # 22-byte DNS query payload


def splitmix64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Draws offset..offset+n-1 of the SplitMix64 stream for `seed`."""
    ks = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    z = (_U64(seed & _MASK64) + ks * _U64(SPLITMIX64_GAMMA))
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


@dataclass
class UniformIPs:
    """Source IPs uniform over [lo, hi] inclusive."""

    lo: str | int = "10.0.0.0"
    hi: str | int = "10.255.255.255"

    def draw(self, seed: int, n: int) -> np.ndarray:
        lo = pkt.ip_to_int(self.lo)
        hi = pkt.ip_to_int(self.hi)
        if hi < lo:
            raise ValueError("hi < lo in uniform IP range")
        span = _U64(hi - lo + 1)
        draws = (splitmix64(seed, n) >> _U64(32)) % span
        return (draws + _U64(lo)).astype(np.int64)


@dataclass
class ParitySplit:
    """Exactly floor(even_percent) even-final-bit addresses per 100 packets,
    spread evenly inside each window."""

    even_percent: int = 50
    lo: str | int = "10.0.0.0"
    hi: str | int = "10.255.255.255"

    def __post_init__(self):
        if not 0 <= self.even_percent <= 100:
            raise ValueError("even_percent must be in [0, 100]")

    def draw(self, seed: int, n: int) -> np.ndarray:
        base = UniformIPs(self.lo, self.hi).draw(seed, n)
        x = int(self.even_percent)
        j = np.arange(n, dtype=np.int64) % 100
        even = ((j + 1) * x) // 100 - (j * x) // 100 == 1
        return np.where(even, base & ~np.int64(1), base | np.int64(1))


@dataclass
class TrafficProfile:
    payload_bytes: int = 22
    rate_pps: object = 1_000_000  # int/float/Fraction; kept exact internally
    count: int | None = None
    duration_s: float | None = None
    ip_src_dist: object = field(default_factory=UniformIPs)
    src_mac: str | int = "02:11:00:00:00:01"
    dst_mac: str | int = "02:aa:00:00:00:ff"
    dst_ip: str | int = "10.1.0.1"
    src_port: int = 4242
    dst_port: int = 53
    dns_name: str | None = None
    seed: int = 0
    jitter: str = "none"  # "none" (deterministic pacing) or "exp"

    def __post_init__(self):
        self.rate_pps = Fraction(self.rate_pps)
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be positive")
        if self.count is None and self.duration_s is None:
            raise ValueError("need count or duration_s")
        if self.jitter not in ("none", "exp"):
            raise ValueError(f"unknown jitter mode {self.jitter!r}")

    def packet_count(self) -> int:
        if self.count is not None:
            return int(self.count)
        return int(Fraction(self.duration_s) * self.rate_pps)

    def payload(self, txid: int = 0) -> bytes:
        if self.dns_name is not None:
            return pkt.dns_query(self.dns_name, txid=txid)
        return bytes(self.payload_bytes)

    def payload_len(self) -> int:
        return len(self.payload()) if self.dns_name is not None \
            else self.payload_bytes


class TrafficStream:
    """Columnar, ordered stream of (send_time_ns, Packet).

    Iterating materializes real frames lazily; the batch simulator consumes
    the columns directly.
    """

    def __init__(self, profile: TrafficProfile, start_ns: int = 0,
                 ingress_port: int = 0, phase_ns: int = 0):
        self.profile = profile
        self.start_ns = int(start_ns)
        self.ingress_port = ingress_port
        n = profile.packet_count()
        self.count = n
        iv = Fraction(10**9) / profile.rate_pps
        num, den = iv.numerator, iv.denominator
        if profile.jitter == "none":
            ks = np.arange(n + 1, dtype=np.int64)
            ticks = (ks * num) // den
        else:
            u = (splitmix64(profile.seed ^ 0x6A09E667F3BCC908, n + 1) >>
                 _U64(11)).astype(np.float64) * 2.0**-53
            gaps = np.rint(-np.log1p(-u) * float(iv)).astype(np.int64)
            ticks = np.concatenate(([0], np.cumsum(gaps)))
        self.times_ns = self.start_ns + phase_ns + ticks[:n]
        # end of the offered window: the would-be arrival instant of packet n
        self.window_end_ns = self.start_ns + phase_ns + int(ticks[n])
        self.ip_src = profile.ip_src_dist.draw(profile.seed, n)
        self.frame_len = pkt.HEADERS_LEN + profile.payload_len()

    def __len__(self) -> int:
        return self.count

    def header_constants(self) -> dict:
        p = self.profile
        return {
            "eth_src": pkt.mac_to_int(p.src_mac),
            "eth_dst": pkt.mac_to_int(p.dst_mac),
            "ip_dst": pkt.ip_to_int(p.dst_ip),
            "ip_proto": pkt.PROTO_UDP,
            "udp_src": p.src_port,
            "udp_dst": p.dst_port,
        }

    def packets(self):
        p = self.profile
        txids = None
        if p.dns_name is not None:
            txids = (splitmix64(p.seed ^ 0xBB67AE8584CAA73B, self.count) &
                     _U64(0xFFFF)).astype(np.int64)
        for k in range(self.count):
            payload = p.payload(int(txids[k]) if txids is not None else 0)
            packet = pkt.build_udp_packet(
                p.src_mac, p.dst_mac, int(self.ip_src[k]), p.dst_ip,
                p.src_port, p.dst_port, payload,
                ingress_port=self.ingress_port,
                arrival_ns=int(self.times_ns[k]))
            yield int(self.times_ns[k]), packet

    def __iter__(self):
        return self.packets()


def generate(profile: TrafficProfile, start_ns: int = 0,
             ingress_port: int = 0) -> TrafficStream:
    """Ordered (send_time_ns, Packet) stream under exact deterministic pacing."""
    return TrafficStream(profile, start_ns, ingress_port)


def probe_stream(count: int, rate_pps=None, *, window_ns: int | None = None,
                 payload_bytes: int | None = None, dns_name: str | None = DEFAULT_PROBE_NAME,
                 src_ip: str | int = "10.9.0.2", dst_port: int = PROBE_DST_PORT,
                 seed: int = 0, start_ns: int = 0, phase_ns: int = 7,
                 ingress_port: int = 0) -> TrafficStream:
    """Marked latency probes (distinguishing dst_port), paced across either an
    explicit rate or an enclosing window.  The small phase offset keeps probe
    arrivals off the background lattice."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if rate_pps is None:
        if window_ns is None:
            raise ValueError("need rate_pps or window_ns")
        rate_pps = Fraction(max(count, 1) * 10**9, int(window_ns))
    ip = pkt.ip_to_int(src_ip)
    profile = TrafficProfile(
        payload_bytes=payload_bytes if payload_bytes is not None else 22,
        rate_pps=rate_pps, count=count,
        ip_src_dist=UniformIPs(ip, ip),
        dst_port=dst_port, dns_name=dns_name if payload_bytes is None else None,
        seed=seed)
    return TrafficStream(profile, start_ns, ingress_port, phase_ns=phase_ns)


def dump_pcap(stream: TrafficStream, path, first_k: int | None = None) -> int:
    """Write the first K packets of a stream to a classic pcap file."""
    def frames():
        for i, (t, packet) in enumerate(stream):
            if first_k is not None and i >= first_k:
                return
            yield packet.frame, t
    return pcapio.write_pcap(path, frames())
