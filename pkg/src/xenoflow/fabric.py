"""Deterministic fabric simulation: ports, wiring, the calibrated capacity and
latency model, and the queued packet paths.

Model summary
-------------
Every parse-ok packet entering a *wired* ingress port is classified by the
flow-pipe engine.  Egress verdicts pass through a single per-run FIFO whose
deterministic service rate is min(pps-cap table, line rate / wire size);
overflow drops are attributed to ``dropped_capacity`` when the pps cap is the
binding term and to ``dropped_queue`` when the line rate is.  Slow-path
verdicts (and *all* traffic on an unwired ingress port, the misconfiguration
symptom) are serviced by the rate-limited slow path.  Entry counters reflect
packets the pipeline processed, excluding ones discarded by the fast queue.

Time is integer nanoseconds.  Service accumulates as an exact rational per
busy period (k-th departure at T0 + (k*p)//q), so rates carry no drift.
Per-packet latency is queueing delay (waiting time) plus the path constant;
probe RTT = base RTT + path constant + 2x waiting time.
"""

import csv
import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import engine as eng
from . import packet as pkt
from ._speed import impl

PATH_DIRECT = "direct"
PATH_XENOFLOW = "xenoflow"
PATH_HOST = "host_lb"

_N_FIELDS = eng.N_FIELDS


class SimClock:
    """Integer-nanosecond event clock; ties break by schedule order."""

    def __init__(self, now_ns: int = 0):
        self.now_ns = int(now_ns)
        self._heap = []
        self._seq = 0

    def schedule(self, at_ns: int, fn, *args) -> None:
        if at_ns < self.now_ns:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (int(at_ns), self._seq, fn, args))
        self._seq += 1

    def run(self, until_ns: int | None = None) -> None:
        while self._heap and (until_ns is None or self._heap[0][0] <= until_ns):
            at, _, fn, args = heapq.heappop(self._heap)
            self.now_ns = at
            fn(*args)
        if until_ns is not None and until_ns > self.now_ns:
            self.now_ns = until_ns

    def advance_to(self, at_ns: int) -> None:
        self.run(until_ns=int(at_ns))


@dataclass
class Port:
    id: int
    name: str
    egress_packets: int = 0
    egress_bytes: int = 0


class WiringError(ValueError):
    pass


class Fabric:
    """Ports plus the OVS-like wiring layer in front of the engine."""

    def __init__(self):
        self.ports: list[Port] = []
        self._by_name: dict[str, Port] = {}
        self.wiring: dict[str, str] = {}

    def add_port(self, name: str) -> Port:
        if name in self._by_name:
            raise WiringError(f"duplicate port name {name!r}")
        port = Port(len(self.ports), name)
        self.ports.append(port)
        self._by_name[name] = port
        return port

    def port(self, name: str) -> Port:
        try:
            return self._by_name[name]
        except KeyError:
            raise WiringError(f"unknown port {name!r}") from None

    def add_wiring(self, in_port: str, out_port: str) -> int:
        """Route ingress on `in_port` to fast-path service; without a rule the
        slow path services it."""
        self.port(in_port)
        self.port(out_port)
        if in_port in self.wiring:
            raise WiringError(f"wiring rule for {in_port!r} already exists")
        self.wiring[in_port] = out_port
        return len(self.wiring) - 1

    def is_wired(self, in_port: str) -> bool:
        return in_port in self.wiring


def standard_testbed(wired: bool = True) -> Fabric:
    """Two wire ports plus the host physical function, optionally with the
    pf1hpf -> p1 rule the fast path needs."""
    fabric = Fabric()
    for name in ("p0", "p1", "pf1hpf"):
        fabric.add_port(name)
    if wired:
        fabric.add_wiring("pf1hpf", "p1")
    return fabric


def _as_fraction(x) -> Fraction:
    f = Fraction(x)
    if f.denominator > 1_000_000:  # keep kernel integers small; sub-ppm error
        f = f.limit_denominator(1_000_000)
    return f


@dataclass
class CapacityModel:
    """Calibrated capacity/latency constants of the modeled data path."""

    pps_cap_table: tuple = ((64, 96.7e6), (math.inf, 92.8e6))
    line_rate_bps: float = 100e9
    wire_overhead_bytes: int = 24
    slow_path_pps: float = 100e3
    slow_path_bps: float = 1e9
    fastpath_added_latency_us: float = 5.2
    hostpath_added_latency_us: float = 9.3
    base_rtt_us: float = 102.0
    queue_depth_packets: int = 4096
    hostpath_pps_cap: float | None = None  # optional host-path capacity entry

    def __post_init__(self):
        table = tuple((float(t), float(c)) for t, c in self.pps_cap_table)
        if not table:
            raise ValueError("pps_cap_table must not be empty")
        thresholds = [t for t, _ in table]
        if thresholds != sorted(thresholds) or len(set(thresholds)) != len(thresholds):
            raise ValueError("pps_cap_table thresholds must be strictly increasing")
        if any(c <= 0 for _, c in table):
            raise ValueError("pps caps must be positive")
        if self.line_rate_bps <= 0:
            raise ValueError("line rate must be positive")
        self.pps_cap_table = table

    @classmethod
    def from_calibration_csv(cls, path, **overrides) -> "CapacityModel":
        """Load a (frame_bytes, pps_cap) table; last row may use `inf`."""
        table = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["frame_bytes", "pps_cap"]:
                raise ValueError(
                    f"calibration header must be frame_bytes,pps_cap, got "
                    f"{reader.fieldnames}")
            for row in reader:
                table.append((float(row["frame_bytes"]), float(row["pps_cap"])))
        return cls(pps_cap_table=tuple(table), **overrides)

    def pps_cap(self, frame_bytes: int, path: str = PATH_XENOFLOW) -> float:
        if path == PATH_HOST and self.hostpath_pps_cap is not None:
            return self.hostpath_pps_cap
        for threshold, cap in self.pps_cap_table:
            if frame_bytes <= threshold:
                return cap
        return self.pps_cap_table[-1][1]

    def line_pps(self, frame_bytes: int) -> Fraction:
        wire = frame_bytes + self.wire_overhead_bytes
        return _as_fraction(self.line_rate_bps) / (8 * wire)

    def service_fraction(self, frame_bytes: int, path: str) -> Fraction:
        if path == "slow":
            return min(_as_fraction(self.slow_path_pps),
                       _as_fraction(self.slow_path_bps) / (8 * frame_bytes))
        if path == PATH_DIRECT:
            return self.line_pps(frame_bytes)
        return min(_as_fraction(self.pps_cap(frame_bytes, path)),
                   self.line_pps(frame_bytes))

    def service_rate(self, frame_bytes: int, path: str = PATH_XENOFLOW) -> float:
        """Deterministic per-path service rate in pps for one frame size."""
        return float(self.service_fraction(frame_bytes, path))

    def cap_is_binding(self, frame_bytes: int, path: str) -> bool:
        return _as_fraction(self.pps_cap(frame_bytes, path)) <= \
            self.line_pps(frame_bytes)

    def added_latency_ns(self, path: str) -> int:
        if path == PATH_DIRECT:
            return 0
        us = self.hostpath_added_latency_us if path == PATH_HOST \
            else self.fastpath_added_latency_us
        return round(us * 1000)

    def base_rtt_ns(self) -> int:
        return round(self.base_rtt_us * 1000)


@dataclass
class RunStats:
    """Exact per-run accounting; offered = achieved + dropped_capacity +
    dropped_queue + slow_path_delivered + residual_in_queue (+ rule drops)."""

    offered: int = 0
    achieved: int = 0
    dropped_capacity: int = 0
    dropped_queue: int = 0
    slow_path_delivered: int = 0
    residual_in_queue: int = 0
    dropped_by_rule: int = 0
    window_ns: int = 0
    offered_pps: float = 0.0
    achieved_pps: float = 0.0
    probes_sent: int = 0
    probes_answered: int = 0
    probes_dropped: int = 0
    probe_rtts_ns: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def residual_error(self) -> int:
        return self.offered - (self.achieved + self.dropped_capacity +
                               self.dropped_queue + self.slow_path_delivered +
                               self.residual_in_queue + self.dropped_by_rule)

    def total_delivered(self) -> int:
        return self.achieved + self.slow_path_delivered

    def median_rtt_us(self) -> float | None:
        if self.probe_rtts_ns.size == 0:
            return None
        s = np.sort(self.probe_rtts_ns)
        return int(s[(s.size - 1) // 2]) / 1000.0

    def stddev_rtt_us(self) -> float | None:
        if self.probe_rtts_ns.size == 0:
            return None
        return float(np.std(self.probe_rtts_ns.astype(np.float64))) / 1000.0


def _interval(rate: Fraction) -> tuple:
    iv = Fraction(10**9) / rate
    return iv.numerator, iv.denominator


def _fifo_mixed(times, intervals, depth, window_end):
    """Exact FIFO for per-packet rational service intervals (mixed frame
    sizes); Fraction accumulation, Python speed — small custom runs only."""
    m = len(times)
    start = np.full(m, -1, dtype=np.int64)
    finish = np.full(m, -1, dtype=np.int64)
    ring = [0] * depth
    t0 = 0
    acc = Fraction(0)
    admitted = 0
    last_finish = -1
    dropped = delivered = 0
    for i in range(m):
        t = int(times[i])
        if t >= last_finish:
            t0, acc = t, Fraction(0)
        elif admitted >= depth and ring[(admitted - depth) % depth] > t:
            dropped += 1
            continue
        start[i] = t if acc == 0 else max(t, t0 + int(acc))
        acc += intervals[i]
        f = t0 + int(acc)
        finish[i] = f
        ring[admitted % depth] = f
        admitted += 1
        last_finish = f
        if f <= window_end:
            delivered += 1
    return start, finish, delivered, admitted - delivered, dropped


def _queue(times, service_fracs, depth, window_end):
    """Dispatch to the uniform-rate kernel or the exact mixed-rate fallback."""
    uniq = set(service_fracs)
    if len(uniq) <= 1:
        rate = next(iter(uniq)) if uniq else Fraction(1)
        p, q = _interval(rate)
        return impl.fifo(times, p, q, depth, int(window_end))
    return _fifo_mixed(times, [Fraction(10**9) / f for f in service_fracs],
                       depth, window_end)


class _Merged:
    """Merged, time-sorted column view over tagged streams."""

    def __init__(self, tagged_streams, start_ns: int):
        sizes = [len(s) for s, _ in tagged_streams]
        n_all = sum(sizes)
        self.n = n_all
        self.times = np.empty(n_all, dtype=np.int64)
        self.tags = np.empty(n_all, dtype=np.int8)
        self.frame_len = np.empty(n_all, dtype=np.int64)
        self.cols = np.zeros((n_all, _N_FIELDS), dtype=np.int64)
        if n_all == 0:
            return
        times = np.concatenate([np.asarray(s.times_ns, np.int64) + start_ns
                                for s, _ in tagged_streams])
        tags = np.concatenate([np.full(n, tag, dtype=np.int8)
                               for n, (_, tag) in zip(sizes, tagged_streams)])
        seq = np.concatenate([np.arange(n, dtype=np.int64) for n in sizes])
        order = np.lexsort((seq, tags, times))
        self.times = times[order]
        self.tags = tags[order]
        self.frame_len = np.concatenate(
            [np.full(n, s.frame_len, dtype=np.int64)
             for n, (s, _) in zip(sizes, tagged_streams)])[order]
        inverse = np.empty(n_all, dtype=np.int64)
        inverse[order] = np.arange(n_all)
        ip_src = np.concatenate([np.asarray(s.ip_src, np.int64)
                                 for s, _ in tagged_streams])
        self.cols[:, eng.FIELD_INDEX["ip_src"]] = ip_src[order]
        base = 0
        for n, (s, _) in zip(sizes, tagged_streams):
            rows = inverse[base:base + n]
            for name, value in s.header_constants().items():
                self.cols[rows, eng.FIELD_INDEX[name]] = value
            base += n


def run(engine, stream, model: CapacityModel, fabric: Fabric | None = None, *,
        path: str = PATH_XENOFLOW, probes=None, ingress: str = "pf1hpf",
        start_ns: int | None = None, window_ns: int | None = None) -> RunStats:
    """Run a finite stream (plus optional probes) through the engine and the
    queued paths; see the module docstring for the model."""
    if path not in (PATH_XENOFLOW, PATH_HOST, PATH_DIRECT):
        raise ValueError(f"unknown path {path!r}")
    if fabric is None:
        fabric = standard_testbed()
    if start_ns is None:
        start_ns = engine.ready_at_ns() if engine is not None else 0
    tagged = [(s, tag) for s, tag in ((stream, 0), (probes, 1)) if s is not None]
    merged = _Merged(tagged, start_ns)
    n_bg = len(stream) if stream is not None else 0

    if window_ns is not None:
        window_end = start_ns + window_ns
    else:
        window_end = max((s.window_end_ns + start_ns for s, _ in tagged),
                         default=start_ns)

    stats = RunStats(offered=n_bg, window_ns=window_end - start_ns)
    if stream is not None:
        stats.offered_pps = float(stream.profile.rate_pps)
    if merged.n == 0:
        return stats

    is_probe = merged.tags == 1
    bg = ~is_probe
    stats.probes_sent = int(is_probe.sum())

    wired = fabric.is_wired(ingress)
    n_entries = engine.n_entries if engine is not None else 0
    fired = np.full((merged.n, 1), -1, dtype=np.int32)
    if path == PATH_DIRECT:
        verdict = np.full(merged.n, impl.VERDICT_EGRESS, dtype=np.int8)
        out_name = fabric.wiring.get(ingress, "p1")
        egress = np.full(merged.n, fabric.port(out_name).id, dtype=np.int32)
    elif not wired:
        # the misconfiguration symptom: everything lands on the slow path
        verdict = np.full(merged.n, impl.VERDICT_SLOW, dtype=np.int8)
        egress = np.full(merged.n, -1, dtype=np.int32)
    else:
        if engine is None:
            raise ValueError("wired fast path needs an engine")
        prog = engine.compile()
        if prog.uses_hash:
            hash_col = impl.crc32_columns(
                eng.CRC32_TABLE,
                merged.cols[:, eng.FIELD_INDEX["ip_src"]],
                merged.cols[:, eng.FIELD_INDEX["ip_dst"]],
                merged.cols[:, eng.FIELD_INDEX["ip_proto"]],
                merged.cols[:, eng.FIELD_INDEX["udp_src"]],
                merged.cols[:, eng.FIELD_INDEX["udp_dst"]])
        else:
            hash_col = np.zeros(merged.n, dtype=np.uint32)
        parse_ok = np.ones(merged.n, dtype=bool)  # generated streams are UDP
        verdict, egress, fired = impl.classify(
            prog, merged.cols, parse_ok, hash_col, merged.times)

    fast_mask = verdict == impl.VERDICT_EGRESS
    slow_mask = verdict == impl.VERDICT_SLOW
    rule_mask = verdict == impl.VERDICT_DROP

    counted = np.zeros(merged.n, dtype=bool)      # processed by the pipeline
    delivered_m = np.zeros(merged.n, dtype=bool)  # serviced within the window
    residual_m = np.zeros(merged.n, dtype=bool)
    dropped_m = np.zeros(merged.n, dtype=bool)    # queue-overflow discard
    wait_ns = np.zeros(merged.n, dtype=np.int64)

    def run_queue_subset(mask, subset_path):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return
        fracs = [model.service_fraction(int(f), subset_path)
                 for f in np.unique(merged.frame_len[idx])]
        per_packet = [model.service_fraction(int(f), subset_path)
                      for f in merged.frame_len[idx]] if len(fracs) > 1 else \
            [fracs[0]] * idx.size
        start_arr, finish, _, _, _ = _queue(
            merged.times[idx], per_packet, model.queue_depth_packets, window_end)
        admitted = start_arr >= 0
        counted[idx[admitted]] = True
        wait_ns[idx[admitted]] = (start_arr - merged.times[idx])[admitted]
        done = admitted & (finish <= window_end)
        delivered_m[idx[done]] = True
        residual_m[idx[admitted & ~done]] = True
        dropped_m[idx[~admitted]] = True

    run_queue_subset(fast_mask, path)
    run_queue_subset(slow_mask, "slow")

    # exact background accounting
    stats.achieved = int((delivered_m & fast_mask & bg).sum())
    stats.slow_path_delivered = int((delivered_m & slow_mask & bg).sum())
    stats.residual_in_queue = int((residual_m & bg).sum())
    stats.dropped_by_rule = int((rule_mask & bg).sum())
    fast_drops = int((dropped_m & fast_mask & bg).sum())
    slow_drops = int((dropped_m & slow_mask & bg).sum())
    frame = int(merged.frame_len[bg][0]) if n_bg else 0
    if n_bg and model.cap_is_binding(frame, path) and path != PATH_DIRECT:
        stats.dropped_capacity = fast_drops
        stats.dropped_queue = slow_drops
    else:
        stats.dropped_capacity = 0
        stats.dropped_queue = fast_drops + slow_drops
    if stats.offered:
        stats.achieved_pps = stats.achieved * stats.offered_pps / stats.offered

    # probe RTTs: base + path constant + queueing both ways
    if probes is not None:
        answered = delivered_m & is_probe
        stats.probes_answered = int(answered.sum())
        stats.probes_dropped = int(((dropped_m | residual_m) & is_probe).sum())
        const = model.base_rtt_ns() + model.added_latency_ns(path)
        stats.probe_rtts_ns = (const + 2 * wait_ns[answered]).astype(np.int64)

    # egress port counters cover fast-path frames serviced within the window
    if path != PATH_DIRECT and wired:
        done_fast = delivered_m & fast_mask
        for pid in np.unique(egress[done_fast]):
            if 0 <= pid < len(fabric.ports):
                sel = done_fast & (egress == pid)
                fabric.ports[pid].egress_packets += int(sel.sum())
                fabric.ports[pid].egress_bytes += int(merged.frame_len[sel].sum())

    # entry counters: processed packets only (fast-queue discards excluded)
    if wired and path != PATH_DIRECT and n_entries:
        include = counted | slow_mask | rule_mask
        packets_d, bytes_d = impl.accumulate(fired, include, merged.frame_len,
                                             n_entries)
        engine.add_counts(packets_d, bytes_d)

    return stats


def rtt_probe(engine, path: str, background_load, model: CapacityModel, *,
              payload_bytes: int = 22, probe_count: int = 2700,
              scale: int = 1_000_000, seed: int = 0,
              fabric: Fabric | None = None, even_percent: int = 50) -> float:
    """Median probe RTT in µs with background at `background_load` (fraction
    of the binding capacity for the payload size)."""
    from . import traffic as tg

    frac = Fraction(background_load)
    if frac < 0:
        raise ValueError("background_load must be >= 0")
    frame = pkt.HEADERS_LEN + payload_bytes
    stream = None
    if frac > 0:
        rate = frac * model.service_fraction(frame, path)
        profile = tg.TrafficProfile(
            payload_bytes=payload_bytes, rate_pps=rate, count=scale,
            ip_src_dist=tg.ParitySplit(even_percent), seed=seed)
        stream = tg.generate(profile)
        probes = tg.probe_stream(probe_count, window_ns=stream.window_end_ns,
                                 payload_bytes=payload_bytes, seed=seed + 1)
    else:
        probes = tg.probe_stream(probe_count, rate_pps=1_000_000,
                                 payload_bytes=payload_bytes, seed=seed + 1)
    stats = run(engine, stream, model, fabric, path=path, probes=probes)
    med = stats.median_rtt_us()
    if med is None:
        raise RuntimeError("no probe samples collected")
    return med
