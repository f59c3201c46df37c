"""Flow-pipe engine: pipe templates, entries, match/action semantics, verdicts.

A pipe declares what its entries may match and modify and where they may
forward.  Match fields and action fields each carry two independent knobs:

* binding: ``constant`` (value fixed by the pipe) or ``variable`` (value
  supplied per entry; the pipe-level match value must then be all ones);
* mask mode: ``explicit`` (a mask selects the compared/written bits) or
  ``implicit`` (mask omitted, the full field width is used).

Processing starts at the unique root pipe.  The first active matching entry
in insertion order fires: its actions apply in template order, then its
forward is followed.  A miss follows the pipe's miss forward (slow path in
vnf mode).  Traversal halts at a port, drop or slow-path target; a hop-count
guard turns miswired pipe cycles into an explicit drop.
"""

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import packet as pkt

# Matchable / writable fields and their widths in bits.
FIELDS = ("eth_src", "eth_dst", "ip_src", "ip_dst", "ip_proto",
          "udp_src", "udp_dst", "meta0", "meta1", "meta2", "meta3")
FIELD_WIDTHS = {
    "eth_src": 48, "eth_dst": 48, "ip_src": 32, "ip_dst": 32, "ip_proto": 8,
    "udp_src": 16, "udp_dst": 16, "meta0": 32, "meta1": 32, "meta2": 32,
    "meta3": 32,
}
FIELD_INDEX = {name: i for i, name in enumerate(FIELDS)}
N_FIELDS = len(FIELDS)
META_BASE = FIELD_INDEX["meta0"]

_HEADER_OFFSETS = {
    "eth_src": (pkt.OFF_ETH_SRC, 6),
    "eth_dst": (pkt.OFF_ETH_DST, 6),
    "ip_src": (pkt.OFF_IP_SRC, 4),
    "ip_dst": (pkt.OFF_IP_DST, 4),
    "ip_proto": (pkt.OFF_IP_PROTO, 1),
    "udp_src": (pkt.OFF_UDP_SRC, 2),
    "udp_dst": (pkt.OFF_UDP_DST, 2),
}

CONSTANT = "constant"
VARIABLE = "variable"


class EngineError(Exception):
    pass


class ValidationError(EngineError):
    pass


class PipeLimitError(EngineError):
    pass


class EntryLimitError(EngineError):
    pass


class MonitorDisabled(EngineError):
    pass


class UnsupportedMode(EngineError):
    pass


def full_mask(field_name: str) -> int:
    return (1 << FIELD_WIDTHS[field_name]) - 1


@dataclass(frozen=True)
class Forward:
    """Where a fired (or missed) packet goes: pipe, port, slow path or drop."""

    kind: str  # "pipe" | "port" | "slow_path" | "drop"
    arg: int = -1

    @staticmethod
    def pipe(pipe_id: int) -> "Forward":
        return Forward("pipe", pipe_id)

    @staticmethod
    def port(port_id: int) -> "Forward":
        return Forward("port", port_id)


SLOW_PATH = Forward("slow_path")
DROP = Forward("drop")
FORWARD_KINDS = ("pipe", "port", "slow_path", "drop")


@dataclass
class MatchField:
    """One matched field: mask=None means implicit (full-width) comparison."""

    field: str
    binding: str = CONSTANT
    value: int | None = None
    mask: int | None = None


@dataclass
class ActionField:
    """One written field; constant actions carry the value on the pipe."""

    field: str
    binding: str = CONSTANT
    value: int | None = None


@dataclass
class HashAction:
    """Specialized pipeline stage: CRC-32 of the IPv4/UDP five-tuple, reduced
    modulo `modulo`, written to a metadata register."""

    dst: str = "meta0"
    modulo: int = 1


@dataclass
class PipeSpec:
    name: str
    is_root: bool = False
    match: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    allowed_forwards: tuple = FORWARD_KINDS
    miss_forward: Forward = SLOW_PATH  # vnf mode default
    monitor: bool = False


@dataclass
class MonitorCounters:
    packets: int = 0
    bytes: int = 0


@dataclass
class PipeEntry:
    """Concrete rule: values for each variable field, a forward, counters."""

    match_values: dict = field(default_factory=dict)
    action_values: dict = field(default_factory=dict)
    forward: Forward = DROP
    priority: int = -1
    active_at_ns: int = 0
    counters: MonitorCounters = field(default_factory=MonitorCounters)
    global_id: int = -1


@dataclass
class EngineLimits:
    max_pipes: int = 15
    max_entries_per_pipe: int = 262144  # 256K
    max_pipe_hops: int = 15
    entry_insertion_latency_us: int = 305

    def __post_init__(self):
        for name in ("max_pipes", "max_entries_per_pipe", "max_pipe_hops",
                     "entry_insertion_latency_us"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


@dataclass
class Verdict:
    kind: str  # "egress" | "slow_path" | "drop"
    port: int = -1
    packet: pkt.Packet | None = None
    reason: str = ""


def five_tuple_hash(ip_src: int, ip_dst: int, ip_proto: int, udp_src: int,
                    udp_dst: int) -> int:
    """CRC-32 (poly 0x04C11DB7 reflected, init/xorout 0xFFFFFFFF) over the
    13-byte network-order five-tuple."""
    return zlib.crc32(struct.pack(">IIBHH", ip_src, ip_dst, ip_proto,
                                  udp_src, udp_dst))


def _crc32_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ 0xEDB88320 if c & 1 else c >> 1
        table[i] = c
    return table


CRC32_TABLE = _crc32_table()


def extract_fields(packet: pkt.Packet) -> list:
    """Header + metadata field values in FIELD_INDEX order; raises ParseError
    for frames the fast path does not understand."""
    view = pkt.parse(packet.frame)
    return [view.eth_src, view.eth_dst, view.ip_src, view.ip_dst,
            view.ip_proto, view.udp_src, view.udp_dst, *packet.meta]


class _Pipe:
    __slots__ = ("pipe_id", "spec", "entries", "variable_match",
                 "variable_actions")

    def __init__(self, pipe_id: int, spec: PipeSpec):
        self.pipe_id = pipe_id
        self.spec = spec
        self.entries: list[PipeEntry] = []
        self.variable_match = [m.field for m in spec.match
                               if m.binding == VARIABLE]
        self.variable_actions = [a.field for a in spec.actions
                                 if isinstance(a, ActionField)
                                 and a.binding == VARIABLE]


class Engine:
    """One eSwitch instance: a set of pipes with a unique root.

    Single-threaded by contract; wall-clock entry insertion is immediate while
    the simulated-time activation is delayed by the insertion latency.
    """

    def __init__(self, mode: str = "vnf", limits: EngineLimits | None = None,
                 clock=None):
        if mode != "vnf":
            if mode in ("switch", "remote_vnf", "remote-vnf"):
                raise UnsupportedMode(f"pipe mode {mode!r} is not supported")
            raise ValidationError(f"unknown pipe mode {mode!r}")
        self.mode = mode
        self.limits = limits or EngineLimits()
        self.clock = clock
        self.pipes: list[_Pipe] = []
        self.root_id: int | None = None
        self._all_entries: list[PipeEntry] = []
        self._program = None

    def _now_ns(self) -> int:
        return self.clock.now_ns if self.clock is not None else 0

    # -- pipe / entry management ------------------------------------------

    def create_pipe(self, spec: PipeSpec) -> int:
        if len(self.pipes) >= self.limits.max_pipes:
            raise PipeLimitError(f"pipe limit {self.limits.max_pipes} reached")
        if spec.is_root and self.root_id is not None:
            raise ValidationError("engine already has a root pipe")
        for m in spec.match:
            self._check_field(m.field)
            width = full_mask(m.field)
            if m.mask is not None and m.mask & ~width:
                raise ValidationError(f"mask {m.mask:#x} exceeds {m.field} width")
            if m.binding == VARIABLE:
                if m.value is None:
                    m.value = width
                elif m.value != width:
                    raise ValidationError(
                        f"variable match on {m.field} requires the pipe value "
                        f"to be all ones, got {m.value:#x}")
            elif m.binding == CONSTANT:
                if m.value is None:
                    raise ValidationError(f"constant match on {m.field} needs a value")
            else:
                raise ValidationError(f"unknown binding {m.binding!r}")
        for a in spec.actions:
            if isinstance(a, HashAction):
                if a.dst not in FIELDS or FIELD_INDEX[a.dst] < META_BASE:
                    raise ValidationError("hash destination must be a meta register")
                if a.modulo < 1:
                    raise ValidationError("hash modulo must be >= 1")
                continue
            self._check_field(a.field)
            if a.binding == CONSTANT and a.value is None:
                raise ValidationError(f"constant action on {a.field} needs a value")
            if a.binding not in (CONSTANT, VARIABLE):
                raise ValidationError(f"unknown binding {a.binding!r}")
        for kind in spec.allowed_forwards:
            if kind not in FORWARD_KINDS:
                raise ValidationError(f"unknown forward kind {kind!r}")
        pipe = _Pipe(len(self.pipes), spec)
        self.pipes.append(pipe)
        if spec.is_root:
            self.root_id = pipe.pipe_id
        self._program = None
        return pipe.pipe_id

    @staticmethod
    def _check_field(name: str) -> None:
        if name not in FIELD_INDEX:
            raise ValidationError(f"unknown field {name!r}")

    def add_entry(self, pipe_id: int, entry: PipeEntry) -> int:
        """Insert a rule; it becomes active entry_insertion_latency_us later
        in simulated time."""
        pipe = self._pipe(pipe_id)
        if len(pipe.entries) >= self.limits.max_entries_per_pipe:
            raise EntryLimitError(
                f"entry limit {self.limits.max_entries_per_pipe} reached on "
                f"pipe {pipe.spec.name!r}")
        if entry.forward.kind not in pipe.spec.allowed_forwards:
            raise ValidationError(
                f"forward kind {entry.forward.kind!r} not allowed on pipe "
                f"{pipe.spec.name!r}")
        if entry.forward.kind == "pipe" and not (
                0 <= entry.forward.arg < len(self.pipes)):
            raise ValidationError(f"forward references unknown pipe {entry.forward.arg}")
        if set(entry.match_values) != set(pipe.variable_match):
            raise ValidationError(
                f"entry must supply exactly the variable match fields "
                f"{sorted(pipe.variable_match)}, got {sorted(entry.match_values)}")
        if set(entry.action_values) != set(pipe.variable_actions):
            raise ValidationError(
                f"entry must supply exactly the variable action fields "
                f"{sorted(pipe.variable_actions)}, got {sorted(entry.action_values)}")
        entry.priority = len(pipe.entries)
        entry.active_at_ns = self._now_ns() + \
            self.limits.entry_insertion_latency_us * 1000
        entry.global_id = len(self._all_entries)
        pipe.entries.append(entry)
        self._all_entries.append(entry)
        self._program = None
        return entry.priority

    def _pipe(self, pipe_id: int) -> _Pipe:
        if not 0 <= pipe_id < len(self.pipes):
            raise ValidationError(f"unknown pipe id {pipe_id}")
        return self.pipes[pipe_id]

    def ready_at_ns(self) -> int:
        """Simulated time at which every inserted entry is active."""
        return max((e.active_at_ns for e in self._all_entries), default=0)

    # -- matching and processing ------------------------------------------

    def _effective(self, mf: MatchField, entry: PipeEntry):
        width = full_mask(mf.field)
        mask = width if mf.mask is None else mf.mask & width
        value = entry.match_values[mf.field] if mf.binding == VARIABLE else mf.value
        return mask, value & width

    def _entry_matches(self, pipe: _Pipe, entry: PipeEntry, fields: list) -> bool:
        for mf in pipe.spec.match:
            mask, value = self._effective(mf, entry)
            if (fields[FIELD_INDEX[mf.field]] & mask) != (value & mask):
                return False
        return True

    def matches(self, pipe_id: int, entry_id: int, packet: pkt.Packet) -> bool:
        """Pure match predicate: (field & mask) == (value & mask) per field."""
        pipe = self._pipe(pipe_id)
        entry = pipe.entries[entry_id]
        return self._entry_matches(pipe, entry, extract_fields(packet))

    def entry_active(self, pipe_id: int, entry_id: int, at_ns: int) -> bool:
        return self._pipe(pipe_id).entries[entry_id].active_at_ns <= at_ns

    def process(self, packet: pkt.Packet) -> Verdict:
        """Run one packet through the pipeline; returns exactly one verdict."""
        if self.root_id is None:
            raise ValidationError("engine has no root pipe")
        out = packet.copy()
        try:
            fields = extract_fields(out)
        except pkt.ParseError as exc:
            return Verdict("slow_path", packet=out, reason=str(exc))
        written: set[str] = set()
        pipe = self.pipes[self.root_id]
        hops = 0
        frame_len = len(out.frame)
        while True:
            hops += 1
            if hops > self.limits.max_pipe_hops:
                self._writeback(out, fields, written)
                return Verdict("drop", packet=out,
                               reason=f"pipe hop limit {self.limits.max_pipe_hops} exceeded")
            fired = None
            for entry in pipe.entries:
                if entry.active_at_ns <= out.arrival_ns and \
                        self._entry_matches(pipe, entry, fields):
                    fired = entry
                    break
            if fired is None:
                fwd = pipe.spec.miss_forward
            else:
                fired.counters.packets += 1
                fired.counters.bytes += frame_len
                self._apply_actions(pipe, fired, fields, written)
                fwd = fired.forward
            if fwd.kind == "pipe":
                pipe = self.pipes[fwd.arg]
                continue
            self._writeback(out, fields, written)
            if fwd.kind == "port":
                return Verdict("egress", port=fwd.arg, packet=out)
            if fwd.kind == "slow_path":
                return Verdict("slow_path", packet=out, reason="pipeline miss"
                               if fired is None else "slow-path forward")
            return Verdict("drop", packet=out, reason="drop forward")

    def _apply_actions(self, pipe: _Pipe, entry: PipeEntry, fields: list,
                       written: set) -> None:
        for act in pipe.spec.actions:
            if isinstance(act, HashAction):
                h = five_tuple_hash(fields[2], fields[3], fields[4],
                                    fields[5], fields[6])
                fields[FIELD_INDEX[act.dst]] = h % act.modulo
                written.add(act.dst)
                continue
            value = entry.action_values[act.field] \
                if act.binding == VARIABLE else act.value
            fields[FIELD_INDEX[act.field]] = value & full_mask(act.field)
            written.add(act.field)

    @staticmethod
    def _writeback(out: pkt.Packet, fields: list, written: set) -> None:
        ip_touched = False
        for name in written:
            idx = FIELD_INDEX[name]
            if idx >= META_BASE:
                out.meta[idx - META_BASE] = fields[idx]
                continue
            off, size = _HEADER_OFFSETS[name]
            out.frame[off:off + size] = fields[idx].to_bytes(size, "big")
            if name in ("ip_src", "ip_dst"):
                ip_touched = True
        if ip_touched:
            out.frame[pkt.OFF_IP_CKSUM:pkt.OFF_IP_CKSUM + 2] = b"\x00\x00"
            c = pkt.ipv4_header_checksum(out.frame[pkt.OFF_IP:pkt.OFF_IP + 20])
            out.frame[pkt.OFF_IP_CKSUM:pkt.OFF_IP_CKSUM + 2] = c.to_bytes(2, "big")

    # -- monitoring --------------------------------------------------------

    def counters(self, pipe_id: int, entry_id: int) -> MonitorCounters:
        """Snapshot of one entry's (packets, bytes); both from the same instant."""
        pipe = self._pipe(pipe_id)
        if not pipe.spec.monitor:
            raise MonitorDisabled(f"monitor disabled on pipe {pipe.spec.name!r}")
        c = pipe.entries[entry_id].counters
        return MonitorCounters(c.packets, c.bytes)

    def add_counts(self, packets_by_entry, bytes_by_entry) -> None:
        """Fold batch-run counter deltas (indexed by global entry id) back in."""
        for entry in self._all_entries:
            entry.counters.packets += int(packets_by_entry[entry.global_id])
            entry.counters.bytes += int(bytes_by_entry[entry.global_id])

    @property
    def n_entries(self) -> int:
        return len(self._all_entries)

    # -- compilation for the batch backends --------------------------------

    def compile(self) -> "CompiledProgram":
        if self._program is None:
            self._program = CompiledProgram(self)
        return self._program


class CompiledProgram:
    """Flat array form of an engine's pipes/entries for the batch kernels."""

    def __init__(self, eng: Engine):
        if eng.root_id is None:
            raise ValidationError("engine has no root pipe")
        self.root = eng.root_id
        self.max_hops = eng.limits.max_pipe_hops
        self.n_entries = eng.n_entries
        self.uses_hash = any(isinstance(a, HashAction)
                             for p in eng.pipes for a in p.spec.actions)
        n_pipes = len(eng.pipes)
        fwd_code = {"port": 0, "pipe": 1, "slow_path": 2, "drop": 3}

        entry_start = [0]
        miss_kind = np.zeros(n_pipes, dtype=np.int32)
        miss_arg = np.zeros(n_pipes, dtype=np.int32)
        active_ns, e_fwd_kind, e_fwd_arg, e_gid = [], [], [], []
        m_start, m_field, m_mask, m_value = [0], [], [], []
        a_start, a_kind, a_field, a_value = [0], [], [], []

        for pipe in eng.pipes:
            miss_kind[pipe.pipe_id] = fwd_code[pipe.spec.miss_forward.kind]
            miss_arg[pipe.pipe_id] = pipe.spec.miss_forward.arg
            for entry in pipe.entries:
                active_ns.append(entry.active_at_ns)
                e_fwd_kind.append(fwd_code[entry.forward.kind])
                e_fwd_arg.append(entry.forward.arg)
                e_gid.append(entry.global_id)
                for mf in pipe.spec.match:
                    mask, value = eng._effective(mf, entry)
                    m_field.append(FIELD_INDEX[mf.field])
                    m_mask.append(mask)
                    m_value.append(value & mask)
                m_start.append(len(m_field))
                for act in pipe.spec.actions:
                    if isinstance(act, HashAction):
                        a_kind.append(1)
                        a_field.append(FIELD_INDEX[act.dst])
                        a_value.append(act.modulo)
                    else:
                        a_kind.append(0)
                        a_field.append(FIELD_INDEX[act.field])
                        v = entry.action_values[act.field] \
                            if act.binding == VARIABLE else act.value
                        a_value.append(v & full_mask(act.field))
                a_start.append(len(a_kind))
            entry_start.append(len(active_ns))

        self.pipe_entry_start = np.asarray(entry_start, dtype=np.int32)
        self.pipe_miss_kind = miss_kind
        self.pipe_miss_arg = miss_arg
        self.entry_active_ns = np.asarray(active_ns, dtype=np.int64)
        self.entry_fwd_kind = np.asarray(e_fwd_kind, dtype=np.int32)
        self.entry_fwd_arg = np.asarray(e_fwd_arg, dtype=np.int32)
        self.entry_gid = np.asarray(e_gid, dtype=np.int32)
        self.match_start = np.asarray(m_start, dtype=np.int32)
        self.match_field = np.asarray(m_field, dtype=np.int32)
        self.match_mask = np.asarray(m_mask, dtype=np.int64)
        self.match_value = np.asarray(m_value, dtype=np.int64)
        self.act_start = np.asarray(a_start, dtype=np.int32)
        self.act_kind = np.asarray(a_kind, dtype=np.int32)
        self.act_field = np.asarray(a_field, dtype=np.int32)
        self.act_value = np.asarray(a_value, dtype=np.int64)
