"""Load-balancer pipelines: low-bits source-IP selection with MAC rewrite,
the five-tuple-hash variant, and the counter-derived bandwidth metric."""

from dataclasses import dataclass

from . import packet as pkt
from .engine import (VARIABLE, ActionField, Engine, Forward, HashAction,
                     MatchField, MonitorCounters, PipeEntry, PipeSpec,
                     SLOW_PATH, ValidationError)

LOW_BITS = "low_bits"
FIVE_TUPLE_HASH = "five_tuple_hash"


@dataclass
class Backend:
    mac: str | int
    label: str = ""

    def mac_int(self) -> int:
        return pkt.mac_to_int(self.mac)


@dataclass
class LbConfig:
    backends: list
    out_port: int
    strategy: str = LOW_BITS

    def __post_init__(self):
        if not self.backends:
            raise ValidationError("need at least one backend")
        macs = [b.mac_int() for b in self.backends]
        if len(set(macs)) != len(macs):
            raise ValidationError("backend MACs must be unique")
        if self.strategy not in (LOW_BITS, FIVE_TUPLE_HASH):
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.strategy == LOW_BITS:
            n = len(self.backends)
            if n & (n - 1):
                raise ValidationError(
                    f"low_bits needs a power-of-two backend count, got {n}")


def build_low_bits_lb(engine: Engine, config: LbConfig) -> int:
    """Root pipe matching the low bits of ip_src (explicit variable match,
    mask N-1); entry i rewrites eth_dst to backends[i] and forwards to the
    out port.  Misses go to the slow path."""
    if engine.pipes:
        raise ValidationError("engine is not empty")
    n = len(config.backends)
    root = engine.create_pipe(PipeSpec(
        name="lb-root", is_root=True,
        match=[MatchField("ip_src", VARIABLE, mask=n - 1)],
        actions=[ActionField("eth_dst", VARIABLE)],
        miss_forward=SLOW_PATH, monitor=True))
    for i, backend in enumerate(config.backends):
        engine.add_entry(root, PipeEntry(
            match_values={"ip_src": i},
            action_values={"eth_dst": backend.mac_int()},
            forward=Forward.port(config.out_port)))
    return root


def build_hash_lb(engine: Engine, config: LbConfig) -> tuple:
    """Two-stage pipeline: the root hashes the five-tuple into meta0 modulo N,
    the selection pipe dispatches on meta0 with the MAC rewrite."""
    n = len(config.backends)
    select = engine.create_pipe(PipeSpec(
        name="lb-select",
        match=[MatchField("meta0", VARIABLE)],
        actions=[ActionField("eth_dst", VARIABLE)],
        miss_forward=SLOW_PATH, monitor=True))
    root = engine.create_pipe(PipeSpec(
        name="lb-hash", is_root=True,
        actions=[HashAction(dst="meta0", modulo=n)],
        miss_forward=SLOW_PATH, monitor=True))
    engine.add_entry(root, PipeEntry(forward=Forward.pipe(select)))
    for i, backend in enumerate(config.backends):
        engine.add_entry(select, PipeEntry(
            match_values={"meta0": i},
            action_values={"eth_dst": backend.mac_int()},
            forward=Forward.port(config.out_port)))
    return root, select


def build_lb(engine: Engine, config: LbConfig):
    if config.strategy == LOW_BITS:
        return build_low_bits_lb(engine, config)
    return build_hash_lb(engine, config)


def throughput_bps(c0: MonitorCounters, c1: MonitorCounters, dt_s) -> float:
    """Byte-delta bandwidth between two counter snapshots, in bit/s."""
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if c1.packets < c0.packets or c1.bytes < c0.bytes:
        raise ValueError("counter snapshots decreased")
    return (c1.bytes - c0.bytes) * 8 / dt_s
