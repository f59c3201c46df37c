"""Pipe/entry semantics: match modes, priorities, verdicts, counters, limits."""

import random

import pytest

from xenoflow import packet as pkt
from xenoflow import pipeline_json
from xenoflow.engine import (CONSTANT, VARIABLE, ActionField, Engine,
                             EngineLimits, EntryLimitError, Forward,
                             HashAction, MatchField, MonitorDisabled,
                             PipeEntry, PipeLimitError, PipeSpec, SLOW_PATH,
                             DROP, UnsupportedMode, ValidationError,
                             five_tuple_hash)

from oracles import crc32_bitwise, match_bit_loop

MAC_A = "02:aa:00:00:00:02"
MAC_B = "02:aa:00:00:00:03"


def make_packet(ip_src="10.0.0.4", sport=1000, dport=53, arrival_ns=400_000,
                payload=b""):
    # default arrival is past the 305 us entry-activation horizon
    return pkt.build_udp_packet("02:01:00:00:00:01", "02:02:00:00:00:02",
                                ip_src, "10.1.2.3", sport, dport, payload,
                                arrival_ns=arrival_ns)


def parity_engine(**kwargs):
    """Root pipe splitting on the last ip_src bit with per-entry MAC rewrite."""
    engine = Engine(**kwargs)
    root = engine.create_pipe(PipeSpec(
        name="root", is_root=True,
        match=[MatchField("ip_src", VARIABLE, mask=0x1)],
        actions=[ActionField("eth_dst", VARIABLE)],
        miss_forward=SLOW_PATH, monitor=True))
    engine.add_entry(root, PipeEntry({"ip_src": 0}, {"eth_dst": pkt.mac_to_int(MAC_A)},
                                     Forward.port(1)))
    engine.add_entry(root, PipeEntry({"ip_src": 1}, {"eth_dst": pkt.mac_to_int(MAC_B)},
                                     Forward.port(1)))
    return engine, root


class TestCreatePipe:
    def test_first_root_pipe_gets_id_zero(self):
        engine = Engine()
        assert engine.create_pipe(PipeSpec("root", is_root=True)) == 0
        assert engine.root_id == 0

    def test_pipe_limit(self):
        engine = Engine()
        engine.create_pipe(PipeSpec("root", is_root=True))
        for i in range(14):
            engine.create_pipe(PipeSpec(f"p{i}"))
        with pytest.raises(PipeLimitError):
            engine.create_pipe(PipeSpec("p15"))

    def test_second_root_rejected(self):
        engine = Engine()
        engine.create_pipe(PipeSpec("root", is_root=True))
        with pytest.raises(ValidationError):
            engine.create_pipe(PipeSpec("root2", is_root=True))

    def test_variable_match_needs_all_ones_pipe_value(self):
        engine = Engine()
        with pytest.raises(ValidationError, match="all ones"):
            engine.create_pipe(PipeSpec(
                "root", is_root=True,
                match=[MatchField("ip_src", VARIABLE, value=0x00000000,
                                  mask=0x1)]))

    def test_variable_match_accepts_all_ones(self):
        engine = Engine()
        engine.create_pipe(PipeSpec(
            "root", is_root=True,
            match=[MatchField("ip_src", VARIABLE, value=0xFFFFFFFF, mask=0x1)]))

    def test_unsupported_modes_rejected_at_start(self):
        for mode in ("switch", "remote_vnf"):
            with pytest.raises(UnsupportedMode):
                Engine(mode=mode)

    def test_constant_match_needs_value(self):
        engine = Engine()
        with pytest.raises(ValidationError):
            engine.create_pipe(PipeSpec(
                "root", is_root=True, match=[MatchField("ip_dst")]))


class TestAddEntry:
    def test_entry_limit(self):
        engine = Engine(limits=EngineLimits(max_entries_per_pipe=8))
        root = engine.create_pipe(PipeSpec("root", is_root=True))
        for _ in range(8):
            engine.add_entry(root, PipeEntry(forward=DROP))
        with pytest.raises(EntryLimitError):
            engine.add_entry(root, PipeEntry(forward=DROP))

    def test_insertion_latency_gates_matching(self):
        class Clock:
            now_ns = 0

        engine, root = parity_engine(clock=Clock())
        # inserted at t=0 -> active at t=305 us
        early = make_packet(arrival_ns=100_000)
        late = make_packet(arrival_ns=400_000)
        assert engine.process(early).kind == "slow_path"
        assert engine.process(late).kind == "egress"
        assert not engine.entry_active(root, 0, 100_000)
        assert engine.entry_active(root, 0, 400_000)

    def test_dangling_pipe_forward(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec("root", is_root=True))
        with pytest.raises(ValidationError):
            engine.add_entry(root, PipeEntry(forward=Forward.pipe(5)))

    def test_entry_values_must_match_variable_fields(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            match=[MatchField("ip_src", VARIABLE, mask=0x1)]))
        with pytest.raises(ValidationError):
            engine.add_entry(root, PipeEntry(forward=DROP))  # missing value
        with pytest.raises(ValidationError):
            engine.add_entry(root, PipeEntry(
                {"ip_src": 0, "ip_dst": 0}, forward=DROP))  # extra value

    def test_illegal_forward_kind(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec("root", is_root=True,
                                           allowed_forwards=("drop",)))
        with pytest.raises(ValidationError):
            engine.add_entry(root, PipeEntry(forward=Forward.port(1)))


class TestMatches:
    def test_even_entry_matches_even_source(self):
        engine, root = parity_engine()
        packet = make_packet("10.0.0.4")
        assert engine.matches(root, 0, packet) is True

    def test_odd_entry_rejects_even_source(self):
        engine, root = parity_engine()
        packet = make_packet("10.0.0.4")
        assert engine.matches(root, 1, packet) is False

    def test_implicit_constant_full_width(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            match=[MatchField("ip_dst", CONSTANT,
                              value=pkt.ip_to_int("10.1.2.3"))]))
        engine.add_entry(root, PipeEntry(forward=DROP))
        assert engine.matches(root, 0, make_packet()) is True
        other = pkt.build_udp_packet("02:01:00:00:00:01", "02:02:00:00:00:02",
                                     "10.0.0.4", "10.1.2.4", 1, 2, b"")
        assert engine.matches(root, 0, other) is False

    def test_oracle_equivalence_8bit_slice(self):
        """matches() agrees with a brute-force bit loop on an 8-bit slice for
        every packet value and >= 1000 random templates."""
        rng = random.Random(0xC0FFEE)
        packets = [make_packet(sport=v) for v in range(256)]
        disagreements = 0
        for _ in range(1000):
            mask = rng.randrange(256)
            value = rng.randrange(256)
            variable = rng.random() < 0.5
            implicit = rng.random() < 0.25
            engine = Engine()
            mf = MatchField("udp_src",
                            VARIABLE if variable else CONSTANT,
                            value=None if variable else value,
                            mask=None if implicit else mask)
            root = engine.create_pipe(PipeSpec("root", is_root=True, match=[mf]))
            engine.add_entry(root, PipeEntry(
                {"udp_src": value} if variable else {}, forward=DROP))
            eff_mask = 0xFFFF if implicit else mask
            for v, packet in enumerate(packets):
                got = engine.matches(root, 0, packet)
                want = match_bit_loop(v, eff_mask, value, 16)
                if got != want:
                    disagreements += 1
        assert disagreements == 0


class TestProcess:
    def test_parity_pipeline_even(self):
        engine, _ = parity_engine()
        verdict = engine.process(make_packet("10.0.0.4"))
        assert verdict.kind == "egress" and verdict.port == 1
        assert pkt.parse(verdict.packet.frame).eth_dst == pkt.mac_to_int(MAC_A)

    def test_parity_pipeline_odd(self):
        engine, _ = parity_engine()
        verdict = engine.process(make_packet("10.0.0.5"))
        assert pkt.parse(verdict.packet.frame).eth_dst == pkt.mac_to_int(MAC_B)

    def test_miss_goes_to_slow_path(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            match=[MatchField("ip_dst", CONSTANT, value=1)]))
        engine.add_entry(root, PipeEntry(forward=Forward.port(1)))
        assert engine.process(make_packet()).kind == "slow_path"

    def test_non_ipv4_goes_to_slow_path(self):
        engine, _ = parity_engine()
        packet = make_packet()
        packet.frame[pkt.OFF_ETHERTYPE] = 0x08
        packet.frame[pkt.OFF_ETHERTYPE + 1] = 0x06
        assert engine.process(packet).kind == "slow_path"

    def test_two_pipe_cycle_hits_loop_guard(self):
        engine = Engine()
        a = engine.create_pipe(PipeSpec("a", is_root=True))
        b = engine.create_pipe(PipeSpec("b"))
        engine.add_entry(a, PipeEntry(forward=Forward.pipe(b)))
        engine.add_entry(b, PipeEntry(forward=Forward.pipe(a)))
        verdict = engine.process(make_packet())
        assert verdict.kind == "drop"
        assert "hop limit" in verdict.reason
        # every hop fired an entry: 15 firings split across the two entries
        total = sum(engine.pipes[p].entries[0].counters.packets for p in (a, b))
        assert total == engine.limits.max_pipe_hops

    def test_priority_is_insertion_order(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            match=[MatchField("ip_src", VARIABLE, mask=0x0)],  # match-all
            monitor=True))
        engine.add_entry(root, PipeEntry({"ip_src": 0}, forward=Forward.port(1)))
        engine.add_entry(root, PipeEntry({"ip_src": 0}, forward=Forward.port(2)))
        for _ in range(5):
            assert engine.process(make_packet()).port == 1
        assert engine.counters(root, 0).packets == 5
        assert engine.counters(root, 1).packets == 0

    def test_action_locality(self):
        engine, _ = parity_engine()
        packet = make_packet("10.0.0.4", payload=b"payload-bytes")
        before = bytes(packet.frame)
        verdict = engine.process(packet)
        after = verdict.packet.frame
        assert bytes(packet.frame) == before  # original untouched
        assert after[:6] != before[:6]
        assert after[6:] == before[6:]  # only eth_dst rewritten

    def test_ip_rewrite_updates_checksum(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            actions=[ActionField("ip_dst", CONSTANT,
                                 value=pkt.ip_to_int("10.9.9.9"))]))
        engine.add_entry(root, PipeEntry(forward=Forward.port(1)))
        verdict = engine.process(make_packet())
        frame = verdict.packet.frame
        assert pkt.parse(frame).ip_dst == pkt.ip_to_int("10.9.9.9")
        assert pkt.ipv4_header_checksum(
            bytes(frame[pkt.OFF_IP:pkt.OFF_IP + 18]) + b"\0\0") != 0
        header = bytearray(frame[pkt.OFF_IP:pkt.OFF_IP + 20])
        assert pkt.ipv4_header_checksum(header) == 0  # folds to zero when valid

    def test_verdict_totality_random_traffic(self):
        engine, _ = parity_engine()
        rng = random.Random(3)
        kinds = {"egress": 0, "slow_path": 0, "drop": 0}
        for _ in range(300):
            packet = make_packet(ip_src=rng.randrange(2**32))
            if rng.random() < 0.1:
                packet.frame[pkt.OFF_IP_PROTO] = 6
            kinds[engine.process(packet).kind] += 1
        assert sum(kinds.values()) == 300
        assert kinds["egress"] > 0 and kinds["slow_path"] > 0

    def test_meta_action_and_chaining(self):
        engine = Engine()
        stage2 = engine.create_pipe(PipeSpec(
            "stage2", match=[MatchField("meta1", VARIABLE)], monitor=True))
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True,
            actions=[ActionField("meta1", CONSTANT, value=7)]))
        engine.add_entry(root, PipeEntry(forward=Forward.pipe(stage2)))
        engine.add_entry(stage2, PipeEntry({"meta1": 7}, forward=Forward.port(3)))
        verdict = engine.process(make_packet())
        assert verdict.kind == "egress" and verdict.port == 3
        assert verdict.packet.meta[1] == 7


class TestCounters:
    def test_three_packets_of_65_bytes(self):
        engine, root = parity_engine()
        for _ in range(3):
            engine.process(make_packet("10.0.0.4", payload=b"\0" * 23))
        assert engine.counters(root, 0) == \
            engine.counters(root, 0).__class__(3, 195)

    def test_fresh_entry_zero(self):
        engine, root = parity_engine()
        snap = engine.counters(root, 1)
        assert (snap.packets, snap.bytes) == (0, 0)

    def test_monotone(self):
        engine, root = parity_engine()
        engine.process(make_packet("10.0.0.4"))
        first = engine.counters(root, 0)
        engine.process(make_packet("10.0.0.6"))
        second = engine.counters(root, 0)
        assert second.packets >= first.packets
        assert second.bytes >= first.bytes

    def test_monitor_disabled(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec("root", is_root=True))
        engine.add_entry(root, PipeEntry(forward=DROP))
        with pytest.raises(MonitorDisabled):
            engine.counters(root, 0)

    def test_bytes_at_least_42_per_packet(self):
        engine, root = parity_engine()
        for i in range(10):
            engine.process(make_packet("10.0.0.4", payload=bytes(i)))
        snap = engine.counters(root, 0)
        assert snap.bytes >= 42 * snap.packets


class TestFiveTupleHash:
    def test_crc_check_value(self):
        assert crc32_bitwise(b"123456789") == 0xCBF43926

    def test_hash_matches_bitwise_oracle(self):
        rng = random.Random(11)
        for _ in range(200):
            tup = (rng.randrange(2**32), rng.randrange(2**32),
                   rng.randrange(256), rng.randrange(2**16),
                   rng.randrange(2**16))
            data = tup[0].to_bytes(4, "big") + tup[1].to_bytes(4, "big") + \
                bytes([tup[2]]) + tup[3].to_bytes(2, "big") + \
                tup[4].to_bytes(2, "big")
            assert five_tuple_hash(*tup) == crc32_bitwise(data)

    def test_hash_action_writes_meta(self):
        engine = Engine()
        root = engine.create_pipe(PipeSpec(
            "root", is_root=True, actions=[HashAction("meta0", modulo=4)]))
        engine.add_entry(root, PipeEntry(forward=Forward.port(1)))
        packet = make_packet("10.0.0.4", sport=1000, dport=53)
        verdict = engine.process(packet)
        view = pkt.parse(packet.frame)
        expect = five_tuple_hash(view.ip_src, view.ip_dst, 17, 1000, 53) % 4
        assert verdict.packet.meta[0] == expect


class TestPipelineJson:
    DOC = {
        "pipes": [
            {"name": "root", "root": True, "monitor": True,
             "match": [{"field": "ip_src", "binding": "variable", "mask": 1}],
             "actions": [{"field": "eth_dst", "binding": "variable"}],
             "miss": "slow_path"},
        ],
        "entries": [
            {"pipe": "root", "match": {"ip_src": 0},
             "actions": {"eth_dst": MAC_A}, "forward": {"port": 1}},
            {"pipe": "root", "match": {"ip_src": "0x1"},
             "actions": {"eth_dst": MAC_B}, "forward": {"port": 1}},
        ],
    }

    def test_build_and_process(self):
        engine, names = pipeline_json.build_from_doc(self.DOC)
        assert names == {"root": 0}
        verdict = engine.process(make_packet("10.0.0.4"))
        assert verdict.kind == "egress"
        assert pkt.parse(verdict.packet.frame).eth_dst == pkt.mac_to_int(MAC_A)

    def test_unknown_pipe_reference(self):
        doc = {"pipes": [], "entries": [{"pipe": "nope", "forward": "drop"}]}
        with pytest.raises(ValidationError):
            pipeline_json.build_from_doc(doc)

    def test_hash_action_spec(self):
        doc = {
            "pipes": [
                {"name": "sel", "match": [{"field": "meta0",
                                           "binding": "variable"}]},
                {"name": "root", "root": True,
                 "actions": [{"five_tuple_hash": {"dst": "meta0",
                                                  "modulo": 2}}]},
            ],
            "entries": [
                {"pipe": "root", "forward": {"pipe": "sel"}},
                {"pipe": "sel", "match": {"meta0": 0}, "forward": {"port": 1}},
                {"pipe": "sel", "match": {"meta0": 1}, "forward": {"port": 1}},
            ],
        }
        engine, _ = pipeline_json.build_from_doc(doc)
        assert engine.process(make_packet()).kind == "egress"
