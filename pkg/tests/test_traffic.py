"""Pacing exactness, distributions, PRNG reproducibility, probes."""

from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from xenoflow import packet as pkt
from xenoflow import traffic as tg

from oracles import splitmix64_sequential


class TestSplitMix64:
    def test_reference_vector_seed_zero(self):
        # published SplitMix64 outputs for seed 0
        got = tg.splitmix64(0, 3)
        assert [int(x) for x in got] == [0xE220A8397B1DCDAF,
                                         0x6E789E6AA1B965F4,
                                         0x06C45D188009454F]

    def test_matches_sequential_oracle(self):
        for seed in (0, 1, 42, 2**63 + 11):
            got = [int(x) for x in tg.splitmix64(seed, 50)]
            assert got == splitmix64_sequential(seed, 50)

    def test_offset_slices_the_same_stream(self):
        whole = [int(x) for x in tg.splitmix64(9, 20)]
        tail = [int(x) for x in tg.splitmix64(9, 12, offset=8)]
        assert whole[8:] == tail


class TestPacing:
    def test_exact_rational_schedule(self):
        profile = tg.TrafficProfile(rate_pps=96_700_000, count=5000, seed=1)
        stream = tg.generate(profile)
        iv = Fraction(10**9, 96_700_000)
        expect = [(k * iv.numerator) // iv.denominator for k in range(5000)]
        assert stream.times_ns.tolist() == expect
        # zero drift vs the exact rational schedule
        worst = max(abs(Fraction(int(t)) - k * iv)
                    for k, t in enumerate(stream.times_ns))
        assert worst < 1

    def test_integer_rate(self):
        profile = tg.TrafficProfile(rate_pps=100_000_000, count=100, seed=1)
        stream = tg.generate(profile)
        assert np.all(np.diff(stream.times_ns) == 10)

    def test_window_end_is_next_arrival_slot(self):
        profile = tg.TrafficProfile(rate_pps=1000, count=7, seed=1)
        stream = tg.generate(profile)
        assert stream.window_end_ns == 7 * 10**9 // 1000

    def test_same_seed_identical_streams(self):
        a = tg.generate(tg.TrafficProfile(rate_pps=1000, count=50, seed=9))
        b = tg.generate(tg.TrafficProfile(rate_pps=1000, count=50, seed=9))
        assert np.array_equal(a.times_ns, b.times_ns)
        assert np.array_equal(a.ip_src, b.ip_src)
        frames_a = [bytes(p.frame) for _, p in a]
        frames_b = [bytes(p.frame) for _, p in b]
        assert frames_a == frames_b

    def test_exponential_jitter_flag(self):
        prof = tg.TrafficProfile(rate_pps=1000, count=200, seed=3, jitter="exp")
        stream = tg.generate(prof)
        gaps = np.diff(stream.times_ns)
        assert len(set(gaps.tolist())) > 5  # not constant any more
        assert np.all(np.diff(stream.times_ns) >= 0)


class TestParitySplit:
    def test_all_even(self):
        dist = tg.ParitySplit(100)
        ips = dist.draw(0, 500)
        assert np.all(ips % 2 == 0)

    def test_half_exact_per_window(self):
        dist = tg.ParitySplit(50)
        ips = dist.draw(1, 1000)
        even = (ips % 2 == 0)
        assert int(even.sum()) == 500
        for w in range(10):
            assert int(even[w * 100:(w + 1) * 100].sum()) == 50

    def test_floor_percent_per_window(self):
        dist = tg.ParitySplit(37)
        even = dist.draw(2, 700) % 2 == 0
        for w in range(7):
            assert int(even[w * 100:(w + 1) * 100].sum()) == 37

    def test_percent_bounds(self):
        with pytest.raises(ValueError):
            tg.ParitySplit(101)


class TestUniform:
    def test_range_respected(self):
        dist = tg.UniformIPs("10.0.0.0", "10.0.0.255")
        ips = dist.draw(5, 10_000)
        assert int(ips.min()) >= pkt.ip_to_int("10.0.0.0")
        assert int(ips.max()) <= pkt.ip_to_int("10.0.0.255")

    def test_chi_square_sanity(self):
        # >= 1e5 draws over 64 buckets must not be rejected at p = 0.01
        dist = tg.UniformIPs(0, 64 * 4096 - 1)
        ips = dist.draw(123, 100_000)
        counts = np.bincount((ips // 4096).astype(np.int64), minlength=64)
        _, p = scipy.stats.chisquare(counts)
        assert p > 0.01


class TestStreamPackets:
    def test_packets_match_columns(self):
        profile = tg.TrafficProfile(payload_bytes=23, rate_pps=500, count=40,
                                    ip_src_dist=tg.ParitySplit(50), seed=7)
        stream = tg.generate(profile)
        consts = stream.header_constants()
        for k, (t, packet) in enumerate(stream):
            assert t == int(stream.times_ns[k])
            assert packet.arrival_ns == t
            view = pkt.parse(packet.frame)
            assert view.ip_src == int(stream.ip_src[k])
            assert view.udp_dst == consts["udp_dst"]
            assert len(packet.frame) == stream.frame_len == 65

    def test_dns_payload_stream(self):
        profile = tg.TrafficProfile(rate_pps=10, count=5, dns_name="a.de",
                                    seed=2)
        stream = tg.generate(profile)
        assert stream.frame_len == 42 + 22
        payloads = [pkt.parse(p.frame).payload() for _, p in stream]
        assert all(len(x) == 22 for x in payloads)
        assert all(x[2:] == payloads[0][2:] for x in payloads)  # same question


class TestProbes:
    def test_probe_marking_and_count(self):
        probes = tg.probe_stream(2700, rate_pps=1_000_000, seed=4)
        assert len(probes) == 2700
        assert probes.header_constants()["udp_dst"] == tg.PROBE_DST_PORT
        assert probes.frame_len == 64  # 22-byte DNS query payload

    def test_zero_probes(self):
        probes = tg.probe_stream(0, rate_pps=1000)
        assert len(probes) == 0

    def test_window_pacing(self):
        probes = tg.probe_stream(100, window_ns=1_000_000, seed=1)
        assert probes.times_ns[0] == 7  # phase offset
        assert int(probes.times_ns[-1]) < 1_000_000 + 7

    def test_pcap_dump(self, tmp_path):
        stream = tg.generate(tg.TrafficProfile(rate_pps=100, count=10, seed=0))
        path = tmp_path / "first.pcap"
        assert tg.dump_pcap(stream, path, first_k=4) == 4
        from xenoflow import pcapio
        records = list(pcapio.read_pcap(path))
        assert len(records) == 4
        assert records[0][0][:6] == bytes(6)  # eth_dst of builder frame
