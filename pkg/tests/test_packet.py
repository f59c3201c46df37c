"""Frame construction, parsing, checksums, DNS encoding, size arithmetic."""

import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xenoflow import packet as pkt
from xenoflow import pcapio

from oracles import ones_complement_checksum

SRC_MAC = "02:11:22:33:44:55"
DST_MAC = "02:66:77:88:99:aa"


def build(payload=b"", ip_src="10.0.0.4", sport=1234, dport=53):
    return pkt.build_udp_packet(SRC_MAC, DST_MAC, ip_src, "10.1.2.3",
                                sport, dport, payload)


class TestBuild:
    def test_frame_length_23_byte_payload(self):
        # the 23-byte UDP payload <-> 65-byte frame anchor
        assert len(build(b"\0" * 23).frame) == 65

    def test_frame_length_empty_payload(self):
        assert len(build().frame) == 42

    def test_frame_length_22_byte_payload(self):
        assert len(build(b"\0" * 22).frame) == 64

    def test_payload_too_large(self):
        assert len(build(b"\0" * 1458).frame) == 1500
        with pytest.raises(ValueError, match="payload too large"):
            build(b"\0" * 1459)

    def test_length_coherence(self):
        frame = build(b"abcde").frame
        total_len = struct.unpack_from(">H", frame, pkt.OFF_IP_TOTLEN)[0]
        udp_len = struct.unpack_from(">H", frame, pkt.OFF_UDP_LEN)[0]
        assert total_len == len(frame) - 14
        assert udp_len == total_len - 20

    def test_meta_zero_on_ingress(self):
        assert build().meta == [0, 0, 0, 0]

    def test_ipv4_checksum_valid(self):
        frame = build(b"xyz").frame
        header = bytes(frame[pkt.OFF_IP:pkt.OFF_IP + 20])
        assert ones_complement_checksum(header) == 0

    def test_udp_checksum_valid(self):
        frame = build(b"hello").frame
        view = pkt.parse(frame)
        pseudo = struct.pack(">IIxBH", view.ip_src, view.ip_dst, 17,
                             len(frame) - 34)
        assert ones_complement_checksum(pseudo + bytes(frame[34:])) == 0


class TestChecksum:
    def test_all_zero_header(self):
        assert pkt.ipv4_header_checksum(bytes(20)) == 0xFFFF

    def test_reference_vector(self):
        # canonical worked example; 0xB861 verified against the bit-level oracle
        header = bytes.fromhex("45000073000040004011" "0000"
                               "c0a80001" "c0a800c7")
        assert ones_complement_checksum(header) == 0xB861
        assert pkt.ipv4_header_checksum(header) == 0xB861

    def test_self_verification_folds_to_zero(self):
        header = bytearray.fromhex("45000073000040004011" "0000"
                                   "c0a80001" "c0a800c7")
        struct.pack_into(">H", header, 10, pkt.ipv4_header_checksum(header))
        assert pkt.ipv4_header_checksum(header) == 0
        assert ones_complement_checksum(bytes(header)) == 0

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            pkt.ipv4_header_checksum(bytes(19))


class TestParse:
    def test_round_trip(self):
        packet = build(b"\xde\xad\xbe\xef", ip_src="192.168.7.9", sport=7,
                       dport=9)
        view = pkt.parse(packet.frame)
        assert view.eth_src == pkt.mac_to_int(SRC_MAC)
        assert view.eth_dst == pkt.mac_to_int(DST_MAC)
        assert view.ip_src == pkt.ip_to_int("192.168.7.9")
        assert view.ip_dst == pkt.ip_to_int("10.1.2.3")
        assert view.ip_proto == 17
        assert (view.udp_src, view.udp_dst) == (7, 9)
        assert view.udp_payload_len == 4
        assert view.payload() == b"\xde\xad\xbe\xef"
        assert view.to_bytes() == bytes(packet.frame)

    def test_truncated(self):
        with pytest.raises(pkt.TruncatedFrame):
            pkt.parse(b"\x00" * 13)

    def test_arp_ethertype(self):
        frame = bytearray(build().frame)
        struct.pack_into(">H", frame, pkt.OFF_ETHERTYPE, 0x0806)
        with pytest.raises(pkt.UnsupportedEthertype):
            pkt.parse(frame)

    def test_non_udp_protocol(self):
        frame = bytearray(build().frame)
        frame[pkt.OFF_IP_PROTO] = 6  # TCP
        with pytest.raises(pkt.UnsupportedProtocol):
            pkt.parse(frame)

    def test_short_ipv4(self):
        frame = build().frame[:20]
        with pytest.raises(pkt.TruncatedFrame):
            pkt.parse(frame)

    @settings(max_examples=80, deadline=None)
    @given(payload=st.binary(max_size=64),
           ip_src=st.integers(0, 2**32 - 1),
           sport=st.integers(0, 65535), dport=st.integers(0, 65535))
    def test_parse_build_identity(self, payload, ip_src, sport, dport):
        packet = build(payload, ip_src=ip_src, sport=sport, dport=dport)
        view = pkt.parse(packet.frame)
        assert (view.ip_src, view.udp_src, view.udp_dst) == (ip_src, sport, dport)
        assert view.payload() == payload
        assert view.to_bytes() == bytes(packet.frame)


class TestDnsQuery:
    def test_a_de(self):
        msg = pkt.dns_query("a.de", txid=0x1234)
        assert len(msg) == 22
        assert msg[:2] == b"\x12\x34"
        assert msg[2:4] == b"\x01\x00"  # flags: recursion desired
        assert msg[4:6] == b"\x00\x01"  # QDCOUNT
        assert msg[12:] == b"\x01a\x02de\x00\x00\x01\x00\x01"

    def test_root(self):
        assert len(pkt.dns_query("", txid=1)) == 17

    def test_label_limit(self):
        assert len(pkt.dns_query("a" * 63, txid=1)) == 12 + 64 + 1 + 4
        with pytest.raises(ValueError, match="label too long"):
            pkt.dns_query("a" * 64)

    def test_random_id_seeded(self):
        rng = random.Random(7)
        first = pkt.dns_query("x.example", rng=rng)
        assert first[4:] == pkt.dns_query("x.example", rng=random.Random(7))[4:]


class TestWireSize:
    @pytest.mark.parametrize("frame_len,expected",
                             [(65, 89), (42, 66), (1066, 1090)])
    def test_values(self, frame_len, expected):
        assert pkt.wire_size(frame_len) == expected


class TestMacIpHelpers:
    def test_mac_round_trip(self):
        assert pkt.int_to_mac(pkt.mac_to_int("02:aa:00:00:00:03")) == \
            "02:aa:00:00:00:03"

    def test_ip_round_trip(self):
        assert pkt.int_to_ip(pkt.ip_to_int("10.255.0.1")) == "10.255.0.1"


class TestPcap:
    def test_header_and_round_trip(self, tmp_path):
        path = tmp_path / "t.pcap"
        frames = [(build(bytes([i])).frame, i * 1000) for i in range(3)]
        assert pcapio.write_pcap(path, frames) == 3
        raw = path.read_bytes()
        magic, _, _, _, _, _, linktype = struct.unpack("<IHHiIII", raw[:24])
        assert magic == 0xA1B2C3D4
        assert linktype == 1
        back = list(pcapio.read_pcap(path))
        assert [(bytes(f), t) for f, t in frames] == back
