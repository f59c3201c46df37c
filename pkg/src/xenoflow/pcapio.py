"""Classic pcap writer/reader (magic 0xA1B2C3D4, linktype 1, frames without FCS)."""

import struct

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
_GLOBAL_HDR = struct.Struct("<IHHiIII")
_REC_HDR = struct.Struct("<IIII")


class PcapWriter:
    def __init__(self, stream):
        self._stream = stream
        self._stream.write(_GLOBAL_HDR.pack(PCAP_MAGIC, 2, 4, 0, 0, 65535,
                                            LINKTYPE_ETHERNET))

    def write(self, frame, ts_ns: int = 0) -> None:
        sec, rem = divmod(ts_ns, 1_000_000_000)
        self._stream.write(_REC_HDR.pack(sec, rem // 1000, len(frame), len(frame)))
        self._stream.write(bytes(frame))


def write_pcap(path, frames_with_ts) -> int:
    """Write (frame, ts_ns) pairs to `path`; returns the record count."""
    n = 0
    with open(path, "wb") as fh:
        w = PcapWriter(fh)
        for frame, ts_ns in frames_with_ts:
            w.write(frame, ts_ns)
            n += 1
    return n


def read_pcap(path):
    """Yield (frame_bytes, ts_ns) records from a classic little-endian pcap."""
    with open(path, "rb") as fh:
        hdr = fh.read(_GLOBAL_HDR.size)
        magic, _, _, _, _, _, linktype = _GLOBAL_HDR.unpack(hdr)
        if magic != PCAP_MAGIC:
            raise ValueError(f"bad pcap magic {magic:#x}")
        if linktype != LINKTYPE_ETHERNET:
            raise ValueError(f"unsupported linktype {linktype}")
        while True:
            rec = fh.read(_REC_HDR.size)
            if len(rec) < _REC_HDR.size:
                return
            sec, usec, incl, _ = _REC_HDR.unpack(rec)
            yield fh.read(incl), sec * 1_000_000_000 + usec * 1000
