import struct

import pytest

from mgsim import packet as pk
from mgsim.errors import IoFailure
from mgsim.runtime import export_pcap, read_pcap


def frame():
    return pk.materialize(pk.make_template(pk.PacketTemplate(["eth", "ip4", "udp"], {"udpDst": 9}, 60)))


def test_empty_capture(tmp_path):
    p = tmp_path / "e.pcap"
    export_pcap([], p)
    raw = p.read_bytes()
    assert len(raw) == 24
    assert struct.unpack("<IHHiIII", raw) == (0xA1B23C4D, 2, 4, 0, 0, 65535, 1)


def test_record_header_floors_to_ns(tmp_path):
    p = tmp_path / "one.pcap"
    export_pcap([(672_000, frame())], p)     # 67.2 ns
    sec, nsec, incl, orig = struct.unpack_from("<IIII", p.read_bytes(), 24)
    assert (sec, nsec, incl, orig) == (0, 67, 60, 60)


def test_with_fcs(tmp_path):
    p = tmp_path / "fcs.pcap"
    f = frame()
    export_pcap([(0, f)], p, with_fcs=True)
    assert read_pcap(p) == [(0, f)]


def test_round_trip(tmp_path):
    p = tmp_path / "rt.pcap"
    f = frame()
    recs = [(i * 10**13 + 12345, f) for i in range(5)]      # crosses second boundaries
    export_pcap(recs, p)
    back = read_pcap(p)
    assert [t for t, _ in back] == [t // 10**4 for t, _ in recs]
    assert all(b == f[:-4] for _, b in back)


def test_times_must_not_decrease(tmp_path):
    with pytest.raises(ValueError):
        export_pcap([(10, frame()), (5, frame())], tmp_path / "x.pcap")


def test_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        export_pcap([], tmp_path / "missing" / "x.pcap")
    with pytest.raises(IoFailure):
        read_pcap(tmp_path / "nothing.pcap")
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"\x00" * 24)
    with pytest.raises(IoFailure):
        read_pcap(bad)
