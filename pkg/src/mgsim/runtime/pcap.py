"""Nanosecond pcap export of received frames."""
import struct

from ..errors import IoFailure
from ..packet.headers import FCS_LEN
from ..wireclock import TICKS_PER_NS

PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535
_GLOBAL = struct.Struct("<IHHiIII")
_RECORD = struct.Struct("<IIII")


def export_pcap(records, path, with_fcs=False):
    """Write (arrival_ticks, frame) pairs to *path*.

    *frame* carries its FCS, which is stripped unless *with_fcs* is set.
    Timestamps are floored to whole nanoseconds.
    """
    last = None
    try:
        with open(path, "wb") as fh:
            fh.write(_GLOBAL.pack(PCAP_MAGIC_NS, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))
            for t, frame in records:
                if last is not None and t < last:
                    raise ValueError("capture timestamps must be non-decreasing")
                last = t
                ns = int(t) // TICKS_PER_NS
                data = bytes(frame) if with_fcs else bytes(frame[:-FCS_LEN])
                sec, nsec = divmod(ns, 10**9)
                fh.write(_RECORD.pack(sec, nsec, len(data), len(data)))
                fh.write(data)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_pcap(path):
    """Return [(timestamp_ns, frame)] from a nanosecond pcap file written by :func:`export_pcap`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(raw) < _GLOBAL.size:
        raise IoFailure(f"{path}: truncated pcap header")
    magic, major, minor, _, _, _, linktype = _GLOBAL.unpack_from(raw)
    if magic != PCAP_MAGIC_NS or (major, minor) != (2, 4) or linktype != LINKTYPE_ETHERNET:
        raise IoFailure(f"{path}: not a little-endian nanosecond Ethernet pcap")
    out = []
    pos = _GLOBAL.size
    while pos < len(raw):
        if pos + _RECORD.size > len(raw):
            raise IoFailure(f"{path}: truncated record header at offset {pos}")
        sec, nsec, incl, _ = _RECORD.unpack_from(raw, pos)
        pos += _RECORD.size
        if pos + incl > len(raw):
            raise IoFailure(f"{path}: truncated record at offset {pos}")
        out.append((sec * 10**9 + nsec, raw[pos:pos + incl]))
        pos += incl
    return out
