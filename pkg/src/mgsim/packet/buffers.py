"""Packet templates, buffers, batches, and per-packet field modifiers."""
import enum
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import BufferConsumed, CapacityExceeded, LengthTooLarge, LengthTooSmall, MissingLayer
from . import headers as hdr
from .checksum import crc32_fcs, fcs_bytes, ipv4_checksum, ones_complement_sum

DEFAULT_BATCH_SIZE = 64


class Offload(enum.Enum):
    IP4 = "ip4"
    UDP = "udp"
    TCP = "tcp"


@dataclass
class PacketTemplate:
    protocol_stack: Sequence[str]
    defaults: Dict[str, object] = field(default_factory=dict)
    pkt_length: Optional[int] = None

    def length(self):
        if self.pkt_length is not None:
            return self.pkt_length
        if "pktLength" in self.defaults:
            return int(self.defaults["pktLength"])
        return hdr.MIN_FRAME


@dataclass(eq=False)
class PacketBuffer:
    """Frame bytes (no preamble/SFD/IFG, no FCS) plus transmit metadata."""

    data: bytearray
    stack: tuple
    crc_valid: bool = True
    request_timestamp: bool = False
    offload: set = field(default_factory=set)
    seq_id: int = -1
    consumed: bool = False

    @property
    def frame_len(self):
        return len(self.data)

    def get(self, name):
        f = hdr.resolve(self.stack, name)
        return hdr.decode_value(int.from_bytes(self.data[f.offset:f.offset + f.size], "big"), f)

    def set(self, name, value):
        f = hdr.resolve(self.stack, name)
        self._write(f, hdr.encode_value(value, f))

    def _write(self, f, n):
        if self.consumed:
            raise BufferConsumed(f"buffer {self.seq_id} was already handed to a transmit queue")
        self.data[f.offset:f.offset + f.size] = n.to_bytes(f.size, "big")

    def layer(self, name):
        """Byte offset of a layer, or MissingLayer."""
        return hdr.require_layer(self.stack, name)

    def copy(self):
        return PacketBuffer(bytearray(self.data), self.stack, self.crc_valid,
                            self.request_timestamp, set(self.offload))

    def offload_ip_checksums(self):
        self.offload.add(Offload.IP4)

    def offload_udp_checksums(self):
        self.offload.update((Offload.IP4, Offload.UDP) if "ip4" in self.stack else (Offload.UDP,))

    def offload_tcp_checksums(self):
        self.offload.update((Offload.IP4, Offload.TCP) if "ip4" in self.stack else (Offload.TCP,))


def make_template(spec):
    """Build the prototype buffer described by a PacketTemplate.

    Fields named in ``spec.defaults`` are written; everything not implied by the
    stack itself (type codes, versions, lengths, TTL 64) stays zero. Checksums
    are left unset.
    """
    stack = hdr.normalize_stack(spec.protocol_stack)
    length = spec.length()
    minimum = max(hdr.MIN_FRAME, hdr.header_size(stack))
    if length < minimum:
        raise LengthTooSmall(f"pktLength {length} below minimum {minimum} for {'/'.join(stack)}")
    if length > hdr.MAX_FRAME:
        raise LengthTooLarge(f"pktLength {length} above {hdr.MAX_FRAME}")
    # resolve every name first so a bad default fails before anything is built
    resolved = {}
    for name, value in spec.defaults.items():
        if name == "pktLength":
            continue
        f = hdr.resolve(stack, name)
        resolved[f] = hdr.encode_value(value, f)
    data = bytearray(length)
    hdr.write_structure(data, stack)
    buf = PacketBuffer(data, stack)
    for f, n in resolved.items():
        buf._write(f, n)
    return buf


class BufBatch:
    """Fixed-capacity batch of buffers; iteration visits only the live ones."""

    def __init__(self, capacity=DEFAULT_BATCH_SIZE):
        self.capacity = capacity
        self.buffers: List[PacketBuffer] = []

    @property
    def count(self):
        return len(self.buffers)

    def __len__(self):
        return len(self.buffers)

    def __iter__(self):
        return iter(self.buffers)

    def __getitem__(self, i):
        return self.buffers[i]

    def offload_ip_checksums(self):
        for b in self.buffers:
            b.offload_ip_checksums()

    def offload_udp_checksums(self):
        for b in self.buffers:
            b.offload_udp_checksums()

    def offload_tcp_checksums(self):
        for b in self.buffers:
            b.offload_tcp_checksums()


class BufferPool:
    """Source of sequence ids; ids are strictly increasing across all allocations."""

    def __init__(self, start=0):
        self._ids = itertools.count(start)

    def next_id(self):
        return next(self._ids)

    def alloc_batch(self, prototype, n, size, capacity=DEFAULT_BATCH_SIZE):
        if n > capacity:
            raise CapacityExceeded(f"cannot allocate {n} buffers in a batch of {capacity}")
        minimum = max(hdr.MIN_FRAME, hdr.header_size(prototype.stack))
        if size < minimum:
            raise LengthTooSmall(f"size {size} below minimum {minimum}")
        if size > hdr.MAX_FRAME:
            raise LengthTooLarge(f"size {size} above {hdr.MAX_FRAME}")
        batch = BufBatch(capacity)
        src = prototype.data
        if size == len(src):
            data = bytes(src)
        else:
            data = bytearray(src[:size].ljust(size, b"\x00"))
            hdr.write_lengths(data, prototype.stack, size)
            data = bytes(data)
        for _ in range(n):
            batch.buffers.append(PacketBuffer(bytearray(data), prototype.stack, prototype.crc_valid,
                                              prototype.request_timestamp, set(prototype.offload),
                                              self.next_id()))
        return batch


default_pool = BufferPool()


def alloc_batch(prototype, n, size, capacity=DEFAULT_BATCH_SIZE, pool=None):
    """Allocate *n* independent copies of *prototype* resized to *size* bytes."""
    return (pool or default_pool).alloc_batch(prototype, n, size, capacity)


class FieldModifier:
    """Rewrites one header field per packet, by counter or uniform random draw."""

    RANDOM = "random"
    COUNTER = "counter"

    def __init__(self, kind, field, lo, hi):
        if kind not in (self.RANDOM, self.COUNTER):
            raise ValueError(f"unknown modifier kind {kind!r}")
        self.kind = kind
        self.field = field
        self.lo_value, self.hi_value = lo, hi
        self._lo = self._hi = None
        self._next = None

    @classmethod
    def counter(cls, field, lo, hi):
        return cls(cls.COUNTER, field, lo, hi)

    @classmethod
    def random(cls, field, lo, hi):
        return cls(cls.RANDOM, field, lo, hi)

    def _bounds(self, f):
        if self._lo is None:
            self._lo = hdr.encode_value(self.lo_value, f)
            self._hi = hdr.encode_value(self.hi_value, f)
            if self._hi < self._lo:
                raise ValueError(f"empty range [{self.lo_value}, {self.hi_value}]")
            self._next = self._lo
        return self._lo, self._hi

    def values(self, n, f, rng):
        lo, hi = self._bounds(f)
        if self.kind == self.COUNTER:
            span = hi - lo + 1
            start = self._next - lo
            out = [lo + (start + i) % span for i in range(n)]
            self._next = lo + (start + n) % span
            return out
        return _uniform_ints(rng, lo, hi, n)


def _uniform_ints(rng, lo, hi, n):
    span = hi - lo + 1
    if span <= 1 << 62:
        return [lo + int(x) for x in rng.integers(0, span, size=n, dtype=np.int64)]
    nbytes = (span.bit_length() + 7) // 8
    limit = (1 << (8 * nbytes)) // span * span
    out = []
    while len(out) < n:
        x = int.from_bytes(rng.bytes(nbytes), "big")
        if x < limit:
            out.append(lo + x % span)
    return out


def apply_modifier(batch, mod, rng=None):
    """Rewrite the modifier's field in every live buffer of *batch*."""
    if not batch.count:
        return
    stacks = {b.stack for b in batch}
    fields = {s: hdr.resolve(s, mod.field) for s in stacks}
    f0 = next(iter(fields.values()))
    if rng is None and mod.kind == FieldModifier.RANDOM:
        raise ValueError("random modifiers need a seeded generator")
    for buf, v in zip(batch, mod.values(batch.count, f0, rng)):
        buf._write(fields[buf.stack], v)


def l4_checksum(buffer, proto):
    """UDP/TCP checksum over pseudo-header, L4 header and payload.

    The current checksum field is treated as zero. A UDP result of 0 is
    returned as 0xFFFF.
    """
    proto = proto.lower()
    stack = buffer.stack
    if proto not in ("udp", "tcp"):
        raise ValueError(f"unsupported L4 protocol {proto!r}")
    if proto not in stack:
        raise MissingLayer(f"stack {'/'.join(stack)} has no {proto} layer")
    data = buffer.data
    l4 = hdr.layer_offsets(stack)[proto]
    pnum = hdr.IPPROTO_UDP if proto == "udp" else hdr.IPPROTO_TCP
    if "ip4" in stack:
        ip = hdr.layer_offsets(stack)["ip4"]
        end = ip + int.from_bytes(data[ip + 2:ip + 4], "big")
        seg_len = end - l4
        pseudo = bytes(data[ip + 12:ip + 20]) + bytes((0, pnum)) + seg_len.to_bytes(2, "big")
    elif "ip6" in stack:
        ip = hdr.layer_offsets(stack)["ip6"]
        end = ip + 40 + int.from_bytes(data[ip + 4:ip + 6], "big")
        seg_len = end - l4
        pseudo = bytes(data[ip + 8:ip + 40]) + seg_len.to_bytes(4, "big") + bytes((0, 0, 0, pnum))
    else:
        raise MissingLayer(f"{proto} checksum needs an IPv4 or IPv6 layer")
    seg = bytearray(data[l4:end])
    ck = 6 if proto == "udp" else 16
    seg[ck:ck + 2] = b"\x00\x00"
    value = ~ones_complement_sum(seg, ones_complement_sum(pseudo)) & 0xFFFF
    if proto == "udp" and value == 0:
        value = 0xFFFF
    return value


def apply_checksums(buffer):
    """Fill the checksum fields requested by the buffer's offload flags, in place."""
    data = buffer.data
    stack = buffer.stack
    if Offload.IP4 in buffer.offload and "ip4" in stack:
        o = hdr.layer_offsets(stack)["ip4"]
        data[o + 10:o + 12] = b"\x00\x00"
        data[o + 10:o + 12] = ipv4_checksum(data[o:o + 20]).to_bytes(2, "big")
    for proto, off in (("udp", 6), ("tcp", 16)):
        if Offload(proto) in buffer.offload and proto in stack:
            o = hdr.layer_offsets(stack)[proto]
            data[o + off:o + off + 2] = l4_checksum(buffer, proto).to_bytes(2, "big")


def materialize(buffer):
    """Frame octets as sent: offloaded checksums applied, FCS appended.

    A buffer with ``crc_valid=False`` gets the bitwise complement of its
    correct FCS, which can never verify.
    """
    out = buffer.copy()
    apply_checksums(out)
    crc = crc32_fcs(out.data)
    if not buffer.crc_valid:
        crc ^= 0xFFFFFFFF
    return bytes(out.data) + fcs_bytes(crc)


_filler_cache = {}


def filler_frame(wire_len):
    """Materialized invalid-FCS frame occupying *wire_len* bytes on the wire."""
    frame = _filler_cache.get(wire_len)
    if frame is None:
        body = bytes(wire_len - 20 - hdr.FCS_LEN)
        frame = body + fcs_bytes(crc32_fcs(body) ^ 0xFFFFFFFF)
        _filler_cache[wire_len] = frame
    return frame
