"""Header layouts and dotted field addressing (``eth.dst``, ``ip4.src``, ``udp.dstPort``)."""
import ipaddress
from functools import lru_cache
from typing import NamedTuple

from ..errors import MissingLayer, UnknownField

ETHERTYPE_IP4 = 0x0800
ETHERTYPE_IP6 = 0x86DD
ETHERTYPE_PTP = 0x88F7
IPPROTO_TCP = 6
IPPROTO_UDP = 17
PTP_UDP_EVENT_PORT = 319
PTP_VERSION = 2

ETH_HLEN = 14
FCS_LEN = 4
MIN_FRAME = 60      # without FCS; 64 on the wire
MAX_FRAME = 1514    # without FCS; 1518 on the wire


class Field(NamedTuple):
    offset: int
    size: int
    kind: str = "int"   # int | mac | ip4 | ip6


LAYERS = {
    "eth": (ETH_HLEN, {
        "dst": Field(0, 6, "mac"),
        "src": Field(6, 6, "mac"),
        "type": Field(12, 2),
    }),
    "ip4": (20, {
        "tos": Field(1, 1),
        "length": Field(2, 2),
        "id": Field(4, 2),
        "fragment": Field(6, 2),
        "ttl": Field(8, 1),
        "protocol": Field(9, 1),
        "checksum": Field(10, 2),
        "src": Field(12, 4, "ip4"),
        "dst": Field(16, 4, "ip4"),
    }),
    "ip6": (40, {
        "flowLabel": Field(1, 3),
        "length": Field(4, 2),
        "nextHeader": Field(6, 1),
        "hopLimit": Field(7, 1),
        "src": Field(8, 16, "ip6"),
        "dst": Field(24, 16, "ip6"),
    }),
    "udp": (8, {
        "srcPort": Field(0, 2),
        "dstPort": Field(2, 2),
        "length": Field(4, 2),
        "checksum": Field(6, 2),
    }),
    "tcp": (20, {
        "srcPort": Field(0, 2),
        "dstPort": Field(2, 2),
        "seq": Field(4, 4),
        "ack": Field(8, 4),
        "dataOffset": Field(12, 1),
        "flags": Field(13, 1),
        "window": Field(14, 2),
        "checksum": Field(16, 2),
        "urgent": Field(18, 2),
    }),
    "ptp": (34, {
        "messageType": Field(0, 1),
        "version": Field(1, 1),
        "length": Field(2, 2),
        "domain": Field(4, 1),
        "flags": Field(6, 2),
        "correction": Field(8, 8),
        "sequenceId": Field(30, 2),
    }),
}

_LAYER_NAMES = {
    "eth": "eth", "ethernet": "eth",
    "ip4": "ip4", "ipv4": "ip4",
    "ip6": "ip6", "ipv6": "ip6",
    "udp": "udp", "tcp": "tcp",
    "ptp": "ptp", "ptp-payload": "ptp", "ptp_payload": "ptp",
}

# legal successors of each layer; None marks "end of stack"
_NEXT = {
    None: {"eth"},
    "eth": {"ip4", "ip6", "ptp", None},
    "ip4": {"udp", "tcp", None},
    "ip6": {"udp", "tcp", None},
    "udp": {"ptp", None},
    "tcp": {None},
    "ptp": {None},
}

# camelCase names used by scripts, resolved against the stack
_ALIASES = {
    "ethDst": "eth.dst", "ethSrc": "eth.src", "ethType": "eth.type",
    "ip4Src": "ip4.src", "ip4Dst": "ip4.dst", "ip6Src": "ip6.src", "ip6Dst": "ip6.dst",
    "ipTTL": "ip.ttl", "ipSrc": "ip.src", "ipDst": "ip.dst",
    "udpSrc": "udp.srcPort", "udpDst": "udp.dstPort",
    "tcpSrc": "tcp.srcPort", "tcpDst": "tcp.dstPort",
    "ptpVersion": "ptp.version", "ptpMessageType": "ptp.messageType",
}


def normalize_stack(stack):
    out = []
    for name in stack:
        key = _LAYER_NAMES.get(str(name).lower())
        if key is None:
            raise UnknownField(f"unknown protocol layer {name!r}")
        out.append(key)
    prev = None
    for layer in out + [None]:
        if layer not in _NEXT[prev]:
            raise UnknownField(f"layer {layer or 'end'!r} cannot follow {prev or 'start'!r}")
        prev = layer
    return tuple(out)


@lru_cache(maxsize=None)
def layer_offsets(stack):
    """Map each layer of a normalized stack to its byte offset in the frame."""
    offsets, pos = {}, 0
    for layer in stack:
        offsets[layer] = pos
        pos += LAYERS[layer][0]
    return offsets


def header_size(stack):
    return sum(LAYERS[layer][0] for layer in stack)


@lru_cache(maxsize=None)
def resolve(stack, name):
    """Return the absolute (offset, size, kind) of field *name* within *stack*."""
    dotted = _ALIASES.get(name, name)
    if "." not in dotted:
        raise UnknownField(f"unknown field {name!r}")
    layer, _, field = dotted.partition(".")
    if layer == "ip":
        layer = "ip6" if "ip6" in stack else "ip4"
    if layer not in stack:
        raise UnknownField(f"field {name!r} needs layer {layer!r}, stack is {'/'.join(stack)}")
    try:
        f = LAYERS[layer][1][field]
    except KeyError:
        raise UnknownField(f"layer {layer!r} has no field {field!r}") from None
    return Field(layer_offsets(stack)[layer] + f.offset, f.size, f.kind)


def encode_value(value, field):
    """Convert a user-facing value (int, dotted quad, MAC string) to an integer."""
    if isinstance(value, int):
        n = value
    elif field.kind == "mac":
        n = int(str(value).replace(":", "").replace("-", ""), 16)
    elif field.kind in ("ip4", "ip6"):
        n = int(ipaddress.ip_address(value))
    else:
        n = int(value, 0) if isinstance(value, str) else int(value)
    if not 0 <= n < 1 << (8 * field.size):
        raise ValueError(f"value {value!r} does not fit in {field.size} bytes")
    return n


def decode_value(n, field):
    if field.kind == "mac":
        return ":".join(f"{b:02x}" for b in n.to_bytes(6, "big"))
    if field.kind == "ip4":
        return str(ipaddress.IPv4Address(n))
    if field.kind == "ip6":
        return str(ipaddress.IPv6Address(n))
    return n


def require_layer(stack, layer):
    if layer not in stack:
        raise MissingLayer(f"stack {'/'.join(stack)} has no {layer} layer")
    return layer_offsets(stack)[layer]


def write_structure(data, stack):
    """Fill the fields implied by the stack itself: type codes, versions, lengths."""
    offs = layer_offsets(stack)
    frame_len = len(data)
    for i, layer in enumerate(stack):
        nxt = stack[i + 1] if i + 1 < len(stack) else None
        o = offs[layer]
        if layer == "eth":
            etype = {"ip4": ETHERTYPE_IP4, "ip6": ETHERTYPE_IP6, "ptp": ETHERTYPE_PTP}.get(nxt)
            if etype is not None:
                data[o + 12:o + 14] = etype.to_bytes(2, "big")
        elif layer == "ip4":
            data[o] = 0x45
            data[o + 8] = 64
            data[o + 9] = {"udp": IPPROTO_UDP, "tcp": IPPROTO_TCP}.get(nxt, 0)
        elif layer == "ip6":
            data[o] = 0x60
            data[o + 6] = {"udp": IPPROTO_UDP, "tcp": IPPROTO_TCP}.get(nxt, 59)
            data[o + 7] = 64
        elif layer == "tcp":
            data[o + 12] = 0x50
        elif layer == "ptp":
            data[o + 1] = PTP_VERSION
    write_lengths(data, stack, frame_len)


def write_lengths(data, stack, frame_len):
    offs = layer_offsets(stack)
    if "ip4" in offs:
        o = offs["ip4"]
        data[o + 2:o + 4] = (frame_len - o).to_bytes(2, "big")
    if "ip6" in offs:
        o = offs["ip6"]
        data[o + 4:o + 6] = (frame_len - o - 40).to_bytes(2, "big")
    if "udp" in offs:
        o = offs["udp"]
        data[o + 4:o + 6] = (frame_len - o).to_bytes(2, "big")
    if "ptp" in offs:
        o = offs["ptp"]
        data[o + 2:o + 4] = (frame_len - o).to_bytes(2, "big")
