"""Internet checksum and Ethernet FCS arithmetic."""
import struct
import zlib

from ..errors import OddLength

# CRC-32 of any frame that ends in its own correct FCS (with the final xor applied).
_CRC_GOOD_RESIDUE = 0x2144DF1C


def ones_complement_sum(data, start=0):
    """16-bit one's-complement sum of big-endian words in *data*.

    An odd trailing byte is padded with a zero octet, as for L4 payloads.
    """
    data = bytes(data)
    if len(data) % 2:
        data += b"\x00"
    total = start + sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def ipv4_checksum(header):
    """RFC 1071 checksum of an IPv4 header whose checksum field is zero."""
    if len(header) % 2:
        raise OddLength(f"header length {len(header)} is not a multiple of 2")
    return ~ones_complement_sum(header) & 0xFFFF


def crc32_fcs(frame):
    """IEEE 802.3 frame check sequence (reflected CRC-32, init/xorout 0xFFFFFFFF)."""
    return zlib.crc32(frame) & 0xFFFFFFFF


def fcs_bytes(crc):
    # FCS goes on the wire least significant byte first
    return crc.to_bytes(4, "little")


def fcs_valid(frame_with_fcs):
    return len(frame_with_fcs) >= 4 and zlib.crc32(frame_with_fcs) == _CRC_GOOD_RESIDUE


def _reverse32(x):
    return int(f"{x:032b}"[::-1], 2)


def fcs_residue(frame_with_fcs):
    """Shift-register remainder after clocking a frame plus its FCS.

    Reported in the MSB-first notation of IEEE 802.3, so a frame carrying a
    correct FCS always yields 0xC704DD7B.
    """
    return _reverse32(zlib.crc32(frame_with_fcs) ^ 0xFFFFFFFF)
