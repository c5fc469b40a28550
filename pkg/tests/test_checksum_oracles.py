"""10^4 randomized vectors against the naive oracles in ``oracles.py``."""
import numpy as np

from mgsim import packet as pk

from oracles import crc32_bitwise, crc32_register_residue, naive_checksum, naive_l4_ipv6, naive_udp_ipv4

N = 10_000


def test_ipv4_checksum_random_headers():
    rng = np.random.default_rng(11)
    for _ in range(N):
        h = bytearray(rng.bytes(20))
        h[10:12] = b"\x00\x00"
        assert pk.ipv4_checksum(h) == naive_checksum(h)


def test_ipv4_checksum_random_option_lengths():
    rng = np.random.default_rng(12)
    for _ in range(N // 10):
        h = bytearray(rng.bytes(4 * int(rng.integers(5, 16))))
        h[10:12] = b"\x00\x00"
        assert pk.ipv4_checksum(h) == naive_checksum(h)


def _random_udp4(rng):
    size = int(rng.integers(60, 400))
    buf = pk.make_template(pk.PacketTemplate(["eth", "ip4", "udp"], {}, size))
    buf.data[42:] = rng.bytes(size - 42)
    buf.data[26:38] = rng.bytes(12)       # addresses and ports
    return buf


def test_udp_ipv4_random():
    rng = np.random.default_rng(13)
    for _ in range(N):
        buf = _random_udp4(rng)
        seg = bytes(buf.data[34:])
        assert pk.l4_checksum(buf, "udp") == naive_udp_ipv4(buf.data[26:30], buf.data[30:34], seg)


def test_tcp_ipv6_random():
    rng = np.random.default_rng(14)
    for _ in range(N // 2):
        size = int(rng.integers(74, 300))
        buf = pk.make_template(pk.PacketTemplate(["eth", "ip6", "tcp"], {}, size))
        buf.data[22:54] = rng.bytes(32)
        buf.data[54:] = rng.bytes(size - 54)
        got = pk.l4_checksum(buf, "tcp")
        assert got == naive_l4_ipv6(buf.data[22:38], buf.data[38:54], 6, bytes(buf.data[54:]), 16)


def test_udp_ipv6_random():
    rng = np.random.default_rng(15)
    for _ in range(N // 2):
        size = int(rng.integers(62, 300))
        buf = pk.make_template(pk.PacketTemplate(["eth", "ip6", "udp"], {}, size))
        buf.data[22:54] = rng.bytes(32)
        buf.data[54:] = rng.bytes(size - 54)
        got = pk.l4_checksum(buf, "udp")
        assert got == naive_l4_ipv6(buf.data[22:38], buf.data[38:54], 17, bytes(buf.data[54:]), 6)


def test_crc32_random_frames():
    rng = np.random.default_rng(16)
    for _ in range(N):
        frame = rng.bytes(int(rng.integers(1, 128)))
        assert pk.crc32_fcs(frame) == crc32_bitwise(frame)


def test_crc32_residue_random_frames():
    rng = np.random.default_rng(17)
    for _ in range(N // 10):
        frame = rng.bytes(int(rng.integers(60, 128)))
        full = frame + pk.crc32_fcs(frame).to_bytes(4, "little")
        assert pk.fcs_residue(full) == crc32_register_residue(full) == 0xC704DD7B


def test_invalid_fcs_never_verifies():
    rng = np.random.default_rng(18)
    for _ in range(N // 10):
        buf = _random_udp4(rng)
        buf.crc_valid = False
        out = pk.materialize(buf)
        assert not pk.fcs_valid(out)
        assert crc32_bitwise(out[:-4]) != int.from_bytes(out[-4:], "little")
