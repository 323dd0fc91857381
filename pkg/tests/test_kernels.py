import itertools

import numpy as np
import pytest

from tvq import kernels


def pack_oracle(codes, bits):
    """Bit-at-a-time reference packer: LSB-first within each byte."""
    nbits = len(codes) * bits
    out = bytearray((nbits + 7) // 8)
    pos = 0
    for c in codes:
        for k in range(bits):
            if (c >> k) & 1:
                out[pos // 8] |= 1 << (pos % 8)
            pos += 1
    return bytes(out)


def test_pack_examples(kernel_backend):
    # spilled third code: byte0 = 0b11010001, byte1 = the high bit of code 3
    assert kernels.pack(np.array([1, 2, 3], dtype=np.uint8), 3) == bytes([0xD1, 0x00])
    assert kernels.pack(np.array([3, 3, 3, 3], dtype=np.uint8), 2) == b"\xff"
    assert kernels.pack(np.array([], dtype=np.uint8), 2) == b""


def test_packed_size_formula(kernel_backend):
    packed = kernels.pack(np.array([1, 0, 1, 0, 1], dtype=np.uint8), 2)
    assert len(packed) == 2  # ceil(10 / 8)
    for n, bits in [(0, 2), (1, 3), (7, 3), (8, 8), (13, 4)]:
        codes = np.zeros(n, dtype=np.uint8)
        assert len(kernels.pack(codes, bits)) == kernels.packed_size(n, bits)


@pytest.mark.parametrize("bits", [2, 3])
def test_roundtrip_exhaustive_small(kernel_backend, bits):
    for length in range(5):
        for combo in itertools.product(range(1 << bits), repeat=length):
            codes = np.array(combo, dtype=np.uint8)
            packed = kernels.pack(codes, bits)
            assert packed == pack_oracle(combo, bits)
            assert np.array_equal(kernels.unpack(packed, length, bits), codes)


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_roundtrip_randomized(kernel_backend, bits, rng):
    for length in range(65):
        codes = rng.integers(0, 1 << bits, length).astype(np.uint8)
        packed = kernels.pack(codes, bits)
        assert len(packed) == kernels.packed_size(length, bits)
        assert np.array_equal(kernels.unpack(packed, length, bits), codes)
        # unused trailing bits stay zero
        tail = (length * bits) % 8
        if tail and packed:
            assert packed[-1] >> tail == 0


def test_pack_rejects_overflow_and_bad_bits():
    with pytest.raises(ValueError):
        kernels.pack(np.array([4], dtype=np.uint8), 2)
    with pytest.raises(ValueError):
        kernels.pack(np.array([1], dtype=np.uint8), 5)
    with pytest.raises(ValueError):
        kernels.unpack(b"\x00", 1, 6)


def test_unpack_rejects_length_mismatch():
    with pytest.raises(ValueError):
        kernels.unpack(b"\x00\x00\x00", 5, 2)  # 5 codes at 2 bits need 2 bytes


def test_backends_agree(rng):
    names = kernels.available_backends()
    if len(names) < 2:
        pytest.skip("only one backend built")
    impls = [kernels.get_backend(n) for n in names]
    for bits in (2, 3, 4, 8):
        codes = rng.integers(0, 1 << bits, 999).astype(np.uint8)
        packs = [impl.pack_codes(codes, bits) for impl in impls]
        assert len(set(packs)) == 1
        buf = np.frombuffer(packs[0], dtype=np.uint8)
        unpacks = [impl.unpack_codes(buf, codes.size, bits) for impl in impls]
        assert all(np.array_equal(u, codes) for u in unpacks)

        data = rng.normal(0.0, 0.1, 4096)
        scale = (data.max() - data.min()) / ((1 << bits) - 1)
        z = int(-np.trunc(data.min() / scale + np.copysign(0.5, data.min() / scale)))
        qs = [impl.quantize_codes(data, scale, z, bits) for impl in impls]
        assert np.array_equal(qs[0], qs[1])
        ds = [impl.dequantize_codes(qs[0], scale, z) for impl in impls]
        assert np.array_equal(ds[0], ds[1])
