"""Vectorized NumPy implementation of the hot kernels.

Fallback backend used when the compiled extension is unavailable. Both
backends implement the same contract, documented in :mod:`tvq.kernels`:
LSB-first bitstreams, round-half-away-from-zero, saturating clamp.
Inputs are assumed pre-validated by the wrapper.
"""

import numpy as np

NAME = "numpy"


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    if codes.size == 0:
        return b""
    if bits == 8:
        return codes.tobytes()
    shifts = np.arange(bits, dtype=np.uint8)
    bit_rows = (codes[:, None] >> shifts) & 1
    return np.packbits(bit_rows.ravel(), bitorder="little").tobytes()


def unpack_codes(packed: np.ndarray, n: int, bits: int) -> np.ndarray:
    if n == 0:
        return np.empty(0, dtype=np.uint8)
    if bits == 8:
        return packed[:n].copy()
    flat = np.unpackbits(packed, count=n * bits, bitorder="little")
    weights = (np.uint8(1) << np.arange(bits, dtype=np.uint8)).astype(np.uint8)
    return (flat.reshape(n, bits) * weights).sum(axis=1, dtype=np.uint8)


def quantize_codes(data: np.ndarray, scale: float, zero_point: int, bits: int) -> np.ndarray:
    scaled = data / scale
    rounded = np.trunc(scaled + np.copysign(0.5, scaled)) + float(zero_point)
    return np.clip(rounded, 0.0, float((1 << bits) - 1)).astype(np.uint8)


def dequantize_codes(codes: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    return scale * (codes.astype(np.float64) - float(zero_point))
