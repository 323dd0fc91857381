"""Hot-kernel dispatch: compiled extension if importable, NumPy otherwise.

The four kernels (pack/unpack bitstreams, affine quantize/dequantize of
code arrays) share one contract:

* bitstreams are LSB-first within each byte and little-endian across
  bytes, one independent stream per tensor, trailing bits zero;
* rounding is half-away-from-zero;
* codes saturate to ``[0, 2**bits - 1]``.

Set ``TVQ_BACKEND=numpy`` or ``TVQ_BACKEND=compiled`` to force a backend
(used by the benchmark and the backend-equivalence tests).
"""

import os

import numpy as np

from tvq import _kernels_np

VALID_BITS = (2, 3, 4, 8)

try:
    from tvq import _kernels
except ImportError:
    _kernels = None

_forced = os.environ.get("TVQ_BACKEND", "").strip().lower()
if _forced == "numpy":
    _impl = _kernels_np
elif _forced == "compiled":
    if _kernels is None:
        raise ImportError("TVQ_BACKEND=compiled but the extension is not built")
    _impl = _kernels
elif _forced:
    raise ValueError(f"unknown TVQ_BACKEND {_forced!r}")
else:
    _impl = _kernels if _kernels is not None else _kernels_np


def backend_name() -> str:
    return _impl.NAME


def available_backends() -> tuple[str, ...]:
    return ("numpy",) if _kernels is None else ("compiled", "numpy")


def get_backend(name: str):
    """Return the backend module for `name` ("compiled" or "numpy")."""
    if name == "numpy":
        return _kernels_np
    if name == "compiled":
        if _kernels is None:
            raise ValueError("compiled backend is not available")
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def packed_size(n: int, bits: int) -> int:
    """Bytes needed for `n` codes at `bits` bits each."""
    return (n * bits + 7) // 8


def _check_bits(bits: int) -> None:
    if bits not in VALID_BITS:
        raise ValueError(f"bits must be one of {VALID_BITS}, got {bits}")


def pack(codes: np.ndarray, bits: int) -> bytes:
    """Pack integer codes into an LSB-first bitstream."""
    _check_bits(bits)
    codes = np.ascontiguousarray(codes)
    if codes.size and int(codes.max()) >= (1 << bits):
        raise ValueError(f"code overflows {bits}-bit range")
    if codes.dtype != np.uint8:
        codes = codes.astype(np.uint8)
    return _impl.pack_codes(codes, bits)


def unpack(packed: bytes | np.ndarray, n: int, bits: int) -> np.ndarray:
    """Inverse of :func:`pack`; `n` is the code count."""
    _check_bits(bits)
    buf = np.frombuffer(packed, dtype=np.uint8) if isinstance(packed, (bytes, bytearray)) else np.ascontiguousarray(packed, dtype=np.uint8)
    if buf.size != packed_size(n, bits):
        raise ValueError(f"packed length {buf.size} does not match {n} codes at {bits} bits")
    return _impl.unpack_codes(buf, n, bits)


def quantize_codes(data: np.ndarray, scale: float, zero_point: int, bits: int) -> np.ndarray:
    _check_bits(bits)
    data = np.ascontiguousarray(data, dtype=np.float64)
    return _impl.quantize_codes(data, float(scale), int(zero_point), bits)


def dequantize_codes(codes: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    return _impl.dequantize_codes(codes, float(scale), int(zero_point))
