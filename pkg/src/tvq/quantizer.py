"""Asymmetric affine quantization of flat float arrays.

Quantization maps values to ``b``-bit codes through

    code = Round(x / scale) + zero_point,
    scale = (max - min) / (2**b - 1),
    zero_point = -Round(min / scale),

with Round = half-away-from-zero, and reconstructs them as
``scale * (code - zero_point)``. Codes are clamped to ``[0, 2**b - 1]``;
zero-point rounding can push an extreme value at most one step outside
the range, so the per-element reconstruction error is at most ``scale/2``
for unclamped codes and ``scale`` for clamped ones.

Constant tensors (max == min) use a sentinel encoding: ``scale == 0``,
``zero_point == 0``, all codes zero, and the constant value is carried
separately so reconstruction is exact.

Parameters are computed and applied in float64. When a parameter set is
frozen into a container tensor, the scale and constant are rounded to
float32 (the storage width); :func:`dequantize_tensor` uses those stored
values so that reconstruction matches what a reader of the file sees.
"""

import math
from dataclasses import dataclass

import numpy as np

from tvq import kernels
from tvq.container import QuantizedTensor
from tvq.errors import TvqError
from tvq.kernels import VALID_BITS, pack, unpack  # noqa: F401  (re-exported)


def round_half_away(x):
    """Round to nearest integer, ties away from zero. Works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.trunc(x + np.copysign(0.5, x))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QParams:
    """Per-tensor affine quantization parameters."""

    scale: float
    zero_point: int
    bits: int
    constant: float = 0.0

    @property
    def is_constant(self) -> bool:
        return self.scale == 0.0

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class ErrorReport:
    """Distance between an array and its reconstruction."""

    l2: float
    max_abs: float
    normalized_l2: float


def compute_qparams(data: np.ndarray, bits: int) -> QParams:
    """Derive scale and zero-point from the observed value range."""
    if bits not in VALID_BITS:
        raise ValueError(f"bits must be one of {VALID_BITS}, got {bits}")
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise TvqError("cannot quantize an empty array")
    lo = float(data.min())
    hi = float(data.max())
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise TvqError("cannot quantize non-finite values")
    scale = (hi - lo) / ((1 << bits) - 1)
    # float32 is the storage width for scales; a range so small that it
    # underflows there degenerates to the constant sentinel.
    if scale == 0.0 or np.float32(scale) == np.float32(0.0):
        return QParams(scale=0.0, zero_point=0, bits=bits, constant=lo)
    zero_point = int(-round_half_away(lo / scale))
    return QParams(scale=scale, zero_point=zero_point, bits=bits)


def quantize(data: np.ndarray, qp: QParams) -> np.ndarray:
    """Map values to clamped integer codes under `qp`."""
    data = np.ascontiguousarray(data, dtype=np.float64).ravel()
    if qp.is_constant:
        return np.zeros(data.size, dtype=np.uint8)
    return kernels.quantize_codes(data, qp.scale, qp.zero_point, qp.bits)


def dequantize(codes: np.ndarray, qp: QParams) -> np.ndarray:
    """Reconstruct float64 values from codes under `qp`."""
    codes = np.ascontiguousarray(codes, dtype=np.uint8).ravel()
    if codes.size and int(codes.max()) > qp.max_code:
        raise TvqError(f"code exceeds {qp.bits}-bit range")
    if qp.is_constant:
        return np.full(codes.size, float(np.float32(qp.constant)), dtype=np.float64)
    return kernels.dequantize_codes(codes, qp.scale, qp.zero_point)


def quant_error(original: np.ndarray, reconstructed: np.ndarray) -> ErrorReport:
    """L2 / max-abs / per-parameter L2 distance between two equal-length arrays."""
    a = np.asarray(original, dtype=np.float64).ravel()
    b = np.asarray(reconstructed, dtype=np.float64).ravel()
    if a.size != b.size:
        raise TvqError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        return ErrorReport(0.0, 0.0, 0.0)
    diff = a - b
    l2 = float(np.sqrt(np.sum(diff * diff)))
    return ErrorReport(l2=l2, max_abs=float(np.max(np.abs(diff))), normalized_l2=l2 / a.size)


def quantize_tensor(arr: np.ndarray, bits: int) -> QuantizedTensor:
    """Quantize one shaped tensor into its packed container form."""
    arr = np.asarray(arr)
    qp = compute_qparams(arr.ravel(), bits)
    if not qp.is_constant and not (-(1 << 31) <= qp.zero_point < (1 << 31)):
        raise TvqError("zero-point exceeds the 32-bit storage range")
    codes = quantize(arr, qp)
    return QuantizedTensor(
        shape=tuple(int(s) for s in arr.shape),
        bits=bits,
        scale=float(np.float32(qp.scale)),
        zero_point=qp.zero_point,
        constant=float(np.float32(qp.constant)),
        codes=pack(codes, bits),
    )


def dequantize_tensor(qt: QuantizedTensor) -> np.ndarray:
    """Reconstruct a shaped float64 array from a container tensor."""
    qp = QParams(scale=qt.scale, zero_point=qt.zero_point, bits=qt.bits, constant=qt.constant)
    codes = unpack(qt.codes, qt.size, qt.bits)
    return dequantize(codes, qp).reshape(qt.shape)
