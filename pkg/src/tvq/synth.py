"""Seeded synthetic checkpoint families for desk-scale verification.

Families are built as ``ft_t = pre + shared + delta_t`` with independent
zero-mean Gaussians: ``pre ~ N(0, pre_scale^2)`` models the wide-range
pre-trained weights, ``shared ~ N(0, cluster_scale^2)`` a common
direction across tasks, and ``delta_t ~ N(0, delta_scale^2)`` small
per-task deviations. Choosing ``delta_scale << pre_scale`` reproduces the
narrow-task-vector regime; ``cluster_scale >> delta_scale`` produces
clustered families where residual decomposition pays off.

Randomness comes from a self-contained generator so outputs are
bit-reproducible regardless of platform or numpy version: 256
interleaved xoshiro256++ lanes, each seeded from the splitmix64 stream
of the 64-bit seed (lane k takes outputs 4k..4k+3). The logical 64-bit
stream is lane 0..255 of step 0, then of step 1, and so on. Uniform
doubles are ``(x >> 11) * 2**-53``; normals come from Box-Muller over
consecutive uniform pairs. Generation is single-threaded by design.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from tvq.container import TensorMap
from tvq.errors import TvqError

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_LANES = 256


def _splitmix64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of the splitmix64 stream for `seed`."""
    inc = np.uint64(0x9E3779B97F4A7C15)
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * inc) & _MASK
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class SeededStream:
    """Deterministic uniform/normal stream (lane-interleaved xoshiro256++)."""

    def __init__(self, seed: int, lanes: int = _LANES):
        sm = _splitmix64(seed, 4 * lanes)
        self._s = [sm[k::4].copy() for k in range(4)]
        self._lanes = lanes
        self._buf = np.empty(0, dtype=np.uint64)

    def _step(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = (_rotl((s0 + s3) & _MASK, 23) + s0) & _MASK
        t = (s1 << np.uint64(17)) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s = [s0, s1, s2, _rotl(s3, 45)]
        return out

    def raw64(self, count: int) -> np.ndarray:
        chunks = [self._buf]
        have = self._buf.size
        while have < count:
            block = self._step()
            chunks.append(block)
            have += block.size
        flat = np.concatenate(chunks)
        self._buf = flat[count:]
        return flat[:count]

    def uniform(self, count: int) -> np.ndarray:
        """Doubles in [0, 1) with 53-bit resolution."""
        return (self.raw64(count) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normal(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))  # 1-u in (0,1] keeps log finite
        theta = (2.0 * math.pi) * u[1::2]
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic (pre, fine-tuned family) draw."""

    n_tasks: int
    tensor_shapes: tuple = ((64, 64),)
    pre_scale: float = 0.05
    delta_scale: float = 0.005
    cluster_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_tasks < 1:
            raise TvqError(f"n_tasks must be >= 1, got {self.n_tasks}")
        for s in (self.pre_scale, self.delta_scale, self.cluster_scale):
            if not (math.isfinite(s) and s >= 0):
                raise TvqError(f"scales must be finite and >= 0, got {s}")
        if not self.tensor_shapes:
            raise TvqError("need at least one tensor shape")
        for shape in self.tensor_shapes:
            if any(int(d) < 0 for d in shape):
                raise TvqError(f"negative dimension in shape {shape}")


def _tensor_names(spec: SynthSpec) -> list[str]:
    return [f"t{i:03d}" for i in range(len(spec.tensor_shapes))]


def generate(spec: SynthSpec) -> tuple[TensorMap, list[TensorMap]]:
    """Draw (pre, [ft_1..ft_N]); identical seeds give identical maps.

    Draw order is fixed: all pre tensors, then the shared direction, then
    each task's deltas, tensor by tensor in shape order.
    """
    rng = SeededStream(spec.seed)
    names = _tensor_names(spec)
    shapes = [tuple(int(d) for d in s) for s in spec.tensor_shapes]

    def draw_family(scale: float) -> dict[str, np.ndarray]:
        out = {}
        for name, shape in zip(names, shapes):
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            out[name] = (scale * rng.normal(n)).reshape(shape)
        return out

    pre_arrays = draw_family(spec.pre_scale)
    shared = draw_family(spec.cluster_scale)
    pre = TensorMap((name, pre_arrays[name].astype(np.float32)) for name in names)
    fts = []
    for _ in range(spec.n_tasks):
        delta = draw_family(spec.delta_scale)
        fts.append(TensorMap(
            (name, (pre_arrays[name] + shared[name] + delta[name]).astype(np.float32))
            for name in names
        ))
    return pre, fts
