"""Task-vector computation and the direct quantization paths.

A task vector is the elementwise difference between a fine-tuned
checkpoint and the pre-trained checkpoint it came from. Arithmetic runs
in float64 and results are stored as float32 maps; this keeps
subtract-then-add round trips within one float32 ulp.

Two quantization paths produce artifacts:

* ``quantize_fq``  — quantize the fine-tuned checkpoint itself; the
  artifact dequantizes directly to a checkpoint.
* ``quantize_tvq`` — quantize the task vector; reconstruction adds the
  dequantized delta back onto the pre-trained checkpoint. Task vectors
  have a much narrower value range than checkpoints, so at equal bit
  width this path has a proportionally tighter error bound.
"""

from dataclasses import dataclass

import numpy as np

from tvq import quantizer
from tvq.container import ArtifactMeta, QuantizedArtifact, Role, TensorMap
from tvq.errors import MismatchError, TvqError
from tvq.parallel import map_ordered


@dataclass(frozen=True)
class TaskVector:
    """Delta tensors sharing the pre-trained checkpoint's layout."""

    tensors: TensorMap
    source_task: str = ""


@dataclass(frozen=True)
class TensorStats:
    min: float
    max: float
    range: float
    mean: float
    stddev: float


@dataclass(frozen=True)
class RangeStats:
    """Per-tensor and global value-range summary of a checkpoint."""

    per_tensor: dict[str, TensorStats]
    global_min: float
    global_max: float
    histogram: tuple[int, ...]  # 64 bins spanning [global_min, global_max]

    HIST_BINS = 64

    @property
    def global_range(self) -> float:
        return self.global_max - self.global_min


def task_vector(ft: TensorMap, pre: TensorMap, source_task: str = "") -> TaskVector:
    """Elementwise ft - pre."""
    ft.require_same_layout(pre)
    tensors = []
    for name in ft.names:
        delta = ft[name].astype(np.float64) - pre[name].astype(np.float64)
        if not np.all(np.isfinite(delta)):
            raise TvqError(f"non-finite values in task vector tensor {name!r}")
        tensors.append((name, delta.astype(np.float32)))
    return TaskVector(tensors=TensorMap(tensors), source_task=source_task)


def reconstruct(pre: TensorMap, tv: TaskVector) -> TensorMap:
    """Elementwise pre + delta."""
    pre.require_same_layout(tv.tensors)
    return TensorMap(
        (name, (pre[name].astype(np.float64) + tv.tensors[name].astype(np.float64)).astype(np.float32))
        for name in pre.names
    )


def quantize_fq(ft: TensorMap, bits: int, task: str = "", threads: int | None = None) -> QuantizedArtifact:
    """Quantize a fine-tuned checkpoint directly."""
    quantized = map_ordered(lambda a: quantizer.quantize_tensor(a, bits), ft.arrays(), threads)
    return QuantizedArtifact(
        role=Role.FQ,
        tensors=zip(ft.names, quantized),
        meta=ArtifactMeta(task=task, pre_digest="", params={"bits": bits}),
    )


def quantize_tvq(ft: TensorMap, pre: TensorMap, bits: int, task: str = "",
                 threads: int | None = None) -> QuantizedArtifact:
    """Quantize the task vector ft - pre."""
    tv = task_vector(ft, pre, source_task=task)
    quantized = map_ordered(
        lambda a: quantizer.quantize_tensor(a, bits), tv.tensors.arrays(), threads
    )
    return QuantizedArtifact(
        role=Role.TVQ,
        tensors=zip(tv.tensors.names, quantized),
        meta=ArtifactMeta(task=task, pre_digest=pre.digest(), params={"bits": bits}),
    )


def dequantize_map(artifact: QuantizedArtifact) -> TensorMap:
    """Dequantize every tensor of an artifact to a float32 map (raw values)."""
    return TensorMap(
        (name, quantizer.dequantize_tensor(qt).astype(np.float32))
        for name, qt in artifact.items()
    )


def dequantize_fq(artifact: QuantizedArtifact) -> TensorMap:
    """Reconstruct the checkpoint stored by a direct-quantization artifact."""
    if artifact.role is not Role.FQ:
        raise TvqError(f"expected an fq artifact, got {artifact.role.value}")
    return dequantize_map(artifact)


def tvq_task_vector(artifact: QuantizedArtifact) -> TaskVector:
    """Dequantize a task-vector artifact to its delta map."""
    if artifact.role is not Role.TVQ:
        raise TvqError(f"expected a tvq artifact, got {artifact.role.value}")
    return TaskVector(tensors=dequantize_map(artifact), source_task=artifact.meta.task)


def reconstruct_tvq(artifact: QuantizedArtifact, pre: TensorMap, verify: bool = True) -> TensorMap:
    """pre + dequantized task vector, optionally checking the pre digest."""
    if verify and artifact.meta.pre_digest and pre.digest() != artifact.meta.pre_digest:
        raise MismatchError("pre-checkpoint digest does not match the artifact")
    return reconstruct(pre, tvq_task_vector(artifact))


def range_stats(tmap: TensorMap) -> RangeStats:
    """Value-range summary used to compare checkpoint vs task-vector spans."""
    if len(tmap) == 0:
        raise TvqError("cannot compute range stats of an empty map")
    per_tensor = {}
    gmin = np.inf
    gmax = -np.inf
    total = 0
    for name, arr in tmap.items():
        if arr.size == 0:
            raise TvqError(f"cannot compute range stats of empty tensor {name!r}")
        a = arr.astype(np.float64)
        lo, hi = float(a.min()), float(a.max())
        per_tensor[name] = TensorStats(
            min=lo, max=hi, range=hi - lo, mean=float(a.mean()), stddev=float(a.std())
        )
        gmin = min(gmin, lo)
        gmax = max(gmax, hi)
        total += arr.size
    if gmax > gmin:
        counts = np.zeros(RangeStats.HIST_BINS, dtype=np.int64)
        for arr in tmap.arrays():
            c, _ = np.histogram(arr.astype(np.float64), bins=RangeStats.HIST_BINS, range=(gmin, gmax))
            counts += c
    else:
        counts = np.zeros(RangeStats.HIST_BINS, dtype=np.int64)
        counts[0] = total
    return RangeStats(
        per_tensor=per_tensor,
        global_min=gmin,
        global_max=gmax,
        histogram=tuple(int(c) for c in counts),
    )
