"""Residual decomposition of task vectors into a shared base plus offsets.

For tasks t = 1..N the task vector splits as

    tau_t = (ft_t - ft_avg) + (ft_avg - pre)       # offset + base

with ``ft_avg`` the elementwise mean of the fine-tuned checkpoints. The
base is stored once at ``b_base`` bits; each offset at ``b_offset`` bits,
so the amortized cost is ``b_offset + b_base / n_tasks`` bits per task.

With error correction on (the default), offsets are computed against the
calibrated average ``dequantize(quantize(base)) + pre`` instead of
``ft_avg``; the base's quantization error is then absorbed into the
offsets, and reconstruction error reduces to the offsets' own
quantization error.
"""

from dataclasses import dataclass

import numpy as np

from tvq import quantizer
from tvq.container import (
    ArtifactMeta,
    BundleManifest,
    QuantizedArtifact,
    Role,
    RTVQBundle,
    TensorMap,
)
from tvq.errors import MismatchError, TvqError
from tvq.kernels import VALID_BITS
from tvq.parallel import map_ordered
from tvq.taskvec import TaskVector, reconstruct


@dataclass(frozen=True)
class RTVQConfig:
    b_base: int
    b_offset: int
    error_correction: bool = True

    def __post_init__(self):
        for b in (self.b_base, self.b_offset):
            if b not in VALID_BITS:
                raise ValueError(f"bit width must be one of {VALID_BITS}, got {b}")


def effective_bits(b_offset: int, b_base: int, n_tasks: int) -> float:
    """Amortized per-task storage cost of a bundle, in bits per parameter."""
    if n_tasks < 1:
        raise TvqError(f"n_tasks must be >= 1, got {n_tasks}")
    return b_offset + b_base / n_tasks


def _mean_map(fts: list[TensorMap]) -> dict[str, np.ndarray]:
    """Elementwise float64 mean across checkpoints, accumulated per tensor."""
    acc = {name: np.zeros(arr.shape, dtype=np.float64) for name, arr in fts[0].items()}
    for ft in fts:
        for name in acc:
            acc[name] += ft[name].astype(np.float64)
    n = len(fts)
    return {name: a / n for name, a in acc.items()}


def _check_family(fts: list[TensorMap], pre: TensorMap) -> None:
    if not fts:
        raise TvqError("need at least one fine-tuned checkpoint")
    for ft in fts:
        ft.require_same_layout(pre)


def compute_base(fts: list[TensorMap], pre: TensorMap) -> TaskVector:
    """mean(fts) - pre: the shared component of the task-vector family."""
    _check_family(fts, pre)
    avg = _mean_map(fts)
    tensors = [
        (name, (avg[name] - pre[name].astype(np.float64)).astype(np.float32))
        for name in pre.names
    ]
    return TaskVector(tensors=TensorMap(tensors), source_task="base")


def _quantize_delta(arrays, names, bits, threads=None):
    quantized = map_ordered(lambda a: quantizer.quantize_tensor(a, bits), arrays, threads)
    return dict(zip(names, quantized))


def error_corrected_avg(base: TaskVector, pre: TensorMap, b_base: int,
                        threads: int | None = None) -> TensorMap:
    """Calibrated average checkpoint: dequantize(quantize(base)) + pre."""
    names = base.tensors.names
    qts = _quantize_delta(base.tensors.arrays(), names, b_base, threads)
    deq = TensorMap(
        (name, quantizer.dequantize_tensor(qts[name]).astype(np.float32)) for name in names
    )
    return reconstruct(pre, TaskVector(tensors=deq, source_task="base"))


def rtvq_quantize(fts: list[TensorMap], pre: TensorMap, cfg: RTVQConfig,
                  tasks: list[str] | None = None, threads: int | None = None) -> RTVQBundle:
    """Build a bundle: quantized shared base plus per-task quantized offsets."""
    _check_family(fts, pre)
    if tasks is None:
        tasks = [f"task{i}" for i in range(len(fts))]
    if len(tasks) != len(fts) or len(set(tasks)) != len(tasks):
        raise TvqError("task names must be unique and match the checkpoint count")
    pre_digest = pre.digest()
    names = pre.names

    avg = _mean_map(fts)
    base_qts = _quantize_delta(
        (avg[name] - pre[name].astype(np.float64) for name in names),
        names, cfg.b_base, threads,
    )
    base_art = QuantizedArtifact(
        role=Role.RTVQ_BASE,
        tensors=base_qts,
        meta=ArtifactMeta(task="", pre_digest=pre_digest, params={"bits": cfg.b_base}),
    )

    if cfg.error_correction:
        # Offsets measured against the calibrated average, so the base's
        # quantization error lands inside the offsets.
        ref = {
            name: quantizer.dequantize_tensor(base_qts[name]) + pre[name].astype(np.float64)
            for name in names
        }
    else:
        ref = avg

    offsets = {}
    for task, ft in zip(tasks, fts):
        qts = _quantize_delta(
            (ft[name].astype(np.float64) - ref[name] for name in names),
            names, cfg.b_offset, threads,
        )
        offsets[task] = QuantizedArtifact(
            role=Role.RTVQ_OFFSET,
            tensors=qts,
            meta=ArtifactMeta(task=task, pre_digest=pre_digest, params={"bits": cfg.b_offset}),
        )

    manifest = BundleManifest(
        tasks=tuple(tasks), b_base=cfg.b_base, b_offset=cfg.b_offset, pre_digest=pre_digest
    )
    return RTVQBundle(base=base_art, offsets=offsets, manifest=manifest)


def rtvq_reconstruct(bundle: RTVQBundle, task: str) -> TaskVector:
    """dequantize(offset_task) + dequantize(base), elementwise."""
    if task not in bundle.offsets:
        raise TvqError(f"unknown task {task!r}; bundle has {list(bundle.tasks)}")
    offset = bundle.offsets[task]
    tensors = [
        (name, (quantizer.dequantize_tensor(offset[name])
                + quantizer.dequantize_tensor(bundle.base[name])).astype(np.float32))
        for name in bundle.base.names
    ]
    return TaskVector(tensors=TensorMap(tensors), source_task=task)


def reconstruct_checkpoint(bundle: RTVQBundle, pre: TensorMap, task: str,
                           verify: bool = True) -> TensorMap:
    """pre + reconstructed task vector, optionally checking the pre digest."""
    if verify and bundle.manifest.pre_digest and pre.digest() != bundle.manifest.pre_digest:
        raise MismatchError("pre-checkpoint digest does not match the bundle manifest")
    return reconstruct(pre, rtvq_reconstruct(bundle, task))
