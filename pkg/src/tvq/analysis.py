"""Diagnostics: error comparisons, sparsity, similarity, storage accounting."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tvq import quantizer, rtvq, taskvec
from tvq.container import QuantizedArtifact, Role, TensorMap, read_bundle, read_qtv
from tvq.errors import TvqError
from tvq.kernels import unpack
from tvq.quantizer import ErrorReport


def _flatten(tmap: TensorMap) -> np.ndarray:
    """Concatenate all tensors in name order as one float64 vector."""
    return np.concatenate([arr.astype(np.float64).ravel() for arr in tmap.arrays()])


def _mean_report(reports: list[ErrorReport]) -> ErrorReport:
    # Arithmetic mean of each field across tasks.
    return ErrorReport(
        l2=float(np.mean([r.l2 for r in reports])),
        max_abs=float(np.mean([r.max_abs for r in reports])),
        normalized_l2=float(np.mean([r.normalized_l2 for r in reports])),
    )


def compare_paths(pre: TensorMap, fts: list[TensorMap], bits_grid: list[int],
                  rtvq_configs: list[tuple[int, int]] = ((3, 2),),
                  error_correction: bool = True,
                  threads: int | None = None) -> list[dict]:
    """Task-vector reconstruction error of each path, averaged over tasks.

    Rows cover direct checkpoint quantization (fq) and task-vector
    quantization (tvq) at every bit width in `bits_grid`, plus one rtvq
    row per (b_base, b_offset) config. Error is measured between each
    true task vector and the reconstructed one.
    """
    if not fts:
        raise TvqError("need at least one fine-tuned checkpoint")
    taus = [_flatten(taskvec.task_vector(ft, pre).tensors) for ft in fts]
    pre_flat = _flatten(pre)
    rows = []
    for bits in bits_grid:
        fq_reports = []
        tvq_reports = []
        for ft, tau in zip(fts, taus):
            fq_art = taskvec.quantize_fq(ft, bits, threads=threads)
            fq_delta = _flatten(taskvec.dequantize_fq(fq_art)) - pre_flat
            fq_reports.append(quantizer.quant_error(tau, fq_delta))
            tvq_art = taskvec.quantize_tvq(ft, pre, bits, threads=threads)
            tvq_tau = _flatten(taskvec.tvq_task_vector(tvq_art).tensors)
            tvq_reports.append(quantizer.quant_error(tau, tvq_tau))
        for path, reports in (("fq", fq_reports), ("tvq", tvq_reports)):
            mean = _mean_report(reports)
            rows.append({
                "path": path, "bits": bits, "effective_bits": float(bits),
                "l2": mean.l2, "max_abs": mean.max_abs, "normalized_l2": mean.normalized_l2,
            })
    for b_base, b_offset in rtvq_configs:
        cfg = rtvq.RTVQConfig(b_base=b_base, b_offset=b_offset, error_correction=error_correction)
        bundle = rtvq.rtvq_quantize(fts, pre, cfg, threads=threads)
        reports = [
            quantizer.quant_error(tau, _flatten(rtvq.rtvq_reconstruct(bundle, task).tensors))
            for task, tau in zip(bundle.tasks, taus)
        ]
        mean = _mean_report(reports)
        rows.append({
            "path": "rtvq", "b_base": b_base, "b_offset": b_offset,
            "effective_bits": rtvq.effective_bits(b_offset, b_base, len(fts)),
            "l2": mean.l2, "max_abs": mean.max_abs, "normalized_l2": mean.normalized_l2,
        })
    return rows


_DELTA_ROLES = (Role.TVQ, Role.RTVQ_BASE, Role.RTVQ_OFFSET)


def sparsity(artifact: QuantizedArtifact) -> float:
    """Fraction of codes that dequantize to exactly zero.

    Only meaningful for delta artifacts: a code equal to the zero-point
    reconstructs to exactly 0. Direct checkpoint artifacts are rejected
    because zero weights are not the quantity of interest there.
    """
    if artifact.role not in _DELTA_ROLES:
        raise TvqError(f"sparsity is defined for delta artifacts, not {artifact.role.value}")
    zeros = 0
    total = 0
    for _, qt in artifact.items():
        total += qt.size
        if qt.is_constant:
            # Sentinel codes are all zero but reconstruct to the constant.
            if np.float32(qt.constant) == np.float32(0.0):
                zeros += qt.size
        elif 0 <= qt.zero_point <= (1 << qt.bits) - 1:
            codes = unpack(qt.codes, qt.size, qt.bits)
            zeros += int(np.count_nonzero(codes == qt.zero_point))
    if total == 0:
        raise TvqError("artifact has no elements")
    return zeros / total


def cosine_matrix(tvs: list) -> np.ndarray:
    """Pairwise cosine similarity of flattened task vectors."""
    if len(tvs) < 2:
        raise TvqError("need at least two task vectors")
    for tv in tvs[1:]:
        tvs[0].tensors.require_same_layout(tv.tensors)
    flats = [_flatten(tv.tensors) for tv in tvs]
    norms = [float(np.linalg.norm(f)) for f in flats]
    for tv, nrm in zip(tvs, norms):
        if nrm == 0.0:
            raise TvqError(f"task vector {tv.source_task!r} has zero norm")
    n = len(flats)
    m = np.eye(n, dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = float(flats[i] @ flats[j]) / (norms[i] * norms[j])
    return m


@dataclass(frozen=True)
class ArtifactStorage:
    path: str
    payload_bytes: int
    header_bytes: int
    total_bytes: int


@dataclass(frozen=True)
class StorageReport:
    """Measured on-disk footprint against the full-precision baseline."""

    artifacts: tuple[ArtifactStorage, ...]
    payload_bytes: int
    header_bytes: int
    total_bytes: int
    baseline_fp32_bytes: int
    ratio: float
    per_task_effective_bits: float


def _measure_qtv(path: Path) -> tuple[ArtifactStorage, QuantizedArtifact]:
    art = read_qtv(path)
    total = path.stat().st_size
    payload = art.payload_bytes
    return ArtifactStorage(
        path=str(path), payload_bytes=payload,
        header_bytes=total - payload, total_bytes=total,
    ), art


def storage_report(target, n_tasks: int, fp32_param_count: int) -> StorageReport:
    """Byte accounting for a bundle directory or a collection of .qtv files.

    The baseline is ``4 * fp32_param_count * n_tasks`` bytes (one float32
    checkpoint per task). Effective bits per task come from the bundle
    manifest formula when measuring a bundle, from the shared bit width
    when all artifacts agree, and from measured payload bits otherwise.
    """
    if n_tasks < 1 or fp32_param_count < 1:
        raise TvqError("n_tasks and fp32_param_count must be >= 1")
    if isinstance(target, (str, Path)):
        targets = [Path(target)]
    else:
        targets = [Path(t) for t in target]

    entries: list[ArtifactStorage] = []
    artifacts: list[QuantizedArtifact] = []
    bundle_manifests = []
    for t in targets:
        if t.is_dir():
            bundle = read_bundle(t)
            bundle_manifests.append(bundle.manifest)
            for fname in ["base.qtv"] + sorted(
                p.name for p in t.glob("offset_*.qtv")
            ):
                entry, art = _measure_qtv(t / fname)
                entries.append(entry)
                artifacts.append(art)
            manifest_size = (t / "manifest.json").stat().st_size
            entries.append(ArtifactStorage(
                path=str(t / "manifest.json"), payload_bytes=0,
                header_bytes=manifest_size, total_bytes=manifest_size,
            ))
        else:
            entry, art = _measure_qtv(t)
            entries.append(entry)
            artifacts.append(art)

    payload = sum(e.payload_bytes for e in entries)
    header = sum(e.header_bytes for e in entries)
    total = sum(e.total_bytes for e in entries)
    baseline = 4 * fp32_param_count * n_tasks

    if len(bundle_manifests) == 1 and len(targets) == 1:
        man = bundle_manifests[0]
        ebits = rtvq.effective_bits(man.b_offset, man.b_base, man.n_tasks)
    else:
        bit_widths = {qt.bits for art in artifacts for _, qt in art.items()}
        if len(bit_widths) == 1 and not bundle_manifests:
            ebits = float(next(iter(bit_widths)))
        else:
            ebits = payload * 8 / (n_tasks * fp32_param_count)

    return StorageReport(
        artifacts=tuple(entries),
        payload_bytes=payload, header_bytes=header, total_bytes=total,
        baseline_fp32_bytes=baseline, ratio=total / baseline,
        per_task_effective_bits=ebits,
    )
