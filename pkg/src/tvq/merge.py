"""Merging algorithms over task vectors.

All methods combine per-task deltas into one checkpoint,
``merged = pre + lam * combined_delta``, and differ only in how the
combined delta is formed:

* task arithmetic — plain sum over tasks;
* ties            — per task keep the top-``ceil(density*n)`` entries of
  each tensor by absolute value, elect the sign of the summed survivors
  per position, then average the survivors agreeing with that sign;
* magmax          — per position take the task value of largest
  magnitude (ties go to the lowest task index);
* breadcrumbs     — per task and tensor, zero entries ranked below the
  low quantile or at/above the high quantile of absolute value, then sum.

Ranking is ascending by (|value|, index); quantile cutoffs use
``ceil(q * n)`` of that rank, so ties resolve deterministically. Methods
never inspect where a task vector came from, so full-precision and
dequantized deltas are interchangeable. Arithmetic is float64 with tasks
accumulated in argument order; outputs are float32 maps.

Layer-wise linear scaling multiplies each task-vector tensor by
``alpha + beta * (layer / (n_layers - 1))`` before merging; layers default
to tensor positions in name order, overridable by a mapping file of
``tensor-name<TAB>layer-index`` lines.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from tvq.container import TensorMap
from tvq.errors import MismatchError, TvqError
from tvq.taskvec import TaskVector


class MergeMethod(str, Enum):
    TASK_ARITHMETIC = "task-arithmetic"
    TIES = "ties"
    MAGMAX = "magmax"
    BREADCRUMBS = "breadcrumbs"


@dataclass(frozen=True)
class MergeConfig:
    method: MergeMethod = MergeMethod.TASK_ARITHMETIC
    lam: float = 1.0
    ties_density: float = 1.0
    crumb_low: float = 0.0
    crumb_high: float = 1.0
    lines: tuple[float, float] | None = None  # (alpha, beta)

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if not 0.0 < self.ties_density <= 1.0:
            raise ValueError(f"ties_density must be in (0, 1], got {self.ties_density}")
        if not 0.0 <= self.crumb_low < self.crumb_high <= 1.0:
            raise ValueError(
                f"need 0 <= crumb_low < crumb_high <= 1, got ({self.crumb_low}, {self.crumb_high})"
            )


def _check_inputs(pre: TensorMap, tvs: list[TaskVector]) -> None:
    if not tvs:
        raise TvqError("need at least one task vector to merge")
    for tv in tvs:
        pre.require_same_layout(tv.tensors)


def _f64(tv: TaskVector, name: str) -> np.ndarray:
    return tv.tensors[name].astype(np.float64).ravel()


def _assemble(pre: TensorMap, deltas: dict[str, np.ndarray], lam: float) -> TensorMap:
    return TensorMap(
        (name, (pre[name].astype(np.float64) + lam * deltas[name].reshape(pre[name].shape))
         .astype(np.float32))
        for name in pre.names
    )


def task_arithmetic(pre: TensorMap, tvs: list[TaskVector], lam: float) -> TensorMap:
    _check_inputs(pre, tvs)
    deltas = {}
    for name in pre.names:
        acc = np.zeros(pre[name].size, dtype=np.float64)
        for tv in tvs:
            acc += _f64(tv, name)
        deltas[name] = acc
    return _assemble(pre, deltas, lam)


def _trim_top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Zero everything except the k largest-|value| entries (ties by index)."""
    out = np.zeros_like(values)
    if k <= 0:
        return out
    order = np.argsort(-np.abs(values), kind="stable")
    keep = order[:k]
    out[keep] = values[keep]
    return out


def ties_merge(pre: TensorMap, tvs: list[TaskVector], lam: float, density: float) -> TensorMap:
    if not 0.0 < density <= 1.0:
        raise TvqError(f"density must be in (0, 1], got {density}")
    _check_inputs(pre, tvs)
    deltas = {}
    for name in pre.names:
        n = pre[name].size
        k = math.ceil(density * n)
        trimmed = [_trim_top_k(_f64(tv, name), k) for tv in tvs]
        total = np.zeros(n, dtype=np.float64)
        for tr in trimmed:
            total += tr
        gamma = np.sign(total)
        agree_sum = np.zeros(n, dtype=np.float64)
        agree_cnt = np.zeros(n, dtype=np.int64)
        for tr in trimmed:
            match = (tr != 0.0) & (np.sign(tr) == gamma)
            agree_sum += np.where(match, tr, 0.0)
            agree_cnt += match
        deltas[name] = np.where(agree_cnt > 0, agree_sum / np.maximum(agree_cnt, 1), 0.0)
    return _assemble(pre, deltas, lam)


def magmax_merge(pre: TensorMap, tvs: list[TaskVector], lam: float) -> TensorMap:
    _check_inputs(pre, tvs)
    deltas = {}
    for name in pre.names:
        stack = np.stack([_f64(tv, name) for tv in tvs])
        winner = np.argmax(np.abs(stack), axis=0)  # first max wins ties
        deltas[name] = stack[winner, np.arange(stack.shape[1])]
    return _assemble(pre, deltas, lam)


def _quantile_mask(values: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep entries whose |value| rank r satisfies ceil(low*n) <= r < ceil(high*n)."""
    n = values.size
    order = np.argsort(np.abs(values), kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return (rank >= math.ceil(low * n)) & (rank < math.ceil(high * n))


def breadcrumbs_merge(pre: TensorMap, tvs: list[TaskVector], lam: float,
                      crumb_low: float, crumb_high: float) -> TensorMap:
    if not 0.0 <= crumb_low < crumb_high <= 1.0:
        raise TvqError(
            f"need 0 <= crumb_low < crumb_high <= 1, got ({crumb_low}, {crumb_high})"
        )
    _check_inputs(pre, tvs)
    deltas = {}
    for name in pre.names:
        acc = np.zeros(pre[name].size, dtype=np.float64)
        for tv in tvs:
            v = _f64(tv, name)
            acc += np.where(_quantile_mask(v, crumb_low, crumb_high), v, 0.0)
        deltas[name] = acc
    return _assemble(pre, deltas, lam)


def lines_coefficients(n_layers: int, alpha: float, beta: float) -> np.ndarray:
    """Per-layer scaling ramp: alpha + beta * (layer / (n_layers - 1))."""
    if n_layers < 1:
        raise TvqError(f"n_layers must be >= 1, got {n_layers}")
    ramp = np.arange(n_layers, dtype=np.float64) / max(n_layers - 1, 1)
    return alpha + beta * ramp


def load_layer_map(path) -> dict[str, int]:
    """Parse a tensor-name<TAB>layer-index mapping file."""
    mapping = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            name, sep, idx = line.partition("\t")
            if not sep or not name:
                raise TvqError(f"{path}:{lineno}: expected 'tensor-name<TAB>layer-index'")
            try:
                mapping[name] = int(idx)
            except ValueError as e:
                raise TvqError(f"{path}:{lineno}: bad layer index {idx!r}") from e
    return mapping


def apply_lines(tvs: list[TaskVector], alpha: float, beta: float,
                layer_map: dict[str, int] | None = None) -> list[TaskVector]:
    """Scale each task-vector tensor by its layer's ramp coefficient."""
    if not tvs:
        raise TvqError("need at least one task vector")
    names = tvs[0].tensors.names
    if layer_map is None:
        indices = {name: i for i, name in enumerate(names)}
    else:
        missing = [n for n in names if n not in layer_map]
        if missing:
            raise MismatchError(f"layer map is missing tensors: {missing[:5]}")
        indices = {name: layer_map[name] for name in names}
        if any(i < 0 for i in indices.values()):
            raise TvqError("layer indices must be non-negative")
    coeffs = lines_coefficients(max(indices.values()) + 1, alpha, beta)
    out = []
    for tv in tvs:
        scaled = TensorMap(
            (name, (coeffs[indices[name]] * tv.tensors[name].astype(np.float64)).astype(np.float32))
            for name in tv.tensors.names
        )
        out.append(TaskVector(tensors=scaled, source_task=tv.source_task))
    return out


def merge(pre: TensorMap, tvs: list[TaskVector], cfg: MergeConfig,
          layer_map: dict[str, int] | None = None) -> TensorMap:
    """Dispatch on the configured method, applying layer scaling first if set."""
    _check_inputs(pre, tvs)
    if cfg.lines is not None:
        tvs = apply_lines(tvs, cfg.lines[0], cfg.lines[1], layer_map)
    if cfg.method is MergeMethod.TASK_ARITHMETIC:
        return task_arithmetic(pre, tvs, cfg.lam)
    if cfg.method is MergeMethod.TIES:
        return ties_merge(pre, tvs, cfg.lam, cfg.ties_density)
    if cfg.method is MergeMethod.MAGMAX:
        return magmax_merge(pre, tvs, cfg.lam)
    if cfg.method is MergeMethod.BREADCRUMBS:
        return breadcrumbs_merge(pre, tvs, cfg.lam, cfg.crumb_low, cfg.crumb_high)
    raise ValueError(f"unknown merge method {cfg.method}")
