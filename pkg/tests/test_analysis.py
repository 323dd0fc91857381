import math

import numpy as np
import pytest

from tvq import quantizer
from tvq.analysis import compare_paths, cosine_matrix, sparsity, storage_report
from tvq.container import (
    ArtifactMeta,
    QuantizedArtifact,
    Role,
    TensorMap,
    write_qtv,
)
from tvq.errors import TvqError
from tvq.kernels import packed_size
from tvq.rtvq import RTVQConfig, rtvq_quantize
from tvq.synth import SynthSpec, generate
from tvq.taskvec import TaskVector, quantize_tvq, task_vector
from tvq.container import write_bundle


def _map(**arrays) -> TensorMap:
    return TensorMap([(k, np.asarray(v, dtype=np.float32)) for k, v in arrays.items()])


def _tv(values, task="t") -> TaskVector:
    return TaskVector(tensors=_map(w=values), source_task=task)


# --- compare_paths -----------------------------------------------------------

def test_compare_paths_constant_delta_is_exact():
    # quarter-step values keep ft - pre exactly constant in float32
    base = np.arange(32, dtype=np.float32) * 0.25 - 4.0
    pre = _map(w=base)
    ft = _map(w=base + 0.25)
    rows = compare_paths(pre, [ft], bits_grid=[4], rtvq_configs=[(3, 2)])
    tvq_rows = [r for r in rows if r["path"] in ("tvq", "rtvq")]
    assert len(tvq_rows) == 2
    assert all(r["normalized_l2"] == 0.0 for r in tvq_rows)


def test_compare_paths_narrow_delta_ordering():
    pre, fts = generate(SynthSpec(
        n_tasks=2, tensor_shapes=((4096,),),
        pre_scale=0.05, delta_scale=0.002, cluster_scale=0.0, seed=3,
    ))
    rows = compare_paths(pre, fts, bits_grid=[4], rtvq_configs=[])
    by_path = {r["path"]: r for r in rows}
    assert by_path["fq"]["normalized_l2"] / by_path["tvq"]["normalized_l2"] > 5


def test_compare_paths_rtvq_beats_tvq2_on_clusters():
    pre, fts = generate(SynthSpec(
        n_tasks=8, tensor_shapes=((2048,),),
        pre_scale=0.05, delta_scale=0.004, cluster_scale=0.02, seed=4,
    ))
    rows = compare_paths(pre, fts, bits_grid=[2], rtvq_configs=[(3, 2)])
    by_path = {r["path"]: r for r in rows}
    assert by_path["rtvq"]["normalized_l2"] < by_path["tvq"]["normalized_l2"]
    assert by_path["rtvq"]["effective_bits"] == 2.375


# --- sparsity ------------------------------------------------------------------

def test_sparsity_extremes(rng):
    pre = _map(w=rng.normal(0, 0.05, 64))
    art = quantize_tvq(pre, pre, 3)  # zero task vector
    assert sparsity(art) == 1.0

    # zero-point outside every code: shift all values positive
    shifted = _map(w=pre["w"].astype(np.float64) + 10.0)
    art2 = quantize_tvq(shifted, pre, 3)
    codes_nonzero = _map(w=pre["w"].astype(np.float64) + np.linspace(10, 11, 64))
    art3 = quantize_tvq(codes_nonzero, pre, 3)
    assert sparsity(art3) == 0.0
    assert sparsity(art2) in (0.0, 1.0)  # constant positive delta never maps to 0


def test_sparsity_rejects_fq(rng):
    from tvq.taskvec import quantize_fq
    art = quantize_fq(_map(w=rng.normal(0, 1, 16)), 4)
    with pytest.raises(TvqError):
        sparsity(art)


def test_sparsity_matches_gaussian_central_cell(rng):
    sigma = 0.01
    tau = rng.normal(0, sigma, 100_000)
    pre = _map(w=np.zeros(100_000))
    ft = _map(w=tau)
    art = quantize_tvq(ft, pre, 3)
    qp = quantizer.compute_qparams(ft["w"].astype(np.float64), 3)
    # mass of N(0, sigma^2) inside the central cell [-scale/2, scale/2]
    expected = math.erf(qp.scale / 2 / (sigma * math.sqrt(2)))
    assert abs(sparsity(art) - expected) <= 0.05


def test_sparsity_invariant_under_pow2_scaling(rng):
    tau = rng.normal(0, 0.01, 4096)
    pre = _map(w=np.zeros(4096))
    base = sparsity(quantize_tvq(_map(w=tau), pre, 3))
    for factor in (0.25, 4.0, 1024.0):
        scaled = sparsity(quantize_tvq(_map(w=tau * factor), pre, 3))
        assert scaled == base


# --- cosine matrix ---------------------------------------------------------------

def test_cosine_scale_invariance(rng):
    v = rng.normal(0, 1, 50)
    m = cosine_matrix([_tv(v, "a"), _tv(2 * v, "b")])
    assert m[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert m[0, 0] == 1.0 and m[1, 1] == 1.0


def test_cosine_orthogonal_deltas():
    a = _tv([1.0, 0.0, 0.0], "a")
    b = _tv([0.0, 1.0, 0.0], "b")
    m = cosine_matrix([a, b])
    assert m[0, 1] == 0.0


def test_cosine_matches_naive_oracle(rng):
    tvs = [_tv(rng.normal(0, 1, 64), f"t{i}") for i in range(4)]
    m = cosine_matrix(tvs)
    assert np.array_equal(m, m.T)
    for i in range(4):
        for j in range(4):
            a = tvs[i].tensors["w"].astype(np.float64)
            b = tvs[j].tensors["w"].astype(np.float64)
            want = 1.0 if i == j else sum(x * y for x, y in zip(a, b)) / (
                math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))
            assert abs(m[i, j] - want) <= 1e-9


def test_cosine_rejects_zero_norm(rng):
    with pytest.raises(TvqError):
        cosine_matrix([_tv([0.0, 0.0], "z"), _tv([1.0, 0.0], "a")])
    with pytest.raises(TvqError):
        cosine_matrix([_tv([1.0], "only")])


# --- storage report ---------------------------------------------------------------

def test_storage_payload_exact_eight_bytes(tmp_path, rng):
    art = QuantizedArtifact(
        role=Role.TVQ,
        tensors={"w": quantizer.quantize_tensor(rng.normal(0, 1, 8), 8)},
        meta=ArtifactMeta(params={"bits": 8}),
    )
    path = tmp_path / "w.qtv"
    write_qtv(art, path)
    report = storage_report([path], n_tasks=1, fp32_param_count=8)
    assert report.payload_bytes == 8
    assert report.total_bytes == report.payload_bytes + report.header_bytes
    assert report.per_task_effective_bits == 8.0


def test_storage_payload_matches_shape_formula(tmp_path, rng):
    paths = []
    total_expected = 0
    for i, bits in enumerate((2, 2, 2)):
        sizes = [int(rng.integers(1, 200)) for _ in range(3)]
        art = QuantizedArtifact(
            role=Role.TVQ,
            tensors={f"t{j}": quantizer.quantize_tensor(rng.normal(0, 1, n), bits)
                     for j, n in enumerate(sizes)},
            meta=ArtifactMeta(params={"bits": bits}),
        )
        total_expected += sum(packed_size(n, bits) for n in sizes)
        p = tmp_path / f"a{i}.qtv"
        write_qtv(art, p)
        paths.append(p)
    report = storage_report(paths, n_tasks=3, fp32_param_count=max(1, total_expected))
    assert report.payload_bytes == total_expected


def test_storage_bundle_effective_bits(tmp_path):
    pre, fts = generate(SynthSpec(
        n_tasks=8, tensor_shapes=((512,),),
        pre_scale=0.05, delta_scale=0.004, cluster_scale=0.02, seed=9,
    ))
    bundle = rtvq_quantize(fts, pre, RTVQConfig(b_base=3, b_offset=2))
    out = tmp_path / "bundle"
    write_bundle(bundle, out)
    report = storage_report(out, n_tasks=8, fp32_param_count=512)
    assert report.per_task_effective_bits == 2.375
    assert report.baseline_fp32_bytes == 4 * 512 * 8
    assert 0 < report.ratio < 1


def test_storage_missing_file(tmp_path):
    with pytest.raises(OSError):
        storage_report([tmp_path / "missing.qtv"], n_tasks=1, fp32_param_count=1)
