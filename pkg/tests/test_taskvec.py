import numpy as np
import pytest

from tvq import quantizer
from tvq.container import Role, TensorMap
from tvq.errors import MismatchError, TvqError
from tvq.kernels import unpack
from tvq.synth import SynthSpec, generate
from tvq.taskvec import (
    dequantize_fq,
    quantize_fq,
    quantize_tvq,
    range_stats,
    reconstruct,
    reconstruct_tvq,
    task_vector,
    tvq_task_vector,
)


def _map(**arrays) -> TensorMap:
    return TensorMap([(k, np.asarray(v, dtype=np.float32)) for k, v in arrays.items()])


def test_task_vector_identity_and_subtraction():
    pre = _map(w=[1.0, 2.0])
    assert np.array_equal(task_vector(pre, pre).tensors["w"], [0.0, 0.0])
    ft = _map(w=[2.0, 4.0])
    assert np.array_equal(task_vector(ft, pre).tensors["w"], [1.0, 2.0])


def test_task_vector_rejects_mismatch():
    with pytest.raises(MismatchError):
        task_vector(_map(w=[1.0]), _map(v=[1.0]))
    with pytest.raises(MismatchError):
        task_vector(_map(w=[1.0]), _map(w=[1.0, 2.0]))


def test_reconstruct_examples():
    pre = _map(w=[1.0])
    assert reconstruct(pre, task_vector(pre, pre)) == pre
    tv = task_vector(_map(w=[1.5]), pre)
    assert np.array_equal(reconstruct(pre, tv)["w"], [1.5])


def test_reconstruct_roundtrip_randomized(rng):
    pre = _map(a=rng.normal(0, 0.05, 500), b=rng.normal(0, 0.05, (10, 7)))
    ft = _map(a=rng.normal(0, 0.06, 500), b=rng.normal(0, 0.06, (10, 7)))
    rec = reconstruct(pre, task_vector(ft, pre))
    for name in ft.names:
        assert np.max(np.abs(rec[name].astype(np.float64) - ft[name].astype(np.float64))) <= 1e-6


def test_quantize_fq_constant_checkpoint_exact():
    ft = _map(w=np.full(9, 0.75))
    art = quantize_fq(ft, 2)
    assert art.role is Role.FQ
    assert dequantize_fq(art) == ft


def test_quantize_fq_bound(rng):
    # tensor spanning about 1.0: at 4 bits max error stays within one scale step
    ft = _map(w=rng.uniform(-0.5, 0.5, 4096))
    art = quantize_fq(ft, 4)
    recon = dequantize_fq(art)
    scale = art["w"].scale
    err = np.max(np.abs(recon["w"].astype(np.float64) - ft["w"].astype(np.float64)))
    assert err <= scale * (1 + 1e-5)
    assert scale <= (ft["w"].max() - ft["w"].min()) / 15 * (1 + 1e-6)


def test_quantize_tvq_identity_sentinel():
    pre = _map(w=[0.25, -0.5, 0.125])
    art = quantize_tvq(pre, pre, 3)
    assert art.role is Role.TVQ
    assert all(qt.is_constant for _, qt in art.items())
    assert reconstruct_tvq(art, pre) == pre


def test_quantize_tvq_bound(rng):
    pre = _map(w=rng.normal(0, 0.05, 2048))
    delta = rng.uniform(-0.025, 0.025, 2048)
    ft = _map(w=pre["w"].astype(np.float64) + delta)
    art = quantize_tvq(ft, pre, 4)
    tau_hat = tvq_task_vector(art).tensors["w"].astype(np.float64)
    tau = ft["w"].astype(np.float64) - pre["w"].astype(np.float64)
    assert np.max(np.abs(tau_hat - tau)) <= art["w"].scale * (1 + 1e-5)
    assert art["w"].scale <= 0.05 / 15 * (1 + 1e-6)


def test_tvq_beats_fq_on_narrow_deltas(rng):
    # task-vector range ~10x narrower than the checkpoint range
    pre = _map(w=rng.normal(0, 0.05, 8192))
    ft = _map(w=pre["w"].astype(np.float64) + rng.normal(0, 0.004, 8192))
    tau = ft["w"].astype(np.float64) - pre["w"].astype(np.float64)

    fq = dequantize_fq(quantize_fq(ft, 8))["w"].astype(np.float64) - pre["w"].astype(np.float64)
    tvq = tvq_task_vector(quantize_tvq(ft, pre, 8)).tensors["w"].astype(np.float64)
    err_fq = quantizer.quant_error(tau, fq).normalized_l2
    err_tvq = quantizer.quant_error(tau, tvq).normalized_l2
    assert err_tvq < err_fq


def test_tvq_dominates_fq_trials(rng):
    # spec property: with range ratio >= 5x, tvq wins nearly always
    wins = 0
    trials = 40
    for _ in range(trials):
        pre = _map(w=rng.normal(0, 0.05, 2048))
        ft = _map(w=pre["w"].astype(np.float64) + rng.normal(0, 0.005, 2048))
        tau = ft["w"].astype(np.float64) - pre["w"].astype(np.float64)
        fq_delta = dequantize_fq(quantize_fq(ft, 4))["w"].astype(np.float64) - pre["w"].astype(np.float64)
        tvq_tau = tvq_task_vector(quantize_tvq(ft, pre, 4)).tensors["w"].astype(np.float64)
        if quantizer.quant_error(tau, tvq_tau).normalized_l2 < quantizer.quant_error(tau, fq_delta).normalized_l2:
            wins += 1
    assert wins >= 0.95 * trials


def test_reconstruct_tvq_digest_check(rng):
    pre = _map(w=rng.normal(0, 0.05, 64))
    ft = _map(w=rng.normal(0, 0.05, 64))
    art = quantize_tvq(ft, pre, 4)
    other = _map(w=np.zeros(64))
    with pytest.raises(MismatchError):
        reconstruct_tvq(art, other)
    assert reconstruct_tvq(art, other, verify=False) is not None


def test_range_stats_examples():
    stats = range_stats(_map(w=[-1.0, 1.0]))
    assert stats.global_min == -1.0 and stats.global_max == 1.0
    assert stats.global_range == 2.0
    assert stats.per_tensor["w"].range == 2.0

    uniform = _map(w=np.linspace(-1, 1, 128))
    assert sum(range_stats(uniform).histogram) == 128

    with pytest.raises(TvqError):
        range_stats(TensorMap([]))


def test_range_stats_constant_map():
    stats = range_stats(_map(w=np.full(10, 3.0)))
    assert stats.global_range == 0.0
    assert stats.histogram[0] == 10 and sum(stats.histogram) == 10


def test_range_ratio_on_synthetic_family():
    pre, fts = generate(SynthSpec(
        n_tasks=1, tensor_shapes=((10_000,),),
        pre_scale=0.05, delta_scale=0.005, cluster_scale=0.0, seed=11,
    ))
    tau = task_vector(fts[0], pre)
    ratio = range_stats(tau.tensors).global_range / range_stats(fts[0]).global_range
    assert ratio < 0.3


def test_sparsity_grows_as_bits_shrink(rng):
    # zero-centered deltas: the central cell widens as bits drop
    tau = rng.normal(0, 0.01, 20_000)
    pre = _map(w=np.zeros(20_000))
    ft = _map(w=tau)
    fractions = []
    for bits in (8, 4, 3, 2):
        art = quantize_tvq(ft, pre, bits)
        qt = art["w"]
        codes = unpack(qt.codes, qt.size, qt.bits)
        fractions.append(np.count_nonzero(codes == qt.zero_point) / qt.size)
    assert fractions == sorted(fractions)
