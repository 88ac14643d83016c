import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccaccel.bench.workload import GET, PUT, UPDATE, WorkloadError, WorkloadSpec, ZipfSampler, draw_keys, gen_workload
from ccaccel.simcore import RngStream


def test_uniform_bins_are_flat():
    spec = WorkloadSpec(key_space=10 ** 6, request_count=10 ** 6)
    keys = gen_workload(spec, 1).keys
    assert keys.min() >= 0 and keys.max() < 10 ** 6
    bins = np.bincount(keys // 10 ** 4, minlength=100)
    assert bins.max() / bins.min() < 1.2


def test_zipf_top_key_matches_analytic_mass():
    spec = WorkloadSpec(key_space=10 ** 6, request_count=10 ** 6, distribution="zipfian", theta=0.9)
    keys = gen_workload(spec, 2).keys
    hn = float(np.sum(np.arange(1, 10 ** 6 + 1, dtype=np.float64) ** -0.9))
    expect = 1.0 / hn
    assert abs(np.mean(keys == 0) / expect - 1) < 0.05
    assert ZipfSampler(10 ** 6, 0.9).pmf_top() == pytest.approx(expect)


def test_zipf_rank_frequencies_follow_power_law():
    s = ZipfSampler(1000, 0.9)
    ranks = s.sample(RngStream(3, "z"), 400_000)
    f = np.bincount(ranks, minlength=1001)[1:]
    assert f[0] / f[9] == pytest.approx(10 ** 0.9, rel=0.08)


@given(st.integers(1, 10 ** 7), st.floats(0.05, 3.0), st.integers(0, 1000))
def test_zipf_ranks_in_range(n, theta, seed):
    r = ZipfSampler(n, theta).sample(RngStream(seed, "r"), 200)
    assert r.min() >= 1 and r.max() <= n


def test_all_get_mix_has_no_puts():
    ops = gen_workload(WorkloadSpec(op_mix={"get": 1.0}, request_count=5000), 1).ops
    assert set(ops.tolist()) == {GET}


def test_mixed_ops_follow_fractions():
    spec = WorkloadSpec(op_mix={"get": 0.5, "put": 0.3, "update": 0.2}, request_count=100_000)
    ops = gen_workload(spec, 1).ops
    frac = [np.mean(ops == c) for c in (GET, PUT, UPDATE)]
    assert frac == pytest.approx([0.5, 0.3, 0.2], abs=0.01)


def test_same_seed_same_stream():
    spec = WorkloadSpec(distribution="zipfian", request_count=2000)
    a, b = gen_workload(spec, 9), gen_workload(spec, 9)
    assert np.array_equal(a.keys, b.keys) and np.array_equal(a.ops, b.ops)
    assert not np.array_equal(a.keys, gen_workload(spec, 10).keys)


def test_tx_rows_have_distinct_keys():
    spec = WorkloadSpec(app="tx", op_mix={"reads": 4, "writes": 2}, key_space=10, request_count=500)
    keys = gen_workload(spec, 1).keys
    assert keys.shape == (500, 6)
    assert all(len(set(r)) == 6 for r in keys.tolist())


def test_dlrm_queries_have_lengths_in_range():
    spec = WorkloadSpec(app="dlrm", op_mix={"sum": 0.5, "max": 0.5}, request_count=200, tables=3)
    wl = gen_workload(spec, 1)
    lens = [len(t) for q in wl.queries for t in q]
    assert min(lens) >= 10 and max(lens) <= 80 and len(wl.queries[0]) == 3


@pytest.mark.parametrize("bad", [
    dict(app="web"), dict(distribution="pareto"), dict(distribution="zipfian", theta=0.0),
    dict(request_count=0), dict(op_mix={"get": 0.7}), dict(op_mix={"get": 0.5, "scan": 0.5}),
    dict(app="tx", op_mix={"get": 1.0}), dict(app="dlrm", op_mix={"avg": 1.0}), dict(key_space=0),
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(WorkloadError):
        WorkloadSpec(**bad)


def test_draw_keys_uniform_range():
    k = draw_keys(WorkloadSpec(key_space=7), RngStream(1, "k"), 1000)
    assert set(k.tolist()) == set(range(7))
