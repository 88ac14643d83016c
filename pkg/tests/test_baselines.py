import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccaccel.bench.baselines import (HyperLoopClient, RpcServer, cpu_kvs_batch_ns, kvs_access_trace,
                                     lru_miss_fraction, smartnic_service_ns)
from ccaccel.bench.config import BaselineSpec, ExperimentConfig
from ccaccel.bench.scenarios import run_kvs
from ccaccel.memsim import LatencyConfig
from ccaccel.rnic import RnicConfig
from ccaccel.simcore import Engine


def brute_lru(trace, cap, warmup):
    cache, misses = [], 0
    for i, x in enumerate(trace):
        hit = x in cache
        if hit:
            cache.remove(x)
        cache.append(x)
        cache = cache[-cap:]
        if i >= warmup and not hit:
            misses += 1
    n = len(trace) - warmup
    return misses / n if n > 0 else 0.0


@given(st.lists(st.integers(0, 12), max_size=200), st.integers(1, 8), st.integers(0, 50))
def test_lru_matches_list_oracle(trace, cap, warmup):
    assert lru_miss_fraction(trace, cap, warmup) == pytest.approx(brute_lru(trace, cap, warmup))


def test_access_trace_has_bucket_then_pair():
    t = kvs_access_trace(np.array([3, 9]), 16)
    assert len(t) == 4 and all(0 <= b < 16 for b in t[::2]) and t[1::2] == [19, 25]


def test_smartnic_service_is_linear_in_host_fraction():
    s = BaselineSpec()
    thr = [1 / smartnic_service_ns(s, f) for f in (0.0, 0.3, 0.6, 0.9)]
    steps = np.diff(thr)
    assert np.allclose(steps, steps[0])
    with pytest.raises(ValueError):
        smartnic_service_ns(s, 1.5)


def test_unknown_pipeline_rejected():
    with pytest.raises(ValueError):
        BaselineSpec(pipeline="fpga")


def test_smartnic_sweep_falls_monotonically_and_near_linearly():
    base = ExperimentConfig().replace(
        experiment={"clients": 8, "window": 64, "warmup": 500},
        workload={"request_count": 8000, "key_space": 10_000, "batch_size": 32},
        baseline={"pipeline": "smartnic", "smartnic_cores": 2})  # compute-bound over the whole sweep
    fr = [0.0, 0.3, 0.6, 0.9]
    thr = [run_kvs(base.replace(baseline={"host_fraction": f})).throughput_ops_s for f in fr]
    assert all(a > b for a, b in zip(thr, thr[1:]))
    slope, icpt = np.polyfit(fr, thr, 1)
    resid = np.array(thr) - (slope * np.array(fr) + icpt)
    assert np.max(np.abs(resid)) / thr[0] < 0.1


def test_cpu_batch_cost():
    assert cpu_kvs_batch_ns(BaselineSpec(), LatencyConfig(), 32) == 100 + 2 * 90 + 32 * 30


def rpc(max_wait=5000, batch=4):
    eng = Engine(1)
    srv = RpcServer(eng, LatencyConfig(), RnicConfig(), cores=1, batch=batch,
                    batch_ns=lambda reqs: 100 * len(reqs), max_wait_ns=max_wait)
    return eng, srv


def test_rpc_full_batch_one_doorbell():
    eng, srv = rpc()
    got = []
    for i in range(4):
        srv.send(0, i, 64, lambda r: got.append((r, eng.now)))
    eng.run_until()
    assert [g[0] for g in got] == [0, 1, 2, 3]
    assert eng.counters.get("cpu.doorbells") == 1


def test_rpc_partial_batch_times_out():
    eng, srv = rpc(max_wait=5000)
    got = []
    srv.send(0, "a", 64, lambda r: got.append(eng.now))
    eng.run_until()
    assert len(got) == 1
    # two one-way trips plus the wait and one request's service
    assert got[0] >= 5000 + 100


def test_hyperloop_one_op_per_tuple():
    eng = Engine(1)
    hl = HyperLoopClient(eng, LatencyConfig(), RnicConfig(), replicas=2, relay=None)
    done = []
    hl.run_txn(4, [64, 64], lambda: done.append(eng.now))
    eng.run_until()
    assert eng.counters.get("hyperloop.rdma_ops") == 6
    assert done == [4 * hl.read_ns() + 2 * hl.write_ns(64)]


def test_hyperloop_write_grows_with_replicas():
    lat, rn = LatencyConfig(), RnicConfig()
    w = [HyperLoopClient(Engine(1), lat, rn, r, None).write_ns(64) for r in (1, 2, 3)]
    assert w[0] < w[1] < w[2] and w[2] - w[1] == w[1] - w[0]
