import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccaccel.accel import Accelerator
from ccaccel.apps import dlrm as dl
from ccaccel.apps.dlrm import (MALFORMED, OK, OUT_OF_RANGE, DlrmError, DlrmModel, EmbeddingTable, Query,
                               decode_request, decode_response, encode_request)
from ccaccel.apps.kvs import SyncDriver
from ccaccel.bench import scenarios
from ccaccel.bench.config import ExperimentConfig
from ccaccel.memsim import MemorySystem
from ccaccel.simcore import Engine


def model(n_tables=2, rows=100, dim=8, seed=0, attached="host"):
    mem = MemorySystem(Engine(0))
    rng = np.random.default_rng(seed)
    tabs = []
    for t in range(n_tables):
        e = EmbeddingTable(mem, rows, dim, attached=attached, name=f"t{t}")
        e.fill_random(rng)
        tabs.append(e)
    return mem, tabs, DlrmModel(tabs, fc_ns=0)


def run(mem, m, q, opcode=dl.READY):
    from ccaccel.accel import ApuRequest, FsmEntry
    req = ApuRequest(0, 0, opcode, encode_request(q, opcode), 0)
    drv = SyncDriver(mem, m.services())
    return decode_response(drv.run(m.run(req, FsmEntry(0, req, None))), m.dim)


def test_single_index_sum_is_the_row():
    mem, tabs, m = model()
    st_, vec = run(mem, m, Query([[7], [3]], dl.SUM))
    assert st_ == OK
    assert np.array_equal(vec[0], tabs[0].array()[7]) and np.array_equal(vec[1], tabs[1].array()[3])


def test_repeated_index_max_is_the_row():
    mem, tabs, m = model(1)
    st_, vec = run(mem, m, Query([[5, 5]], dl.MAX))
    assert np.array_equal(vec[0], tabs[0].array()[5])


@pytest.mark.parametrize("op", [dl.SUM, dl.MAX, dl.MIN, dl.INNER_PRODUCT])
def test_random_queries_match_scalar_reference(op):
    mem, tabs, m = model(3, rows=500, dim=16, seed=op)
    rng = np.random.default_rng(op)
    arrs = [t.array() for t in tabs]
    for _ in range(20):
        q = dl.random_query(rng, [500] * 3, op)
        st_, vec = run(mem, m, q)
        assert st_ == OK
        for t, idx, got in zip(arrs, q.indices, vec):
            acc = t[idx[0]].copy()
            for i in idx[1:]:
                for j in range(len(acc)):  # element by element, fixed order
                    a, b = acc[j], t[i][j]
                    acc[j] = {dl.SUM: a + b, dl.MAX: max(a, b), dl.MIN: min(a, b),
                              dl.INNER_PRODUCT: a * b}[op]
            assert acc.tobytes() == got.tobytes()


def test_out_of_range_and_malformed():
    mem, tabs, m = model()
    assert run(mem, m, Query([[100], [0]], dl.SUM))[0] == OUT_OF_RANGE
    assert run(mem, m, Query([[1]], dl.SUM))[0] == MALFORMED


def test_fetches_are_issued_in_groups_of_64():
    mem, tabs, m = model(1, rows=1000)
    from ccaccel.accel import MemGather
    q = Query([list(range(150))], dl.SUM)
    gen = m.reduce(q)
    a = next(gen)
    seen = []
    try:
        while True:
            assert isinstance(a, MemGather)
            seen.append(len(a.addrs))
            a = gen.send(mem.gather(a.addrs, a.size))
    except StopIteration:
        pass
    assert seen == [64, 64, 22]


def test_preprocess_maps_raw_ids_to_rows():
    mem, tabs, m = model(2, rows=100)
    raw = encode_request(Query([[1005], [7]], dl.SUM), dl.RAW)
    assert decode_request(m.preprocess(raw)) == (dl.READY, Query([[5], [7]], dl.SUM))
    st_, vec = run(mem, m, Query([[1005], [7]], dl.SUM), dl.RAW)
    assert st_ == OK and np.array_equal(vec[0], tabs[0].array()[5])


@given(st.lists(st.lists(st.integers(0, 2 ** 32 - 1), min_size=1, max_size=20), min_size=1, max_size=8),
       st.sampled_from([dl.SUM, dl.MAX, dl.MIN, dl.INNER_PRODUCT]))
def test_request_wire_round_trip(idx, op):
    q = Query(idx, op)
    p = encode_request(q)
    assert p[0] == dl.READY and p[1] == len(idx) and p[-1] == op
    assert decode_request(p) == (dl.READY, q)


def test_decoder_rejects_garbage():
    for bad in (b"", b"\x01\x00\x00", b"\x07\x01\x01\x00\x00\x00\x00\x00\x01",
                encode_request(Query([[1]], dl.SUM))[:-1] + b"\x09"):
        with pytest.raises(DlrmError):
            decode_request(bad)


def test_tables_must_share_dimension():
    mem = MemorySystem(Engine(0))
    with pytest.raises(DlrmError):
        DlrmModel([EmbeddingTable(mem, 4, 8, name="a"), EmbeddingTable(mem, 4, 16, name="b")])
    with pytest.raises(DlrmError):
        DlrmModel([])


def dlrm_cfg(**over):
    cfg = ExperimentConfig().replace(
        experiment={"scenario": "dlrm", "seed": 5},
        workload={"app": "dlrm", "op_mix": {"sum": 0.25, "max": 0.25, "min": 0.25, "inner_product": 0.25},
                  "request_count": 300},
        apps={"dlrm": {"tables": 2, "rows": 2000}})
    return cfg.replace(**over) if over else cfg


def test_accelerator_run_matches_oracle_and_caps_fetches():
    r = scenarios.run_dlrm(dlrm_cfg(), verify=True)
    assert r.completed == 300 and r.failed == 0
    assert r.extra["oracle_mismatches"] == 0
    assert r.extra["max_fetches"] <= 64


def test_raw_requests_go_through_cpu_preprocessing():
    r = scenarios.run_dlrm(dlrm_cfg(apps={"dlrm": {"raw": True}}), verify=True)
    assert r.extra["oracle_mismatches"] == 0
    assert r.counters["accel.cpu_calls"] == 300
    assert 0 < r.extra["preprocess_utilization"] <= 1


def test_cpu_baseline_scales_with_cores_until_memory_saturates():
    tp = {}
    for cores in (1, 2, 4):
        c = dlrm_cfg(baseline={"pipeline": "cpu_rpc", "cores": cores})
        tp[cores] = scenarios.run_dlrm(c).throughput_ops_s
    assert tp[2] > 1.8 * tp[1] and tp[4] > 1.8 * tp[2]
