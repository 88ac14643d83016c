import struct

import pytest
from hypothesis import given, strategies as st

from ccaccel.apps import tx as txm
from ccaccel.apps.tx import (RecoveryError, SequentialOracle, Txn, TxError, decode_request, encode_entry,
                             encode_request, parse_entry, recover)
from ccaccel.bench import scenarios
from ccaccel.bench.config import ExperimentConfig
from ccaccel.bench.workload import gen_workload
from ccaccel.memsim import MemKind
from ccaccel.ringcomm import HEADER


def tx_cfg(reads=0, writes=1, n=200, window=1, key_space=4096, seed=3, **over):
    cfg = ExperimentConfig().replace(
        experiment={"scenario": "tx", "seed": seed, "clients": 1, "window": window},
        workload={"app": "tx", "op_mix": {"reads": reads, "writes": writes}, "request_count": n,
                  "key_space": key_space})
    return cfg.replace(**over) if over else cfg


txns = st.builds(Txn, st.lists(st.integers(0, 2 ** 40).map(lambda x: x * 64), max_size=6),
                 st.lists(st.tuples(st.integers(0, 2 ** 40), st.binary(min_size=0, max_size=40)), max_size=6))


@given(txns)
def test_request_wire_round_trip(t):
    op, back = decode_request(encode_request(t))
    assert op == (txm.PURE_READ if t.pure_read else txm.TXN)
    assert back.reads == t.reads and back.writes == t.writes


def test_entry_layout_is_len_offset_data():
    e = encode_entry([(0x10, b"ab")])
    assert e[0] == 1
    assert struct.unpack_from("<IQ", e, 1) == (2, 0x10) and e[13:] == b"ab"
    assert parse_entry(e) == ([(0x10, b"ab")], len(e))


def test_malformed_entries():
    with pytest.raises(TxError):
        parse_entry(b"\x00")
    with pytest.raises(TxError):
        parse_entry(b"\x01\x05\x00")
    with pytest.raises(TxError):
        encode_entry([])


def log_image(entries, capacity=128, slot=128, head=0):
    log = bytearray(capacity * slot)
    for i, t in enumerate(entries):
        s = ((head + i) % capacity) * slot
        p = encode_request(t)
        log[s:s + HEADER] = struct.pack("<I", len(p))
        log[s + HEADER:s + HEADER + len(p)] = p
        log[s + slot - 1] = 1
    return log


def rand_txns(n, seed=0, records=64):
    import random
    r = random.Random(seed)
    return [Txn([], [(r.randrange(records) * 64, bytes([r.randrange(256)]) * 64)]) for _ in range(n)]


def test_recover_replays_all_committed_entries():
    ts = rand_txns(100)
    log = log_image(ts)
    data = bytearray(64 * 64)
    assert recover(log, 128, 128, 0, data) == list(range(100))
    oracle = SequentialOracle(64 * 64)
    for t in ts:
        oracle.apply(t)
    assert data == oracle.data


def test_torn_trailing_entry_is_discarded():
    ts = rand_txns(101, seed=1)
    log = log_image(ts)
    log[100 * 128 + 127] = 0  # valid byte of #101 never reached NVM
    data = bytearray(64 * 64)
    assert recover(log, 128, 128, 0, data) == list(range(100))
    oracle = SequentialOracle(64 * 64)
    for t in ts[:100]:
        oracle.apply(t)
    assert data == oracle.data


def test_empty_log_gives_empty_store():
    data = bytearray(4096)
    assert recover(bytearray(128 * 128), 128, 128, 0, data) == []
    assert data == bytearray(4096)


def test_recovery_starts_at_persisted_head_and_wraps():
    ts = rand_txns(10, seed=2)
    log = log_image(ts, capacity=8, slot=128, head=5)
    data = bytearray(64 * 64)
    assert recover(log, 8, 128, 5, data) == list(range(5, 13))


def test_corrupt_entry_mid_log_fails_stop():
    log = log_image(rand_txns(5))
    log[2 * 128 + HEADER + 1] = 0  # tuple_count of entry 2
    with pytest.raises(RecoveryError, match="entry 2"):
        recover(log, 128, 128, 0, bytearray(64 * 64))


def test_two_replica_chain_forwards_once_per_write_txn():
    cfg = tx_cfg(0, 1, n=50)
    r = scenarios.run_tx(cfg)
    assert r.completed == 50 and r.failed == 0
    assert r.counters["acc0.forwards"] == 50 and r.counters.get("acc1.forwards", 0) == 0
    # one combined request per txn: slot write plus pointer bump
    assert r.counters["rnic.client.wqes_posted"] == 100


def test_4r2w_txn_beats_hyperloop_by_60_percent():
    cfg = tx_cfg(4, 2, n=60)
    ram = scenarios.run_tx(cfg)
    hl = scenarios.run_tx(cfg.replace(baseline={"pipeline": "hyperloop"}))
    assert ram.lat_mean_ns < 0.4 * hl.lat_mean_ns
    assert hl.counters["hyperloop.rdma_ops"] == 60 * 6


def test_pure_read_is_one_round_trip():
    cfg = tx_cfg(1, 0, n=20)
    r = scenarios.run_tx(cfg)
    assert r.counters["rnic.client.doorbells"] == 20
    lat = cfg.latency()
    one_rt = lat.pcie_oneway_ns + 2 * 1250 + lat.pcie_oneway_ns + lat.nvm_read_ns
    assert r.lat_p50_ns == r.lat_p99_ns == one_rt


def test_conflicting_txns_commit_in_queue_order_and_match_oracle():
    cfg = tx_cfg(1, 2, n=300, window=8, key_space=12)
    wl = gen_workload(cfg.workload, cfg.experiment.seed)
    items = scenarios._tx_items(cfg, wl)
    chain = scenarios.build_tx_chain(cfg, lambda *a: None)
    keys_by_seq = [dict() for _ in chain.apps]
    for i, app in enumerate(chain.apps):
        orig = app.on_dispatch

        def spy(req, entry, orig=orig, i=i):
            orig(req, entry)
            keys_by_seq[i][req.seq] = entry.scratch["keys"]
        app.on_dispatch = spy
    c = chain.driver.clients[0]
    for t in items:
        c.queue.append((encode_request(t), t))
    c.pump()
    chain.engine.run_until()
    assert c.issued == 300 and not c.inflight
    for i, app in enumerate(chain.apps):
        assert len(app.commit_order) == 300
        per_key: dict = {}
        for seq in app.commit_order:
            for k in keys_by_seq[i][seq]:
                per_key.setdefault(k, []).append(seq)
        assert all(v == sorted(v) for v in per_key.values())
    oracle = SequentialOracle(chain.apps[0].data.length, 64)
    for t in items:
        oracle.apply(t)
    for app, m in zip(chain.apps, chain.replicas):
        assert m.mem.read(app.data.base, app.data.length) == bytes(oracle.data)


def test_log_and_data_never_stay_dirty_in_llc():
    cfg = tx_cfg(0, 2, n=100, window=4)
    chain = scenarios.build_tx_chain(cfg, lambda *a: None)
    wl = gen_workload(cfg.workload, cfg.experiment.seed)
    c = chain.driver.clients[0]
    for t in scenarios._tx_items(cfg, wl):
        c.queue.append((encode_request(t), t))
    c.pump()
    chain.engine.run_until()
    for app, m in zip(chain.apps, chain.replicas):
        nvm = [r for r in m.mem.regions if r.kind is MemKind.NVM]
        assert not [a for a in m.mem.dirty_lines() if any(r.contains(a) for r in nvm)]
        ctr = m.mem.read_counters()
        log_bytes = 100 * app.endpoint.rx.slot_size
        assert ctr["nvm_media_write_bytes"] >= log_bytes
        assert ctr["dma_nvm_mem_writes"] >= 100 and ctr.get("dma_nvm_llc_writes", 0) == 0


def test_crash_harness_finds_no_violations():
    res = scenarios.run_tx_crash(tx_cfg(2, 2, n=150, window=8))
    assert len(res) == 2
    for r in res:
        assert r.violations == 0, r.first_violation
        assert r.txns == 150 and r.crash_points > 150


def test_crash_harness_detects_zeroing_before_head(monkeypatch):
    """Mutation: retire slots before persisting the head. A crash between the
    two loses committed entries and the harness must notice."""
    from ccaccel.apps.tx import _U64
    from ccaccel.memsim import AccessRequest, Op, Origin

    def bad_commit(self, seq):
        ep = self.endpoint
        self._committed.add(seq)
        run = []
        s = ep.released
        while s in self._committed:
            run.append(s)
            self._committed.discard(s)
            s += 1
        if not run:
            return
        lat = 0
        for s in run:
            slot = ep.rx.slot_addr(s)
            lat += self.mem.access(AccessRequest(slot, HEADER + ep._retained[s], Op.WRITE, Origin.ACCEL))
            ep.release(s)
        lat += self.mem.access(AccessRequest(self.head_addr, 8, Op.WRITE, Origin.ACCEL))
        self.mem.write(self.head_addr, _U64.pack(run[-1] + 1), "accel")
        yield txm.Compute(lat)

    monkeypatch.setattr(txm.TxReplica, "_commit", bad_commit)
    res = scenarios.run_tx_crash(tx_cfg(0, 1, n=30, window=2))
    assert any(r.violations > 0 for r in res)


def test_key_space_larger_than_store_is_a_config_error():
    from ccaccel.bench.config import ConfigError
    with pytest.raises(ConfigError):
        scenarios.run_tx(tx_cfg(key_space=10_000))
