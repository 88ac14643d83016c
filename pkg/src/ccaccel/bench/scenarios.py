"""Experiment orchestration.

Each ``run_*`` builds fresh machines on one engine, drives a request stream
to exhaustion and returns a :class:`MetricsReport`. Nothing is shared
between runs, so runs may execute in parallel processes.
"""

from __future__ import annotations

import dataclasses
import struct
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..accel import AccelConfig, Accelerator, serve_remote_client
from ..apps import dlrm as dl
from ..apps import kvs as kv
from ..apps import tx as txm
from ..cpoll import SpinPoller
from ..memsim import AccessRequest, MemKind, MemorySystem, Op, Origin
from ..ringcomm import NO_CREDIT, Placement, create_pair
from ..rnic import Rnic, Wqe
from ..simcore import Engine, RngStream
from .baselines import (CpuDlrmServer, HyperLoopClient, RpcServer, cpu_kvs_batch_ns, kvs_access_trace,
                        lru_miss_fraction, smartnic_service_ns)
from .config import ConfigError, ExperimentConfig
from .metrics import MetricsReport
from .workload import GET, PUT, Workload, draw_keys, gen_workload



@dataclass
class Machine:
    name: str
    mem: MemorySystem
    rnic: Rnic


def machine(engine: Engine, cfg: ExperimentConfig, name: str, ddio: bool | None = None) -> Machine:
    mem = MemorySystem(engine, cfg.latency(), name, ddio_enabled=cfg.memory.ddio if ddio is None else ddio)
    return Machine(name, mem, Rnic(engine, mem, name, cfg.rnicsim.rnic()))


def relay_fn(engine: Engine, cfg: ExperimentConfig, name: str) -> Callable[[], int]:
    s = engine.register_stream(f"relay.{name}")
    lo, hi = cfg.rnicsim.relay_min_ns, cfg.rnicsim.relay_max_ns
    return lambda: s.uniform_int(lo, hi)


def accel_config(cfg: ExperimentConfig, **over) -> AccelConfig:
    a = dataclasses.replace(cfg.accelfw, signal_every=cfg.rnicsim.signal_every,
                            doorbell_batch=max(cfg.rnicsim.doorbell_batch, cfg.workload.batch_size))
    return dataclasses.replace(a, **over)


# client side of rambda connections

class RemoteClient:
    """One connection's client: keeps up to ``window`` requests in flight."""

    def __init__(self, idx: int, conn, resp_region, driver: "ClientDriver"):
        self.idx = idx
        self.conn = conn
        self.region = resp_region
        self.driver = driver
        self.queue: deque = deque()
        self.inflight: deque = deque()
        self.issued = 0
        self._draining = False

    def pump(self) -> None:
        d = self.driver
        while self.queue and len(self.inflight) < d.window:
            payload, tag = self.queue[0]
            r = d.post(self, payload)
            if r is NO_CREDIT:
                return
            self.queue.popleft()
            self.inflight.append((tag, d.engine.now))
            self.issued += 1

    def drain(self) -> None:
        if self._draining:
            return
        self._draining = True
        try:
            ep = self.conn.endpoint
            while ep.poll_valid():
                payload = ep.try_consume()
                tag, t0 = self.inflight.popleft()
                self.driver.complete(self, tag, payload, self.driver.engine.now - t0)
        finally:
            self._draining = False
        self.pump()


class ClientDriver:
    """Client machine: posts requests over cpoll connections and consumes the
    responses the server writes into its memory."""

    def __init__(self, engine: Engine, mem: MemorySystem, window: int,
                 on_complete: Callable[[RemoteClient, object, bytes, int], None],
                 post: Callable | None = None):
        from ..cpoll import client_pointer_post
        self.engine = engine
        self.mem = mem
        self.window = window
        self.on_complete = on_complete
        self.clients: list[RemoteClient] = []
        self._post = post or client_pointer_post
        mem.add_write_listener(self._on_write)

    def add(self, conn, resp_region) -> RemoteClient:
        c = RemoteClient(len(self.clients), conn, resp_region, self)
        self.clients.append(c)
        return c

    def post(self, c: RemoteClient, payload: bytes):
        return self._post(c.conn, payload)

    def complete(self, c: RemoteClient, tag, payload: bytes, latency: int) -> None:
        self.on_complete(c, tag, payload, latency)

    def _on_write(self, addr: int, data: bytes, origin: str) -> None:
        if origin != "dma":
            return
        for c in self.clients:
            if c.region.base <= addr < c.region.end:
                # the client polls its response ring; one LLC hit to notice
                self.engine.schedule(self.mem.cfg.llc_access_ns, c.drain)
                return

    def open_loop(self, c: RemoteClient, items: list, gap_ns: float, rng: RngStream) -> None:
        """Release ``items`` to client ``c`` with exponential inter-arrival gaps."""
        t = 0.0
        gaps = -np.log1p(-rng.uniforms(len(items))) * gap_ns
        for item, g in zip(items, gaps):
            t += g
            self.engine.at(int(t), self._arrive, c, item)

    def _arrive(self, c: RemoteClient, item) -> None:
        c.queue.append(item)
        c.pump()


def collect(engine: Engine, *mems: MemorySystem) -> dict[str, int]:
    """Engine counters plus each memory system's, prefixed by machine name."""
    out = engine.counters.snapshot()
    for m in mems:
        out.update({f"{m.name}.{k}": v for k, v in m.read_counters().items()})
    return out


class Recorder:
    """Completion log: finish time and latency of every request."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.times: list[int] = []
        self.lats: list[int] = []

    def done(self, latency: int) -> None:
        self.times.append(self.engine.now)
        self.lats.append(int(latency))

    def __len__(self) -> int:
        return len(self.lats)


def _finish(name: str, pipeline: str, cfg: ExperimentConfig, rec: Recorder, issued: int, failed: int,
            counters: dict, extra: dict) -> MetricsReport:
    """Steady-state report: the first and last ``warmup`` completions are
    left out of both latency and throughput."""
    n, w = len(rec), cfg.experiment.warmup
    if w > 0 and n > 2 * w + 1:
        times = sorted(rec.times)
        lats = rec.lats[w:n - w]
        span = times[n - w - 1] - times[w]
        thr = (n - 2 * w - 1) / span * 1e9 if span > 0 else 0.0
    else:
        lats, span = rec.lats, max(rec.times, default=0)
        thr = None
    return MetricsReport.build(name, pipeline, cfg.experiment.seed, lats, max(span, 1), issued=issued,
                               failed=failed, counters=counters, config=cfg.to_dict(), extra=extra,
                               throughput_ops_s=thr)


# KVS

def kvs_value(key: int, version: int, size: int) -> bytes:
    base = struct.pack("<QQ", key, version)
    return (base * (size // 16 + 1))[:size]


def kvs_buckets(cfg: ExperimentConfig) -> int:
    k = cfg.apps.kvs
    if k.n_buckets:
        return k.n_buckets
    need = cfg.workload.key_space / (kv.WAYS * k.load_factor)
    return 1 << max(4, int(np.ceil(np.log2(need))))


def run_kvs(cfg: ExperimentConfig, verify: bool = False) -> MetricsReport:
    wl = gen_workload(cfg.workload, cfg.experiment.seed)
    p = cfg.baseline.pipeline
    if p == "rambda":
        return _kvs_rambda(cfg, wl, verify)
    if p in ("cpu_rpc", "smartnic"):
        return _kvs_rpc(cfg, wl)
    raise ConfigError(f"pipeline {p!r} does not run the kvs scenario")


def _kvs_items(cfg: ExperimentConfig, wl: Workload) -> list:
    vs = cfg.apps.kvs.value_size
    items = []
    code = {GET: kv.GET, PUT: kv.PUT}
    for i, (op, k) in enumerate(zip(wl.ops.tolist(), wl.keys.tolist())):
        key = kv.key_bytes(k)
        if op == GET:
            items.append((kv.encode_request(kv.GET, key), (kv.GET, k, None, i)))
        else:
            v = kvs_value(k, i + 1, vs)
            c = code.get(op, kv.UPDATE)
            items.append((kv.encode_request(c, key, v), (c, k, v, i)))
    return items


def _split(items: list, n: int) -> list[list]:
    return [items[i::n] for i in range(n)]


def _kvs_rambda(cfg: ExperimentConfig, wl: Workload, verify: bool) -> MetricsReport:
    seed = cfg.experiment.seed
    eng = Engine(seed)
    server = machine(eng, cfg, "server")
    client = machine(eng, cfg, "client")
    acc = Accelerator(eng, server.mem, server.rnic, accel_config(cfg))
    ks = cfg.apps.kvs
    n_keys = cfg.workload.key_space
    store = kv.KvsStore(server.mem, kvs_buckets(cfg), slab_bytes=max(2 * n_keys * kv.SLOT, 1 << 16),
                        kind=MemKind(ks.kind), attached=ks.attached)
    stored = sorted(RngStream(cfg.experiment.seed, "kvs.preload").gen.permutation(n_keys)
                    [:round(ks.preload_fraction * n_keys)].tolist())
    kv.preload(store, ((kv.key_bytes(k), kvs_value(k, 0, ks.value_size)) for k in stored))
    acc.add_cpu_service("alloc", 200, store.alloc_bucket_service)

    accesses: dict[int, list[int]] = {kv.GET: [], kv.PUT: []}

    def on_resp(payload: bytes, req) -> None:
        accesses.setdefault(req.opcode, []).append(req.accesses)

    rec = Recorder(eng)
    failed = [0]
    oracle = {k: kvs_value(k, 0, ks.value_size) for k in stored} if verify else None
    mismatches = [0]

    def done(c, tag, payload, lat):
        op, k, v, i = tag
        st, val = kv.decode_response(payload)
        rec.done(lat)
        if st == kv.FULL:
            failed[0] += 1
        if oracle is not None:
            have = oracle.get(k)
            if op == kv.GET:
                mismatches[0] += (st, val) != ((kv.OK, have) if have is not None else (kv.NOT_FOUND, b""))
            elif op == kv.UPDATE and have is None:
                mismatches[0] += st != kv.NOT_FOUND
            else:
                mismatches[0] += st != kv.OK
                oracle[k] = v

    n_clients = cfg.experiment.clients
    drv = ClientDriver(eng, client.mem, cfg.experiment.window, done)
    rc = cfg.ringcomm
    for i in range(n_clients):
        conn, ib, resp = serve_remote_client(eng, acc, server.rnic, client.mem, client.rnic, store, f"c{i}",
                                             capacity=rc.capacity, slot_size=rc.slot_size)
        ib.on_response = on_resp
        drv.add(conn, resp)
    acc.start()
    items = _kvs_items(cfg, wl)
    gap = cfg.experiment.arrival_gap_ns
    for c, part in zip(drv.clients, _split(items, n_clients)):
        if gap > 0:
            drv.open_loop(c, part, gap, eng.register_stream(f"arrivals.{c.idx}"))
        else:
            c.queue.extend(part)
            c.pump()
    eng.run_until()
    ctr = collect(eng, server.mem, client.mem)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    extra = {"get_accesses_mean": mean(accesses.get(kv.GET, [])),
             "put_accesses_mean": mean(accesses.get(kv.PUT, [])),
             "update_accesses_mean": mean(accesses.get(kv.UPDATE, [])),
             "accel_max_in_flight": acc.max_in_flight,
             "load_factor": n_keys / (store.layout.n_buckets * kv.WAYS)}
    if oracle is not None:
        extra["oracle_mismatches"] = mismatches[0]
    _check_conservation(len(items), len(rec))
    return _finish("kvs", "rambda", cfg, rec, len(items), failed[0], ctr, extra)


def _check_conservation(issued: int, completed: int) -> None:
    if issued != completed:
        raise RuntimeError(f"request conservation violated: {issued} issued, {completed} completed")


def smartnic_host_fraction(cfg: ExperimentConfig, wl: Workload) -> float:
    b = cfg.baseline
    if b.host_fraction >= 0:
        return b.host_fraction
    n_buckets = kvs_buckets(cfg)
    cap = max(1, round(b.smartnic_cache_fraction * (n_buckets + cfg.workload.key_space)))
    warm = draw_keys(cfg.workload, RngStream(cfg.experiment.seed, "smartnic.warm"), 4 * cap)
    trace = kvs_access_trace(np.concatenate([warm, wl.keys]), n_buckets)
    return lru_miss_fraction(trace, cap, warmup=2 * len(warm))


def _kvs_rpc(cfg: ExperimentConfig, wl: Workload) -> MetricsReport:
    eng = Engine(cfg.experiment.seed)
    lat = cfg.latency()
    b = cfg.baseline
    batch = cfg.workload.batch_size
    extra: dict = {}
    if b.pipeline == "cpu_rpc":
        cores = b.cores
        fn = lambda reqs: cpu_kvs_batch_ns(b, lat, len(reqs))
    else:
        cores = b.smartnic_cores
        f = smartnic_host_fraction(cfg, wl)
        per = smartnic_service_ns(b, f)
        extra.update(host_fraction=f, service_ns=per)
        fn = lambda reqs: int(round(len(reqs) * per))
    srv = RpcServer(eng, lat, cfg.rnicsim.rnic(), cores, batch, fn, name=b.pipeline)
    items = _kvs_items(cfg, wl)
    n_clients = cfg.experiment.clients
    window = cfg.experiment.window
    rec = Recorder(eng)
    queues = [deque(p) for p in _split(items, n_clients)]
    inflight = [0] * n_clients
    nbytes = cfg.ringcomm.slot_size

    def issue(c: int, item) -> None:
        t0 = eng.now
        inflight[c] += 1
        srv.send(c, item, nbytes, lambda _r, c=c, t0=t0: reply(c, t0))

    def reply(c: int, t0: int) -> None:
        rec.done(eng.now - t0)
        inflight[c] -= 1
        pump(c)

    def pump(c: int) -> None:
        while queues[c] and inflight[c] < window:
            issue(c, queues[c].popleft())

    gap = cfg.experiment.arrival_gap_ns
    if gap > 0:
        window = 1 << 30
        for c in range(n_clients):
            part = list(queues[c])
            queues[c].clear()
            rng = eng.register_stream(f"arrivals.{c}")
            t = 0.0
            for item, g in zip(part, -np.log1p(-rng.uniforms(len(part))) * gap):
                t += g
                eng.at(int(t), issue, c, item)
    else:
        for c in range(n_clients):
            pump(c)
    ctr = eng.run_until()
    _check_conservation(len(items), len(rec))
    extra["core_busy_ns"] = [c.busy_ns for c in srv.cores]
    return _finish("kvs", b.pipeline, cfg, rec, len(items), 0, ctr, extra)


# transactions

def _tx_items(cfg: ExperimentConfig, wl: Workload) -> list[txm.Txn]:
    r = int(cfg.workload.op_mix["reads"])
    rb = cfg.apps.tx.record_bytes
    if cfg.workload.key_space > cfg.apps.tx.n_records:
        raise ConfigError("workload.key_space exceeds apps.tx.n_records")
    out = []
    for i, row in enumerate(wl.keys.tolist()):
        reads = [k * rb for k in row[:r]]
        writes = [(k * rb, kvs_value(k, i + 1, rb)) for k in row[r:]]
        out.append(txm.Txn(reads, writes))
    return out


@dataclass
class TxChain:
    engine: Engine
    client: Machine
    replicas: list[Machine]
    accels: list[Accelerator]
    apps: list[txm.TxReplica]
    driver: ClientDriver
    conn: object


def build_tx_chain(cfg: ExperimentConfig, on_complete, n_replicas: int = 2) -> TxChain:
    """client -> head -> (relay) -> ... -> tail; every hop past the head goes
    through a forwarder that adds a uniform delay."""
    eng = Engine(cfg.experiment.seed)
    tc = cfg.apps.tx
    client = machine(eng, cfg, "client")
    reps = [machine(eng, cfg, f"r{i}", ddio=False) for i in range(n_replicas)]
    accs = [Accelerator(eng, m.mem, m.rnic, accel_config(cfg), name=f"acc{i}") for i, m in enumerate(reps)]
    apps = [txm.TxReplica(m.mem, tc, successor="next" if i + 1 < n_replicas else None, name=f"tx{i}")
            for i, m in enumerate(reps)]
    # links between replicas, tail first so pointer entries are known
    for i in range(n_replicas - 1, 0, -1):
        prev, nxt = reps[i - 1], reps[i]
        relay = relay_fn(eng, cfg, f"hop{i}")
        nbytes = tc.log_capacity * tc.slot_size
        req = nxt.mem.alloc_region(nbytes, MemKind.NVM, name=f"log{i}", align=max(4096, tc.slot_size))
        rep = prev.mem.alloc_region(nbytes, MemKind.DRAM, tph_on_write=True, name=f"ack{i}",
                                    align=max(4096, tc.slot_size))
        qp_f = prev.rnic.create_qp(nxt.rnic, relay=relay)
        qp_b = nxt.rnic.create_qp(prev.rnic, relay=relay)
        c_ep, s_ep = create_pair(tc.log_capacity, tc.slot_size, Placement(nxt.mem, req.base),
                                 Placement(prev.mem, rep.base), retain=True, client_origin="accel",
                                 server_origin="accel")
        sib = accs[i].add_request_connection(f"from{i - 1}", apps[i], s_ep, qp=qp_b)
        rib = accs[i - 1].add_outbound("next", c_ep, qp_f, accs[i].pointer_addr(sib.buffer_id))
        sib.resp_pointer_addr = accs[i - 1].pointer_addr(rib.buffer_id)
        apps[i].attach(s_ep)
    lats_cb = on_complete
    drv = ClientDriver(eng, client.mem, cfg.experiment.window, lats_cb)
    conn, ib, resp = serve_remote_client(eng, accs[0], reps[0].rnic, client.mem, client.rnic, apps[0], "client",
                                         capacity=tc.log_capacity, slot_size=tc.slot_size,
                                         request_kind=MemKind.NVM, retain=True)
    apps[0].attach(ib.endpoint)
    drv.add(conn, resp)
    # head-to-client responses are the chain's ACK; order inbound buffers before start
    for a in reversed(accs):
        a.start()
    return TxChain(eng, client, reps, accs, apps, drv, conn)


def _pure_read_post(chain: TxChain, cfg: ExperimentConfig):
    """Pure-read transactions skip the chain: one-sided reads of the head's
    records, all under one doorbell."""
    head = chain.apps[0]
    rnic = chain.client.rnic
    qp = chain.conn.qp
    rb = cfg.apps.tx.record_bytes

    def run(txn: txm.Txn, done: Callable[[list], None]) -> None:
        got: list = [None] * len(txn.reads)
        left = [len(txn.reads)]

        def fin(i):
            def f(data):
                got[i] = data
                left[0] -= 1
                if left[0] == 0:
                    done(got)
            return f

        for i, off in enumerate(txn.reads):
            rnic.rdma_read(qp, head.data.base + off, rb, fin(i))
        rnic.ring_doorbell(qp)
    return run


def run_tx(cfg: ExperimentConfig) -> MetricsReport:
    wl = gen_workload(cfg.workload, cfg.experiment.seed)
    txns = _tx_items(cfg, wl)
    p = cfg.baseline.pipeline
    if p == "hyperloop":
        return _tx_hyperloop(cfg, txns)
    if p != "rambda":
        raise ConfigError(f"pipeline {p!r} does not run the tx scenario")
    failed = [0]

    def done(c, tag, payload, lat):
        rec.done(lat)
        if payload[0] != txm.COMMITTED:
            failed[0] += 1

    chain = build_tx_chain(cfg, done)
    eng = chain.engine
    rec = Recorder(eng)
    reader = _pure_read_post(chain, cfg)
    c = chain.driver.clients[0]
    pure = deque()
    for t in txns:
        if t.pure_read:
            pure.append(t)
        else:
            c.queue.append((txm.encode_request(t), t))
    # pure reads run as their own closed loop of one
    def next_read():
        if not pure:
            return
        t = pure.popleft()
        t0 = eng.now

        def fin(_):
            rec.done(eng.now - t0)
            next_read()
        reader(t, fin)

    c.pump()
    next_read()
    eng.run_until()
    ctr = collect(eng, *(m.mem for m in chain.replicas), chain.client.mem)
    _check_conservation(len(txns), len(rec))
    return _finish("tx", "rambda", cfg, rec, len(txns), failed[0], ctr, {})


def _tx_hyperloop(cfg: ExperimentConfig, txns: list[txm.Txn]) -> MetricsReport:
    eng = Engine(cfg.experiment.seed)
    hl = HyperLoopClient(eng, cfg.latency(), cfg.rnicsim.rnic(), 2, relay_fn(eng, cfg, "hop1"),
                         cfg.apps.tx.record_bytes)
    rec = Recorder(eng)
    q = deque(txns)

    def nxt():
        if not q:
            return
        t = q.popleft()
        t0 = eng.now

        def fin():
            rec.done(eng.now - t0)
            nxt()
        hl.run_txn(len(t.reads), [len(d) for _, d in t.writes], fin)

    nxt()
    ctr = eng.run_until()
    return _finish("tx", "hyperloop", cfg, rec, len(txns), 0, ctr, {})


# crash injection

@dataclass
class CrashResult:
    replica: int
    crash_points: int
    violations: int
    txns: int
    first_violation: str = ""


def _nvm_chunks(addr: int, data: bytes, unit: int):
    """A write reaches NVM one media unit at a time, in address order."""
    end = addr + len(data)
    a = addr
    while a < end:
        b = min(end, (a // unit + 1) * unit)
        yield a, data[a - addr:b - addr]
        a = b


def run_tx_crash(cfg: ExperimentConfig) -> list[CrashResult]:
    """Run the chain, log every NVM write per replica, then crash at each
    write boundary, recover and compare with the sequential oracle."""
    wl = gen_workload(cfg.workload, cfg.experiment.seed)
    txns = [t for t in _tx_items(cfg, wl) if not t.pure_read]
    logs: list[list] = []
    chain = build_tx_chain(cfg, lambda *a: None)
    for i, m in enumerate(chain.replicas):
        app = chain.apps[i]
        ring = app.endpoint.rx
        spans = [(app.data.base, app.data.end), (app.meta.base, app.meta.end),
                 (ring.base_addr, ring.base_addr + ring.nbytes)]
        rec: list = []
        logs.append(rec)

        def listen(addr, data, origin, rec=rec, spans=spans):
            for lo, hi in spans:
                if lo <= addr < hi:
                    rec.append((addr, bytes(data)))
                    return
        m.mem.add_write_listener(listen)
    c = chain.driver.clients[0]
    for t in txns:
        c.queue.append((txm.encode_request(t), t))
    c.pump()
    chain.engine.run_until()
    if c.issued != len(txns) or c.inflight:
        raise RuntimeError("crash harness run did not complete")
    out = []
    for i, rec in enumerate(logs):
        out.append(_check_crash_points(cfg, chain.apps[i], rec, txns))
    return out


def _check_crash_points(cfg: ExperimentConfig, app: txm.TxReplica, rec: list, txns: list) -> CrashResult:
    tc = cfg.apps.tx
    ring = app.endpoint.rx
    unit = cfg.memory.nvm_write_granularity_bytes
    data = bytearray(app.data.length)
    meta = bytearray(8)
    log = bytearray(ring.nbytes)
    oracle = txm.SequentialOracle(app.data.length, tc.record_bytes)
    durable = 0  # entries whose valid byte has reached NVM
    points = violations = mismatched = 0
    first = ""
    valid_offsets = {s * tc.slot_size + tc.slot_size - 1 for s in range(tc.log_capacity)}

    def check() -> None:
        nonlocal violations, first
        img = bytearray(data)
        (head,) = struct.unpack("<Q", meta)
        try:
            seqs = txm.recover(log, ring.capacity, ring.slot_size, head, img)
        except txm.RecoveryError as exc:
            violations += 1
            first = first or f"point {points}: {exc}"
            return
        if (seqs and seqs[-1] + 1 != durable) or (not seqs and head != durable) or img != oracle.data:
            violations += 1
            first = first or f"point {points}: head={head} replayed={seqs[:1]}..{seqs[-1:]} durable={durable}"

    check()
    for addr, blob in rec:
        for a, chunk in _nvm_chunks(addr, blob, unit):
            if app.data.base <= a < app.data.end:
                o = a - app.data.base
                data[o:o + len(chunk)] = chunk
            elif app.meta.base <= a < app.meta.end:
                o = a - app.meta.base
                if o < 8:
                    meta[o:o + len(chunk)] = chunk[:8 - o]
            else:
                o = a - ring.base_addr
                log[o:o + len(chunk)] = chunk
                last = o + len(chunk) - 1
                if last in valid_offsets and chunk[-1] == 1:
                    # the entry just became durable: apply it to the reference store
                    s0 = last + 1 - ring.slot_size
                    (n,) = struct.unpack_from("<I", log, s0)
                    entry = bytes(log[s0 + 4:s0 + 4 + n])
                    if app.successor is not None and entry != txm.encode_request(txns[durable]):
                        mismatched += 1
                    oracle.apply(txm.decode_request(entry)[1])
                    durable += 1
            points += 1
            check()
    if mismatched:
        violations += mismatched
        first = first or f"{mismatched} head log entries differ from the issued transactions"
    return CrashResult(int(app.name[2:]), points, violations, durable, first)


# embedding reduction

def _dlrm_tables(mem: MemorySystem, cfg: ExperimentConfig, seed: int) -> list[dl.EmbeddingTable]:
    d = cfg.apps.dlrm
    attached = "accel" if d.placement.startswith("accel") else "host"
    rng = np.random.Generator(np.random.Philox(key=RngStream(seed, "dlrm.tables").draw()))
    tabs = []
    for t in range(d.tables):
        e = dl.EmbeddingTable(mem, d.rows, d.dim, attached=attached, name=f"emb{t}")
        e.fill_random(rng)
        tabs.append(e)
    return tabs


def dlrm_queries(cfg: ExperimentConfig, wl: Workload) -> list[dl.Query]:
    rows = cfg.apps.dlrm.rows
    raw = cfg.apps.dlrm.raw
    return [dl.Query([ids if raw else [i % rows for i in ids] for ids in q], int(op))
            for q, op in zip(wl.queries, wl.ops.tolist())]


def dlrm_oracle(tables: list[np.ndarray], q: dl.Query) -> list[np.ndarray]:
    f = {dl.SUM: np.add, dl.MAX: np.maximum, dl.MIN: np.minimum, dl.INNER_PRODUCT: np.multiply}[q.op]
    return [f.accumulate(t[[i % len(t) for i in idx]], axis=0)[-1] for t, idx in zip(tables, q.indices)]


def run_dlrm(cfg: ExperimentConfig, verify: bool = False) -> MetricsReport:
    if cfg.workload.app != "dlrm":
        raise ConfigError("the dlrm scenario needs workload.app: dlrm")
    spec = dataclasses.replace(cfg.workload, tables=cfg.apps.dlrm.tables)
    wl = gen_workload(spec, cfg.experiment.seed)
    queries = dlrm_queries(cfg, wl)
    p = cfg.baseline.pipeline
    if p == "cpu_rpc":
        return _dlrm_cpu(cfg, queries)
    if p != "rambda":
        raise ConfigError(f"pipeline {p!r} does not run the dlrm scenario")
    eng = Engine(cfg.experiment.seed)
    server = machine(eng, cfg, "server")
    d = cfg.apps.dlrm
    acc = Accelerator(eng, server.mem, server.rnic,
                      accel_config(cfg, cpu_ring_slot=4096, cpu_ring_capacity=8))
    tabs = _dlrm_tables(server.mem, cfg, cfg.experiment.seed)
    model = dl.DlrmModel(tabs, fc_ns=d.fc_ns, fetch_limit=cfg.accelfw.gather_limit)
    svc = acc.add_cpu_service("preprocess", d.preprocess_ns, model.preprocess)
    results: dict[int, bytes] = {}
    rec = Recorder(eng)

    def on_resp(payload: bytes, req) -> None:
        results[req.seq] = payload
        rec.done(eng.now - req.arrival_time)

    src = acc.add_local_source("queries", model, on_resp)
    acc.start()
    opcode = dl.RAW if d.raw else dl.READY
    for q in queries:
        acc.inject(src, dl.encode_request(q, opcode))
    eng.run_until()
    ctr = collect(eng, server.mem)
    _check_conservation(len(queries), len(results))
    failed = sum(1 for p_ in results.values() if p_[0] != dl.OK)
    extra = {"max_fetches": acc.max_fetches, "rows": int(sum(len(i) for q in queries for i in q.indices)),
             "preprocess_utilization": svc.busy_ns / eng.now if eng.now else 0.0}
    if verify:
        arrs = [t.array() for t in tabs]
        bad = 0
        for i, q in enumerate(queries):
            st, vec = dl.decode_response(results[i], d.dim)
            ref = dlrm_oracle(arrs, q)
            bad += st != dl.OK or any(not np.array_equal(r.view(np.uint32), v.view(np.uint32))
                                      for r, v in zip(ref, vec))
        extra["oracle_mismatches"] = bad
    return _finish("dlrm", "rambda", cfg, rec, len(queries), failed, ctr, extra)


def _dlrm_cpu(cfg: ExperimentConfig, queries: list[dl.Query]) -> MetricsReport:
    eng = Engine(cfg.experiment.seed)
    srv = CpuDlrmServer(eng, cfg.latency(), cfg.baseline, cfg.baseline.cores, 4 * cfg.apps.dlrm.dim)
    rec = Recorder(eng)
    for q in queries:
        srv.submit(sum(len(i) for i in q.indices), lambda: rec.done(eng.now))
    ctr = eng.run_until()
    return _finish("dlrm", "cpu_rpc", cfg, rec, len(queries), 0, ctr,
                   {"cores": cfg.baseline.cores})


# ping-pong

def run_pingpong(cfg: ExperimentConfig, mode: str = "cpoll", interval: int | None = None,
                 iterations: int | None = None) -> MetricsReport:
    """CPU writes a request slot, the accelerator notices it (cpoll signal or
    its next poll), reads the first byte and writes the reply's last byte.
    Records the CPU-to-accelerator one-way latency."""
    from ..cpoll import BufferDesc, CpollChecker, register_cpoll_region
    cp = cfg.cpollmod
    iterations = iterations or cp.iterations
    interval = interval or cp.poll_interval
    if mode not in ("cpoll", "poll"):
        raise ConfigError(f"unknown ping-pong mode {mode!r}")
    eng = Engine(cfg.experiment.seed)
    mem = MemorySystem(eng, cfg.latency(), "host")
    lat = mem.cfg
    req = mem.alloc_region(4096, MemKind.DRAM, name="ping")
    rsp = mem.alloc_region(4096, MemKind.DRAM, name="pong")
    cpu, acc = create_pair(64, 64, Placement(mem, req.base), Placement(mem, rsp.base),
                           client_origin="cpu", server_origin="accel")
    poller = SpinPoller(interval, cp.clock_mhz)
    jitter = eng.register_stream("pingpong.think")
    rec = Recorder(eng)
    sent = [0]

    def ping() -> None:
        sent[0] = eng.now
        cpu.try_post(b"\x01")
        if mode == "poll":
            seen = poller.next_poll_ns(eng.now + lat.cc_link_oneway_ns)
            eng.at(int(np.ceil(seen)), fetch)

    def fetch(*_):
        t = mem.access(AccessRequest(req.base, 1, Op.READ, Origin.ACCEL))
        eng.schedule(t, got)

    def got() -> None:
        rec.done(eng.now - sent[0])
        acc.try_consume()
        t = mem.access(AccessRequest(rsp.base + 63, 1, Op.WRITE, Origin.ACCEL))
        eng.schedule(t, reply)

    def reply() -> None:
        acc.try_post(b"\x02")
        eng.schedule(lat.llc_access_ns, back)

    def back() -> None:
        cpu.try_consume()
        if len(rec) < iterations:
            eng.schedule(jitter.below(200), ping)

    if mode == "cpoll":
        region = register_cpoll_region([BufferDesc(0, cpu.tx, 0)], cp.placement, direct=True)
        CpollChecker(eng, mem, region, fetch)
    ping()
    eng.run_until()
    end = eng.now
    extra = {"mode": mode, "interval_cycles": interval if mode == "poll" else 0}
    if mode == "poll":
        traffic = poller.traffic_bytes(0, end)
        mem.counters.add("cc_link_bytes", traffic)
        mem.counters.add("cc_link_poll_bytes", traffic)
        extra["poll_traffic_bytes_per_s"] = traffic / end * 1e9
        extra["poll_traffic_gib_per_s"] = traffic / end * 1e9 / 2 ** 30
    ctr = collect(eng, mem)
    name = "pingpong" if mode == "cpoll" else f"pingpong_poll{interval}"
    return _finish(name, "rambda", cfg, rec, iterations, 0, ctr, extra)


# memory-system scenarios

def run_ddio_quadrants(cfg: ExperimentConfig, total: int = 10 ** 9, ring_bytes: int = 1 << 20,
                       chunk: int = 1 << 16) -> dict[tuple[bool, bool], dict[str, int]]:
    """Stream ``total`` bytes of inbound DMA writes cyclically through a
    receive ring under each (DDIO, TPH) setting."""
    out = {}
    for ddio in (False, True):
        for tph in (False, True):
            eng = Engine(cfg.experiment.seed)
            mem = MemorySystem(eng, cfg.latency(), "server", ddio_enabled=ddio)
            r = mem.alloc_region(ring_bytes, MemKind.DRAM, tph_on_write=tph, name="rx")
            done = 0
            while done < total:
                n = min(chunk, total - done)
                mem.access(AccessRequest(r.base + done % ring_bytes, n, Op.WRITE, Origin.DMA))
                done += n
            out[(ddio, tph)] = mem.read_counters()
    return out


def run_nvm_amplification(cfg: ExperimentConfig, evictions: int = 100_000,
                          rdma_writes: int = 10_000) -> dict:
    """Random single-line dirty evictions to NVM, then inbound RDMA writes to
    an NVM-registered ring under the placement guidelines (DDIO off, TPH on
    DRAM rings only)."""
    eng = Engine(cfg.experiment.seed)
    lat = cfg.latency()
    mem = MemorySystem(eng, lat, "server")
    units = evictions * 4
    g, cl = lat.nvm_write_granularity_bytes, lat.cacheline_bytes
    nvm = mem.alloc_region(units * g, MemKind.NVM, name="pmem")
    rng = eng.register_stream("nvm.evict")
    picks = rng.gen.choice(units, size=evictions, replace=False)
    sub = rng.gen.integers(0, g // cl, size=evictions)
    for u, s in zip(picks.tolist(), sub.tolist()):
        a = nvm.base + u * g + s * cl
        mem.access(AccessRequest(a, cl, Op.WRITE, Origin.CPU))
        mem.evict(a)
    c = mem.read_counters()
    res = {"evictions": evictions, "nvm_logical_write_bytes": c["nvm_logical_write_bytes"],
           "nvm_media_write_bytes": c["nvm_media_write_bytes"],
           "ratio": c["nvm_media_write_bytes"] / c["nvm_logical_write_bytes"]}
    # inbound RDMA into an NVM ring and a DRAM ring under the guidelines
    server = Machine("server", mem, Rnic(eng, mem, "server", cfg.rnicsim.rnic()))
    client = machine(eng, cfg, "client")
    ring_n = mem.alloc_region(1 << 20, MemKind.NVM, tph_on_write=False, name="nvm_ring")
    ring_d = mem.alloc_region(1 << 20, MemKind.DRAM, tph_on_write=True, name="dram_ring")
    qp = client.rnic.create_qp(server.rnic)
    before = mem.read_counters()
    for i in range(rdma_writes):
        for ring in (ring_n, ring_d):
            client.rnic.post_wqe(qp, Wqe("write", ring.base + (i * 64) % ring.length, 64, bytes(64)))
        client.rnic.ring_doorbell(qp)
    eng.run_until()
    after = mem.read_counters()
    d = {k: after.get(k, 0) - before.get(k, 0) for k in ("dma_nvm_mem_writes", "dma_nvm_llc_writes",
                                                          "llc_write_bytes")}
    res.update(d)
    res["nvm_ring_bypass_fraction"] = d["dma_nvm_mem_writes"] / max(1, d["dma_nvm_mem_writes"] +
                                                                   d["dma_nvm_llc_writes"])
    res["dram_ring_llc_bytes"] = d["llc_write_bytes"]
    return res


# dispatch

SCENARIOS = ("kvs", "tx", "dlrm", "pingpong")


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    s = cfg.experiment.scenario
    if s == "kvs":
        return run_kvs(cfg)
    if s == "tx":
        return run_tx(cfg)
    if s == "dlrm":
        return run_dlrm(cfg)
    if s == "pingpong":
        return run_pingpong(cfg, cfg.cpollmod.mode)
    raise ConfigError(f"unknown scenario {s!r}; expected one of {SCENARIOS}")
