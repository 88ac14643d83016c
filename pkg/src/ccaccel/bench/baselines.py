"""Baseline server pipelines: two-sided CPU RPC, Smart NIC and HyperLoop-style
NIC-offloaded replication.

The CPU and Smart NIC servers share one model: requests land in per-core
receive queues (a client is pinned to a core), a core waits until it holds a
full batch, spends the batch's service time, then answers the whole batch
with one doorbell.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..memsim import LatencyConfig, TokenBucket
from ..rnic import RnicConfig
from ..simcore import Engine
from .config import BaselineSpec


def lru_miss_fraction(trace: Sequence[int], capacity: int, warmup: int = 0) -> float:
    """Fraction of accesses after ``warmup`` that miss an LRU cache of ``capacity`` objects."""
    cache: OrderedDict = OrderedDict()
    misses = counted = 0
    for i, obj in enumerate(trace):
        hit = obj in cache
        if hit:
            cache.move_to_end(obj)
        else:
            cache[obj] = None
            if len(cache) > capacity:
                cache.popitem(last=False)
        if i >= warmup:
            counted += 1
            misses += not hit
    return misses / counted if counted else 0.0


def kvs_access_trace(keys: np.ndarray, n_buckets: int) -> list[int]:
    """Objects touched per GET: the key's bucket, then its pair."""
    from ..apps.kvs import fnv1a64, key_bytes
    out = []
    for k in keys.tolist():
        out.append(fnv1a64(key_bytes(k)) & (n_buckets - 1))
        out.append(n_buckets + k)
    return out


def smartnic_service_ns(spec: BaselineSpec, host_fraction: float) -> float:
    """Per-request core time; throughput falls linearly with the host-access fraction."""
    if not 0.0 <= host_fraction <= 1.0:
        raise ValueError("host fraction must be in [0, 1]")
    return spec.smartnic_base_ns / (1.0 - spec.smartnic_host_slope * host_fraction)


def cpu_kvs_batch_ns(spec: BaselineSpec, lat: LatencyConfig, batch: int, rounds: int = 2) -> int:
    """One core serving ``batch`` GETs: fixed overhead, one overlapped memory
    round per dependent access, and per-request compute."""
    return spec.cpu_batch_ns + rounds * lat.dram_access_ns + batch * spec.cpu_per_req_ns


@dataclass
class _Core:
    queue: deque = field(default_factory=deque)
    busy: bool = False
    batches: int = 0
    busy_ns: int = 0


class RpcServer:
    """Clients -> network -> per-core queues -> batched service -> responses.

    ``batch_ns(reqs)`` gives the core time for a batch. Responses of a batch
    leave together after one MMIO doorbell. A partial batch is served once
    its oldest request has waited ``max_wait_ns``."""

    def __init__(self, engine: Engine, lat: LatencyConfig, rnic: RnicConfig, cores: int, batch: int,
                 batch_ns: Callable[[list], int], name: str = "cpu", max_wait_ns: int = 1_000_000):
        self.engine = engine
        self.lat = lat
        self.rnic = rnic
        self.batch = batch
        self.batch_ns = batch_ns
        self.max_wait_ns = max_wait_ns
        self.cores = [_Core() for _ in range(cores)]
        self.egress = TokenBucket(rnic.network_bw_bytes_per_ns, 4096)
        self.client_egress: dict[int, TokenBucket] = {}
        self.ctr = engine.counters
        self._p = f"{name}."

    def _oneway(self, bucket: TokenBucket, nbytes: int) -> int:
        # MMIO doorbell, serialization, wire, DMA into the receiver
        now = self.engine.now
        return self.lat.pcie_oneway_ns + bucket.reserve(now, nbytes) + self.rnic.network_oneway_ns + \
            self.lat.pcie_oneway_ns

    def send(self, client: int, req: object, nbytes: int, reply: Callable[[object], None]) -> None:
        b = self.client_egress.setdefault(client, TokenBucket(self.rnic.network_bw_bytes_per_ns, 4096))
        self.ctr.add(self._p + "requests")
        self.engine.schedule(self._oneway(b, nbytes), self._arrive, client % len(self.cores), req, reply, nbytes)

    def _arrive(self, core: int, req, reply, nbytes: int) -> None:
        c = self.cores[core]
        c.queue.append((req, reply, nbytes, self.engine.now))
        if len(c.queue) == 1:
            self.engine.schedule(self.max_wait_ns, self._try, core)
        self._try(core)

    def _try(self, core: int) -> None:
        c = self.cores[core]
        if c.busy or not c.queue:
            return
        stale = self.engine.now - c.queue[0][3] >= self.max_wait_ns
        if len(c.queue) < self.batch and not stale:
            return
        items = [c.queue.popleft() for _ in range(min(self.batch, len(c.queue)))]
        dt = int(self.batch_ns([it[0] for it in items]))
        c.busy = True
        c.batches += 1
        c.busy_ns += dt
        self.engine.schedule(dt, self._done, core, items)

    def _done(self, core: int, items: list) -> None:
        c = self.cores[core]
        c.busy = False
        self.ctr.add(self._p + "doorbells")
        for req, reply, nbytes, _ in items:
            self.engine.schedule(self._oneway(self.egress, nbytes), reply, req)
        if c.queue:
            self.engine.schedule(max(0, c.queue[0][3] + self.max_wait_ns - self.engine.now), self._try, core)
        self._try(core)


# CPU embedding reduction

class CpuDlrmServer:
    """Cores reducing embedding rows out of host DRAM.

    Each core keeps ``cpu_mlp_rows`` row fetches in flight; all cores share
    the DRAM channel token bucket, so throughput grows with cores until the
    channel saturates."""

    def __init__(self, engine: Engine, lat: LatencyConfig, spec: BaselineSpec, cores: int,
                 row_bytes: int = 256):
        self.engine = engine
        self.lat = lat
        self.spec = spec
        self.row_bytes = row_bytes
        self.chan = TokenBucket(lat.dram_bw_bytes_per_ns, lat.link_burst_bytes)
        self.free = list(range(cores))
        self.queue: deque = deque()
        self.done = 0
        self.ctr = engine.counters

    def submit(self, rows: int, on_done: Callable[[], None]) -> None:
        self.queue.append((rows, on_done))
        self._next()

    def _next(self) -> None:
        while self.free and self.queue:
            core = self.free.pop()
            rows, fin = self.queue.popleft()
            self._chunk(core, rows, fin)

    def _chunk(self, core: int, left: int, fin) -> None:
        s = self.spec
        n = min(left, s.cpu_mlp_rows)
        now = self.engine.now
        t = self.lat.dram_access_ns + int(self.chan.reserve_many(now, self.row_bytes, n).max())
        self.ctr.add("mem_read_bytes", n * self.row_bytes)
        t += n * s.cpu_agg_ns_per_row
        if left - n > 0:
            self.engine.schedule(t, self._chunk, core, left - n, fin)
        else:
            self.engine.schedule(t + s.cpu_fc_ns, self._finish, core, fin)

    def _finish(self, core: int, fin) -> None:
        self.done += 1
        self.free.append(core)
        fin()
        self._next()


# HyperLoop-style replication

class HyperLoopClient:
    """A transaction issues one RDMA operation per tuple, strictly in sequence.

    A read is a one-sided read of the head replica. A write lands in the
    head's NVM log and is forwarded by the head NIC to the next replica,
    with the ACK travelling back along the chain. Each NIC-triggered step
    fetches its pre-posted WQE over PCIe, and a forward also reads the
    payload back from host memory."""

    def __init__(self, engine: Engine, lat: LatencyConfig, rnic: RnicConfig, replicas: int,
                 relay: Callable[[], int] | None, record_bytes: int = 64):
        self.engine = engine
        self.lat = lat
        self.rnic = rnic
        self.replicas = replicas
        self.relay = relay
        self.record_bytes = record_bytes
        self.ctr = engine.counters

    def _hop(self) -> int:
        return self.rnic.network_oneway_ns + (self.relay() if self.relay is not None else 0)

    def read_ns(self) -> int:
        l = self.lat
        # doorbell, wire, DMA read at the head (a PCIe round trip plus the medium), wire, DMA into the client
        return l.pcie_oneway_ns + self.rnic.network_oneway_ns + 2 * l.pcie_oneway_ns + l.nvm_read_ns + \
            self.rnic.network_oneway_ns + l.pcie_oneway_ns

    def write_ns(self, nbytes: int) -> int:
        l = self.lat
        units = -(-nbytes // l.nvm_write_granularity_bytes)
        land = l.pcie_oneway_ns + l.nvm_write_ns * units  # DMA write, durable in NVM
        trigger = 2 * l.pcie_oneway_ns  # NIC fetches the pre-posted WQE from host memory
        t = l.pcie_oneway_ns + self.rnic.network_oneway_ns + land
        for _ in range(self.replicas - 1):
            # forward: WQE fetch, payload read back from host memory, wire, land
            t += trigger + 2 * l.pcie_oneway_ns + self._hop() + land
        for _ in range(self.replicas - 1):
            t += trigger + self._hop()  # ACK one hop back toward the head
        return t + trigger + self.rnic.network_oneway_ns + l.pcie_oneway_ns  # head answers the client

    def run_txn(self, reads: int, write_sizes: Sequence[int], on_done: Callable[[], None]) -> None:
        steps = [self.read_ns] * reads + [lambda n=n: self.write_ns(n) for n in write_sizes]
        self._step(steps, 0, on_done)

    def _step(self, steps, i: int, on_done) -> None:
        if i == len(steps):
            on_done()
            return
        self.ctr.add("hyperloop.rdma_ops")
        self.engine.schedule(steps[i](), self._step, steps, i + 1, on_done)
