"""Emulated RDMA verbs: queue pairs, WQEs, CQEs and MMIO doorbells.

Write WQEs travel poster -> local RNIC -> network -> remote RNIC -> remote
memory (a DMA write honouring the region's TPH flag). Delivery on a QP is in
post order. Only signaled WQEs produce a completion, which is posted when the
ACK returns to the requester.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .memsim import AccessRequest, MemorySystem, Op, Origin, TokenBucket
from .simcore import Engine


class RnicError(Exception):
    pass


@dataclass
class RnicConfig:
    network_oneway_ns: int = 1250
    network_bw_bytes_per_ns: float = 12.5  # 100 Gb/s
    mmio_fence_ns: int = 100
    early_exec_prob: float = 0.0
    early_exec_delay_ns: int = 0  # on top of the PCIe pickup latency


@dataclass
class Wqe:
    opcode: str  # "write" or "read"
    remote_addr: int
    length: int
    payload: bytes | None = None
    signaled: bool = False
    on_complete: Callable | None = None  # read: called with bytes; write: with no args
    seq: int = -1
    executed: bool = False

    def __post_init__(self) -> None:
        if self.opcode not in ("write", "read"):
            raise RnicError(f"bad opcode {self.opcode!r}")
        if self.opcode == "write" and (self.payload is None or len(self.payload) != self.length):
            raise RnicError("write WQE payload must match length")
        if self.length <= 0:
            raise RnicError("WQE length must be > 0")


@dataclass(frozen=True)
class Cqe:
    qp_id: int
    wqe_seq: int
    completion_time: int


class CompletionQueue:
    def __init__(self) -> None:
        self.entries: list[Cqe] = []
        self.total = 0

    def push(self, cqe: Cqe) -> None:
        self.entries.append(cqe)
        self.total += 1

    def poll(self) -> list[Cqe]:
        out, self.entries = self.entries, []
        return out

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class QueuePair:
    qp_id: int
    local: "Rnic"
    remote: "Rnic"
    cq: CompletionQueue
    network_oneway_ns: int
    relay: Callable[[], int] | None = None  # extra one-way delay per WQE (forwarder hop)
    open: bool = True
    staged: list[Wqe] = field(default_factory=list)
    next_seq: int = 0
    last_arrival: int = 0
    last_apply: int = 0
    last_ack: int = 0
    last_started: int = -1  # highest seq whose execution has begun
    posted: int = 0
    doorbells: int = 0


class Rnic:
    """One RNIC attached to a machine's memory over PCIe."""

    def __init__(self, engine: Engine, mem: MemorySystem, name: str, cfg: RnicConfig | None = None):
        self.engine = engine
        self.mem = mem
        self.name = name
        self.cfg = cfg or RnicConfig()
        self.egress = TokenBucket(self.cfg.network_bw_bytes_per_ns, 4096)
        self.early_rng = engine.register_stream(f"rnic.{name}.early")
        self.qps: list[QueuePair] = []
        self.ctr = engine.counters
        self._p = f"rnic.{name}."

    def create_qp(self, remote: "Rnic", cq: CompletionQueue | None = None,
                  relay: Callable[[], int] | None = None) -> QueuePair:
        qp = QueuePair(len(self.qps), self, remote, cq or CompletionQueue(), self.cfg.network_oneway_ns, relay)
        self.qps.append(qp)
        return qp

    # posting

    def post_wqe(self, qp: QueuePair, wqe: Wqe) -> int:
        if not qp.open:
            raise RnicError(f"QP {qp.qp_id} is closed")
        # validates the remote address against the remote machine's regions
        qp.remote.mem.region_of(wqe.remote_addr, wqe.length)
        wqe.seq = qp.next_seq
        qp.next_seq += 1
        qp.staged.append(wqe)
        qp.posted += 1
        self.ctr.add(self._p + "wqes_posted")
        p = self.cfg.early_exec_prob
        if p > 0 and qp.last_started == wqe.seq - 1 and self.early_rng.random() < p:
            self.ctr.add(self._p + "early_exec")
            self._start(qp, wqe, self.engine.now + self.mem.cfg.pcie_oneway_ns + self.cfg.early_exec_delay_ns)
        return wqe.seq

    def staged_count(self, qp: QueuePair) -> int:
        return len(qp.staged)

    def ring_doorbell(self, qp: QueuePair, n: int | None = None, poster: str = "cpu") -> int:
        """Release the first ``n`` staged WQEs with one MMIO; returns the NIC pickup time."""
        staged = len(qp.staged)
        if n is None:
            n = staged
        if n <= 0 or n > staged:
            raise RnicError(f"doorbell for {n} WQEs but {staged} staged")
        c = self.mem.cfg
        if poster == "accel":
            mmio = self.cfg.mmio_fence_ns + c.cc_link_oneway_ns + c.pcie_oneway_ns
            self.mem.counters.add("cc_link_bytes", 8)
        else:
            mmio = c.pcie_oneway_ns
        self.mem.counters.add("mmio_bytes", 8)
        self.ctr.add(self._p + "doorbells")
        qp.doorbells += 1
        t = self.engine.now + mmio
        batch, qp.staged = qp.staged[:n], qp.staged[n:]
        for w in batch:
            if not w.executed:
                self._start(qp, w, t)
        return t

    # execution

    def _start(self, qp: QueuePair, w: Wqe, t: int) -> None:
        w.executed = True
        qp.last_started = w.seq
        self.engine.at(t, self._egress, qp, w)

    def _egress(self, qp: QueuePair, w: Wqe) -> None:
        nbytes = w.length if w.opcode == "write" else 0
        ser = self.egress.reserve(self.engine.now, max(nbytes, 1))
        self.ctr.add(self._p + "net_tx_bytes", nbytes)
        hop = qp.network_oneway_ns + ser
        if qp.relay is not None:
            hop += qp.relay()
        # reliable connection: arrivals keep post order even with jittery relays
        t = max(self.engine.now + hop, qp.last_arrival)
        qp.last_arrival = t
        self.engine.at(t, qp.remote._ingress, qp, w)

    def _ingress(self, qp: QueuePair, w: Wqe) -> None:
        eng = self.engine
        if w.opcode == "write":
            lat = self.mem.access(AccessRequest(w.remote_addr, w.length, Op.WRITE, Origin.DMA))
        else:
            lat = self.mem.access(AccessRequest(w.remote_addr, w.length, Op.READ, Origin.DMA))
        t = max(eng.now + lat, qp.last_apply)
        qp.last_apply = t
        eng.at(t, self._apply, qp, w)

    def _apply(self, qp: QueuePair, w: Wqe) -> None:
        eng = self.engine
        back = qp.network_oneway_ns + (qp.relay() if qp.relay is not None else 0)
        back = max(eng.now + back, qp.last_ack) - eng.now
        qp.last_ack = eng.now + back
        if w.opcode == "write":
            self.mem.write(w.remote_addr, w.payload, "dma")
            self.ctr.add(f"rnic.{qp.local.name}.writes_delivered")
            if w.signaled or w.on_complete is not None:
                eng.schedule(back, qp.local._complete, qp, w, None)
        else:
            data = self.mem.read(w.remote_addr, w.length)
            self.ctr.add(f"rnic.{self.name}.net_tx_bytes", w.length)
            eng.schedule(back, qp.local._complete, qp, w, data)

    def _complete(self, qp: QueuePair, w: Wqe, data: bytes | None) -> None:
        if w.signaled:
            qp.cq.push(Cqe(qp.qp_id, w.seq, self.engine.now))
            self.ctr.add(self._p + "cqes")
        if w.on_complete is not None:
            if w.opcode == "read":
                w.on_complete(data)
            else:
                w.on_complete()

    # helpers

    def poll_cq(self, cq: CompletionQueue) -> list[Cqe]:
        return cq.poll()

    def rdma_read(self, qp: QueuePair, remote_addr: int, length: int,
                  on_complete: Callable[[bytes], None], signaled: bool = False) -> int:
        """Stage a one-sided read; the caller rings the doorbell."""
        return self.post_wqe(qp, Wqe("read", remote_addr, length, signaled=signaled, on_complete=on_complete))

    def close_qp(self, qp: QueuePair) -> None:
        qp.open = False


class RdmaTransport:
    """Ring transport that turns each slot post into one write WQE.

    The doorbell is left to the owner (``autoring`` rings it per post)."""

    def __init__(self, rnic: Rnic, qp: QueuePair, signal_every: int = 0, autoring: bool = True,
                 poster: str = "cpu"):
        self.rnic = rnic
        self.qp = qp
        self.signal_every = signal_every
        self.autoring = autoring
        self.poster = poster
        self._n = 0

    def put(self, ring, count: int, body: bytes) -> int:
        image = bytearray(ring.slot_size)
        image[:len(body)] = body
        image[-1] = 1
        self._n += 1
        signaled = self.signal_every > 0 and self._n % self.signal_every == 0
        seq = self.rnic.post_wqe(self.qp, Wqe("write", ring.slot_addr(count), ring.slot_size, bytes(image),
                                              signaled=signaled))
        if self.autoring:
            self.rnic.ring_doorbell(self.qp, poster=self.poster)
        return seq
