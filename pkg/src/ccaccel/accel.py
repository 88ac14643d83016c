"""Accelerator framework: scheduler, APU with a table-based FSM, SQ handler,
CQ polling and CPU co-processor calls.

Every ring the accelerator consumes is an *inbound buffer* with an entry in
one pointer buffer. Request rings feed the APU; reply rings (answers to
outbound chain calls) resume the FSM entries waiting on them. CPU service
replies come back on small rings pinned in the accelerator cache and
snooped directly.

Applications are generators. Each ``yield`` hands the framework an action
and receives its result; the generator's return value is the response.
"""

from __future__ import annotations

import bisect
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Protocol, Sequence

from .cpoll import (BufferDesc, CpollChecker, CpollSignal, Placement as CpollPlacement, RingTracker,
                    register_cpoll_region)
from .memsim import AccessRequest, MemKind, MemorySystem, Op, Origin
from .ringcomm import (EMPTY, NO_CREDIT, ClientEndpoint, DirectTransport, Placement, ServerEndpoint,
                       create_pair)
from .rnic import QueuePair, RdmaTransport, Rnic, Wqe
from .simcore import Engine

_PTR = struct.Struct("<I")
U32 = 1 << 32


class AccelError(Exception):
    pass


class OrderingViolation(AccelError):
    """A tracked request's slot was still empty when dispatched."""


class UnknownRequest(AccelError):
    pass


class _Token:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name


IDLE = _Token("Idle")
BACKPRESSURE = _Token("Backpressure")


# actions yielded by applications

@dataclass
class MemRead:
    addr: int
    size: int


@dataclass
class MemWrite:
    addr: int
    data: bytes


@dataclass
class MemGather:
    """Concurrent reads of ``size`` bytes at each address."""
    addrs: Sequence[int]
    size: int


@dataclass
class Parallel:
    actions: list


@dataclass
class Compute:
    ns: int


@dataclass
class CpuCall:
    service: str
    args: bytes


@dataclass
class Call:
    """Request/response over an outbound connection to another accelerator."""
    conn: str
    payload: bytes


class Future:
    def __init__(self) -> None:
        self.done = False
        self.value: Any = None
        self._waiters: list[Callable[[Any], None]] = []

    def resolve(self, value: Any = None) -> None:
        if self.done:
            raise AccelError("future resolved twice")
        self.done = True
        self.value = value
        for fn in self._waiters:
            fn(value)
        self._waiters.clear()


@dataclass
class Wait:
    future: Future


@dataclass
class AccelConfig:
    max_outstanding: int = 256
    action_ns: int = 10
    doorbell_batch: int = 1
    signal_every: int = 64
    cq_poll_ns: int = 1000
    idle_flush: bool = True
    gather_limit: int = 64
    cache_bytes: int = 64 * 1024
    max_buffers: int = 1024
    cpu_ring_capacity: int = 128
    cpu_ring_slot: int = 64


@dataclass
class ApuRequest:
    request_id: int
    buffer_id: int
    opcode: int
    payload: bytes
    arrival_time: int
    seq: int = 0  # position on its connection
    accesses: int = 0  # memory accesses charged so far, slot read included


@dataclass
class FsmEntry:
    request_id: int
    request: ApuRequest
    gen: Generator
    state: str = "start"
    pending: int = 0
    scratch: dict = field(default_factory=dict)
    max_fetches: int = 0


class Application(Protocol):
    name: str

    def run(self, req: ApuRequest, entry: FsmEntry) -> Generator: ...


@dataclass
class Inbound:
    buffer_id: int
    kind: str  # "request", "reply" or "local"
    name: str
    endpoint: Any = None
    app: Any = None
    # request connections: how responses leave
    rnic: Rnic | None = None
    qp: QueuePair | None = None
    resp_pointer_addr: int | None = None
    local_delivery: bool = False
    on_response: Callable[[bytes, ApuRequest], None] | None = None
    # request-side bookkeeping
    next_seq: int = 0
    next_resp: int = 0
    ready: dict = field(default_factory=dict)
    staged: int = 0
    local_queue: deque = field(default_factory=deque)
    # reply-side bookkeeping
    waiters: deque = field(default_factory=deque)
    responses: int = 0


@dataclass
class Outbound:
    name: str
    endpoint: ClientEndpoint
    rnic: Rnic
    qp: QueuePair
    pointer_addr: int
    reply: Inbound


@dataclass
class CpuService:
    name: str
    latency_ns: int
    fn: Callable[[bytes], bytes]
    client: ClientEndpoint = None
    server: ServerEndpoint = None
    reply_buffer: int = 0
    waiters: deque = field(default_factory=deque)
    backlog: deque = field(default_factory=deque)
    busy_until: int = 0
    calls: int = 0
    busy_ns: int = 0


class Accelerator:
    def __init__(self, engine: Engine, mem: MemorySystem, rnic: Rnic | None = None,
                 cfg: AccelConfig | None = None, name: str = "accel"):
        self.engine = engine
        self.mem = mem
        self.rnic = rnic
        self.cfg = cfg or AccelConfig()
        self.name = name
        self.ctr = engine.counters
        self._p = f"{name}."
        self.ptr_region = mem.alloc_region(4 * self.cfg.max_buffers, MemKind.DRAM, attached="accel",
                                           name=f"{name}.pointers")
        self.inbound: list[Inbound] = []
        self.outbound: dict[str, Outbound] = {}
        self.services: dict[str, CpuService] = {}
        self.table: dict[int, FsmEntry] = {}
        self.pending: dict[int, int] = {}
        self._active: list[int] = []
        self._last_served = -1
        self._next_rid = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.dispatched = 0
        self.retired = 0
        self._tick_armed = False
        self._cq_armed = False
        self._signaled_outstanding = 0
        self.started = False
        self.checker: CpollChecker | None = None
        self.tracker: RingTracker | None = None
        self.max_fetches = 0

    # wiring

    def _new_inbound(self, kind: str, name: str) -> Inbound:
        if self.started:
            raise AccelError("connections must be added before start()")
        bid = len(self.inbound)
        if bid >= self.cfg.max_buffers:
            raise AccelError("pointer buffer is full")
        ib = Inbound(bid, kind, name)
        self.inbound.append(ib)
        return ib

    def pointer_addr(self, buffer_id: int) -> int:
        return self.ptr_region.base + 4 * buffer_id

    def add_request_connection(self, name: str, app: Application, endpoint: ServerEndpoint,
                               qp: QueuePair | None = None, resp_pointer_addr: int | None = None,
                               local_delivery: bool = False,
                               on_response: Callable[[bytes, ApuRequest], None] | None = None) -> Inbound:
        """Register a ring this accelerator serves. Responses go out as write
        WQEs on ``qp`` (remote client) or as coherent stores (local client)."""
        ib = self._new_inbound("request", name)
        ib.app, ib.endpoint, ib.qp = app, endpoint, qp
        ib.rnic = self.rnic
        ib.resp_pointer_addr = resp_pointer_addr
        ib.local_delivery = local_delivery
        ib.on_response = on_response
        if qp is not None:
            endpoint.transport = RdmaTransport(self.rnic, qp, signal_every=self.cfg.signal_every,
                                               autoring=False, poster="accel")
        elif local_delivery:
            endpoint.transport = _TimedLocalStore(self)
        return ib

    def add_local_source(self, name: str, app: Application,
                         on_response: Callable[[bytes, ApuRequest], None]) -> Inbound:
        """Requests handed straight to the APU (no ring), e.g. host-injected work."""
        ib = self._new_inbound("local", name)
        ib.app, ib.on_response = app, on_response
        return ib

    def add_outbound(self, name: str, endpoint: ClientEndpoint, qp: QueuePair, remote_pointer_addr: int) -> Inbound:
        """Connection on which this accelerator is the client (chain forwarding).
        The reply ring is ``endpoint.rx`` in local memory; the peer bumps our
        pointer entry after each reply."""
        ib = self._new_inbound("reply", name)
        ib.endpoint = endpoint
        endpoint.transport = RdmaTransport(self.rnic, qp, autoring=False, poster="accel")
        self.outbound[name] = Outbound(name, endpoint, self.rnic, qp, remote_pointer_addr, ib)
        return ib

    def add_cpu_service(self, name: str, latency_ns: int, fn: Callable[[bytes], bytes]) -> CpuService:
        if self.started:
            raise AccelError("services must be added before start()")
        self.services[name] = CpuService(name, latency_ns, fn)
        return self.services[name]

    def start(self) -> None:
        cfg = self.cfg
        descs = [BufferDesc(ib.buffer_id, ib.endpoint.rx if ib.endpoint is not None else _NullRing(),
                            self.pointer_addr(ib.buffer_id)) for ib in self.inbound]
        caps = [ib.endpoint.rx.capacity if ib.endpoint is not None else U32 - 1 for ib in self.inbound]
        if descs:
            region = register_cpoll_region(descs, CpollPlacement.PINNED_CACHE, cache_bytes=cfg.cache_bytes)
            self.checker = CpollChecker(self.engine, self.mem, region, self._on_signal)
        self.tracker = RingTracker(caps)
        if self.services:
            self._start_services()
        self.started = True

    def _start_services(self) -> None:
        cfg = self.cfg
        n = len(self.services)
        ring_bytes = cfg.cpu_ring_capacity * cfg.cpu_ring_slot
        req_area = self.mem.alloc_region(n * ring_bytes, MemKind.DRAM, name=f"{self.name}.svc.req")
        rep_area = self.mem.alloc_region(n * ring_bytes, MemKind.DRAM, attached="accel",
                                         name=f"{self.name}.svc.reply")
        descs = []
        for i, svc in enumerate(self.services.values()):
            c, s = create_pair(cfg.cpu_ring_capacity, cfg.cpu_ring_slot,
                               Placement(self.mem, req_area.base + i * ring_bytes),
                               Placement(self.mem, rep_area.base + i * ring_bytes),
                               client_origin="accel", server_origin="cpu")
            svc.client, svc.server, svc.reply_buffer = c, s, i
            descs.append(BufferDesc(i, c.rx, 0))
        region = register_cpoll_region(descs, CpollPlacement.PINNED_CACHE, cache_bytes=cfg.cache_bytes,
                                       direct=True)
        self._svc_list = list(self.services.values())
        self._svc_tracker = RingTracker([cfg.cpu_ring_capacity] * n)
        self.svc_checker = CpollChecker(self.engine, self.mem, region, self._on_service_signal)

    # notification

    def _on_signal(self, sig: CpollSignal) -> None:
        count = self.tracker.new_requests(sig.buffer_id, sig.observed_pointer)
        if count == 0:
            return
        ib = self.inbound[sig.buffer_id]
        self.ctr.add(self._p + "tracked", count)
        if ib.kind == "reply":
            self._consume_replies(ib, count)
            return
        self._add_pending(ib.buffer_id, count)

    def _add_pending(self, bid: int, count: int) -> None:
        if bid not in self.pending or self.pending[bid] == 0:
            bisect.insort(self._active, bid)
            self.pending[bid] = 0
        self.pending[bid] += count
        self._kick()

    def inject(self, source: Inbound, payload: bytes) -> None:
        source.local_queue.append((payload, self.engine.now))
        self._add_pending(source.buffer_id, 1)

    # scheduler and dispatch

    def scheduler_next(self) -> int | _Token:
        act = self._active
        if not act:
            return IDLE
        i = bisect.bisect_right(act, self._last_served)
        bid = act[i] if i < len(act) else act[0]
        return bid

    def _kick(self) -> None:
        if not self._tick_armed:
            self._tick_armed = True
            self.engine.schedule(0, self._tick)

    def _tick(self) -> None:
        self._tick_armed = False
        if self.in_flight >= self.cfg.max_outstanding:
            self.ctr.add(self._p + "backpressure")
            return
        bid = self.scheduler_next()
        if bid is IDLE:
            self._maybe_idle_flush()
            return
        self.apu_dispatch(bid)
        if self._active:
            self._tick_armed = True
            self.engine.schedule(self.cfg.action_ns, self._tick)

    def apu_dispatch(self, buffer_id: int) -> ApuRequest | _Token:
        if self.pending.get(buffer_id, 0) <= 0:
            raise AccelError(f"no tracked requests on buffer {buffer_id}")
        if self.in_flight >= self.cfg.max_outstanding:
            return BACKPRESSURE
        ib = self.inbound[buffer_id]
        now = self.engine.now
        lat = 0
        if ib.kind == "local":
            payload, arrival = ib.local_queue.popleft()
        else:
            rx = ib.endpoint.rx
            slot_addr = rx.slot_addr(ib.endpoint.rx_head)
            payload = ib.endpoint.try_consume()
            if payload is EMPTY:
                raise OrderingViolation(
                    f"buffer {buffer_id}: tracked request at slot {ib.endpoint.rx_head % rx.capacity} has valid=0")
            # read-for-ownership of the slot; zeroing is then local
            lat = self.mem.access(AccessRequest(slot_addr, rx.slot_size, Op.READ, Origin.ACCEL))
            arrival = now
        self.pending[buffer_id] -= 1
        if self.pending[buffer_id] == 0:
            self._active.remove(buffer_id)
        self._last_served = buffer_id
        rid = self._next_rid
        self._next_rid += 1
        req = ApuRequest(rid, buffer_id, payload[0] if payload else 0, payload, arrival, ib.next_seq,
                         accesses=0 if ib.kind == "local" else 1)
        ib.next_seq += 1
        entry = FsmEntry(rid, req, None)
        hook = getattr(ib.app, "on_dispatch", None)
        if hook is not None:
            hook(req, entry)
        entry.gen = ib.app.run(req, entry)
        self.table[rid] = entry
        self.in_flight += 1
        self.dispatched += 1
        self.max_in_flight = max(self.max_in_flight, self.in_flight)
        self.ctr.add(self._p + "dispatched")
        self.engine.schedule(self.cfg.action_ns + lat, self.fsm_advance, rid, None)
        return req

    # FSM

    def fsm_advance(self, request_id: int, result: Any) -> list:
        entry = self.table.get(request_id)
        if entry is None:
            raise UnknownRequest(f"no FSM entry for request {request_id}")
        try:
            action = entry.gen.send(result)
        except StopIteration as stop:
            self.emit_response(request_id, stop.value if stop.value is not None else b"")
            return ["respond"]
        self._issue(entry, action, lambda r: self.fsm_advance(request_id, r))
        return [action]

    def _issue(self, entry: FsmEntry, action: Any, done: Callable[[Any], None]) -> None:
        eng, a = self.engine, self.cfg.action_ns
        if isinstance(action, (MemRead, MemWrite)):
            entry.request.accesses += 1
        elif isinstance(action, MemGather):
            entry.request.accesses += len(action.addrs)
        if isinstance(action, MemRead):
            lat = self.mem.access(AccessRequest(action.addr, action.size, Op.READ, Origin.ACCEL))
            addr, size = action.addr, action.size
            eng.schedule(a + lat, lambda: done(self.mem.read(addr, size)))
        elif isinstance(action, MemWrite):
            lat = self.mem.access(AccessRequest(action.addr, len(action.data), Op.WRITE, Origin.ACCEL))
            addr, data = action.addr, action.data
            eng.schedule(a + lat, lambda: (self.mem.write(addr, data, "accel"), done(None)))
        elif isinstance(action, MemGather):
            n = len(action.addrs)
            if n > self.cfg.gather_limit:
                raise AccelError(f"gather of {n} exceeds {self.cfg.gather_limit} outstanding fetches")
            entry.max_fetches = max(entry.max_fetches, n)
            self.max_fetches = max(self.max_fetches, n)
            lats = self.mem.accel_read_batch(action.addrs, action.size)
            addrs, size = list(action.addrs), action.size
            t = int(lats.max()) if n else 0
            eng.schedule(a + t, lambda: done(self.mem.gather(addrs, size)))
        elif isinstance(action, Parallel):
            acts = action.actions
            if not acts:
                eng.schedule(a, lambda: done([]))
                return
            results: list = [None] * len(acts)
            left = [len(acts)]

            def part(i: int) -> Callable[[Any], None]:
                def fin(r: Any) -> None:
                    results[i] = r
                    left[0] -= 1
                    if left[0] == 0:
                        done(results)
                return fin

            for i, sub in enumerate(acts):
                self._issue(entry, sub, part(i))
        elif isinstance(action, Compute):
            eng.schedule(a + int(action.ns), lambda: done(None))
        elif isinstance(action, CpuCall):
            self.cpu_call(action.service, action.args, done)
        elif isinstance(action, Call):
            self._call(action.conn, action.payload, done)
        elif isinstance(action, Wait):
            fut = action.future
            if fut.done:
                eng.schedule(a, lambda: done(fut.value))
            else:
                fut._waiters.append(lambda v: eng.schedule(a, lambda: done(v)))
        else:
            raise AccelError(f"unknown action {action!r}")

    # responses

    def emit_response(self, request_id: int, payload: bytes) -> None:
        entry = self.table.pop(request_id, None)
        if entry is None:
            raise UnknownRequest(f"no FSM entry for request {request_id}")
        req = entry.request
        ib = self.inbound[req.buffer_id]
        self.in_flight -= 1
        self.retired += 1
        self.ctr.add(self._p + "retired")
        if ib.kind == "local":
            ib.on_response(payload, req)
        else:
            if ib.endpoint.tx.max_payload < len(payload):
                raise AccelError(f"response of {len(payload)} B exceeds slot payload limit")
            ib.ready[req.seq] = (payload, req)
            while ib.next_resp in ib.ready:
                p, r = ib.ready.pop(ib.next_resp)
                self._post_response(ib, p, r)
                ib.next_resp += 1
        if self._active:
            self._kick()
        else:
            self._maybe_idle_flush()

    def _post_response(self, ib: Inbound, payload: bytes, req: ApuRequest) -> None:
        ep: ServerEndpoint = ib.endpoint
        r = ep.try_post(payload)
        if r is NO_CREDIT:
            raise AccelError(f"{ib.name}: response without an owed request")
        self.ctr.add(self._p + "responses")
        ib.responses += 1
        if ib.on_response is not None:
            ib.on_response(payload, req)
        if ib.qp is None:
            return
        ib.staged += 1
        if isinstance(r.handle, int) and ep.transport.signal_every and \
                ep.transport._n % ep.transport.signal_every == 0:
            self._signaled_outstanding += 1
            self._arm_cq_poll()
        if ib.resp_pointer_addr is not None:
            self.rnic.post_wqe(ib.qp, Wqe("write", ib.resp_pointer_addr, 4, _PTR.pack(ep.tx_tail % U32)))
            ib.staged += 1
        if ib.staged >= self.cfg.doorbell_batch:
            self._doorbell(ib)

    def _doorbell(self, ib: Inbound) -> None:
        if ib.staged:
            self.rnic.ring_doorbell(ib.qp, self.rnic.staged_count(ib.qp), poster="accel")
            ib.staged = 0

    def _maybe_idle_flush(self) -> None:
        if not self.cfg.idle_flush or self.in_flight or self._active:
            return
        for ib in self.inbound:
            if ib.kind == "request" and ib.staged:
                self._doorbell(ib)

    def flush_doorbells(self) -> None:
        for ib in self.inbound:
            if ib.kind == "request" and ib.staged:
                self._doorbell(ib)

    def _arm_cq_poll(self) -> None:
        if not self._cq_armed:
            self._cq_armed = True
            self.engine.schedule(self.cfg.cq_poll_ns, self._cq_poll)

    def _cq_poll(self) -> None:
        self._cq_armed = False
        seen = set()
        for ib in self.inbound:
            if ib.qp is not None and id(ib.qp.cq) not in seen:
                seen.add(id(ib.qp.cq))
                got = self.rnic.poll_cq(ib.qp.cq)
                self._signaled_outstanding -= len(got)
                self.ctr.add(self._p + "cq_polled", len(got))
        if self._signaled_outstanding > 0:
            self._arm_cq_poll()

    # outbound calls (chain forwarding)

    def _call(self, conn: str, payload: bytes, done: Callable[[Any], None]) -> None:
        ob = self.outbound[conn]
        r = ob.endpoint.try_post(payload)
        if r is NO_CREDIT:
            raise AccelError(f"outbound {conn}: no credit")
        ob.reply.waiters.append(done)
        self.rnic.post_wqe(ob.qp, Wqe("write", ob.pointer_addr, 4, _PTR.pack(ob.endpoint.req_tail % U32)))
        self.rnic.ring_doorbell(ob.qp, self.rnic.staged_count(ob.qp), poster="accel")
        self.ctr.add(self._p + "forwards")

    def _consume_replies(self, ib: Inbound, count: int) -> None:
        ep: ClientEndpoint = ib.endpoint
        for _ in range(count):
            slot_addr = ep.rx.slot_addr(ep.rx_head)
            payload = ep.try_consume()
            if payload is EMPTY:
                raise OrderingViolation(f"reply buffer {ib.buffer_id}: tracked reply has valid=0")
            lat = self.mem.access(AccessRequest(slot_addr, ep.rx.slot_size, Op.READ, Origin.ACCEL))
            done = ib.waiters.popleft()
            self.engine.schedule(self.cfg.action_ns + lat, done, payload)

    # CPU services

    def cpu_call(self, service: str, args: bytes, done: Callable[[bytes], None]) -> None:
        svc = self.services.get(service)
        if svc is None:
            raise AccelError(f"unknown CPU service {service!r}")
        svc.backlog.append((args, done))
        self._drain_backlog(svc)

    def _drain_backlog(self, svc: CpuService) -> None:
        c = self.mem.cfg
        while svc.backlog:
            args, done = svc.backlog[0]
            r = svc.client.try_post(args)
            if r is NO_CREDIT:
                self.ctr.add(self._p + "cpu_call_retries")
                return
            svc.backlog.popleft()
            svc.waiters.append(done)
            self.mem.counters.add("cc_link_bytes", svc.client.tx.slot_size)
            self.ctr.add(self._p + "cpu_calls")
            self.engine.schedule(self.cfg.action_ns + c.cc_link_oneway_ns, self._cpu_serve, svc)

    def _cpu_serve(self, svc: CpuService) -> None:
        args = svc.server.try_consume()
        if args is EMPTY:
            raise AccelError(f"service {svc.name}: request not visible")
        now = self.engine.now
        start = max(now, svc.busy_until)
        svc.busy_until = start + svc.latency_ns
        svc.busy_ns += svc.latency_ns
        svc.calls += 1
        reply = svc.fn(args)
        self.engine.at(svc.busy_until, self._cpu_reply, svc, reply)

    def _cpu_reply(self, svc: CpuService, reply: bytes) -> None:
        if svc.server.try_post(reply) is NO_CREDIT:
            raise AccelError(f"service {svc.name}: reply without request")
        self.mem.counters.add("cc_link_bytes", svc.server.tx.slot_size)

    def _on_service_signal(self, sig: CpollSignal) -> None:
        svc = self._svc_list[sig.buffer_id]
        count = self._svc_tracker.new_requests(sig.buffer_id, sig.observed_pointer)
        for _ in range(count):
            reply = svc.client.try_consume()
            if reply is EMPTY:
                raise OrderingViolation(f"service {svc.name}: tracked reply has valid=0")
            done = svc.waiters.popleft()
            self.engine.schedule(self.cfg.action_ns, done, reply)
        if svc.backlog:
            self._drain_backlog(svc)


class _TimedLocalStore:
    """Response path to a client on the same machine: coherent stores that
    become visible after one cc-link hop."""

    def __init__(self, acc: Accelerator):
        self.acc = acc

    def put(self, ring, count: int, body: bytes) -> None:
        acc = self.acc
        lat = acc.mem.access(AccessRequest(ring.slot_addr(count), ring.slot_size, Op.WRITE, Origin.ACCEL))
        acc.engine.schedule(lat, DirectTransport("accel").put, ring, count, body)


class _NullRing:
    capacity = U32 - 1
    base_addr = 0
    nbytes = 0


def serve_remote_client(engine: Engine, acc: Accelerator, server_rnic: Rnic, client_mem: MemorySystem,
                        client_rnic: Rnic, app: Application, name: str, capacity: int = 1024,
                        slot_size: int = 64, request_kind: MemKind = MemKind.DRAM, tph: bool | None = None,
                        retain: bool = False, relay: Callable[[], int] | None = None):
    """Wire one client connection to ``acc``: rings, QPs in both directions and
    the cpoll pointer entry. Returns ``(CpollConnection, Inbound, response ring region)``.

    The request ring sits in server memory (TPH on for DRAM, never for NVM);
    the response ring sits in client memory."""
    from .cpoll import CpollConnection

    if tph is None:
        tph = request_kind is MemKind.DRAM
    rbytes = capacity * slot_size
    req_reg = acc.mem.alloc_region(rbytes, request_kind, tph_on_write=tph, name=f"{name}.req",
                                   align=max(4096, slot_size))
    resp_reg = client_mem.alloc_region(rbytes, MemKind.DRAM, name=f"{name}.resp", align=max(4096, slot_size))
    c2s = client_rnic.create_qp(server_rnic, relay=relay)
    s2c = server_rnic.create_qp(client_rnic, relay=relay)
    client, server = create_pair(capacity, slot_size, Placement(acc.mem, req_reg.base),
                                 Placement(client_mem, resp_reg.base),
                                 client_transport=RdmaTransport(client_rnic, c2s, autoring=False),
                                 retain=retain, server_origin="accel")
    ib = acc.add_request_connection(name, app, server, qp=s2c)
    conn = CpollConnection(client, acc.pointer_addr(ib.buffer_id), rnic=client_rnic, qp=c2s)
    return conn, ib, resp_reg
