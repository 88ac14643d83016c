"""Coherence-assisted notification (cpoll).

Producers bump a 4-byte monotonic counter per request ring in a contiguous
pointer buffer. The checker snoops writes into that region; the first write
to an entry schedules a signal that reaches the accelerator one cc-link hop
later, and further writes before delivery only refresh the pointer carried
by the pending signal. The ring tracker turns the carried pointer back into
an exact count of new requests.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .memsim import MemorySystem
from .ringcomm import NO_CREDIT, ClientEndpoint, Posted, RingBuffer, _Status
from .rnic import QueuePair, Rnic, Wqe
from .simcore import Engine

U32 = 1 << 32
_PTR = struct.Struct("<I")


class CpollError(Exception):
    pass


class TrackerOverflow(CpollError):
    pass


class Placement(str, enum.Enum):
    PINNED_CACHE = "pinned_cache"
    ACCEL_MEMORY = "accel_memory"


@dataclass
class BufferDesc:
    buffer_id: int
    ring: RingBuffer
    pointer_addr: int


@dataclass
class CpollRegion:
    base: int
    entry_size: int
    buffer_table: list[BufferDesc]
    placement: Placement
    direct: bool = False

    @property
    def length(self) -> int:
        return self.entry_size * len(self.buffer_table)

    def buffer_of(self, addr: int) -> int | None:
        off = addr - self.base
        if off < 0 or off >= self.length:
            return None
        return off // self.entry_size


@dataclass
class CpollSignal:
    buffer_id: int
    observed_pointer: int
    fire_time: int


def register_cpoll_region(buffers: Sequence[BufferDesc], placement: Placement | str,
                          cache_bytes: int = 64 * 1024, entry_size: int = 4,
                          direct: bool = False) -> CpollRegion:
    """Validate and describe a cpoll region.

    Pointer mode: ``buffers[i].pointer_addr`` must equal ``base + i*entry_size``.
    Direct mode snoops the rings themselves, so each ring must occupy exactly
    ``entry_size`` bytes back to back; it is allowed only when pinned.
    """
    placement = Placement(placement)
    if not buffers:
        raise CpollError("cpoll region needs at least one buffer")
    if direct:
        if placement is not Placement.PINNED_CACHE:
            raise CpollError("direct snooping of request slots requires pinned_cache placement")
        entry_size = buffers[0].ring.nbytes
        base = buffers[0].ring.base_addr
        addrs = [b.ring.base_addr for b in buffers]
    else:
        base = buffers[0].pointer_addr
        addrs = [b.pointer_addr for b in buffers]
    for i, a in enumerate(addrs):
        if a != base + i * entry_size:
            raise CpollError(f"non-contiguous cpoll layout at buffer {i}: {a:#x} != {base + i * entry_size:#x}")
    for i, b in enumerate(buffers):
        if b.buffer_id != i:
            raise CpollError("buffer ids must be 0..n-1 in region order")
    size = entry_size * len(buffers)
    if placement is Placement.PINNED_CACHE and size > cache_bytes:
        raise CpollError(f"cpoll region of {size} B exceeds the {cache_bytes} B accelerator cache")
    return CpollRegion(base, entry_size, list(buffers), placement, direct)


class CpollChecker:
    """Snoops a memory system for writes into the cpoll region."""

    def __init__(self, engine: Engine, mem: MemorySystem, region: CpollRegion,
                 deliver: Callable[[CpollSignal], None], ignore_origin: str = "accel"):
        self.engine = engine
        self.mem = mem
        self.region = region
        self.deliver = deliver
        self.ignore_origin = ignore_origin
        self.pending: dict[int, CpollSignal] = {}
        self._direct_counts = [0] * len(region.buffer_table)
        self.signals = 0
        self.coalesced = 0
        self.delay = mem.cfg.cc_link_oneway_ns
        mem.add_write_listener(self._on_write)

    def detach(self) -> None:
        self.mem.remove_write_listener(self._on_write)

    def _on_write(self, addr: int, data: bytes, origin: str) -> None:
        if origin == self.ignore_origin:
            return
        reg = self.region
        end = addr + len(data)
        if end <= reg.base or addr >= reg.base + reg.length:
            return
        if reg.direct:
            # a slot write is signalled when it sets a valid byte
            bid = reg.buffer_of(addr)
            if bid is None or data[-1] != 1:
                return
            ring = reg.buffer_table[bid].ring
            if (end - 1 - ring.base_addr) % ring.slot_size != ring.slot_size - 1:
                return
            self._direct_counts[bid] = (self._direct_counts[bid] + 1) % U32
            self.on_coherence_write(reg.base + bid * reg.entry_size, self._direct_counts[bid])
            return
        lo = max(addr, reg.base)
        hi = min(end, reg.base + reg.length)
        e = reg.entry_size
        first = (lo - reg.base) // e
        last = (hi - 1 - reg.base) // e
        for bid in range(first, last + 1):
            a = reg.base + bid * e
            (val,) = _PTR.unpack(self.mem.read(a, 4))
            self.on_coherence_write(a, val)

    def on_coherence_write(self, addr: int, new_value: int) -> CpollSignal | None:
        bid = self.region.buffer_of(addr)
        if bid is None:
            return None
        sig = self.pending.get(bid)
        if sig is not None:
            sig.observed_pointer = new_value % U32
            self.coalesced += 1
            return None
        sig = CpollSignal(bid, new_value % U32, self.engine.now + self.delay)
        self.pending[bid] = sig
        self.signals += 1
        self.engine.counters.add("cpoll.signals")
        self.engine.at(sig.fire_time, self._fire, bid)
        return sig

    def _fire(self, bid: int) -> None:
        sig = self.pending.pop(bid)
        self.deliver(sig)


class RingTracker:
    def __init__(self, capacities: Sequence[int]):
        self.capacity = list(capacities)
        self.recorded = [0] * len(self.capacity)
        self.total = [0] * len(self.capacity)

    def new_requests(self, buffer_id: int, observed_pointer: int) -> int:
        count = (observed_pointer - self.recorded[buffer_id]) % U32
        if count > self.capacity[buffer_id]:
            raise TrackerOverflow(
                f"buffer {buffer_id}: {count} new requests exceed capacity {self.capacity[buffer_id]}")
        self.recorded[buffer_id] = observed_pointer % U32
        self.total[buffer_id] += count
        return count


def tracker_new_requests(recorded_tail: int, observed_pointer: int, capacity: int) -> int:
    count = (observed_pointer - recorded_tail) % U32
    if count > capacity:
        raise TrackerOverflow(f"{count} new requests exceed capacity {capacity}")
    return count


@dataclass
class CpollConnection:
    """Client side of one cpoll-notified connection."""

    endpoint: ClientEndpoint
    pointer_addr: int
    rnic: Rnic | None = None
    qp: QueuePair | None = None
    mem: MemorySystem | None = None  # intra-machine: the shared memory system
    origin: str = "cpu"
    pointer_signaled: bool = True
    posts: int = field(default=0)


def client_pointer_post(conn: CpollConnection, payload: bytes) -> Posted | _Status:
    """Write the request slot, then bump the ring's pointer entry.

    Over RDMA both writes are WQEs on one QP released by a single doorbell,
    only the pointer write signaled. Intra-machine they are plain stores."""
    r = conn.endpoint.try_post(payload)
    if r is NO_CREDIT:
        return r
    ptr = _PTR.pack(conn.endpoint.req_tail % U32)
    conn.posts += 1
    if conn.rnic is not None:
        conn.rnic.post_wqe(conn.qp, Wqe("write", conn.pointer_addr, 4, ptr, signaled=conn.pointer_signaled))
        conn.rnic.ring_doorbell(conn.qp, 2)
        if len(conn.qp.cq) > 64:
            conn.rnic.poll_cq(conn.qp.cq)
    else:
        conn.mem.write(conn.pointer_addr, ptr, conn.origin)
    return r


class SpinPoller:
    """Baseline: the accelerator re-reads a cacheline every ``interval`` cycles.

    Polls sit on a fixed grid with period ``interval / clock``. Accounting is
    lazy: poll counts (and the 64 B of cc-link traffic each) are derived from
    elapsed time instead of one event per poll."""

    def __init__(self, interval_cycles: int, clock_mhz: float = 400.0, bytes_per_poll: int = 64):
        if interval_cycles <= 0:
            raise ValueError("poll interval must be >= 1 cycle")
        self.interval = interval_cycles
        self.period_ps = round(interval_cycles * 1e6 / clock_mhz)
        self.bytes_per_poll = bytes_per_poll

    def next_poll_ns(self, t_ns: int) -> float:
        """Time (ns, fractional) of the first poll at or after ``t_ns``."""
        tp = t_ns * 1000
        k = -(-tp // self.period_ps)
        return k * self.period_ps / 1000.0

    def polls_between(self, t0_ns: int, t1_ns: int) -> int:
        if t1_ns <= t0_ns:
            return 0
        return (t1_ns * 1000) // self.period_ps - (t0_ns * 1000) // self.period_ps

    def traffic_bytes(self, t0_ns: int, t1_ns: int) -> int:
        return self.polls_between(t0_ns, t1_ns) * self.bytes_per_poll
