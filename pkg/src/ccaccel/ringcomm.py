"""Fixed-slot SPSC ring pairs with client-tracked credits.

Slot wire layout (shared by every transport)::

    [0:4)            payload length, u32 little-endian
    [4:4+len)        payload
    [slot_size-1]    valid byte, 1 = full, written after everything else

A connection is a request ring in server memory plus a response ring in
client memory. Head/tail are monotonic 64-bit counts; the slot index is
``count % capacity``.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from typing import Callable, Protocol

HEADER = 4
_LEN = struct.Struct("<I")


class RingError(Exception):
    pass


class ProtocolCorruption(RingError):
    pass


class OwnershipError(RingError):
    pass


class _Status:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __bool__(self) -> bool:
        return False


NO_CREDIT = _Status("NoCredit")
EMPTY = _Status("Empty")


@dataclass(frozen=True)
class Posted:
    seq: int
    slot: int
    handle: object = None  # transport-specific, e.g. the RDMA WQE sequence


class Backing(Protocol):
    def read(self, addr: int, n: int) -> bytes: ...
    def write(self, addr: int, data: bytes, origin: str = ...) -> None: ...


class ByteBacking:
    """Plain bytearray addressed from ``base``; used outside the simulator."""

    def __init__(self, size: int, base: int = 0):
        self.base = base
        self.buf = bytearray(size)

    def read(self, addr: int, n: int) -> bytes:
        o = addr - self.base
        return bytes(self.buf[o:o + n])

    def read_byte(self, addr: int) -> int:
        return self.buf[addr - self.base]

    def write(self, addr: int, data: bytes, origin: str = "cpu") -> None:
        o = addr - self.base
        self.buf[o:o + len(data)] = data


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


class RingBuffer:
    def __init__(self, capacity: int, slot_size: int, base_addr: int, backing: Backing):
        if not is_pow2(capacity):
            raise ValueError(f"capacity must be a power of two >= 1, got {capacity}")
        if slot_size < HEADER + 2:
            raise ValueError("slot_size too small for header and valid byte")
        if base_addr % slot_size:
            raise ValueError(f"base_addr {base_addr:#x} not aligned to slot_size {slot_size}")
        self.capacity = capacity
        self.slot_size = slot_size
        self.base_addr = base_addr
        self.backing = backing

    @property
    def max_payload(self) -> int:
        return self.slot_size - HEADER - 1

    @property
    def nbytes(self) -> int:
        return self.capacity * self.slot_size

    def slot_addr(self, count: int) -> int:
        return self.base_addr + (count % self.capacity) * self.slot_size

    def valid_addr(self, count: int) -> int:
        return self.slot_addr(count) + self.slot_size - 1

    def encode(self, payload: bytes) -> bytes:
        if len(payload) > self.max_payload:
            raise ValueError(f"payload of {len(payload)} B exceeds slot limit {self.max_payload} B")
        return _LEN.pack(len(payload)) + payload

    def valid(self, count: int) -> int:
        return self.backing.read(self.valid_addr(count), 1)[0]

    def read_slot(self, count: int) -> bytes:
        """Parse a full slot; raises on a corrupt length."""
        a = self.slot_addr(count)
        (n,) = _LEN.unpack(self.backing.read(a, HEADER))
        if n > self.max_payload:
            raise ProtocolCorruption(f"slot {count % self.capacity}: length {n} > {self.max_payload}")
        return self.backing.read(a + HEADER, n)

    def zero_slot(self, count: int, used: int, origin: str) -> None:
        # bytes past header+payload are zero by invariant; valid byte last
        a = self.slot_addr(count)
        self.backing.write(a, bytes(HEADER + used), origin)
        self.backing.write(a + self.slot_size - 1, b"\x00", origin)


class Transport(Protocol):
    def put(self, ring: RingBuffer, count: int, body: bytes) -> object: ...


class DirectTransport:
    """Producer stores straight into the ring's backing (same address space)."""

    def __init__(self, origin: str = "cpu"):
        self.origin = origin

    def put(self, ring: RingBuffer, count: int, body: bytes) -> object:
        a = ring.slot_addr(count)
        ring.backing.write(a, body, self.origin)
        ring.backing.write(a + ring.slot_size - 1, b"\x01", self.origin)
        return None


class _Owner:
    def __init__(self, debug: bool):
        self.debug = debug
        self.ident: int | None = None

    def check(self) -> None:
        if not self.debug:
            return
        me = threading.get_ident()
        if self.ident is None:
            self.ident = me
        elif self.ident != me:
            raise OwnershipError("endpoint used from a second thread")


class _Endpoint:
    """One side of a connection: produces on ``tx`` and consumes on ``rx``."""

    def __init__(self, tx: RingBuffer, rx: RingBuffer, transport: Transport, debug: bool,
                 consume_origin: str):
        self.tx = tx
        self.rx = rx
        self.transport = transport
        self.tx_tail = 0
        self.rx_head = 0
        self._owner = _Owner(debug)
        self._consume_origin = consume_origin

    def _post(self, payload: bytes) -> Posted:
        body = self.tx.encode(payload)
        seq = self.tx_tail
        handle = self.transport.put(self.tx, seq, body)
        self.tx_tail = seq + 1
        return Posted(seq, seq % self.tx.capacity, handle)

    def poll_valid(self) -> bool:
        return self.rx.valid(self.rx_head) != 0

    def try_consume(self) -> bytes | _Status:
        self._owner.check()
        h = self.rx_head
        if self.rx.valid(h) == 0:
            return EMPTY
        payload = self.rx.read_slot(h)
        self.rx.zero_slot(h, len(payload), self._consume_origin)
        self.rx_head = h + 1
        return payload


class ClientEndpoint(_Endpoint):
    """Requests out, responses in. Credit = capacity - (req_tail - resp_head)."""

    @property
    def req_tail(self) -> int:
        return self.tx_tail

    @property
    def resp_head(self) -> int:
        return self.rx_head

    def credits(self) -> int:
        return self.tx.capacity - (self.tx_tail - self.rx_head)

    def try_post(self, payload: bytes) -> Posted | _Status:
        self._owner.check()
        if len(payload) > self.tx.max_payload:
            raise ValueError(f"payload of {len(payload)} B exceeds slot limit {self.tx.max_payload} B")
        if self.credits() <= 0:
            return NO_CREDIT
        return self._post(payload)


class ServerEndpoint(_Endpoint):
    """Requests in, responses out. A response may be posted only while one
    is owed (consumed requests exceed posted responses)."""

    def __init__(self, tx, rx, transport, debug, consume_origin, retain: bool = False):
        super().__init__(tx, rx, transport, debug, consume_origin)
        self.retain = retain
        self.released = 0
        self._retained: dict[int, int] = {}
        self.on_retire: Callable[[int], None] | None = None

    def owed(self) -> int:
        return self.rx_head - self.tx_tail

    def credits(self) -> int:
        return self.owed()

    def try_post(self, payload: bytes) -> Posted | _Status:
        self._owner.check()
        if len(payload) > self.tx.max_payload:
            raise ValueError(f"payload of {len(payload)} B exceeds slot limit {self.tx.max_payload} B")
        if self.owed() <= 0:
            return NO_CREDIT
        if self.retain and self.released <= self.tx_tail:
            raise RingError("response posted before its retained request slot was released")
        return self._post(payload)

    def try_consume(self) -> bytes | _Status:
        if not self.retain:
            return super().try_consume()
        self._owner.check()
        h = self.rx_head
        if self.rx.valid(h) == 0:
            return EMPTY
        payload = self.rx.read_slot(h)
        self._retained[h] = len(payload)
        self.rx_head = h + 1
        return payload

    def release(self, seq: int) -> None:
        """Retire retained request ``seq``; slots are zeroed strictly in order."""
        if seq != self.released:
            raise RingError(f"release out of order: expected {self.released}, got {seq}")
        used = self._retained.pop(seq)
        if self.on_retire is not None:
            self.on_retire(seq + 1)
        self.rx.zero_slot(seq, used, self._consume_origin)
        self.released = seq + 1


@dataclass
class Placement:
    backing: Backing
    base_addr: int


def create_pair(capacity: int, slot_size: int, request: Placement, response: Placement,
                client_transport: Transport | None = None, server_transport: Transport | None = None,
                debug: bool = False, retain: bool = False,
                client_origin: str = "cpu", server_origin: str = "cpu") -> tuple[ClientEndpoint, ServerEndpoint]:
    """Request ring in server memory, response ring in client memory."""
    for p in (request, response):
        region_of = getattr(p.backing, "region_of", None)
        if region_of is not None:
            region_of(p.base_addr, capacity * slot_size if is_pow2(capacity) else 1)
    req = RingBuffer(capacity, slot_size, request.base_addr, request.backing)
    resp = RingBuffer(capacity, slot_size, response.base_addr, response.backing)
    client = ClientEndpoint(req, resp, client_transport or DirectTransport(client_origin), debug, client_origin)
    server = ServerEndpoint(resp, req, server_transport or DirectTransport(server_origin), debug, server_origin,
                            retain=retain)
    return client, server
