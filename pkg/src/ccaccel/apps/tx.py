"""Chain-replicated NVM transactions.

Each replica's inbound request ring lives in NVM and doubles as its redo
log. A ring slot's payload is ``opcode | TxLogEntry | read_count | reads``
where the entry is ``tuple_count`` followed by ``(len u32, offset u64,
data)`` tuples. A transaction at a replica:

1. enqueues on every touched record (ascending order, FIFO, all at
   dispatch, so waits never form a cycle) and waits for the grants;
2. reads and writes the records in NVM;
3. forwards the entry to its successor and waits for the ACK (not at the
   tail);
4. commits: the persisted log head advances over the contiguous run of
   committed entries and those slots are zeroed in order;
5. answers its predecessor (or the client).

Recovery replays, from the persisted head, the run of entries whose valid
byte is set. An entry is durable at a replica once its valid byte is.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Generator, Iterable

from ..accel import ApuRequest, Call, Compute, Future, FsmEntry, MemRead, MemWrite, Parallel, Wait
from ..memsim import AccessRequest, MemKind, MemorySystem, Op, Origin
from ..ringcomm import HEADER, ServerEndpoint

TXN, PURE_READ = 1, 2
COMMITTED, ABORTED = 0, 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_TUPLE_HDR = struct.Struct("<IQ")


class TxError(Exception):
    pass


class RecoveryError(TxError):
    pass


@dataclass
class Txn:
    reads: list[int] = field(default_factory=list)
    writes: list[tuple[int, bytes]] = field(default_factory=list)  # (offset, data)

    @property
    def pure_read(self) -> bool:
        return not self.writes


def encode_entry(writes: Iterable[tuple[int, bytes]]) -> bytes:
    writes = list(writes)
    if not 1 <= len(writes) <= 255:
        raise TxError("a log entry carries 1..255 tuples")
    out = bytearray([len(writes)])
    for off, data in writes:
        out += _TUPLE_HDR.pack(len(data), off) + data
    return bytes(out)


def parse_entry(buf: bytes, pos: int = 0) -> tuple[list[tuple[int, bytes]], int]:
    """Parse a TxLogEntry at ``pos``; returns (tuples, next position)."""
    if pos >= len(buf):
        raise TxError("missing tuple_count")
    n = buf[pos]
    if n == 0:
        raise TxError("malformed entry: tuple_count 0")
    pos += 1
    out = []
    for _ in range(n):
        if pos + _TUPLE_HDR.size > len(buf):
            raise TxError("truncated tuple header")
        ln, off = _TUPLE_HDR.unpack_from(buf, pos)
        pos += _TUPLE_HDR.size
        data = bytes(buf[pos:pos + ln])
        if len(data) != ln:
            raise TxError("truncated tuple data")
        out.append((off, data))
        pos += ln
    return out, pos


def encode_request(txn: Txn) -> bytes:
    if len(txn.reads) > 255:
        raise TxError("at most 255 reads")
    if txn.pure_read:
        head = bytes([PURE_READ, 0])
    else:
        head = bytes([TXN]) + encode_entry(txn.writes)
    return head + bytes([len(txn.reads)]) + b"".join(_U64.pack(o) for o in txn.reads)


def decode_request(p: bytes) -> tuple[int, Txn]:
    op = p[0]
    if op == PURE_READ:
        writes, pos = [], 2
    elif op == TXN:
        writes, pos = parse_entry(p, 1)
    else:
        raise TxError(f"bad TX opcode {op}")
    n = p[pos]
    reads = [_U64.unpack_from(p, pos + 1 + 8 * i)[0] for i in range(n)]
    if len(p) < pos + 1 + 8 * n:
        raise TxError("truncated read list")
    return op, Txn(reads, writes)


def encode_response(status: int, reads: Iterable[bytes] = ()) -> bytes:
    return bytes([status]) + b"".join(reads)


class LockTable:
    """Per-record FIFO queues; the head of a queue holds the record."""

    def __init__(self) -> None:
        self.queues: dict[int, deque] = {}
        self.grant_log: dict[int, list[int]] = {}

    def enqueue_all(self, txn_id: int, keys: list[int]) -> list[Future]:
        futs = []
        for k in sorted(keys):
            q = self.queues.setdefault(k, deque())
            f = Future()
            q.append((txn_id, f))
            if len(q) == 1:
                f.resolve(None)
            futs.append(f)
        return futs

    def release_all(self, txn_id: int, keys: list[int]) -> None:
        for k in sorted(keys):
            q = self.queues[k]
            tid, _ = q.popleft()
            if tid != txn_id:
                raise TxError(f"record {k} released by {txn_id} but held by {tid}")
            self.grant_log.setdefault(k, []).append(txn_id)
            if q:
                q[0][1].resolve(None)
            else:
                del self.queues[k]


@dataclass
class TxConfig:
    record_bytes: int = 64
    n_records: int = 4096
    log_capacity: int = 256
    slot_size: int = 512


class TxReplica:
    """One chain member: NVM data, NVM log ring metadata and the APU program."""

    name = "tx"

    def __init__(self, mem: MemorySystem, cfg: TxConfig | None = None, successor: str | None = None,
                 name: str = "tx"):
        self.mem = mem
        self.cfg = cfg or TxConfig()
        self.successor = successor
        self.name = name
        c = self.cfg
        self.data = mem.alloc_region(c.n_records * c.record_bytes, MemKind.NVM, name=f"{name}.data")
        self.meta = mem.alloc_region(4096, MemKind.NVM, name=f"{name}.meta")
        self.head_addr = self.meta.base
        self.locks = LockTable()
        self.endpoint: ServerEndpoint | None = None
        self._committed: set[int] = set()
        self.commit_order: list[int] = []
        self.dispatch_order: list[int] = []

    def attach(self, endpoint: ServerEndpoint) -> None:
        if not endpoint.retain:
            raise TxError("the log ring must be consumed in retain mode")
        self.endpoint = endpoint

    def keys_of(self, txn: Txn) -> list[int]:
        rb = self.cfg.record_bytes
        ks = set()
        for off in txn.reads:
            ks.add(off // rb)
        for off, data in txn.writes:
            ks.update(range(off // rb, (off + max(len(data), 1) - 1) // rb + 1))
        return sorted(ks)

    def check(self, txn: Txn) -> None:
        size = self.data.length
        for off in txn.reads:
            if off + self.cfg.record_bytes > size:
                raise TxError(f"read offset {off} out of range")
        for off, data in txn.writes:
            if off + len(data) > size:
                raise TxError(f"write offset {off} out of range")

    # APU program

    def on_dispatch(self, req: ApuRequest, entry: FsmEntry) -> None:
        """Parse and enqueue on the records at dispatch, i.e. in log order."""
        try:
            op, txn = decode_request(req.payload)
            self.check(txn)
        except (TxError, IndexError, struct.error):
            entry.scratch["bad"] = True
            return
        keys = self.keys_of(txn)
        self.dispatch_order.append(req.seq)
        entry.scratch.update(txn=txn, keys=keys, futs=self.locks.enqueue_all(req.seq, keys))

    def run(self, req: ApuRequest, entry: FsmEntry) -> Generator:
        seq = req.seq
        if "txn" not in entry.scratch and "bad" not in entry.scratch:
            self.on_dispatch(req, entry)
        if entry.scratch.get("bad"):
            # a malformed entry is still retired in log order so the ring keeps moving
            yield from self._commit(seq)
            return encode_response(ABORTED)
        txn, keys = entry.scratch["txn"], entry.scratch["keys"]
        entry.state = "lock"
        for f in entry.scratch["futs"]:
            yield Wait(f)
        base, rb = self.data.base, self.cfg.record_bytes
        entry.state = "execute"
        reads = (yield Parallel([MemRead(base + off, rb) for off in txn.reads])) if txn.reads else []
        if txn.writes:
            yield Parallel([MemWrite(base + off, data) for off, data in txn.writes])
        if self.successor is not None and txn.writes:
            entry.state = "replicate"
            ack = yield Call(self.successor, req.payload)
            if not ack or ack[0] != COMMITTED:
                raise TxError(f"successor rejected txn {seq}")
        entry.state = "commit"
        self.locks.release_all(seq, keys)
        self.commit_order.append(seq)
        yield from self._commit(seq)
        return encode_response(COMMITTED, reads)

    def _commit(self, seq: int) -> Generator:
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
        # head first, then zero the slots in order
        m = self.mem
        lat = m.access(AccessRequest(self.head_addr, 8, Op.WRITE, Origin.ACCEL))
        m.write(self.head_addr, _U64.pack(run[-1] + 1), "accel")
        for s in run:
            slot = ep.rx.slot_addr(s)
            lat += m.access(AccessRequest(slot, HEADER + ep._retained[s], Op.WRITE, Origin.ACCEL))
            ep.release(s)
        yield Compute(lat)

    # recovery

    def nvm_regions(self, log_base: int, log_bytes: int) -> list[tuple[int, int]]:
        return [(self.data.base, self.data.length), (self.meta.base, self.meta.length), (log_base, log_bytes)]


def recover(log: bytes | bytearray | memoryview, capacity: int, slot_size: int, head: int,
            data: bytearray, data_base_offset: int = 0) -> list[int]:
    """Replay committed log entries into ``data`` in place.

    ``log`` is the raw ring image and ``head`` the persisted count of retired
    entries. Returns the sequence numbers replayed."""
    replayed = []
    seq = head
    for _ in range(capacity):
        off = (seq % capacity) * slot_size
        if log[off + slot_size - 1] == 0:
            break  # empty or torn: nothing durable from here on
        (n,) = _U32.unpack_from(log, off)
        if n > slot_size - HEADER - 1:
            raise RecoveryError(f"log slot {seq % capacity}: corrupt length {n}")
        payload = bytes(log[off + HEADER:off + HEADER + n])
        try:
            op, txn = decode_request(payload)
        except (TxError, IndexError, struct.error) as exc:
            raise RecoveryError(f"log entry {seq} (slot {seq % capacity}) is corrupt: {exc}") from exc
        for o, d in txn.writes:
            o -= data_base_offset
            if o < 0 or o + len(d) > len(data):
                raise RecoveryError(f"log entry {seq}: write outside the data region")
            data[o:o + len(d)] = d
        replayed.append(seq)
        seq += 1
    return replayed


def recover_replica(mem: MemorySystem, replica: TxReplica) -> list[int]:
    """Recover a replica from the bytes currently in its NVM regions."""
    ep = replica.endpoint
    ring = ep.rx
    log = mem.read(ring.base_addr, ring.nbytes)
    (head,) = _U64.unpack(mem.read(replica.head_addr, 8))
    data = bytearray(mem.read(replica.data.base, replica.data.length))
    seqs = recover(log, ring.capacity, ring.slot_size, head, data)
    mem.write(replica.data.base, bytes(data), "cpu")
    return seqs


class SequentialOracle:
    """Reference store: runs transactions one at a time in a given order."""

    def __init__(self, size: int, record_bytes: int = 64, initial: bytes | None = None):
        self.record_bytes = record_bytes
        self.data = bytearray(initial if initial is not None else bytes(size))

    def apply(self, txn: Txn) -> list[bytes]:
        rb = self.record_bytes
        reads = [bytes(self.data[o:o + rb]) for o in txn.reads]
        for off, d in txn.writes:
            self.data[off:off + len(d)] = d
        return reads
