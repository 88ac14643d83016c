"""Hash-table key-value store run on the APU.

Index: ``n_buckets`` buckets at a 128 B stride. A bucket holds eight 8-byte
entries ``tag << 48 | slab_offset`` (offset 0 means empty) followed by an
8-byte address of a chained bucket (0 = none). Pairs live in a slab pool as
``key_len u16 | value_len u16 | key | value`` rounded up to 64 B slots.

With the request slot read counted, a GET costs three memory accesses
(slot, bucket, pair) and a PUT four (slot, bucket, pair, entry or pair
rewrite) when no chaining is involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Generator

from ..accel import ApuRequest, Compute, CpuCall, FsmEntry, MemRead, MemWrite
from ..memsim import MemKind, MemorySystem

GET, PUT, UPDATE = 1, 2, 3
OK, NOT_FOUND, FULL = 0, 1, 2

BUCKET_STRIDE = 128
WAYS = 8
BUCKET_BYTES = WAYS * 8 + 8
SLOT = 64
PTR_MASK = (1 << 48) - 1
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_PAIR_HDR = struct.Struct("<HH")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class KvsError(Exception):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def key_bytes(k: int) -> bytes:
    return k.to_bytes(8, "little")


def encode_request(op: int, key: bytes, value: bytes | None = None) -> bytes:
    out = bytes([op]) + _U16.pack(len(key)) + key
    if op in (PUT, UPDATE):
        if value is None:
            raise KvsError("PUT/UPDATE needs a value")
        out += _U16.pack(len(value)) + value
    return out


def decode_request(p: bytes) -> tuple[int, bytes, bytes | None]:
    if len(p) < 3:
        raise KvsError("short KVS request")
    op = p[0]
    if op not in (GET, PUT, UPDATE):
        raise KvsError(f"bad KVS opcode {op}")
    (kl,) = _U16.unpack_from(p, 1)
    key = bytes(p[3:3 + kl])
    if len(key) != kl:
        raise KvsError("truncated key")
    value = None
    if op != GET:
        (vl,) = _U16.unpack_from(p, 3 + kl)
        value = bytes(p[5 + kl:5 + kl + vl])
        if len(value) != vl:
            raise KvsError("truncated value")
    return op, key, value


def encode_response(status: int, value: bytes = b"") -> bytes:
    return bytes([status]) + _U16.pack(len(value)) + value


def decode_response(p: bytes) -> tuple[int, bytes]:
    (vl,) = _U16.unpack_from(p, 1)
    return p[0], bytes(p[3:3 + vl])


class SlabPool:
    """APU-side allocator over a pre-defined pool of 64 B slots.
    Free lists per size class (in slots); offset 0 is never handed out."""

    def __init__(self, nbytes: int):
        self.nslots = nbytes // SLOT
        self.next = 1
        self.free: dict[int, list[int]] = {}
        self.used_slots = 0

    def alloc(self, size: int) -> int:
        n = -(-size // SLOT)
        fl = self.free.get(n)
        if fl:
            off = fl.pop()
        else:
            if self.next + n > self.nslots:
                raise KvsError("slab pool exhausted")
            off = self.next * SLOT
            self.next += n
        self.used_slots += n
        return off

    def release(self, off: int, size: int) -> None:
        n = -(-size // SLOT)
        self.free.setdefault(n, []).append(off)
        self.used_slots -= n


@dataclass
class KvsLayout:
    table_base: int
    n_buckets: int
    slab_base: int
    slab_bytes: int
    overflow_base: int
    overflow_bytes: int


class KvsStore:
    """Index and pool placement plus the APU application."""

    name = "kvs"

    def __init__(self, mem: MemorySystem, n_buckets: int, slab_bytes: int, overflow_buckets: int | None = None,
                 kind: MemKind = MemKind.DRAM, attached: str = "host"):
        if n_buckets & (n_buckets - 1) or n_buckets <= 0:
            raise KvsError("n_buckets must be a power of two")
        self.mem = mem
        self.bits = n_buckets.bit_length() - 1
        overflow_buckets = overflow_buckets or max(64, n_buckets // 8)
        t = mem.alloc_region(n_buckets * BUCKET_STRIDE, kind, attached=attached, name="kvs.table")
        s = mem.alloc_region(slab_bytes, kind, attached=attached, name="kvs.slab")
        o = mem.alloc_region(overflow_buckets * BUCKET_STRIDE, kind, attached=attached, name="kvs.overflow")
        self.layout = KvsLayout(t.base, n_buckets, s.base, slab_bytes, o.base, overflow_buckets * BUCKET_STRIDE)
        self.pool = SlabPool(slab_bytes)
        self._overflow_next = 0
        self.items = 0
        self.chained = 0

    # CPU-side service: chained bucket allocation
    def alloc_bucket_service(self, args: bytes) -> bytes:
        if self._overflow_next + BUCKET_STRIDE > self.layout.overflow_bytes:
            return _U64.pack(0)
        addr = self.layout.overflow_base + self._overflow_next
        self._overflow_next += BUCKET_STRIDE
        self.chained += 1
        return _U64.pack(addr)

    def services(self) -> dict:
        return {"alloc": self.alloc_bucket_service}

    def locate(self, key: bytes) -> tuple[int, int]:
        h = fnv1a64(key)
        b = h & (self.layout.n_buckets - 1)
        tag = (h >> self.bits) & 0xFFFF
        return self.layout.table_base + b * BUCKET_STRIDE, tag

    # the APU program

    def run(self, req: ApuRequest, entry: FsmEntry) -> Generator:
        try:
            op, key, value = decode_request(req.payload)
        except (KvsError, struct.error):
            return encode_response(FULL)
        entry.state = "hash"
        yield Compute(0)
        return (yield from self.program(op, key, value, entry))

    def program(self, op: int, key: bytes, value: bytes | None, entry: FsmEntry | None = None) -> Generator:
        L = self.layout
        baddr, tag = self.locate(key)
        first_free: int | None = None  # address of an empty entry slot
        while True:
            if entry is not None:
                entry.state = "bucket"
            raw = yield MemRead(baddr, BUCKET_BYTES)
            for w in range(WAYS):
                (e,) = _U64.unpack_from(raw, 8 * w)
                ptr = e & PTR_MASK
                if ptr == 0:
                    if first_free is None:
                        first_free = baddr + 8 * w
                    continue
                if e >> 48 != tag:
                    continue
                if entry is not None:
                    entry.state = "pair"
                # first slot of the pair carries the header and usually all of it
                head = yield MemRead(L.slab_base + ptr, SLOT)
                kl, vl = _PAIR_HDR.unpack_from(head, 0)
                size = 4 + kl + vl
                if size > SLOT:
                    head = head + (yield MemRead(L.slab_base + ptr + SLOT, size - SLOT))
                if head[4:4 + kl] != key:
                    continue
                stored = bytes(head[4 + kl:4 + kl + vl])
                if op == GET:
                    return encode_response(OK, stored)
                return (yield from self._overwrite(baddr + 8 * w, tag, ptr, kl, vl, key, value))
            (nxt,) = _U64.unpack_from(raw, 8 * WAYS)
            if nxt == 0:
                break
            baddr = nxt
        if op != PUT:
            return encode_response(NOT_FOUND)
        return (yield from self._insert(first_free, baddr, tag, key, value))

    def _pair_image(self, key: bytes, value: bytes) -> bytes:
        return _PAIR_HDR.pack(len(key), len(value)) + key + value

    def _insert(self, free_entry: int | None, last_bucket: int, tag: int, key: bytes, value: bytes) -> Generator:
        L = self.layout
        img = self._pair_image(key, value)
        try:
            off = self.pool.alloc(len(img))
        except KvsError:
            return encode_response(FULL)
        yield MemWrite(L.slab_base + off, img)
        ent = _U64.pack(tag << 48 | off)
        if free_entry is not None:
            yield MemWrite(free_entry, ent)
        else:
            reply = yield CpuCall("alloc", _U64.pack(BUCKET_STRIDE))
            (nb,) = _U64.unpack(reply[:8])
            if nb == 0:
                self.pool.release(off, len(img))
                return encode_response(FULL)
            yield MemWrite(nb, ent + bytes(BUCKET_BYTES - 8))
            yield MemWrite(last_bucket + 8 * WAYS, _U64.pack(nb))
        self.items += 1
        return encode_response(OK)

    def _overwrite(self, entry_addr: int, tag: int, ptr: int, kl: int, vl: int, key: bytes,
                   value: bytes) -> Generator:
        L = self.layout
        img = self._pair_image(key, value)
        old = 4 + kl + vl
        if -(-len(img) // SLOT) == -(-old // SLOT):
            yield MemWrite(L.slab_base + ptr, img)
            return encode_response(OK)
        try:
            off = self.pool.alloc(len(img))
        except KvsError:
            return encode_response(FULL)
        yield MemWrite(L.slab_base + off, img)
        yield MemWrite(entry_addr, _U64.pack(tag << 48 | off))
        self.pool.release(ptr, old)
        return encode_response(OK)


class SyncDriver:
    """Runs an APU program to completion without the event engine.

    ``timed`` charges every memory action to the memory model (so access
    counters move); otherwise only bytes change, which is how stores are
    preloaded."""

    def __init__(self, mem: MemorySystem, services: dict | None = None, timed: bool = True):
        self.mem = mem
        self.services = services or {}
        self.timed = timed
        self.accesses = 0

    def _do(self, a):
        from ..accel import MemGather, Parallel, Wait
        from ..memsim import AccessRequest, Op, Origin
        m = self.mem
        if isinstance(a, MemRead):
            self.accesses += 1
            if self.timed:
                m.access(AccessRequest(a.addr, a.size, Op.READ, Origin.ACCEL))
            return m.read(a.addr, a.size)
        if isinstance(a, MemWrite):
            self.accesses += 1
            if self.timed:
                m.access(AccessRequest(a.addr, len(a.data), Op.WRITE, Origin.ACCEL))
            m.write(a.addr, a.data, "accel")
            return None
        if isinstance(a, MemGather):
            self.accesses += len(a.addrs)
            if self.timed:
                m.accel_read_batch(a.addrs, a.size)
            return m.gather(a.addrs, a.size)
        if isinstance(a, Parallel):
            return [self._do(x) for x in a.actions]
        if isinstance(a, Compute):
            return None
        if isinstance(a, CpuCall):
            return self.services[a.service](a.args)
        if isinstance(a, Wait):
            if not a.future.done:
                raise RuntimeError("synchronous driver cannot block on an unresolved future")
            return a.future.value
        raise TypeError(f"unsupported action {a!r}")

    def run(self, gen: Generator):
        try:
            a = next(gen)
            while True:
                a = gen.send(self._do(a))
        except StopIteration as stop:
            return stop.value


def preload(store: KvsStore, pairs, timed: bool = False) -> None:
    drv = SyncDriver(store.mem, store.services(), timed=timed)
    for k, v in pairs:
        st, _ = decode_response(drv.run(store.program(PUT, k, v)))
        if st != OK:
            raise KvsError(f"preload failed with status {st}")
