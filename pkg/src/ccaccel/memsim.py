"""Timed model of a server memory hierarchy.

One ``MemorySystem`` per simulated machine. It owns the registered regions
(and their bytes), a set-associative LLC with a DMA-eligible io-way slice,
token-bucket links (cc link, PCIe, media channels) and the traffic counters.

DMA destination rule: a DMA write goes to the LLC when DDIO is globally on or
the write carries a TPH hint (by default inherited from the region);
otherwise it goes straight to the medium. DMA never allocates outside the
io ways. Dirty NVM lines are written back in whole media units, so a lone
dirty line costs ``nvm_write_granularity_bytes`` of media writes.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable

import numpy as np

from .simcore import CounterSet, Engine


class MemKind(str, enum.Enum):
    DRAM = "DRAM"
    NVM = "NVM"


class Origin(str, enum.Enum):
    CPU = "cpu"
    ACCEL = "accel"
    DMA = "dma"


class Op(str, enum.Enum):
    READ = "read"
    WRITE = "write"


class MemoryError_(Exception):
    """Base class for memory-model errors."""


class RegionOverlap(MemoryError_):
    pass


class InvalidRegion(MemoryError_):
    pass


class UnmappedAddress(MemoryError_):
    pass


class LineNotDirty(MemoryError_):
    pass


@dataclass
class LatencyConfig:
    cacheline_bytes: int = 64
    nvm_write_granularity_bytes: int = 256
    dram_access_ns: int = 90
    nvm_read_ns: int = 300
    nvm_write_ns: int = 100  # per media unit
    llc_access_ns: int = 20
    cc_link_oneway_ns: int = 50
    pcie_oneway_ns: int = 1000
    accel_mem_access_ns: int = 130
    cc_link_bw_bytes_per_ns: float = 20.8
    pcie_bw_bytes_per_ns: float = 16.0
    dram_bw_bytes_per_ns: float = 120.0
    nvm_bw_bytes_per_ns: float = 40.0
    accel_mem_bw_bytes_per_ns: float = 425.0
    link_burst_bytes: int = 4096
    llc_capacity_bytes: int = 28_835_840  # 27.5 MiB
    llc_ways: int = 20
    io_way_fraction: float = 0.1

    def __post_init__(self) -> None:
        g, c = self.nvm_write_granularity_bytes, self.cacheline_bytes
        if c <= 0 or g <= 0 or g % c:
            raise ValueError("nvm_write_granularity_bytes must be a positive multiple of cacheline_bytes")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if not 0 < self.io_way_fraction < 1:
            raise ValueError("io_way_fraction must be in (0, 1)")

    @property
    def io_ways(self) -> int:
        return max(1, int(round(self.llc_ways * self.io_way_fraction)))

    @property
    def llc_sets(self) -> int:
        return self.llc_capacity_bytes // (self.cacheline_bytes * self.llc_ways)

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown memory config keys: {sorted(unknown)}")
        return cls(**d)


class TokenBucket:
    """Rate limiter in virtual time: a burst of ``burst`` bytes passes free,
    sustained traffic is held to ``rate`` bytes/ns (GCRA formulation)."""

    def __init__(self, rate: float, burst: int):
        self.rate = float(rate)
        self.tau = burst / self.rate if rate > 0 else 0.0
        self.tat = 0.0

    def reserve(self, now: int, nbytes: int) -> int:
        if self.rate <= 0 or nbytes <= 0:
            return 0
        tat = max(self.tat, float(now)) + nbytes / self.rate
        self.tat = tat
        d = tat - self.tau - now
        return math.ceil(d - 1e-9) if d > 0 else 0

    def reserve_many(self, now: int, nbytes: int, count: int) -> np.ndarray:
        """Delays for ``count`` back-to-back reservations of ``nbytes`` each."""
        if self.rate <= 0 or count <= 0:
            return np.zeros(count, dtype=np.int64)
        step = nbytes / self.rate
        start = max(self.tat, float(now))
        tats = start + step * np.arange(1, count + 1, dtype=np.float64)
        self.tat = float(tats[-1])
        d = tats - self.tau - now
        return np.where(d > 0, np.ceil(d - 1e-9), 0).astype(np.int64)


class Storage:
    """Region bytes: dense below a threshold, 4 KiB pages otherwise."""

    DENSE_LIMIT = 64 * 1024 * 1024
    PAGE = 4096

    def __init__(self, length: int):
        self.length = length
        self.dense = bytearray(length) if length <= self.DENSE_LIMIT else None
        self.pages: dict[int, bytearray] = {}

    def read(self, off: int, n: int) -> bytes:
        if self.dense is not None:
            return bytes(self.dense[off:off + n])
        out = bytearray(n)
        pos = 0
        while pos < n:
            p, o = divmod(off + pos, self.PAGE)
            take = min(n - pos, self.PAGE - o)
            page = self.pages.get(p)
            if page is not None:
                out[pos:pos + take] = page[o:o + take]
            pos += take
        return bytes(out)

    def write(self, off: int, data: bytes) -> None:
        n = len(data)
        if self.dense is not None:
            self.dense[off:off + n] = data
            return
        pos = 0
        mv = memoryview(data)
        while pos < n:
            p, o = divmod(off + pos, self.PAGE)
            take = min(n - pos, self.PAGE - o)
            page = self.pages.get(p)
            if page is None:
                page = self.pages[p] = bytearray(self.PAGE)
            page[o:o + take] = mv[pos:pos + take]
            pos += take


@dataclass
class MemRegion:
    id: int
    base: int
    length: int
    kind: MemKind
    tph_on_write: bool = False
    attached: str = "host"  # "host" or "accel" (accelerator-local memory)
    name: str = ""
    storage: Storage | None = field(default=None, repr=False)

    @property
    def end(self) -> int:
        return self.base + self.length

    def contains(self, addr: int, size: int = 1) -> bool:
        return self.base <= addr and addr + size <= self.end


@dataclass
class AccessRequest:
    addr: int
    size: int
    op: Op
    origin: Origin
    tph: bool | None = None  # None: inherit the region's tph_on_write

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("access size must be > 0")
        self.op = Op(self.op)
        self.origin = Origin(self.origin)


CORE_COUNTERS = (
    "mem_read_bytes",
    "mem_write_bytes",
    "llc_write_bytes",
    "nvm_media_write_bytes",
    "cc_link_bytes",
    "pcie_bytes",
)

WriteListener = Callable[[int, bytes, str], None]


class Llc:
    """Set-associative last-level cache, tags are full line numbers."""

    def __init__(self, cfg: LatencyConfig, rng):
        self.sets = cfg.llc_sets
        self.ways = cfg.llc_ways
        self.io_ways = cfg.io_ways
        if self.sets <= 0 or self.io_ways >= self.ways:
            raise ValueError("LLC geometry leaves no io or core ways")
        self.tags = np.full((self.sets, self.ways), -1, dtype=np.int64)
        self.dirty = np.zeros((self.sets, self.ways), dtype=bool)
        self.rng = rng

    def find(self, line: int) -> tuple[int, int]:
        s = line % self.sets
        row = self.tags[s]
        hit = np.flatnonzero(row == line)
        return s, (int(hit[0]) if hit.size else -1)

    def find_many(self, lines: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized lookup. ``lines`` must map to distinct sets."""
        s = lines % self.sets
        m = self.tags[s] == lines[:, None]
        way = np.where(m.any(axis=1), m.argmax(axis=1), -1)
        return s, way

    def victim_way(self, s: int, io: bool) -> int:
        lo, hi = (0, self.io_ways) if io else (self.io_ways, self.ways)
        row = self.tags[s, lo:hi]
        empty = np.flatnonzero(row < 0)
        if empty.size:
            return lo + int(empty[0])
        return lo + self.rng.below(hi - lo)

    def occupancy_lines(self) -> int:
        return int((self.tags >= 0).sum())


class MemorySystem:
    def __init__(self, engine: Engine, cfg: LatencyConfig | None = None, name: str = "host",
                 ddio_enabled: bool = False):
        self.engine = engine
        self.cfg = cfg or LatencyConfig()
        self.name = name
        self.ddio_enabled = ddio_enabled
        self.counters = CounterSet()
        self.regions: list[MemRegion] = []
        self._bases: list[int] = []
        self._next_free = 0x1000_0000
        self.llc = Llc(self.cfg, engine.register_stream(f"{name}.llc.victim"))
        c = self.cfg
        burst = c.link_burst_bytes
        self.cc_link = TokenBucket(c.cc_link_bw_bytes_per_ns, burst)
        self.pcie = TokenBucket(c.pcie_bw_bytes_per_ns, burst)
        self.dram_chan = TokenBucket(c.dram_bw_bytes_per_ns, burst)
        self.nvm_chan = TokenBucket(c.nvm_bw_bytes_per_ns, burst)
        self.accel_chan = TokenBucket(c.accel_mem_bw_bytes_per_ns, burst)
        self._listeners: list[WriteListener] = []
        self.access_count = 0
        for k in CORE_COUNTERS:
            self.counters.add(k, 0)

    # regions

    def register_region(self, base: int, length: int, kind: MemKind | str = MemKind.DRAM,
                        tph_on_write: bool = False, attached: str = "host", name: str = "") -> int:
        kind = MemKind(kind)
        if length <= 0:
            raise InvalidRegion("region length must be > 0")
        if tph_on_write and kind is MemKind.NVM:
            raise InvalidRegion("TPH must not target NVM")
        if attached not in ("host", "accel"):
            raise InvalidRegion(f"attached must be 'host' or 'accel', got {attached!r}")
        for r in self.regions:
            if base < r.end and r.base < base + length:
                raise RegionOverlap(
                    f"[{base:#x}, {base + length:#x}) overlaps region {r.id} [{r.base:#x}, {r.end:#x})")
        rid = len(self.regions)
        reg = MemRegion(rid, base, length, kind, tph_on_write, attached, name, Storage(length))
        i = bisect.bisect(self._bases, base)
        self._bases.insert(i, base)
        self.regions.append(reg)
        self._sorted = sorted(self.regions, key=lambda r: r.base)
        self._next_free = max(self._next_free, _align_up(base + length, 4096))
        return rid

    def alloc_region(self, length: int, kind: MemKind | str = MemKind.DRAM, tph_on_write: bool = False,
                     attached: str = "host", name: str = "", align: int = 4096) -> MemRegion:
        base = _align_up(self._next_free, max(align, 4096))
        rid = self.register_region(base, length, kind, tph_on_write, attached, name)
        return self.regions[rid]

    def region_of(self, addr: int, size: int = 1) -> MemRegion:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0:
            r = self._sorted[i]
            if r.contains(addr, size):
                return r
        raise UnmappedAddress(f"[{addr:#x}, +{size}) is not inside one registered region on {self.name}")

    # data plane (no timing)

    def add_write_listener(self, fn: WriteListener) -> None:
        self._listeners.append(fn)

    def remove_write_listener(self, fn: WriteListener) -> None:
        self._listeners.remove(fn)

    def read(self, addr: int, n: int) -> bytes:
        r = self.region_of(addr, n)
        return r.storage.read(addr - r.base, n)

    def write(self, addr: int, data: bytes, origin: str = "cpu") -> None:
        r = self.region_of(addr, len(data))
        r.storage.write(addr - r.base, data)
        for fn in self._listeners:
            fn(addr, data, origin)

    def _groups(self, a: np.ndarray, size: int):
        """Split addresses by region: yields ``(region, positions)``."""
        if len(a) == 0:
            return
        idx = np.searchsorted(np.asarray(self._bases, dtype=np.int64), a, side="right") - 1
        for i in np.unique(idx):
            pos = np.nonzero(idx == i)[0]
            r = self._sorted[i] if i >= 0 else None
            if r is None or not (r.contains(int(a[pos].min()), 1) and r.contains(int(a[pos].max()), size)):
                raise UnmappedAddress(f"batched access at {int(a[pos][0]):#x} is outside the registered regions")
            yield r, pos

    def gather(self, addrs, size: int) -> np.ndarray:
        """Bytes of ``size`` at each address as an ``(n, size)`` uint8 array."""
        a = np.asarray(addrs, dtype=np.int64)
        out = np.empty((len(a), size), dtype=np.uint8)
        for r, pos in self._groups(a, size):
            off = a[pos] - r.base
            if r.storage.dense is None:
                out[pos] = [np.frombuffer(r.storage.read(int(x), size), dtype=np.uint8) for x in off]
            else:
                out[pos] = np.frombuffer(r.storage.dense, dtype=np.uint8)[off[:, None] + np.arange(size)]
        return out

    # timing and accounting

    def set_ddio(self, enabled: bool) -> None:
        self.ddio_enabled = bool(enabled)

    def read_counters(self) -> dict[str, int]:
        snap = self.counters.snapshot()
        for k in CORE_COUNTERS:
            snap.setdefault(k, 0)
        return snap

    def _lines(self, addr: int, size: int) -> range:
        cl = self.cfg.cacheline_bytes
        return range(addr // cl, (addr + size - 1) // cl + 1)

    def _units(self, addr: int, size: int) -> int:
        g = self.cfg.nvm_write_granularity_bytes
        return (addr + size - 1) // g - addr // g + 1

    def _chan(self, r: MemRegion) -> TokenBucket:
        if r.attached == "accel":
            return self.accel_chan
        return self.nvm_chan if r.kind is MemKind.NVM else self.dram_chan

    def _medium_latency(self, r: MemRegion, op: Op, addr: int, size: int) -> int:
        c = self.cfg
        if r.attached == "accel":
            base = c.accel_mem_access_ns
        elif r.kind is MemKind.DRAM:
            base = c.dram_access_ns
        elif op is Op.READ:
            base = c.nvm_read_ns
        else:
            base = c.nvm_write_ns * self._units(addr, size)
        return base + self._chan(r).reserve(self.engine.now, size)

    def _media_write(self, r: MemRegion, addr: int, size: int) -> None:
        """Account a write that reaches the medium directly (no LLC)."""
        ctr = self.counters
        ctr.add("mem_write_bytes", size)
        if r.kind is MemKind.NVM and r.attached == "host":
            ctr.add("nvm_logical_write_bytes", size)
            ctr.add("nvm_media_write_bytes", self._units(addr, size) * self.cfg.nvm_write_granularity_bytes)
        else:
            ctr.add("dram_media_write_bytes", size)

    def access(self, req: AccessRequest) -> int:
        """Charge one timed access and return its completion latency in ns."""
        r = self.region_of(req.addr, req.size)
        self.access_count += 1
        if req.origin is Origin.DMA:
            return self._dma(r, req)
        if req.origin is Origin.ACCEL:
            return self._accel(r, req)
        return self._cpu(r, req)

    def _dma(self, r: MemRegion, req: AccessRequest) -> int:
        c, ctr = self.cfg, self.counters
        now = self.engine.now
        lat = c.pcie_oneway_ns + self.pcie.reserve(now, req.size)
        ctr.add("pcie_bytes", req.size)
        if req.op is Op.READ:
            hit = self._llc_present(req.addr, req.size)
            if hit:
                ctr.add("llc_read_hits")
                return lat + c.llc_access_ns
            ctr.add("mem_read_bytes", req.size)
            return lat + self._medium_latency(r, Op.READ, req.addr, req.size)
        tph = r.tph_on_write if req.tph is None else bool(req.tph)
        if tph and r.kind is MemKind.NVM:
            raise InvalidRegion("TPH must not target NVM")
        if r.attached == "host" and (self.ddio_enabled or tph):
            ctr.add("llc_write_bytes", req.size)
            if r.kind is MemKind.NVM:
                ctr.add("dma_nvm_llc_writes")
            self._llc_dma_insert(req.addr, req.size)
            return lat + c.llc_access_ns
        if r.attached == "accel":
            # device write forwarded over the cc link into accelerator memory
            ctr.add("cc_link_bytes", req.size)
            ctr.add("accel_local_write_bytes", req.size)
            lat += c.cc_link_oneway_ns + self.cc_link.reserve(now, req.size)
            return lat + self._medium_latency(r, Op.WRITE, req.addr, req.size)
        if r.kind is MemKind.NVM:
            ctr.add("dma_nvm_mem_writes")
        self._invalidate(req.addr, req.size, writeback=False)
        self._media_write(r, req.addr, req.size)
        return lat + self._medium_latency(r, Op.WRITE, req.addr, req.size)

    def _accel(self, r: MemRegion, req: AccessRequest) -> int:
        c, ctr = self.cfg, self.counters
        now = self.engine.now
        if r.attached == "accel":
            if req.op is Op.WRITE:
                ctr.add("accel_local_write_bytes", req.size)
            else:
                ctr.add("accel_local_read_bytes", req.size)
            return self._medium_latency(r, req.op, req.addr, req.size)
        lat = 2 * c.cc_link_oneway_ns + self.cc_link.reserve(now, req.size)
        ctr.add("cc_link_bytes", req.size)
        if req.op is Op.READ:
            if self._llc_present(req.addr, req.size):
                ctr.add("llc_read_hits")
                return lat + c.llc_access_ns
            ctr.add("llc_read_misses")
            ctr.add("mem_read_bytes", req.size)
            return lat + self._medium_latency(r, Op.READ, req.addr, req.size)
        # coherent write from the accelerator: drop cached copies, write through
        self._invalidate(req.addr, req.size, writeback=False)
        self._media_write(r, req.addr, req.size)
        return lat + self._medium_latency(r, Op.WRITE, req.addr, req.size)

    def _cpu(self, r: MemRegion, req: AccessRequest) -> int:
        c, ctr = self.cfg, self.counters
        if r.attached == "accel":
            ctr.add("cc_link_bytes", req.size)
            lat = 2 * c.cc_link_oneway_ns + self.cc_link.reserve(self.engine.now, req.size)
            return lat + self._medium_latency(r, req.op, req.addr, req.size)
        llc = self.llc
        missed = 0
        lat = c.llc_access_ns
        write = req.op is Op.WRITE
        for line in self._lines(req.addr, req.size):
            s, w = llc.find(line)
            if w < 0:
                missed += 1
                w = llc.victim_way(s, io=False)
                self._drop_way(s, w)
                llc.tags[s, w] = line
                llc.dirty[s, w] = write
            elif write:
                llc.dirty[s, w] = True
        if missed:
            ctr.add("llc_read_misses", missed)
            nbytes = missed * c.cacheline_bytes
            ctr.add("mem_read_bytes", nbytes)
            lat += self._medium_latency(r, Op.READ, req.addr, nbytes)
        else:
            ctr.add("llc_read_hits")
        return lat

    # LLC helpers

    def _llc_present(self, addr: int, size: int) -> bool:
        llc = self.llc
        return all(llc.find(line)[1] >= 0 for line in self._lines(addr, size))

    def _drop_way(self, s: int, w: int) -> None:
        llc = self.llc
        if llc.tags[s, w] >= 0 and llc.dirty[s, w]:
            self._writeback(int(llc.tags[s, w]))
        llc.tags[s, w] = -1
        llc.dirty[s, w] = False

    def _invalidate(self, addr: int, size: int, writeback: bool) -> None:
        lines = np.arange(addr // self.cfg.cacheline_bytes,
                          (addr + size - 1) // self.cfg.cacheline_bytes + 1, dtype=np.int64)
        llc = self.llc
        for i in range(0, len(lines), llc.sets):
            chunk = lines[i:i + llc.sets]
            s, w = llc.find_many(chunk)
            hit = w >= 0
            if not hit.any():
                continue
            s, w = s[hit], w[hit]
            if writeback:
                for si, wi in zip(s[llc.dirty[s, w]], w[llc.dirty[s, w]]):
                    self._writeback(int(llc.tags[si, wi]))
            llc.tags[s, w] = -1
            llc.dirty[s, w] = False

    def _llc_dma_insert(self, addr: int, size: int) -> None:
        cl = self.cfg.cacheline_bytes
        first, last = addr // cl, (addr + size - 1) // cl
        llc = self.llc
        if first == last:
            s, w = llc.find(first)
            if w < 0:
                w = llc.victim_way(s, io=True)
                self._drop_way(s, w)
                llc.tags[s, w] = first
            llc.dirty[s, w] = True
            return
        lines = np.arange(first, last + 1, dtype=np.int64)
        for i in range(0, len(lines), llc.sets):
            self._dma_chunk(lines[i:i + llc.sets])

    def _dma_chunk(self, lines: np.ndarray) -> None:
        llc = self.llc
        s, w = llc.find_many(lines)
        miss = w < 0
        if miss.any():
            ms = s[miss]
            sub = llc.tags[ms, :llc.io_ways]
            empty = sub < 0
            has_empty = empty.any(axis=1)
            draws = llc.rng.batch(int(miss.sum()))
            rnd = (((draws >> np.uint64(32)) * np.uint64(llc.io_ways)) >> np.uint64(32)).astype(np.int64)
            vw = np.where(has_empty, empty.argmax(axis=1), rnd)
            vt = llc.tags[ms, vw]
            vd = llc.dirty[ms, vw] & (vt >= 0)
            for line in vt[vd]:
                self._writeback(int(line))
            llc.tags[ms, vw] = lines[miss]
            w = w.copy()
            w[miss] = vw
        llc.dirty[s, w] = True

    def _writeback(self, line: int) -> int:
        """Write a dirty line (and dirty neighbours in its NVM unit) to media.
        The caller removes or cleans ``line`` itself; neighbours are cleaned."""
        c, ctr, llc = self.cfg, self.counters, self.llc
        addr = line * c.cacheline_bytes
        r = self.region_of(addr, c.cacheline_bytes)
        ctr.add("llc_evictions_dirty")
        if r.kind is MemKind.DRAM or r.attached == "accel":
            ctr.add("mem_write_bytes", c.cacheline_bytes)
            ctr.add("dram_media_write_bytes", c.cacheline_bytes)
            return c.cacheline_bytes
        per_unit = c.nvm_write_granularity_bytes // c.cacheline_bytes
        first = line - line % per_unit
        dirty_lines = 1
        for other in range(first, first + per_unit):
            if other == line:
                continue
            s, w = llc.find(other)
            if w >= 0 and llc.dirty[s, w]:
                llc.dirty[s, w] = False
                dirty_lines += 1
        logical = dirty_lines * c.cacheline_bytes
        ctr.add("mem_write_bytes", logical)
        ctr.add("nvm_logical_write_bytes", logical)
        ctr.add("nvm_media_write_bytes", c.nvm_write_granularity_bytes)
        ctr.add("nvm_unit_writebacks")
        return c.nvm_write_granularity_bytes

    def evict(self, line_addr: int) -> int:
        """Evict one dirty line; returns the media bytes written."""
        cl = self.cfg.cacheline_bytes
        line = line_addr // cl
        s, w = self.llc.find(line)
        if w < 0 or not self.llc.dirty[s, w]:
            raise LineNotDirty(f"line {line_addr:#x} is not dirty in the LLC")
        before = self.counters["nvm_media_write_bytes"] + self.counters["dram_media_write_bytes"]
        self._writeback(line)
        self.llc.tags[s, w] = -1
        self.llc.dirty[s, w] = False
        return self.counters["nvm_media_write_bytes"] + self.counters["dram_media_write_bytes"] - before

    def dirty_lines(self) -> list[int]:
        llc = self.llc
        idx = np.argwhere(llc.dirty & (llc.tags >= 0))
        return sorted(int(llc.tags[s, w]) * self.cfg.cacheline_bytes for s, w in idx)

    def flush(self, addr: int, size: int) -> int:
        """Write back dirty lines in range (lines stay cached, now clean).
        Returns the latency of the flush."""
        r = self.region_of(addr, size)
        c, llc = self.cfg, self.llc
        units_written = 0
        for line in self._lines(addr, size):
            s, w = llc.find(line)
            if w >= 0 and llc.dirty[s, w]:
                self._writeback(line)
                llc.dirty[s, w] = False
                units_written += 1
        if not units_written:
            return 0
        self.counters.add("flushes")
        if r.kind is MemKind.NVM:
            return c.nvm_write_ns * units_written
        return c.dram_access_ns

    # batched accelerator reads (embedding gathers)

    def accel_read_batch(self, addrs: Iterable[int], size: int) -> np.ndarray:
        """Latencies for a burst of equal-size accelerator reads issued at ``now``.
        LLC state is consulted, not changed."""
        a = np.asarray(list(addrs) if not isinstance(addrs, np.ndarray) else addrs, dtype=np.int64)
        lat = np.zeros(len(a), dtype=np.int64)
        for r, pos in self._groups(a, size):
            lat[pos] = self._read_batch_region(r, a[pos], size)
        return lat

    def _read_batch_region(self, r: MemRegion, a: np.ndarray, size: int) -> np.ndarray:
        c, ctr = self.cfg, self.counters
        now = self.engine.now
        n = len(a)
        self.access_count += n
        if r.attached == "accel":
            ctr.add("accel_local_read_bytes", n * size)
            return c.accel_mem_access_ns + self.accel_chan.reserve_many(now, size, n)
        ctr.add("cc_link_bytes", n * size)
        link = self.cc_link.reserve_many(now, size, n)
        # a row hits only if all of its lines are cached
        per = (size + c.cacheline_bytes - 1) // c.cacheline_bytes
        hit = np.ones(n, dtype=bool)
        for k in range(per):
            lines = (a + k * c.cacheline_bytes) // c.cacheline_bytes
            s = lines % self.llc.sets
            hit &= (self.llc.tags[s] == lines[:, None]).any(axis=1)
        nmiss = int((~hit).sum())
        ctr.add("llc_read_misses", nmiss)
        ctr.add("llc_read_hits", n - nmiss)
        ctr.add("mem_read_bytes", nmiss * size)
        med = np.zeros(n, dtype=np.int64)
        if nmiss:
            med[~hit] = c.dram_access_ns + self._chan(r).reserve_many(now, size, nmiss)
        med[hit] = c.llc_access_ns
        return 2 * c.cc_link_oneway_ns + link + med


def _align_up(x: int, a: int) -> int:
    return (x + a - 1) // a * a
