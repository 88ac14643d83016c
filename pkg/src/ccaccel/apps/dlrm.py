"""Embedding reduction for recommendation inference.

A query names, per embedding table, a list of row indices and one
aggregation operator. Raw queries carry arbitrary feature ids and go through
a CPU preprocessing service first; model-ready queries carry row indices.
The APU fetches rows in iterations of at most 64 concurrent reads, folds them
into one accumulator per table in index order, then charges a fixed
fully-connected-layer latency.

Wire layout: ``opcode u8 | table_count u8 | per table (count u16, count x u32)
| aggregate_op u8``. The response is ``status u8`` followed by one float32
vector per table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Generator, Sequence

import numpy as np

from ..accel import ApuRequest, Compute, CpuCall, FsmEntry, MemGather
from ..memsim import MemKind, MemorySystem

RAW, READY = 1, 2
SUM, MAX, MIN, INNER_PRODUCT = 0, 1, 2, 3
OPS = {"sum": SUM, "max": MAX, "min": MIN, "inner_product": INNER_PRODUCT}
OK, OUT_OF_RANGE, MALFORMED = 0, 1, 2

_U16 = struct.Struct("<H")

_FOLD = {SUM: np.add, MAX: np.maximum, MIN: np.minimum, INNER_PRODUCT: np.multiply}


class DlrmError(Exception):
    pass


@dataclass
class Query:
    indices: list[list[int]]  # one index list per table
    op: int = SUM


def encode_request(q: Query, opcode: int = READY) -> bytes:
    if not 1 <= len(q.indices) <= 255:
        raise DlrmError("a query names 1..255 tables")
    out = bytearray([opcode, len(q.indices)])
    for idx in q.indices:
        if not 1 <= len(idx) <= 0xFFFF:
            raise DlrmError("each table needs 1..65535 indices")
        out += _U16.pack(len(idx)) + np.asarray(idx, dtype="<u4").tobytes()
    out.append(q.op)
    return bytes(out)


def decode_request(p: bytes) -> tuple[int, Query]:
    if len(p) < 3:
        raise DlrmError("short DLRM request")
    opcode, nt = p[0], p[1]
    if opcode not in (RAW, READY) or nt == 0:
        raise DlrmError(f"bad DLRM header ({opcode}, {nt})")
    pos = 2
    tables = []
    for _ in range(nt):
        if pos + 2 > len(p):
            raise DlrmError("truncated index count")
        (n,) = _U16.unpack_from(p, pos)
        pos += 2
        if n == 0 or pos + 4 * n > len(p):
            raise DlrmError("bad index list")
        tables.append(np.frombuffer(p, dtype="<u4", count=n, offset=pos).tolist())
        pos += 4 * n
    if pos != len(p) - 1 or p[pos] not in _FOLD:
        raise DlrmError("bad aggregate op")
    return opcode, Query(tables, p[pos])


def encode_response(status: int, vectors: Sequence[np.ndarray] = ()) -> bytes:
    return bytes([status]) + b"".join(np.asarray(v, dtype="<f4").tobytes() for v in vectors)


def decode_response(p: bytes, dim: int = 64) -> tuple[int, np.ndarray]:
    vec = np.frombuffer(p, dtype="<f4", offset=1)
    return p[0], vec.reshape(-1, dim) if len(vec) else vec


class EmbeddingTable:
    def __init__(self, mem: MemorySystem, rows: int, dim: int = 64, kind: MemKind = MemKind.DRAM,
                 attached: str = "host", name: str = "emb"):
        self.mem = mem
        self.rows = rows
        self.dim = dim
        self.row_bytes = 4 * dim
        self.region = mem.alloc_region(rows * self.row_bytes, kind, attached=attached, name=name)

    @property
    def base(self) -> int:
        return self.region.base

    def fill(self, values: np.ndarray) -> None:
        v = np.asarray(values, dtype="<f4")
        if v.shape != (self.rows, self.dim):
            raise DlrmError(f"expected shape {(self.rows, self.dim)}, got {v.shape}")
        self.mem.write(self.base, v.tobytes(), "cpu")

    def fill_random(self, rng: np.random.Generator) -> None:
        self.fill(rng.standard_normal((self.rows, self.dim), dtype=np.float32))

    def array(self) -> np.ndarray:
        return np.frombuffer(self.mem.read(self.base, self.region.length), dtype="<f4").reshape(self.rows, self.dim)


class DlrmModel:
    """The APU program plus its CPU preprocessing service."""

    name = "dlrm"

    def __init__(self, tables: Sequence[EmbeddingTable], fc_ns: int = 5000, fetch_limit: int = 64):
        if not tables:
            raise DlrmError("at least one embedding table")
        dims = {t.dim for t in tables}
        if len(dims) != 1:
            raise DlrmError("tables must share one embedding dimension")
        self.tables = list(tables)
        self.dim = dims.pop()
        self.fc_ns = fc_ns
        self.fetch_limit = fetch_limit
        self.queries = 0

    def preprocess(self, raw: bytes) -> bytes:
        """CPU side: map raw feature ids onto table rows."""
        _, q = decode_request(raw)
        if len(q.indices) != len(self.tables):
            raise DlrmError("query names a different number of tables")
        idx = [[i % t.rows for i in lst] for lst, t in zip(q.indices, self.tables)]
        return encode_request(Query(idx, q.op), READY)

    def services(self) -> dict:
        return {"preprocess": self.preprocess}

    def run(self, req: ApuRequest, entry: FsmEntry) -> Generator:
        try:
            opcode, q = decode_request(req.payload)
            if opcode == RAW:
                entry.state = "preprocess"
                opcode, q = decode_request((yield CpuCall("preprocess", req.payload)))
        except (DlrmError, struct.error, ValueError):
            return encode_response(MALFORMED)
        if len(q.indices) != len(self.tables):
            return encode_response(MALFORMED)
        for lst, t in zip(q.indices, self.tables):
            if max(lst) >= t.rows:
                return encode_response(OUT_OF_RANGE)
        entry.state = "reduce"
        out = yield from self.reduce(q)
        entry.state = "fc"
        yield Compute(self.fc_ns)
        self.queries += 1
        return encode_response(OK, out)

    def reduce(self, q: Query) -> Generator:
        """Fetch rows in index order, at most ``fetch_limit`` per iteration,
        folding each one into its table's accumulator."""
        rows = [(ti, i) for ti, lst in enumerate(q.indices) for i in lst]
        fold = _FOLD[q.op]
        acc: list[np.ndarray | None] = [None] * len(self.tables)
        rb = 4 * self.dim
        for s in range(0, len(rows), self.fetch_limit):
            chunk = rows[s:s + self.fetch_limit]
            got = yield MemGather([self.tables[ti].base + i * rb for ti, i in chunk], rb)
            vecs = np.ascontiguousarray(got).view("<f4")
            for (ti, _), v in zip(chunk, vecs):
                acc[ti] = v.copy() if acc[ti] is None else fold(acc[ti], v)
        return acc


def random_query(rng: np.random.Generator, rows: Sequence[int], op: int, lo: int = 10, hi: int = 80,
                 raw: bool = False) -> Query:
    """Per table, a uniform length in [lo, hi] of uniform indices (raw ids if ``raw``)."""
    idx = []
    for r in rows:
        n = int(rng.integers(lo, hi + 1))
        top = 1 << 32 if raw else r
        idx.append(rng.integers(0, top, size=n, dtype=np.uint64).tolist())
    return Query(idx, op)
