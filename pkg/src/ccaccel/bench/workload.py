"""Workload description and deterministic request-stream generation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..simcore import RngStream

APPS = ("kvs", "tx", "dlrm", "pingpong")
GET, PUT, UPDATE = 1, 2, 3
KVS_OPS = ("get", "put", "update")  # codes 1, 2, 3


class WorkloadError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    app: str = "kvs"
    key_space: int = 100_000
    distribution: str = "uniform"  # uniform or zipfian
    theta: float = 0.9
    # kvs: {"get": f, "put": g, "update": 1-f-g}; tx: {"reads": r, "writes": w}; dlrm: {"sum": f, ...}
    op_mix: dict = field(default_factory=lambda: {"get": 1.0})
    request_count: int = 10_000
    batch_size: int = 1
    value_size: int = 40
    tables: int = 8
    query_len: tuple = (10, 80)

    def __post_init__(self) -> None:
        if self.app not in APPS:
            raise WorkloadError(f"unknown app {self.app!r}")
        if self.distribution not in ("uniform", "zipfian"):
            raise WorkloadError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "zipfian" and not self.theta > 0:
            raise WorkloadError("theta must be > 0")
        if self.request_count <= 0:
            raise WorkloadError("request_count must be > 0")
        if self.key_space <= 0 or self.batch_size <= 0:
            raise WorkloadError("key_space and batch_size must be > 0")
        if self.app in ("kvs", "dlrm"):
            if any(v < 0 for v in self.op_mix.values()) or abs(sum(self.op_mix.values()) - 1.0) > 1e-9:
                raise WorkloadError(f"op_mix fractions must be >= 0 and sum to 1, got {self.op_mix}")
        if self.app == "kvs" and set(self.op_mix) - set(KVS_OPS):
            raise WorkloadError("kvs op_mix keys are get/put/update")
        if self.app == "dlrm" and set(self.op_mix) - {"sum", "max", "min", "inner_product"}:
            raise WorkloadError("dlrm op_mix keys are sum/max/min/inner_product")
        if self.app == "tx":
            if set(self.op_mix) != {"reads", "writes"} or min(self.op_mix.values()) < 0:
                raise WorkloadError("tx op_mix needs non-negative 'reads' and 'writes' counts")
        self.query_len = tuple(self.query_len)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["query_len"] = list(self.query_len)
        return d


# Zipf sampling by rejection-inversion (Hoermann and Derflinger).

def _log1p_over(x: np.ndarray) -> np.ndarray:
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2.0 + x * x / 3.0, np.log1p(xs) / xs)


def _expm1_over(x: np.ndarray) -> np.ndarray:
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0 + x * x / 6.0, np.expm1(xs) / xs)


class ZipfSampler:
    """Draws ranks in [1, n] with P(k) proportional to k^-theta."""

    def __init__(self, n: int, theta: float):
        if n < 1 or theta <= 0:
            raise WorkloadError("zipf needs n >= 1 and theta > 0")
        self.n, self.theta = n, float(theta)
        self._hx1 = float(self._H(np.array(1.5))) - 1.0
        self._hn = float(self._H(np.array(n + 0.5)))
        self._s = 2.0 - float(self._Hinv(self._H(np.array(2.5)) - self._h(np.array(2.0))))

    def _h(self, x):
        return np.exp(-self.theta * np.log(x))

    def _H(self, x):
        lx = np.log(x)
        return _expm1_over((1.0 - self.theta) * lx) * lx

    def _Hinv(self, x):
        t = np.maximum(x * (1.0 - self.theta), -1.0 + 1e-300)
        return np.exp(_log1p_over(t) * x)

    def sample(self, rng: RngStream, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        todo = np.arange(count)
        while len(todo):
            u = self._hn + rng.uniforms(len(todo)) * (self._hx1 - self._hn)
            x = self._Hinv(u)
            k = np.clip(np.floor(x + 0.5), 1, self.n)
            ok = (k - x <= self._s) | (u >= self._H(k + 0.5) - self._h(k))
            out[todo[ok]] = k[ok].astype(np.int64)
            todo = todo[~ok]
        return out

    def pmf_top(self) -> float:
        """Exact probability of rank 1."""
        return 1.0 / float(np.sum(np.arange(1, self.n + 1, dtype=np.float64) ** -self.theta))


def draw_keys(spec: WorkloadSpec, rng: RngStream, count: int) -> np.ndarray:
    """Keys in [0, key_space)."""
    if spec.distribution == "uniform":
        return (rng.uniforms(count) * spec.key_space).astype(np.int64)
    return ZipfSampler(spec.key_space, spec.theta).sample(rng, count) - 1


@dataclass
class Workload:
    spec: WorkloadSpec
    seed: int
    ops: np.ndarray  # kvs: GET/PUT/UPDATE codes; dlrm: aggregate op codes
    keys: np.ndarray  # kvs: (n,); tx: (n, reads + writes)
    queries: list | None = None  # dlrm: per request, a list of per-table raw feature ids

    def __len__(self) -> int:
        return len(self.ops)


def gen_workload(spec: WorkloadSpec, seed: int) -> Workload:
    n = spec.request_count
    rng = RngStream(seed, f"workload.{spec.app}")
    if spec.app in ("kvs", "pingpong"):
        keys = draw_keys(spec, rng, n)
        mix = spec.op_mix if spec.app == "kvs" else {"get": 1.0}
        cum = np.cumsum([mix.get(k, 0.0) for k in KVS_OPS])
        ops = (np.searchsorted(cum, rng.uniforms(n), side="right") + 1).clip(GET, UPDATE).astype(np.int8)
        return Workload(spec, seed, ops, keys)
    if spec.app == "tx":
        r, w = int(spec.op_mix["reads"]), int(spec.op_mix["writes"])
        if r + w == 0:
            raise WorkloadError("a transaction touches at least one record")
        keys = np.empty((n, r + w), dtype=np.int64)
        for i in range(n):
            # distinct records within one transaction
            row: list[int] = []
            while len(row) < r + w:
                k = int(draw_keys(spec, rng, 1)[0])
                if k not in row:
                    row.append(k)
            keys[i] = row
        return Workload(spec, seed, np.ones(n, dtype=np.int8), keys)
    # dlrm
    from ..apps.dlrm import OPS
    names = sorted(spec.op_mix)
    cum = np.cumsum([spec.op_mix[k] for k in names])
    pick = np.searchsorted(cum, rng.uniforms(n), side="right").clip(0, len(names) - 1)
    ops = np.array([OPS[names[i]] for i in pick], dtype=np.int8)
    lo, hi = spec.query_len
    lens = lo + (rng.uniforms(n * spec.tables) * (hi - lo + 1)).astype(np.int64)
    ids = rng.batch(int(lens.sum())) >> np.uint64(32)
    queries, pos = [], 0
    for i in range(n):
        q = []
        for t in range(spec.tables):
            m = int(lens[i * spec.tables + t])
            q.append(ids[pos:pos + m].astype(np.int64).tolist())
            pos += m
        queries.append(q)
    return Workload(spec, seed, ops, np.zeros(n, dtype=np.int64), queries)
