"""Deterministic discrete-event engine.

Virtual time is an integer count of nanoseconds. Events are ordered by
``(fire_time, event_id)`` so execution order never depends on heap internals.
Randomness comes from named counter-based streams derived from the master
seed, so adding a stream never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

U64_MASK = (1 << 64) - 1


class SimulationError(RuntimeError):
    """A callback raised while the engine was running it."""

    def __init__(self, event_id: int, fire_time: int, cause: BaseException):
        super().__init__(
            f"event {event_id} at t={fire_time} ns failed: {type(cause).__name__}: {cause}"
        )
        self.event_id = event_id
        self.fire_time = fire_time
        self.cause = cause


class UnknownStream(KeyError):
    pass


class CounterSet:
    """Named non-decreasing 64-bit counters."""

    def __init__(self) -> None:
        self._c: dict[str, int] = {}

    def add(self, name: str, amount: int = 1) -> None:
        if amount < 0:
            raise ValueError(f"counter {name!r} cannot decrease (amount={amount})")
        self._c[name] = (self._c.get(name, 0) + int(amount)) & U64_MASK

    def get(self, name: str) -> int:
        return self._c.get(name, 0)

    def __getitem__(self, name: str) -> int:
        return self._c.get(name, 0)

    def __contains__(self, name: str) -> bool:
        return name in self._c

    def snapshot(self) -> dict[str, int]:
        return {k: self._c[k] for k in sorted(self._c)}


def stream_key(seed: int, name: str) -> int:
    h = hashlib.blake2b(f"{seed & U64_MASK}:{name}".encode(), digest_size=16).digest()
    return int.from_bytes(h, "little")


class RngStream:
    """One Philox stream keyed by ``(seed, name)``."""

    _BLOCK = 4096

    def __init__(self, seed: int, name: str):
        self.name = name
        key = stream_key(seed, name)
        self._bitgen = np.random.Philox(key=key)
        self.gen = np.random.Generator(self._bitgen)
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def draw(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self.gen.integers(0, U64_MASK, size=self._BLOCK, dtype=np.uint64, endpoint=True)
            self._pos = 0
        v = int(self._buf[self._pos])
        self._pos += 1
        return v

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits of one draw."""
        return (self.draw() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via multiply-shift."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.draw() * n) >> 64

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.below(hi - lo + 1)

    def batch(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit draws as an array, consistent with repeated ``draw``."""
        out = np.empty(n, dtype=np.uint64)
        i = 0
        while i < n:
            if self._pos >= len(self._buf):
                self._buf = self.gen.integers(0, U64_MASK, size=self._BLOCK, dtype=np.uint64, endpoint=True)
                self._pos = 0
            take = min(n - i, len(self._buf) - self._pos)
            out[i:i + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            i += take
        return out

    def uniforms(self, n: int) -> np.ndarray:
        return (self.batch(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(order=True)
class Event:
    fire_time: int
    id: int
    target: Callable[..., Any] = field(compare=False)
    payload: tuple = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)


class Engine:
    """Event queue, virtual clock, counters and RNG streams for one run."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & U64_MASK
        self.now = 0
        self.event_count = 0
        self.counters = CounterSet()
        self._queue: list[Event] = []
        self._next_id = 0
        self._streams: dict[str, RngStream] = {}
        self._running = False

    # scheduling

    def schedule(self, delay: int, target: Callable[..., Any], *payload: Any) -> int:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        return self._push(self.now + int(delay), target, payload)

    def at(self, time: int, target: Callable[..., Any], *payload: Any) -> int:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        return self._push(int(time), target, payload)

    def _push(self, t: int, target, payload) -> int:
        eid = self._next_id
        self._next_id += 1
        heapq.heappush(self._queue, Event(t, eid, target, payload))
        return eid

    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0].fire_time if self._queue else None

    def run_until(self, limit: int | None = None) -> dict[str, int]:
        """Run events with ``fire_time <= limit`` (or until the queue drains)."""
        q = self._queue
        self._running = True
        try:
            while q:
                ev = q[0]
                if limit is not None and ev.fire_time > limit:
                    break
                heapq.heappop(q)
                self.now = ev.fire_time
                self.event_count += 1
                try:
                    ev.target(*ev.payload)
                except SimulationError:
                    raise
                except Exception as exc:
                    raise SimulationError(ev.id, ev.fire_time, exc) from exc
        finally:
            self._running = False
        return self.counters.snapshot()

    # randomness

    def register_stream(self, name: str) -> RngStream:
        s = self._streams.get(name)
        if s is None:
            s = RngStream(self.seed, name)
            self._streams[name] = s
        return s

    def stream(self, name: str) -> RngStream:
        try:
            return self._streams[name]
        except KeyError:
            raise UnknownStream(f"RNG stream {name!r} is not registered") from None

    def rng_draw(self, name: str) -> int:
        return self.stream(name).draw()
