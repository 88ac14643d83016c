"""Run reports: exact latency histograms, percentiles and CSV/JSON export."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

FIXED_COLUMNS = ["scenario", "pipeline", "seed", "throughput_ops_s", "lat_mean_ns", "lat_p50_ns", "lat_p99_ns"]


def nearest_rank(sorted_values: list[int], q: float) -> int:
    """Nearest-rank percentile (``q`` in (0, 100]) of an ascending list."""
    if not sorted_values:
        return 0
    k = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[k - 1]


def histogram_percentile(hist: dict[int, int], q: float) -> int:
    total = sum(hist.values())
    if total == 0:
        return 0
    k = max(1, math.ceil(q / 100.0 * total))
    seen = 0
    for v in sorted(hist):
        seen += hist[v]
        if seen >= k:
            return v
    return max(hist)


@dataclass
class MetricsReport:
    scenario: str
    pipeline: str
    seed: int
    issued: int = 0
    completed: int = 0
    failed: int = 0
    duration_ns: int = 0
    throughput_ops_s: float = 0.0
    lat_mean_ns: float = 0.0
    lat_p50_ns: int = 0
    lat_p99_ns: int = 0
    histogram: dict[int, int] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, scenario: str, pipeline: str, seed: int, latencies: Iterable[int], duration_ns: int,
              issued: int | None = None, failed: int = 0, counters: dict | None = None,
              config: dict | None = None, extra: dict | None = None,
              throughput_ops_s: float | None = None) -> "MetricsReport":
        lats = [int(x) for x in latencies]
        hist = dict(sorted(Counter(lats).items()))
        n = len(lats)
        if throughput_ops_s is None:
            throughput_ops_s = n / duration_ns * 1e9 if duration_ns > 0 else 0.0
        return cls(scenario, pipeline, int(seed), issued if issued is not None else n + failed, n, failed,
                   int(duration_ns), float(throughput_ops_s), sum(lats) / n if n else 0.0,
                   histogram_percentile(hist, 50), histogram_percentile(hist, 99), hist,
                   dict(sorted((counters or {}).items())), config or {}, extra or {})

    def percentile(self, q: float) -> int:
        return histogram_percentile(self.histogram, q)

    # export

    def to_dict(self) -> dict:
        d = asdict(self)
        d["histogram"] = [[k, v] for k, v in sorted(self.histogram.items())]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["histogram"] = {int(k): int(v) for k, v in d["histogram"]}
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def row(self) -> dict:
        r = {k: getattr(self, k) for k in FIXED_COLUMNS}
        r.update(self.counters)
        return r


def export(report: MetricsReport | list[MetricsReport], path: str | Path, fmt: str | None = None) -> Path:
    """Write one or more reports as CSV or JSON (by ``fmt`` or the suffix).

    CSV writes a companion ``<stem>_histogram.csv`` with one row per latency
    value."""
    path = Path(path)
    reports = report if isinstance(report, list) else [report]
    fmt = (fmt or path.suffix.lstrip(".") or "json").lower()
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        body = [r.to_dict() for r in reports] if isinstance(report, list) else reports[0].to_dict()
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    counter_cols = sorted({k for r in reports for k in r.counters})
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=FIXED_COLUMNS + counter_cols, restval=0, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    hpath = path.with_name(f"{path.stem}_histogram.csv")
    with hpath.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scenario", "pipeline", "seed", "latency_ns", "count"])
        for r in reports:
            for lat, cnt in sorted(r.histogram.items()):
                w.writerow([r.scenario, r.pipeline, r.seed, lat, cnt])
    return path
