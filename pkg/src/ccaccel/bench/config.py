"""Experiment configuration: one YAML document, one section per module.

Errors point at the offending line of the source document.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..accel import AccelConfig
from ..apps.tx import TxConfig
from ..memsim import LatencyConfig
from ..rnic import RnicConfig
from .workload import WorkloadError, WorkloadSpec

PIPELINES = ("rambda", "cpu_rpc", "smartnic", "hyperloop")


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {msg}")
        self.line = line


@dataclass
class ExperimentSettings:
    scenario: str = "kvs"
    seed: int = 1
    clients: int = 8
    window: int = 32  # outstanding requests per client
    warmup: int = 0
    arrival_gap_ns: float = 0.0  # > 0: open-loop Poisson arrivals per client


@dataclass
class MemorySettings(LatencyConfig):
    ddio: bool = False


@dataclass
class RingSettings:
    capacity: int = 1024
    slot_size: int = 64


@dataclass
class CpollSettings:
    mode: str = "cpoll"  # ping-pong notification: cpoll or poll
    placement: str = "pinned_cache"
    pointer_buffer: bool = True
    poll_interval: int = 15  # cycles, polling baseline
    clock_mhz: float = 400.0
    iterations: int = 60_000


@dataclass
class RnicSettings(RnicConfig):
    signal_every: int = 64
    doorbell_batch: int = 1
    relay_min_ns: int = 2000
    relay_max_ns: int = 3000

    def rnic(self) -> RnicConfig:
        return RnicConfig(**{f.name: getattr(self, f.name) for f in dataclasses.fields(RnicConfig)})


@dataclass
class KvsSettings:
    n_buckets: int = 0  # 0: sized from key_space and load_factor
    load_factor: float = 0.2  # key_space / (buckets * 8)
    preload_fraction: float = 1.0  # share of key_space stored before the run
    value_size: int = 40
    kind: str = "DRAM"
    attached: str = "host"


@dataclass
class DlrmSettings:
    tables: int = 8
    rows: int = 20_000
    dim: int = 64
    fc_ns: int = 5000
    preprocess_ns: int = 2000
    placement: str = "accel_hbm"  # host, accel_hbm
    raw: bool = False  # requests need CPU preprocessing


@dataclass
class AppSettings:
    kvs: KvsSettings = field(default_factory=KvsSettings)
    tx: TxConfig = field(default_factory=TxConfig)
    dlrm: DlrmSettings = field(default_factory=DlrmSettings)


@dataclass
class BaselineSpec:
    pipeline: str = "rambda"
    cores: int = 8
    cpu_per_req_ns: int = 30  # KVS compute per request
    cpu_batch_ns: int = 100  # per-batch fixed overhead
    smartnic_cores: int = 8
    smartnic_base_ns: int = 65
    smartnic_cache_fraction: float = 0.073
    smartnic_host_slope: float = 0.95
    host_fraction: float = -1.0  # >= 0 forces the smartnic host-access fraction
    cpu_mlp_rows: int = 6
    cpu_agg_ns_per_row: int = 2
    cpu_fc_ns: int = 1000

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}; expected one of {PIPELINES}")


@dataclass
class ExperimentConfig:
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    memory: MemorySettings = field(default_factory=MemorySettings)
    ringcomm: RingSettings = field(default_factory=RingSettings)
    cpollmod: CpollSettings = field(default_factory=CpollSettings)
    rnicsim: RnicSettings = field(default_factory=RnicSettings)
    accelfw: AccelConfig = field(default_factory=AccelConfig)
    apps: AppSettings = field(default_factory=AppSettings)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    baseline: BaselineSpec = field(default_factory=BaselineSpec)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def latency(self) -> LatencyConfig:
        return LatencyConfig(**{f.name: getattr(self.memory, f.name) for f in dataclasses.fields(LatencyConfig)})

    def replace(self, **sections: dict) -> "ExperimentConfig":
        """Copy with fields overridden, e.g. ``replace(workload={"distribution": "zipfian"})``."""
        d = self.to_dict()
        for sec, upd in sections.items():
            _merge(d.setdefault(sec, {}), upd)
        return from_dict(d)


_LEAF_DICTS = {"op_mix"}  # mapping-valued fields are replaced, not merged


def _merge(dst: dict, upd: dict) -> None:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict) and k not in _LEAF_DICTS:
            _merge(dst[k], v)
        else:
            dst[k] = v


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "value") and not isinstance(v, (int, float, str, bool)):
        return v.value
    return v


# loading

def _line_map(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
    return out


def _coerce(name: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{name} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"{name} must be a string")
        return value
    if isinstance(default, (tuple, list)):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"{name} must be a list")
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise TypeError(f"{name} must be a mapping")
        return value
    return value


def _build(cls, data: Any, path: tuple, lines: dict, source: str):
    line = lines.get(path)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {'.'.join(path)} must be a mapping", line, source)
    proto = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        kpath = path + (str(key),)
        if key not in known:
            raise ConfigError(f"unknown key {'.'.join(kpath)!r} (expected one of {sorted(known)})",
                              lines.get(kpath, line), source)
        default = getattr(proto, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, kpath, lines, source)
            continue
        try:
            kwargs[key] = _coerce(".".join(kpath), default, value)
        except TypeError as exc:
            raise ConfigError(str(exc), lines.get(kpath, line), source) from None
    try:
        return cls(**kwargs)
    except (ValueError, WorkloadError) as exc:
        raise ConfigError(f"{'.'.join(path)}: {exc}", line, source) from None


def from_dict(d: dict, lines: dict | None = None, source: str = "<config>") -> ExperimentConfig:
    return _build(ExperimentConfig, d, (), lines or {}, source)


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax: {exc.problem}", line, source) from None
    if node is None:
        return ExperimentConfig()
    return from_dict(data, _line_map(node), source)


def load(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    return loads(p.read_text(), str(p))


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
