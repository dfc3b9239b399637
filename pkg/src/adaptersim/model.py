"""Shared domain types, time conventions, and configuration records.

All simulation times are integer microseconds since simulation start;
durations are integer microsecond counts. Keeping time integral makes runs
exactly reproducible across platforms.
"""
from __future__ import annotations

import math
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from enum import Enum
from typing import Any, Optional

TimePoint = int
Duration = int

US_PER_SEC = 1_000_000
INF_TIME: TimePoint = 2**62

DEFAULT_RANK_SET = (8, 16, 32, 64, 128)

# Llama-7B-shaped default: two low-rank matrices x 4 projection targets x
# 32 layers x hidden 4096 x 2 bytes per value = 2 MiB per unit of rank.
DEFAULT_BYTES_PER_RANK_UNIT = 2_097_152
DEFAULT_KV_BYTES_PER_TOKEN = 524_288


class Phase(Enum):
    QUEUED = "queued"
    LOADING_ADAPTER = "loading_adapter"
    PREFILL = "prefill"
    DECODE = "decode"
    FINISHED = "finished"
    SQUASHED = "squashed"


class SchedulerPolicy(Enum):
    FIFO = "fifo"
    SJF = "sjf"
    MLQ = "mlq"


class CachePolicy(Enum):
    NONE = "none"
    LRU = "lru"
    FAIRSHARE = "fairshare"
    COST_AWARE = "cost-aware"


class PrefetchMode(Enum):
    OFF = "off"
    QUEUE_DRIVEN = "queue-driven"
    HISTOGRAM = "histogram"


class ErrorKernel(Enum):
    ADJACENT_BUCKET = "adjacent"
    UNIFORM_BUCKET = "uniform"


class LengthSource(Enum):
    LOGNORMAL = "lognormal"
    TRACE = "trace"


class ConfigError(ValueError):
    """Raised when a configuration fails validation; carries all messages."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class AdapterSpec:
    """A fine-tuning adapter: its rank determines memory and compute cost."""

    adapter_id: str
    rank: int
    size_bytes: int
    size_tokens: int


def make_adapter_spec(
    adapter_id: str,
    rank: int,
    bytes_per_rank_unit: int = DEFAULT_BYTES_PER_RANK_UNIT,
    kv_bytes_per_token: int = DEFAULT_KV_BYTES_PER_TOKEN,
) -> AdapterSpec:
    size_bytes = bytes_per_rank_unit * rank
    size_tokens = max(1, -(-size_bytes // kv_bytes_per_token))
    return AdapterSpec(adapter_id, rank, size_bytes, size_tokens)


@dataclass(frozen=True)
class RequestSpec:
    """One inference request as produced by the workload generator.

    actual_output_tokens is ground truth and is hidden from the scheduler,
    which only ever sees the prediction stored on RequestState.
    """

    request_id: int
    arrival_time: TimePoint
    input_tokens: int
    actual_output_tokens: int
    adapter_id: str


@dataclass(eq=False)
class RequestState:
    """Mutable per-request lifecycle state, confined to one simulation.

    Identity semantics: two states are the same only if they are the same
    object (states are also used as set members by the scheduler ledger).
    """

    spec: RequestSpec
    predicted_output_tokens: int
    wrs: float = 0.0
    queue_index: int = 0
    phase: Phase = Phase.QUEUED
    tokens_generated: int = 0
    first_token_time: Optional[TimePoint] = None
    finish_time: Optional[TimePoint] = None
    borrowed_quota: int = 0
    squash_count: int = 0
    bypass_flag: bool = False
    # engine bookkeeping
    bypass_victim: Optional[int] = None
    adapter_ready: bool = False
    adapter_hit: bool = False
    reserved_tokens: int = 0
    last_token_time: Optional[TimePoint] = None
    tbt_samples: list[int] = field(default_factory=list)
    admit_time: Optional[TimePoint] = None

    @property
    def request_id(self) -> int:
        return self.spec.request_id

    @property
    def arrival_time(self) -> TimePoint:
        return self.spec.arrival_time


@dataclass
class HardwareProfile:
    """GPU memory (in KV-token slots) and host-device link characteristics."""

    total_token_slots: int = 60_000
    link_bandwidth_bytes_per_sec: int = 16_000_000_000
    link_fixed_latency_us: Duration = 500
    kv_bytes_per_token: int = DEFAULT_KV_BYTES_PER_TOKEN
    bytes_per_rank_unit: int = DEFAULT_BYTES_PER_RANK_UNIT


@dataclass
class CostModelParams:
    """Linear iteration-time model, calibrated for desk-scale trends.

    Coefficients are microseconds; the adapter term is per (rank x token
    processed). Defaults make a rank-128 request's adapter compute about
    40% of its solo prefill cost.
    """

    prefill_base_us: float = 5_000.0
    prefill_per_token_us: float = 40.0
    decode_base_us: float = 6_000.0
    decode_per_token_us: float = 25.0
    adapter_compute_per_rank_token_us: float = 0.155


@dataclass
class SLOConfig:
    slo_multiplier: float = 5.0
    ttft_slo_us: Optional[Duration] = None
    tbt_slo_us: Optional[Duration] = None


@dataclass
class LengthConfig:
    """Where request input/output lengths come from."""

    source: LengthSource = LengthSource.LOGNORMAL
    trace_path: Optional[str] = None
    trace_rescale: float = 1.0
    input_log_mean: float = math.log(256.0)
    input_log_sigma: float = 0.9
    output_log_mean: float = math.log(64.0)
    output_log_sigma: float = 1.1
    max_input: int = 2048
    max_output: int = 1024


@dataclass
class WorkloadConfig:
    arrival_rate: float = 1.0  # requests per second
    num_adapters: int = 100
    rank_set: tuple[int, ...] = DEFAULT_RANK_SET
    rank_popularity_exponent: float = 1.0
    duration_s: float = 120.0
    seed: int = 1
    lengths: LengthConfig = field(default_factory=LengthConfig)


@dataclass
class PredictorConfig:
    """Stochastic stand-in for an output-length proxy model."""

    accuracy: float = 0.8
    bucket_edges: tuple[int, ...] = (1, 2, 6, 14, 32, 76, 181, 431, 1024)
    error_kernel: ErrorKernel = ErrorKernel.ADJACENT_BUCKET


@dataclass
class CacheConfig:
    policy: CachePolicy = CachePolicy.COST_AWARE
    weight_frequency: float = 0.45
    weight_recency: float = 0.10
    weight_size: float = 0.45
    frequency_window_us: Duration = 60 * US_PER_SEC
    prefetch: PrefetchMode = PrefetchMode.OFF
    # Optional hard cap on cache capacity (token slots), on top of the
    # dynamic idle-memory bound. Used by the constrained-cache experiments.
    token_cap: Optional[int] = None


@dataclass
class SchedulerConfig:
    policy: SchedulerPolicy = SchedulerPolicy.MLQ
    weight_input: float = 0.3
    weight_output: float = 0.5
    weight_adapter: float = 0.2
    k_max: int = 4
    refresh_us: Duration = 300 * US_PER_SEC
    max_input: int = 2048
    max_output: int = 1024
    max_adapter_rank: int = 128
    sjf_aging: float = 0.0
    # Fraction of token slots handed to the quota solver; the remainder is
    # headroom for output-length underprediction.
    quota_fraction: float = 0.9
    # Absolute SLO for the quota solver; when unset each queue uses
    # slo_multiplier x its own estimated request duration.
    quota_slo_us: Optional[Duration] = None
    bypass_scan_limit: int = 64


@dataclass
class MetricsConfig:
    warmup_fraction: float = 0.05
    tbt_pooling: str = "pooled"  # "pooled" | "per-request-max"


@dataclass
class SimulationConfig:
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    hardware: HardwareProfile = field(default_factory=HardwareProfile)
    cost: CostModelParams = field(default_factory=CostModelParams)
    slo: SLOConfig = field(default_factory=SLOConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


def _coerce(value: Any, target: Any, path: str, errors: list[str]) -> Any:
    origin = typing.get_origin(target)
    if origin is typing.Union:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path, errors)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            errors.append(f"{path}: expected a list")
            return value
        inner = typing.get_args(target)[0]
        return tuple(_coerce(v, inner, path, errors) for v in value)
    if isinstance(target, type) and issubclass(target, Enum):
        if isinstance(value, target):
            return value
        try:
            return target(value)
        except ValueError:
            allowed = ", ".join(e.value for e in target)
            errors.append(f"{path}: must be one of {{{allowed}}}")
            return value
    if is_dataclass(target):
        return _load_dataclass(target, value, path, errors)
    if target is int and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def _load_dataclass(cls: Any, data: Any, path: str, errors: list[str]) -> Any:
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        errors.append(f"{path}: expected an object")
        return cls()
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{path}.{key}: unknown field")
            continue
        kwargs[key] = _coerce(value, known[key], f"{path}.{key}", errors)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{path}: {exc}")
        return cls()


def config_from_dict(data: dict[str, Any]) -> SimulationConfig:
    """Build a SimulationConfig from nested dicts (e.g. parsed JSON).

    Unknown fields and malformed values raise ConfigError with one message
    per problem, each tagged with its field path.
    """
    errors: list[str] = []
    cfg = _load_dataclass(SimulationConfig, data, "config", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def config_errors(cfg: SimulationConfig) -> list[str]:
    """Check every cross-field invariant; returns one message per violation."""
    errs: list[str] = []
    w = cfg.workload
    if w.arrival_rate <= 0:
        errs.append("workload.arrival_rate: must be positive")
    if w.duration_s < 0:
        errs.append("workload.duration_s: must be non-negative")
    if not w.rank_set:
        errs.append("workload.rank_set: must not be empty")
    for r in w.rank_set:
        if r <= 0:
            errs.append("workload.rank_set: rank must be positive")
            break
    if len(set(w.rank_set)) != len(w.rank_set):
        errs.append("workload.rank_set: ranks must be distinct")
    if w.num_adapters <= 0:
        errs.append("workload.num_adapters: must be positive")
    elif w.rank_set and w.num_adapters % len(w.rank_set) != 0:
        errs.append(
            "workload.num_adapters: must be divisible by the number of ranks"
        )
    if w.rank_popularity_exponent < 0:
        errs.append("workload.rank_popularity_exponent: must be non-negative")
    ln = w.lengths
    if ln.source is LengthSource.TRACE and not ln.trace_path:
        errs.append("workload.lengths.trace_path: required for trace source")
    if ln.trace_rescale <= 0:
        errs.append("workload.lengths.trace_rescale: must be positive")
    if ln.max_input < 1 or ln.max_output < 1:
        errs.append("workload.lengths: max_input and max_output must be >= 1")

    p = cfg.predictor
    if not 0 < p.accuracy <= 1:
        errs.append("predictor.accuracy: must be in (0, 1]")
    if len(p.bucket_edges) < 2:
        errs.append("predictor.bucket_edges: need at least two edges")
    elif any(a >= b for a, b in zip(p.bucket_edges, p.bucket_edges[1:])):
        errs.append("predictor.bucket_edges: must be strictly ascending")

    c = cfg.cache
    if min(c.weight_frequency, c.weight_recency, c.weight_size) < 0:
        errs.append("cache: score weights must be non-negative")
    if c.weight_frequency + c.weight_recency + c.weight_size <= 0:
        errs.append("cache: score weights must not all be zero")
    if c.frequency_window_us <= 0:
        errs.append("cache.frequency_window_us: must be positive")
    if c.token_cap is not None and c.token_cap <= 0:
        errs.append("cache.token_cap: must be positive when set")

    s = cfg.scheduler
    if min(s.weight_input, s.weight_output, s.weight_adapter) < 0:
        errs.append("scheduler: WRS weights must be non-negative")
    if s.k_max < 1:
        errs.append("scheduler.k_max: must be >= 1")
    if s.refresh_us <= 0:
        errs.append("scheduler.refresh_us: must be positive")
    if min(s.max_input, s.max_output, s.max_adapter_rank) <= 0:
        errs.append("scheduler: normalization constants must be positive")
    if not 0 < s.quota_fraction <= 1:
        errs.append("scheduler.quota_fraction: must be in (0, 1]")

    h = cfg.hardware
    if h.total_token_slots <= 0:
        errs.append("hardware.total_token_slots: must be positive")
    if h.link_bandwidth_bytes_per_sec <= 0:
        errs.append("hardware.link_bandwidth_bytes_per_sec: must be positive")
    if h.link_fixed_latency_us < 0:
        errs.append("hardware.link_fixed_latency_us: must be non-negative")
    if h.kv_bytes_per_token <= 0:
        errs.append("hardware.kv_bytes_per_token: must be positive")
    if h.bytes_per_rank_unit <= 0:
        errs.append("hardware.bytes_per_rank_unit: must be positive")

    cm = cfg.cost
    if min(
        cm.prefill_base_us,
        cm.prefill_per_token_us,
        cm.decode_base_us,
        cm.decode_per_token_us,
        cm.adapter_compute_per_rank_token_us,
    ) < 0:
        errs.append("cost: all coefficients must be non-negative")

    if cfg.slo.slo_multiplier <= 1:
        errs.append("slo.slo_multiplier: must be > 1")

    m = cfg.metrics
    if not 0 <= m.warmup_fraction < 1:
        errs.append("metrics.warmup_fraction: must be in [0, 1)")
    if m.tbt_pooling not in ("pooled", "per-request-max"):
        errs.append("metrics.tbt_pooling: must be 'pooled' or 'per-request-max'")

    # The largest possible single request must fit the quota pool, or it can
    # never be admitted and the run would deadlock.
    if h.total_token_slots > 0 and w.rank_set and not errs:
        max_rank = max(w.rank_set)
        adapter_tokens = make_adapter_spec(
            "probe", max_rank, h.bytes_per_rank_unit, h.kv_bytes_per_token
        ).size_tokens
        worst = ln.max_input + ln.max_output + adapter_tokens
        pool = int(h.total_token_slots * s.quota_fraction)
        if worst > pool:
            errs.append(
                "hardware.total_token_slots: largest possible request "
                f"({worst} tokens) exceeds the quota pool ({pool} tokens)"
            )
    return errs


def validate_config(cfg: SimulationConfig) -> SimulationConfig:
    """Return the config unchanged if valid, else raise ConfigError."""
    errs = config_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


def config_to_dict(obj: Any) -> Any:
    """Round-trippable plain-dict form (enums become their string values)."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, tuple):
        return [config_to_dict(v) for v in obj]
    return obj
