"""Request-stream generation: synthetic arrivals, trace ingestion, and the
stochastic output-length predictor."""
from __future__ import annotations

import bisect
import csv
import math

import numpy as np

from .model import (
    AdapterSpec,
    ErrorKernel,
    HardwareProfile,
    LengthSource,
    PredictorConfig,
    RequestSpec,
    US_PER_SEC,
    WorkloadConfig,
    make_adapter_spec,
)


class TraceError(ValueError):
    pass


def build_catalog(
    cfg: WorkloadConfig, hardware: HardwareProfile
) -> dict[str, AdapterSpec]:
    """Create num_adapters adapters, split evenly across the rank set.

    The catalog is immutable for the lifetime of a simulation run.
    """
    per_rank = cfg.num_adapters // len(cfg.rank_set)
    catalog: dict[str, AdapterSpec] = {}
    for rank in sorted(cfg.rank_set):
        for j in range(per_rank):
            aid = f"r{rank}-{j}"
            catalog[aid] = make_adapter_spec(
                aid, rank, hardware.bytes_per_rank_unit, hardware.kv_bytes_per_token
            )
    return catalog


def rank_probabilities(cfg: WorkloadConfig) -> list[float]:
    """Power-law mass over popularity index: the smallest rank is index 1 and
    the most likely; P(index i) = i^-s / sum_j j^-s."""
    s = cfg.rank_popularity_exponent
    weights = [(i + 1) ** -s for i in range(len(cfg.rank_set))]
    total = sum(weights)
    return [w / total for w in weights]


def assign_adapter(
    rng: np.random.Generator, cfg: WorkloadConfig, catalog: dict[str, AdapterSpec]
) -> str:
    """Pick a rank by the power law, then an adapter of that rank uniformly."""
    ranks = sorted(cfg.rank_set)
    probs = rank_probabilities(cfg)
    rank = ranks[rng.choice(len(ranks), p=probs)]
    per_rank = cfg.num_adapters // len(ranks)
    j = int(rng.integers(per_rank))
    return f"r{rank}-{j}"


def _sample_length(rng: np.random.Generator, log_mean: float, log_sigma: float, cap: int) -> int:
    value = int(round(math.exp(rng.normal(log_mean, log_sigma))))
    return max(1, min(cap, value))


def generate_arrivals(
    cfg: WorkloadConfig, catalog: dict[str, AdapterSpec]
) -> list[RequestSpec]:
    """Materialize the synthetic request stream.

    Inter-arrival gaps are i.i.d. exponential with mean 1/arrival_rate;
    arrival timestamps are strictly increasing (ties bumped by 1 us). The
    whole stream is a pure function of the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    horizon_us = int(cfg.duration_s * US_PER_SEC)
    ln = cfg.lengths
    specs: list[RequestSpec] = []
    t_us = 0
    clock = 0.0
    rid = 0
    while True:
        clock += rng.exponential(1.0 / cfg.arrival_rate) * US_PER_SEC
        arrival = int(round(clock))
        if arrival >= horizon_us:
            break
        t_us = max(arrival, t_us + 1)
        specs.append(
            RequestSpec(
                request_id=rid,
                arrival_time=t_us,
                input_tokens=_sample_length(rng, ln.input_log_mean, ln.input_log_sigma, ln.max_input),
                actual_output_tokens=_sample_length(rng, ln.output_log_mean, ln.output_log_sigma, ln.max_output),
                adapter_id=assign_adapter(rng, cfg, catalog),
            )
        )
        rid += 1
    return specs


def load_trace(
    path: str,
    cfg: WorkloadConfig,
    catalog: dict[str, AdapterSpec],
    rescale: float = 1.0,
) -> list[RequestSpec]:
    """Read the trace CSV: header arrival_ms,input_tokens,output_tokens[,adapter_id].

    Rows without an adapter column get one synthetically, via the same
    power-law assignment as the generator. `rescale` multiplies arrival
    density: a factor of 2 halves every inter-arrival gap.
    """
    rng = np.random.default_rng(cfg.seed)
    rows: list[tuple[int, int, int, str]] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        if header[:3] != ["arrival_ms", "input_tokens", "output_tokens"]:
            raise TraceError(f"{path}: unexpected header {header!r}")
        has_adapter = len(header) > 3 and header[3] == "adapter_id"
        prev_ms = -1
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                arrival_ms = int(row[0])
                input_tokens = int(row[1])
                output_tokens = int(row[2])
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if arrival_ms < 0:
                raise TraceError(f"{path}:{lineno}: negative arrival_ms")
            if arrival_ms < prev_ms:
                raise TraceError(f"{path}:{lineno}: arrival_ms not non-decreasing")
            if input_tokens < 1:
                raise TraceError(f"{path}:{lineno}: input_tokens must be >= 1")
            if output_tokens < 1:
                raise TraceError(f"{path}:{lineno}: output_tokens must be >= 1")
            prev_ms = arrival_ms
            if has_adapter and len(row) > 3 and row[3].strip():
                adapter_id = row[3].strip()
                if adapter_id not in catalog:
                    raise TraceError(f"{path}:{lineno}: unknown adapter {adapter_id!r}")
            else:
                adapter_id = assign_adapter(rng, cfg, catalog)
            rows.append((arrival_ms, input_tokens, output_tokens, adapter_id))

    specs: list[RequestSpec] = []
    base_us = rows[0][0] * 1000 if rows else 0
    t_us = base_us
    prev_raw = base_us
    for rid, (arrival_ms, input_tokens, output_tokens, adapter_id) in enumerate(rows):
        raw_us = arrival_ms * 1000
        gap = raw_us - prev_raw
        prev_raw = raw_us
        t_us += int(round(gap / rescale))
        specs.append(
            RequestSpec(
                request_id=rid,
                arrival_time=t_us,
                input_tokens=input_tokens,
                actual_output_tokens=output_tokens,
                adapter_id=adapter_id,
            )
        )
    return specs


def build_requests(
    cfg: WorkloadConfig, catalog: dict[str, AdapterSpec]
) -> list[RequestSpec]:
    if cfg.lengths.source is LengthSource.TRACE:
        return load_trace(cfg.lengths.trace_path, cfg, catalog, cfg.lengths.trace_rescale)
    return generate_arrivals(cfg, catalog)


_MIX_CLASSES = (
    # weight, input (median, sigma, lo, hi), output (median, sigma, lo, hi)
    (0.90, (128, 0.5, 16, 512), (64, 0.6, 8, 256)),
    (0.09, (640, 0.35, 256, 1536), (160, 0.4, 32, 512)),
    (0.01, (1800, 0.2, 1024, 2048), (224, 0.5, 64, 1024)),
)


def write_mixed_trace(
    path: str,
    arrival_rate: float,
    duration_s: float,
    seed: int,
    classes=_MIX_CLASSES,
    adapter_zipf_s: float = 0.0,
    num_adapters: int = 100,
    rank_set: tuple[int, ...] = (8, 16, 32, 64, 128),
) -> int:
    """Synthesize a production-style trace CSV: mostly short chat turns with
    a sparse heavy tail of long-context requests.

    Poisson arrivals; each request draws a class by weight, then clipped
    log-normal input/output lengths. With adapter_zipf_s > 0 an adapter_id
    column is emitted with Zipf popularity over individual adapters (tasks
    differ in traffic, not just in rank class); ranks rotate through the
    popularity order so every rank keeps num_adapters/len(rank_set) members
    and warm adapters exist at every size. Returns the rows written.
    """
    rng = np.random.default_rng(seed)
    weights = [c[0] for c in classes]
    total = sum(weights)
    probs = [w / total for w in weights]
    adapter_ids = []
    adapter_probs = []
    if adapter_zipf_s > 0:
        raw = [(i + 1) ** -adapter_zipf_s for i in range(num_adapters)]
        z = sum(raw)
        for i in range(num_adapters):
            rank = sorted(rank_set)[i % len(rank_set)]
            adapter_ids.append(f"r{rank}-{i // len(rank_set)}")
            adapter_probs.append(raw[i] / z)
    rows = []
    clock = 0.0
    while True:
        clock += rng.exponential(1.0 / arrival_rate)
        if clock >= duration_s:
            break
        _, ins, outs = classes[int(rng.choice(len(classes), p=probs))]
        row = [int(clock * 1000)]
        for median, sigma, lo, hi in (ins, outs):
            value = int(round(math.exp(rng.normal(math.log(median), sigma))))
            row.append(max(lo, min(hi, value)))
        if adapter_ids:
            row.append(adapter_ids[int(rng.choice(num_adapters, p=adapter_probs))])
        rows.append(row)
    header = ["arrival_ms", "input_tokens", "output_tokens"]
    if adapter_ids:
        header.append("adapter_id")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return len(rows)


class OutputPredictor:
    """Bucketed output-length predictor with a configurable accuracy.

    With probability `accuracy` the prediction is the midpoint of the true
    bucket; otherwise an incorrect bucket is chosen per the error kernel.
    Deterministic for a given seed and call sequence.
    """

    def __init__(self, cfg: PredictorConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.edges = list(cfg.bucket_edges)
        self.n_buckets = len(self.edges) - 1

    def bucket_of(self, tokens: int) -> int:
        idx = bisect.bisect_right(self.edges, tokens) - 1
        return min(max(idx, 0), self.n_buckets - 1)

    def midpoint(self, bucket: int) -> int:
        lo = self.edges[bucket]
        hi = self.edges[bucket + 1] - 1 if bucket < self.n_buckets - 1 else self.edges[-1]
        return max(1, (lo + hi) // 2)

    def predict(self, actual_output_tokens: int) -> int:
        true_bucket = self.bucket_of(actual_output_tokens)
        if self.n_buckets == 1 or self.rng.random() < self.cfg.accuracy:
            return self.midpoint(true_bucket)
        if self.cfg.error_kernel is ErrorKernel.ADJACENT_BUCKET:
            if true_bucket == 0:
                wrong = 1
            elif true_bucket == self.n_buckets - 1:
                wrong = true_bucket - 1
            else:
                wrong = true_bucket + (1 if self.rng.random() < 0.5 else -1)
        else:
            others = [b for b in range(self.n_buckets) if b != true_bucket]
            wrong = others[int(self.rng.integers(len(others)))]
        return self.midpoint(wrong)
