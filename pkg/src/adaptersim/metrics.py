"""Per-request measurement records, percentile/SLO math, run summaries, and
CSV export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .model import Duration, SLOConfig

CSV_COLUMNS = [
    "request_id",
    "arrival_us",
    "queue",
    "wrs",
    "adapter_id",
    "rank",
    "ttft_us",
    "e2e_us",
    "mean_tbt_us",
    "slowdown",
    "squashes",
    "adapter_hit",
]


@dataclass
class MetricsRecord:
    """One measurement row per finished request."""

    request_id: int
    arrival_us: int
    queue: int
    wrs: float
    adapter_id: str
    rank: int
    ttft_us: int
    e2e_us: int
    mean_tbt_us: float
    slowdown: float
    squashes: int
    adapter_hit: bool
    # Not part of the CSV schema: kept for in-memory analysis only.
    bypassed: bool = False
    tbt_samples: list[int] = field(default_factory=list)


def percentile(samples: Sequence, p: float):
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    if not samples:
        raise ValueError("percentile of an empty sample set")
    if not 0 < p <= 100:
        raise ValueError(f"percentile p must be in (0, 100], got {p}")
    ordered = sorted(samples)
    rank = math.ceil(p * len(ordered) / 100)
    return ordered[rank - 1]


@dataclass
class RunSummary:
    """Aggregates over one run's records (post warm-up trimming).

    p99_tbt_us is computed from the raw token gaps and is therefore only
    available when records still carry their tbt_samples (it cannot be
    recovered from the per-request CSV, which stores means).
    """

    count: int
    warmup_excluded: int
    mean_ttft_us: Optional[float]
    p50_ttft_us: Optional[int]
    p99_ttft_us: Optional[int]
    mean_tbt_us: Optional[float]
    p99_tbt_us: Optional[int]
    p50_e2e_us: Optional[int]
    p99_e2e_us: Optional[int]
    slowdown_p50: Optional[float]
    slowdown_p99: Optional[float]
    slowdown_cdf: list[tuple[float, float]]
    adapter_hit_rate: Optional[float]
    squash_rate: Optional[float]
    bytes_transferred: int
    per_queue_counts: dict[int, int]
    slo_attainment: Optional[float] = None


def summarize(
    records: list[MetricsRecord],
    duration_us: int,
    warmup_fraction: float = 0.05,
    tbt_pooling: str = "pooled",
    bytes_transferred: int = 0,
    ttft_slo_us: Optional[int] = None,
    tbt_slo_us: Optional[int] = None,
) -> RunSummary:
    """Aggregate records into a RunSummary.

    Requests arriving in the first warmup_fraction of simulated time are
    excluded so summaries measure steady state; the raw CSV keeps everything.
    """
    cut = int(duration_us * warmup_fraction)
    kept = [r for r in records if r.arrival_us >= cut]
    excluded = len(records) - len(kept)
    if not kept:
        return RunSummary(
            0, excluded, None, None, None, None, None, None, None, None, None,
            [], None, None, bytes_transferred, {},
        )

    ttfts = [r.ttft_us for r in kept]
    e2es = [r.e2e_us for r in kept]
    slowdowns = [r.slowdown for r in kept]
    if tbt_pooling == "per-request-max":
        tbt_pool = [max(r.tbt_samples) for r in kept if r.tbt_samples]
    else:
        tbt_pool = [gap for r in kept for gap in r.tbt_samples]
    gap_counts = sum(len(r.tbt_samples) for r in kept)
    mean_tbt = (
        sum(gap for r in kept for gap in r.tbt_samples) / gap_counts
        if gap_counts
        else None
    )

    per_queue: dict[int, int] = {}
    for r in kept:
        per_queue[r.queue] = per_queue.get(r.queue, 0) + 1

    attainment = None
    if ttft_slo_us is not None or tbt_slo_us is not None:
        ok = 0
        for r in kept:
            fine = ttft_slo_us is None or r.ttft_us <= ttft_slo_us
            if fine and tbt_slo_us is not None and r.tbt_samples:
                fine = max(r.tbt_samples) <= tbt_slo_us
            ok += fine
        attainment = ok / len(kept)

    return RunSummary(
        count=len(kept),
        warmup_excluded=excluded,
        mean_ttft_us=sum(ttfts) / len(ttfts),
        p50_ttft_us=percentile(ttfts, 50),
        p99_ttft_us=percentile(ttfts, 99),
        mean_tbt_us=mean_tbt,
        p99_tbt_us=percentile(tbt_pool, 99) if tbt_pool else None,
        p50_e2e_us=percentile(e2es, 50),
        p99_e2e_us=percentile(e2es, 99),
        slowdown_p50=percentile(slowdowns, 50),
        slowdown_p99=percentile(slowdowns, 99),
        slowdown_cdf=[(p, percentile(slowdowns, p)) for p in range(10, 101, 10)],
        adapter_hit_rate=sum(r.adapter_hit for r in kept) / len(kept),
        squash_rate=sum(r.squashes > 0 for r in kept) / len(kept),
        bytes_transferred=bytes_transferred,
        per_queue_counts=dict(sorted(per_queue.items())),
        slo_attainment=attainment,
    )


@dataclass(frozen=True)
class SLOTargets:
    ttft_slo_us: Optional[int]
    tbt_slo_us: Optional[int]


def derive_slo(calibration: Optional[RunSummary], cfg: SLOConfig) -> SLOTargets:
    """Absolute SLOs: the configured multiplier times the mean low-load
    latencies from a calibration run; explicit overrides win."""
    ttft = cfg.ttft_slo_us
    tbt = cfg.tbt_slo_us
    if ttft is None:
        if calibration is None or calibration.mean_ttft_us is None:
            raise ValueError("no TTFT SLO override and no calibration run")
        ttft = round(cfg.slo_multiplier * calibration.mean_ttft_us)
    if tbt is None and calibration is not None and calibration.mean_tbt_us is not None:
        tbt = round(cfg.slo_multiplier * calibration.mean_tbt_us)
    return SLOTargets(ttft, tbt)


def meets_slo(summary: RunSummary, slo: SLOTargets) -> bool:
    if summary.p99_ttft_us is None:
        return False
    if slo.ttft_slo_us is not None and summary.p99_ttft_us > slo.ttft_slo_us:
        return False
    if (
        slo.tbt_slo_us is not None
        and summary.p99_tbt_us is not None
        and summary.p99_tbt_us > slo.tbt_slo_us
    ):
        return False
    return True


@dataclass(frozen=True)
class ThroughputScan:
    """Result of scanning an ascending rps grid for the SLO knee."""

    max_rps: Optional[float]
    status: str  # "ok" | "saturated" | "below-grid"
    first_violation: Optional[int]


def scan_throughput(grid: Sequence[float], ok_flags: Sequence[bool]) -> ThroughputScan:
    """Largest grid point before the first SLO violation.

    All points passing reports the top of the grid with a saturation
    warning; a non-monotone pattern is reported at its first crossing (the
    full table stays with the caller).
    """
    if len(grid) != len(ok_flags) or not grid:
        raise ValueError("grid and ok_flags must be equal-length and non-empty")
    if list(grid) != sorted(grid):
        raise ValueError("rps grid must be ascending")
    first_bad = next((i for i, ok in enumerate(ok_flags) if not ok), None)
    if first_bad is None:
        return ThroughputScan(grid[-1], "saturated", None)
    if first_bad == 0:
        return ThroughputScan(None, "below-grid", 0)
    return ThroughputScan(grid[first_bad - 1], "ok", first_bad)


# -- CSV round-tripping ------------------------------------------------------


def write_records_csv(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.request_id,
                    r.arrival_us,
                    r.queue,
                    repr(r.wrs),
                    r.adapter_id,
                    r.rank,
                    r.ttft_us,
                    r.e2e_us,
                    repr(r.mean_tbt_us),
                    repr(r.slowdown),
                    r.squashes,
                    int(r.adapter_hit),
                ]
            )


def read_records_csv(path: str) -> list[MetricsRecord]:
    """Load records back; per-gap TBT samples are not part of the schema."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header!r}")
        for row in reader:
            records.append(
                MetricsRecord(
                    request_id=int(row[0]),
                    arrival_us=int(row[1]),
                    queue=int(row[2]),
                    wrs=float(row[3]),
                    adapter_id=row[4],
                    rank=int(row[5]),
                    ttft_us=int(row[6]),
                    e2e_us=int(row[7]),
                    mean_tbt_us=float(row[8]),
                    slowdown=float(row[9]),
                    squashes=int(row[10]),
                    adapter_hit=bool(int(row[11])),
                )
            )
    return records
