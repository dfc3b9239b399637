"""Multi-queue non-preemptive scheduler: weighted-request-size classification,
dynamic queue layout (1-D k-means + M/M/1 quota solver), two-phase batch
generation with adapter bypass, plus FIFO and SJF baselines."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

from .model import (
    Duration,
    INF_TIME,
    RequestState,
    SchedulerConfig,
    TimePoint,
    US_PER_SEC,
)


def compute_wrs(
    input_tokens: int,
    predicted_output_tokens: int,
    adapter_rank: int,
    cfg: SchedulerConfig,
) -> float:
    """Weighted request size in [0, A+B+C]; inputs clip at their maxima."""
    a, b, c = cfg.weight_input, cfg.weight_output, cfg.weight_adapter
    return (
        a * min(input_tokens, cfg.max_input) / cfg.max_input
        + b * min(predicted_output_tokens, cfg.max_output) / cfg.max_output
        + c * min(adapter_rank, cfg.max_adapter_rank) / cfg.max_adapter_rank
    )


# ---------------------------------------------------------------------------
# Queue layout: 1-D k-means with centroid-midpoint cutoffs.


@dataclass
class QueueLayout:
    k: int
    centroids: list[float]
    boundaries: list[float]  # len k-1; the last queue is unbounded
    wcss_curve: list[float]  # wcss for candidate cluster counts 1..k_max

    def bucket(self, wrs: float) -> int:
        """Smallest queue whose upper bound covers wrs (<= is inclusive)."""
        for q, bound in enumerate(self.boundaries):
            if wrs <= bound:
                return q
        return self.k - 1


def _lloyd_1d(xs: list[float], k: int) -> tuple[list[float], float]:
    """Deterministic 1-D k-means: quantile-initialized centroids, Lloyd
    iterations to a fixed point (or 100 rounds). xs must be sorted."""
    n = len(xs)
    prefix = [0.0]
    prefix_sq = [0.0]
    for x in xs:
        prefix.append(prefix[-1] + x)
        prefix_sq.append(prefix_sq[-1] + x * x)

    def segment_cost(lo: int, hi: int, c: float) -> float:
        # sum over xs[lo:hi] of (x - c)^2
        count = hi - lo
        s = prefix[hi] - prefix[lo]
        sq = prefix_sq[hi] - prefix_sq[lo]
        return sq - 2 * c * s + count * c * c

    centroids = sorted({xs[min(n - 1, int((i + 0.5) * n / k))] for i in range(k)})
    for _ in range(100):
        cuts = [(a + b) / 2 for a, b in zip(centroids, centroids[1:])]
        splits = [0] + [bisect.bisect_right(xs, cut) for cut in cuts] + [n]
        new_centroids = []
        for j in range(len(centroids)):
            lo, hi = splits[j], splits[j + 1]
            if hi > lo:
                new_centroids.append((prefix[hi] - prefix[lo]) / (hi - lo))
            else:
                new_centroids.append(centroids[j])
        if new_centroids == centroids:
            break
        centroids = new_centroids

    cuts = [(a + b) / 2 for a, b in zip(centroids, centroids[1:])]
    splits = [0] + [bisect.bisect_right(xs, cut) for cut in cuts] + [n]
    wcss = 0.0
    occupied = []
    for j, c in enumerate(centroids):
        lo, hi = splits[j], splits[j + 1]
        if hi > lo:
            wcss += segment_cost(lo, hi, c)
            occupied.append(c)
    return occupied, wcss


_ELBOW_MIN_GAIN = 0.05
_HOMOGENEOUS_CV = 0.10
_EPS = 1e-12


def _select_k(wcss: list[float], k_max: int, n: int, mean: float) -> int:
    """Pick the cluster count at the knee of the WCSS curve.

    Raw WCSS is monotone in k (k_max would always win), so the rule is:
    a workload whose sizes barely vary (coefficient of variation under 10%)
    gets a single queue; otherwise take the largest k whose split still
    explains at least 5% of the total variance (the curve's knee).
    """
    if k_max == 1 or wcss[0] <= _EPS:
        return 1
    std = math.sqrt(wcss[0] / n)
    if mean > 0 and std / mean < _HOMOGENEOUS_CV:
        return 1
    k = 1
    for cand in range(2, k_max + 1):
        if (wcss[cand - 2] - wcss[cand - 1]) / wcss[0] >= _ELBOW_MIN_GAIN:
            k = cand
        else:
            break
    return k


def fit_layout(wrs_samples: list[float], k_max: int) -> QueueLayout:
    """Cluster the observed WRS distribution and derive queue cutoffs as
    midpoints between consecutive centroids."""
    if not wrs_samples:
        return QueueLayout(1, [], [], [])
    xs = sorted(wrs_samples)
    distinct = len(set(xs))
    wcss_curve = []
    centroids_by_k = {}
    for k in range(1, k_max + 1):
        cents, wcss = _lloyd_1d(xs, min(k, distinct))
        wcss_curve.append(wcss)
        centroids_by_k[k] = cents
    k = _select_k(wcss_curve, k_max, len(xs), sum(xs) / len(xs))
    centroids = centroids_by_k[k]
    boundaries = [(a + b) / 2 for a, b in zip(centroids, centroids[1:])]
    return QueueLayout(len(centroids), centroids, boundaries, wcss_curve)


# ---------------------------------------------------------------------------
# Per-queue token quotas from the M/M/1 sizing model.


@dataclass(frozen=True)
class QueueLoad:
    """Inputs to the quota solver for one queue."""

    max_size_tokens: int  # S: largest request the queue admits, in tokens
    duration_us: Duration  # D: expected duration of such a request
    arrival_rate: float  # lambda, requests per second
    slo_us: Duration
    # Hard minimum for the assigned quota; a queue whose quota is below its
    # largest member's need can never admit that head and would starve it.
    floor_tokens: int = 0


@dataclass(frozen=True)
class QuotaResult:
    quotas: list[int]
    tok_min: list[int]
    feasible: bool


def min_tokens(load: QueueLoad) -> int:
    """Tok_min = ceil(S * D * (1/SLO + lambda)), computed in seconds."""
    d_s = load.duration_us / US_PER_SEC
    slo_s = load.slo_us / US_PER_SEC
    raw = load.max_size_tokens * d_s * (1.0 / slo_s + load.arrival_rate)
    return math.ceil(round(raw, 9))


def _distribute(total: int, weights: list[int]) -> list[int]:
    """Split `total` proportionally to integer weights, exactly."""
    if total <= 0:
        return [0] * len(weights)
    wsum = sum(weights)
    if wsum == 0:
        base, rem = divmod(total, len(weights))
        return [base + (1 if i < rem else 0) for i in range(len(weights))]
    shares = []
    fracs = []
    for i, w in enumerate(weights):
        exact = total * w / wsum
        shares.append(int(exact))
        fracs.append((-(exact - int(exact)), i))
    for _, i in sorted(fracs)[: total - sum(shares)]:
        shares[i] += 1
    return shares


def solve_quotas(loads: list[QueueLoad], tok_total: int) -> QuotaResult:
    """Give each queue its Tok_min, then split the surplus by decreasing
    priority weight (1/(q+1)): higher queues serve smaller requests and get
    the larger share, so final quotas shrink as request size grows.

    When the pool cannot cover the minima, quotas are scaled down
    proportionally instead (degraded mode, flagged via `feasible=False`).
    """
    tok_min = [max(min_tokens(load), load.floor_tokens) for load in loads]
    need = sum(tok_min)
    if need > tok_total:
        return QuotaResult(_distribute(tok_total, tok_min), tok_min, False)
    # Integer priority weights: 1/(q+1) scaled by lcm-ish constant.
    k = len(loads)
    weights = [math.lcm(*range(1, k + 1)) // (q + 1) for q in range(k)]
    surplus = _distribute(tok_total - need, weights)
    return QuotaResult([m + s for m, s in zip(tok_min, surplus)], tok_min, True)


# ---------------------------------------------------------------------------
# Admission interface between scheduler and engine.


@dataclass(frozen=True)
class AdmitOutcome:
    admitted: bool
    blocked_on: Optional[str] = None  # "adapter" | "kv"


class AdmissionOracle(Protocol):
    """Engine-side memory authority consulted during batch generation."""

    def adapter_charge(self, state: RequestState) -> int:
        """Token charge for the request's adapter: its footprint when a load
        would be required, 0 when already resident or in flight."""

    def adapter_fits_free(self, state: RequestState) -> bool:
        """True when the adapter is present/in-flight or fits free cache
        space without any eviction (the bypass precondition)."""

    def try_admit(self, state: RequestState, now: TimePoint) -> AdmitOutcome:
        """Attempt admission; commits reservations and transfers on success."""

    def head_memory_eta(self, state: RequestState, now: TimePoint) -> TimePoint:
        """Estimated time at which the blocked head's memory frees up."""

    def estimate_completion(self, state: RequestState, now: TimePoint) -> TimePoint:
        """Predicted completion time were the request admitted now."""


@dataclass
class BatchResult:
    admitted: list[RequestState]
    budgets: list[int]
    consumed: list[int]
    leftover: int
    stranded: list[int]

    def conservation_holds(self) -> bool:
        return sum(self.consumed) + self.leftover + sum(self.stranded) == sum(self.budgets)


@dataclass
class LayoutSnapshot:
    time: TimePoint
    k: int
    boundaries: list[float]
    quotas: list[int]
    lambdas: list[float]
    feasible: bool


# ---------------------------------------------------------------------------
# Schedulers.


class SchedulerBase:
    """Common queue/quota plumbing; subclasses define ordering policy."""

    supports_bypass = False

    def __init__(self, cfg: SchedulerConfig, tok_total: int):
        self.cfg = cfg
        self.tok_total = tok_total
        self.queues: list[list[RequestState]] = [[]]
        self.quotas: list[int] = [tok_total]
        self.borrowed: list[int] = [0]
        self.pending_ids: set[int] = set()
        self.running: set[RequestState] = set()
        self.snapshots: list[LayoutSnapshot] = []

    # -- queue membership --

    def on_arrival(self, state: RequestState, now: TimePoint) -> None:
        state.wrs = compute_wrs(
            state.spec.input_tokens,
            state.predicted_output_tokens,
            self._rank_of(state),
            self.cfg,
        )
        q = self._choose_queue(state)
        state.queue_index = q
        self.queues[q].append(state)
        self.pending_ids.add(state.request_id)

    def _choose_queue(self, state: RequestState) -> int:
        return 0

    def _rank_of(self, state: RequestState) -> int:
        raise NotImplementedError

    def is_pending(self, request_id: int) -> bool:
        return request_id in self.pending_ids

    def pending_count(self) -> int:
        return len(self.pending_ids)

    def pending_adapter_hints(self) -> set[str]:
        return {s.spec.adapter_id for q in self.queues for s in q}

    def queued_adapter_ids_priority(self) -> Iterable[str]:
        for q in self.queues:
            for s in q:
                yield s.spec.adapter_id

    # -- quota ledger --

    def available_budgets(self) -> list[int]:
        return [max(0, quota - used) for quota, used in zip(self.quotas, self.borrowed)]

    def _commit(self, state: RequestState, queue_index: int, need: int, now: TimePoint) -> None:
        state.queue_index = queue_index
        state.borrowed_quota = need
        state.admit_time = now
        self.borrowed[queue_index] += need
        self.pending_ids.discard(state.request_id)
        self.running.add(state)

    def on_finish(self, state: RequestState) -> None:
        self.borrowed[state.queue_index] -= state.borrowed_quota
        state.borrowed_quota = 0
        self.running.discard(state)

    def refresh(self, now: TimePoint) -> None:
        pass

    def generate_batch(self, now: TimePoint, oracle: AdmissionOracle) -> BatchResult:
        raise NotImplementedError

    # -- shared admission helpers --

    def _need(self, state: RequestState, oracle: AdmissionOracle) -> int:
        return (
            state.spec.input_tokens
            + state.predicted_output_tokens
            + oracle.adapter_charge(state)
        )

    def _put_batch(
        self,
        queue_index: int,
        tokens: int,
        now: TimePoint,
        oracle: AdmissionOracle,
        admitted: list[RequestState],
    ) -> int:
        """Admit from the head of one queue while requests fit the given
        token budget; stops at the first non-fitting head, except that an
        adapter-memory-blocked head may be bypassed by later requests."""
        queue = self.queues[queue_index]
        consumed = 0
        while queue:
            head = queue[0]
            need = self._need(head, oracle)
            if need > tokens - consumed:
                break  # quota block: bypass does not apply
            outcome = oracle.try_admit(head, now)
            if outcome.admitted:
                queue.pop(0)
                self._commit(head, queue_index, need, now)
                admitted.append(head)
                consumed += need
                continue
            if self.supports_bypass and outcome.blocked_on == "adapter":
                consumed += self._try_bypass(
                    queue_index, head, tokens - consumed, now, oracle, admitted
                )
            break
        return consumed

    def _try_bypass(
        self,
        queue_index: int,
        head: RequestState,
        remaining: int,
        now: TimePoint,
        oracle: AdmissionOracle,
        admitted: list[RequestState],
    ) -> int:
        """Let younger requests jump an adapter-memory-blocked head, but only
        when their predicted completion does not outlast the head's wait."""
        eta = oracle.head_memory_eta(head, now)
        queue = self.queues[queue_index]
        consumed = 0
        scanned = 0
        i = 1
        while i < len(queue) and scanned < self.cfg.bypass_scan_limit:
            scanned += 1
            cand = queue[i]
            need = self._need(cand, oracle)
            if (
                need <= remaining - consumed
                and oracle.adapter_fits_free(cand)
                and oracle.estimate_completion(cand, now) <= eta
            ):
                outcome = oracle.try_admit(cand, now)
                if outcome.admitted:
                    queue.pop(i)
                    self._commit(cand, queue_index, need, now)
                    cand.bypass_flag = True
                    cand.bypass_victim = head.request_id
                    admitted.append(cand)
                    consumed += need
                    continue
            i += 1
        return consumed


class FifoScheduler(SchedulerBase):
    """Single queue in arrival order; the head blocks everything behind it."""

    def __init__(self, cfg: SchedulerConfig, tok_total: int, rank_lookup: Callable[[str], int]):
        super().__init__(cfg, tok_total)
        self._rank_lookup = rank_lookup

    def _rank_of(self, state: RequestState) -> int:
        return self._rank_lookup(state.spec.adapter_id)

    def generate_batch(self, now: TimePoint, oracle: AdmissionOracle) -> BatchResult:
        budget = self.available_budgets()[0]
        admitted: list[RequestState] = []
        consumed = self._put_batch(0, budget, now, oracle, admitted)
        drained = not self.queues[0]
        leftover = budget - consumed if drained else 0
        stranded = [0] if drained else [budget - consumed]
        return BatchResult(admitted, [budget], [consumed], leftover, stranded)


class SjfScheduler(FifoScheduler):
    """Speculative shortest-job-first over predicted output length, with an
    optional aging credit; admission still stops at the first non-fit."""

    def generate_batch(self, now: TimePoint, oracle: AdmissionOracle) -> BatchResult:
        aging = self.cfg.sjf_aging
        self.queues[0].sort(
            key=lambda s: (
                s.predicted_output_tokens - aging * (now - s.arrival_time),
                s.arrival_time,
                s.request_id,
            )
        )
        return super().generate_batch(now, oracle)


class MultiQueueScheduler(SchedulerBase):
    """Adapter-aware multi-level queue scheduler with per-queue token quotas,
    two-phase batch generation, bypass, and periodic reconfiguration."""

    supports_bypass = True

    def __init__(
        self,
        cfg: SchedulerConfig,
        tok_total: int,
        rank_lookup: Callable[[str], int],
        size_tokens_lookup: Callable[[int], int],
        duration_estimator: Callable[[int, int, int], Duration],
        rank_values: list[int],
        slo_multiplier: float = 5.0,
    ):
        super().__init__(cfg, tok_total)
        self._rank_lookup = rank_lookup
        self._size_tokens = size_tokens_lookup
        self._estimate_duration = duration_estimator
        self._rank_values = sorted(rank_values)
        self._slo_multiplier = slo_multiplier
        self.layout = QueueLayout(1, [], [], [])
        self.window: list[tuple[TimePoint, float, int, int, int]] = []
        # (finish_time, wrs, e2e_us) of recently completed requests; observed
        # durations recalibrate the per-queue D estimate under load.
        self.finished_window: list[tuple[TimePoint, float, int]] = []

    def _rank_of(self, state: RequestState) -> int:
        return self._rank_lookup(state.spec.adapter_id)

    def _choose_queue(self, state: RequestState) -> int:
        return self.layout.bucket(state.wrs)

    def on_arrival(self, state: RequestState, now: TimePoint) -> None:
        super().on_arrival(state, now)
        self.window.append(
            (
                now,
                state.wrs,
                state.spec.input_tokens,
                state.predicted_output_tokens,
                self._rank_of(state),
            )
        )

    def on_finish(self, state: RequestState) -> None:
        super().on_finish(state)
        if state.finish_time is not None:
            self.finished_window.append(
                (state.finish_time, state.wrs, state.finish_time - state.arrival_time)
            )

    def requeue_squashed(self, state: RequestState, now: TimePoint) -> None:
        """Return a squashed request to its queue, in arrival order."""
        SchedulerBase.on_finish(self, state)
        q = self.layout.bucket(state.wrs)
        state.queue_index = q
        queue = self.queues[q]
        key = (state.arrival_time, state.request_id)
        pos = 0
        while pos < len(queue) and (queue[pos].arrival_time, queue[pos].request_id) < key:
            pos += 1
        queue.insert(pos, state)
        self.pending_ids.add(state.request_id)

    # -- batch generation (two phases) --

    def generate_batch(self, now: TimePoint, oracle: AdmissionOracle) -> BatchResult:
        budgets = self.available_budgets()
        admitted: list[RequestState] = []
        k = len(self.queues)
        phase1 = [0] * k
        consumed = [0] * k
        leftover = 0
        drained = [False] * k
        for q in range(k):
            used = self._put_batch(q, budgets[q], now, oracle, admitted)
            phase1[q] = used
            consumed[q] = used
            if not self.queues[q]:
                drained[q] = True
                leftover += budgets[q] - used
        for q in range(k):
            if leftover <= 0:
                break
            used = self._put_batch(q, leftover, now, oracle, admitted)
            consumed[q] += used
            leftover -= used
        stranded = [0 if drained[q] else budgets[q] - phase1[q] for q in range(k)]
        return BatchResult(admitted, budgets, consumed, leftover, stranded)

    # -- periodic reconfiguration --

    def refresh(self, now: TimePoint) -> None:
        """Refit the queue layout and quotas from the observation window and
        re-bucket pending requests; running requests are unaffected."""
        window_us = self.cfg.refresh_us
        self.window = [s for s in self.window if s[0] > now - window_us]
        self.finished_window = [s for s in self.finished_window if s[0] > now - window_us]
        samples = self.window
        if len(samples) < self.cfg.k_max:
            return
        wrs_values = [s[1] for s in samples]
        layout = fit_layout(wrs_values, self.cfg.k_max)

        mean_in = sum(s[2] for s in samples) / len(samples)
        mean_out = sum(s[3] for s in samples) / len(samples)
        mean_rank = sum(s[4] for s in samples) / len(samples)
        mean_wrs = sum(wrs_values) / len(samples)
        window_s = min(window_us, now) / US_PER_SEC

        loads = []
        for q in range(layout.k):
            bound = layout.boundaries[q] if q < layout.k - 1 else max(wrs_values)
            scale = bound / mean_wrs if mean_wrs > 0 else 1.0
            rep_in = max(1, min(self.cfg.max_input, round(mean_in * scale)))
            rep_out = max(1, min(self.cfg.max_output, round(mean_out * scale)))
            rep_rank = min(self._rank_values, key=lambda r: (abs(r - mean_rank * scale), r))
            count = sum(1 for s in samples if layout.bucket(s[1]) == q)
            # D: the analytic batch-1 duration is a floor; observed in-system
            # durations dominate once the node is loaded and batching
            # stretches every iteration.
            duration = self._estimate_duration(rep_in, rep_out, rep_rank)
            observed = [e2e for _, wrs, e2e in self.finished_window if layout.bucket(wrs) == q]
            if observed:
                duration = max(duration, sum(observed) // len(observed))
            # A backlogged class stops producing finish samples; the age of
            # its oldest waiter is a live lower bound on its duration.
            oldest_wait = max(
                (now - s.arrival_time for y in self.queues for s in y
                 if layout.bucket(s.wrs) == q),
                default=0,
            )
            duration = max(duration, oldest_wait)
            slo = self.cfg.quota_slo_us or int(self._slo_multiplier * duration)
            class_needs = [
                s[2] + s[3] + self._size_tokens(min(self._rank_values, key=lambda r: abs(r - s[4])))
                for s in samples
                if layout.bucket(s[1]) == q
            ]
            loads.append(
                QueueLoad(
                    max_size_tokens=rep_in + rep_out + self._size_tokens(rep_rank),
                    duration_us=duration,
                    arrival_rate=count / window_s if window_s > 0 else 0.0,
                    slo_us=slo,
                    floor_tokens=max(class_needs, default=0),
                )
            )
        result = solve_quotas(loads, self.tok_total)

        pending = sorted(
            (s for q in self.queues for s in q),
            key=lambda s: (s.arrival_time, s.request_id),
        )
        self.layout = layout
        self.queues = [[] for _ in range(layout.k)]
        self.quotas = result.quotas
        for state in pending:
            q = layout.bucket(state.wrs)
            state.queue_index = q
            self.queues[q].append(state)
        # Re-bucket the quota ledger for in-flight requests as well.
        self.borrowed = [0] * layout.k
        for state in self.running:
            q = layout.bucket(state.wrs)
            state.queue_index = q
            self.borrowed[q] += state.borrowed_quota
        self.snapshots.append(
            LayoutSnapshot(
                time=now,
                k=layout.k,
                boundaries=list(layout.boundaries),
                quotas=list(result.quotas),
                lambdas=[load.arrival_rate for load in loads],
                feasible=result.feasible,
            )
        )
