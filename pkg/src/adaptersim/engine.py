"""Deterministic discrete-event core: event loop, iteration-level continuous
batching, parametric cost model, serialized host-device link, and GPU
token-slot memory accounting."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adapter_cache import AdapterCache
from .metrics import MetricsRecord
from .model import (
    AdapterSpec,
    CostModelParams,
    Duration,
    HardwareProfile,
    INF_TIME,
    Phase,
    PrefetchMode,
    RequestSpec,
    RequestState,
    SchedulerPolicy,
    SimulationConfig,
    TimePoint,
    US_PER_SEC,
    validate_config,
)
from .scheduler import (
    AdmitOutcome,
    FifoScheduler,
    LayoutSnapshot,
    MultiQueueScheduler,
    SchedulerBase,
    SjfScheduler,
)
from .workload import OutputPredictor, build_catalog, build_requests


class SimulationInvariantError(AssertionError):
    """A module invariant failed mid-run; the simulation is aborted."""


def _round_us(x: float) -> int:
    return int(x + 0.5)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class CostModel:
    """Linear iteration-time model shared by the engine and estimators."""

    def __init__(self, params: CostModelParams):
        self.p = params

    def step_duration(
        self, prefills: list[RequestState], decoders: list[RequestState],
        rank_of: "dict[str, int]",
    ) -> Duration:
        """Duration of one engine step executing the given mixed batch."""
        p = self.p
        total = p.decode_base_us
        active = 0
        adapter_units = 0.0
        for r in decoders:
            active += r.spec.input_tokens + r.tokens_generated
            adapter_units += rank_of[r.spec.adapter_id]
        total += p.decode_per_token_us * active
        if prefills:
            total += p.prefill_base_us
            for r in prefills:
                total += p.prefill_per_token_us * r.spec.input_tokens
                adapter_units += rank_of[r.spec.adapter_id] * r.spec.input_tokens
        total += p.adapter_compute_per_rank_token_us * adapter_units
        return _round_us(total)

    def prefill_step_us(self, input_tokens: int, rank: int) -> Duration:
        p = self.p
        return _round_us(
            p.decode_base_us
            + p.prefill_base_us
            + p.prefill_per_token_us * input_tokens
            + p.adapter_compute_per_rank_token_us * rank * input_tokens
        )

    def decode_steps_us(self, input_tokens: int, output_tokens: int, rank: int) -> Duration:
        """Sum of the solo decode iterations for tokens 2..output_tokens."""
        if output_tokens <= 1:
            return 0
        p = self.p
        g = np.arange(1, output_tokens)
        base = p.decode_base_us + p.adapter_compute_per_rank_token_us * rank
        steps = np.floor(base + p.decode_per_token_us * (input_tokens + g) + 0.5)
        return int(steps.sum())


class LinkState:
    """Single serialized host-to-device channel; transfers complete in
    enqueue order. The fixed latency is per-transfer pipeline overhead and
    does not occupy the channel."""

    def __init__(self, hardware: HardwareProfile):
        self.bandwidth = hardware.link_bandwidth_bytes_per_sec
        self.fixed_latency = hardware.link_fixed_latency_us
        self.busy_until: TimePoint = 0
        self.cumulative_bytes = 0
        self.transfer_count = 0

    def transfer_us(self, nbytes: int) -> Duration:
        return self.fixed_latency + _ceil_div(nbytes * US_PER_SEC, self.bandwidth)

    def enqueue(self, nbytes: int, now: TimePoint) -> TimePoint:
        start = max(now, self.busy_until)
        occupies = _ceil_div(nbytes * US_PER_SEC, self.bandwidth)
        self.busy_until = start + occupies
        self.cumulative_bytes += nbytes
        self.transfer_count += 1
        return start + self.fixed_latency + occupies


@dataclass
class RunResult:
    records: list[MetricsRecord]
    bytes_transferred: int
    transfer_count: int
    adapter_hits: int
    adapter_misses: int
    evictions: int
    squash_events: int
    steps: int
    sim_end_us: TimePoint
    layout_snapshots: list[LayoutSnapshot]
    queue_admitted: dict[int, int]
    queue_occupancy_mean: dict[int, float]


# event kinds, dispatched in (time, sequence) order
_ARRIVAL, _TRANSFER, _STEP, _REFRESH = 0, 1, 2, 3


class Simulation:
    """One self-contained, strictly single-threaded simulation instance."""

    def __init__(
        self,
        cfg: SimulationConfig,
        specs: Optional[list[RequestSpec]] = None,
        scheduler: Optional[SchedulerBase] = None,
    ):
        self.cfg = validate_config(cfg)
        self.catalog: dict[str, AdapterSpec] = build_catalog(cfg.workload, cfg.hardware)
        self.specs = specs if specs is not None else build_requests(cfg.workload, self.catalog)
        self.rank_of = {aid: spec.rank for aid, spec in self.catalog.items()}
        self.size_tokens_of = {aid: spec.size_tokens for aid, spec in self.catalog.items()}
        self.cost = CostModel(cfg.cost)
        self.link = LinkState(cfg.hardware)
        self.cache = AdapterCache(cfg.cache, self.catalog)
        self.tok_total = int(cfg.hardware.total_token_slots * cfg.scheduler.quota_fraction)
        self.scheduler = scheduler if scheduler is not None else self._build_scheduler()

        predictor = OutputPredictor(cfg.predictor, cfg.workload.seed + 1)
        self.states = [
            RequestState(spec, predictor.predict(spec.actual_output_tokens))
            for spec in self.specs
        ]

        self.now: TimePoint = 0
        self._seq = 0
        self._heap: list[tuple[int, int, int, object]] = []
        self.step_active = False
        self.current_step: tuple[list[RequestState], list[RequestState]] = ([], [])
        self.decoding: list[RequestState] = []
        self.ready_prefills: list[RequestState] = []
        self.waiters: dict[str, list[RequestState]] = {}
        self.in_flight: dict[str, TimePoint] = {}
        self.kv_actual = 0
        self.kv_reserved = 0
        self.arrivals_seen = 0
        self.completed = 0
        self.finished_ids: set[int] = set()
        self.records: list[MetricsRecord] = []
        self.adapter_hits = 0
        self.adapter_misses = 0
        self.squash_events = 0
        self.steps = 0
        self.queue_admitted: dict[int, int] = {}
        self._occupancy_sum: dict[int, int] = {}
        self._occupancy_samples = 0
        self._step_ema: float = float(cfg.cost.decode_base_us)
        self._hints: set[str] = set()
        self._oracle = _Oracle(self)

    def _build_scheduler(self) -> SchedulerBase:
        s = self.cfg.scheduler
        if s.policy is SchedulerPolicy.FIFO:
            return FifoScheduler(s, self.tok_total, self.rank_of.__getitem__)
        if s.policy is SchedulerPolicy.SJF:
            return SjfScheduler(s, self.tok_total, self.rank_of.__getitem__)
        ranks = sorted({spec.rank for spec in self.catalog.values()})
        return MultiQueueScheduler(
            s,
            self.tok_total,
            self.rank_of.__getitem__,
            lambda rank: self.size_tokens_of[self._any_adapter_of_rank(rank)],
            self.isolated_us,
            ranks,
            self.cfg.slo.slo_multiplier,
        )

    def _any_adapter_of_rank(self, rank: int) -> str:
        return f"r{rank}-0"

    # -- analytic oracles ---------------------------------------------------

    def isolated_us(self, input_tokens: int, output_tokens: int, rank: int) -> Duration:
        """E2E duration for batch-size-1 execution with a cold adapter."""
        nbytes = self.cfg.hardware.bytes_per_rank_unit * rank
        return (
            self.link.transfer_us(nbytes)
            + self.cost.prefill_step_us(input_tokens, rank)
            + self.cost.decode_steps_us(input_tokens, output_tokens, rank)
        )

    def isolated_time(self, spec: RequestSpec) -> Duration:
        return self.isolated_us(
            spec.input_tokens, spec.actual_output_tokens, self.rank_of[spec.adapter_id]
        )

    # -- event plumbing -------------------------------------------------------

    def _push(self, time: TimePoint, kind: int, payload: object = None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))

    def run(self) -> RunResult:
        for state in self.states:
            self._push(state.spec.arrival_time, _ARRIVAL, state)
        if isinstance(self.scheduler, MultiQueueScheduler):
            self._push(self.cfg.scheduler.refresh_us, _REFRESH)

        while self._heap:
            time, _, kind, payload = heapq.heappop(self._heap)
            self.now = time
            if kind == _ARRIVAL:
                self._on_arrival(payload)
            elif kind == _TRANSFER:
                self._on_transfer_complete(payload)
            elif kind == _STEP:
                self._on_step_complete()
            elif kind == _REFRESH:
                self._on_refresh()
            if not self.step_active:
                self._try_schedule()

        if self.completed != len(self.states):
            raise SimulationInvariantError(
                f"deadlock: {len(self.states) - self.completed} requests never "
                "finished (a request may be larger than the available resources)"
            )
        recount = self.cache.resident_tokens_recount()
        if recount != self.cache.used_tokens:
            raise SimulationInvariantError(
                f"cache accounting drift: recount {recount} != used {self.cache.used_tokens}"
            )
        occupancy = {
            q: total / self._occupancy_samples
            for q, total in sorted(self._occupancy_sum.items())
        } if self._occupancy_samples else {}
        return RunResult(
            records=sorted(self.records, key=lambda r: r.request_id),
            bytes_transferred=self.link.cumulative_bytes,
            transfer_count=self.link.transfer_count,
            adapter_hits=self.adapter_hits,
            adapter_misses=self.adapter_misses,
            evictions=self.cache.evictions,
            squash_events=self.squash_events,
            steps=self.steps,
            sim_end_us=self.now,
            layout_snapshots=list(getattr(self.scheduler, "snapshots", [])),
            queue_admitted=dict(sorted(self.queue_admitted.items())),
            queue_occupancy_mean=occupancy,
        )

    # -- event handlers -------------------------------------------------------

    def _on_arrival(self, state: RequestState) -> None:
        self.arrivals_seen += 1
        self.cache.note_arrival(state.spec.adapter_id, self.now)
        self.scheduler.on_arrival(state, self.now)

    def _on_transfer_complete(self, adapter_id: str) -> None:
        self.cache.finish_load(adapter_id, self.now)
        self.in_flight.pop(adapter_id, None)
        for state in self.waiters.pop(adapter_id, []):
            self.cache.take_ref(adapter_id, self.now)
            state.adapter_ready = True
            state.phase = Phase.PREFILL
            self.ready_prefills.append(state)

    def _on_refresh(self) -> None:
        self.scheduler.refresh(self.now)
        if self._activity_remains():
            self._push(self.now + self.cfg.scheduler.refresh_us, _REFRESH)

    def _activity_remains(self) -> bool:
        return bool(
            self.arrivals_seen < len(self.states)
            or self.scheduler.pending_count()
            or self.decoding
            or self.ready_prefills
            or self.step_active
            or self.in_flight
        )

    def _on_step_complete(self) -> None:
        prefills, decoders = self.current_step
        self.step_active = False
        for r in prefills:
            r.tokens_generated = 1
            r.first_token_time = self.now
            r.last_token_time = self.now
            self.kv_actual += 1
            if r.tokens_generated >= r.spec.actual_output_tokens:
                self._finish(r)
            else:
                r.phase = Phase.DECODE
                self.decoding.append(r)
        for r in decoders:
            r.tokens_generated += 1
            r.tbt_samples.append(self.now - r.last_token_time)
            r.last_token_time = self.now
            self.kv_actual += 1
            if r.tokens_generated >= r.spec.actual_output_tokens:
                self._finish(r)
                continue
            if r.tokens_generated >= r.predicted_output_tokens:
                # Output ran past the prediction: grow the reservation so the
                # next token has a slot; the cache shrinks to compensate.
                if r.reserved_tokens < r.spec.input_tokens + r.tokens_generated + 1:
                    r.reserved_tokens += 1
                    self.kv_reserved += 1
            if r.bypass_victim is not None and r.tokens_generated > r.predicted_output_tokens:
                if self.scheduler.is_pending(r.bypass_victim):
                    self._squash(r)
                else:
                    r.bypass_victim = None

    def _release_memory(self, r: RequestState) -> None:
        self.kv_actual -= r.spec.input_tokens + r.tokens_generated
        self.kv_reserved -= r.reserved_tokens
        r.reserved_tokens = 0
        self.cache.release(r.spec.adapter_id, self.now)

    def _finish(self, r: RequestState) -> None:
        if r.request_id in self.finished_ids:
            raise SimulationInvariantError(f"request {r.request_id} finished twice")
        self.finished_ids.add(r.request_id)
        r.phase = Phase.FINISHED
        r.finish_time = self.now
        self._release_memory(r)
        self.scheduler.on_finish(r)
        if r in self.decoding:
            self.decoding.remove(r)
        self.completed += 1
        tbt = r.tbt_samples
        self.records.append(
            MetricsRecord(
                request_id=r.request_id,
                arrival_us=r.arrival_time,
                queue=r.queue_index,
                wrs=r.wrs,
                adapter_id=r.spec.adapter_id,
                rank=self.rank_of[r.spec.adapter_id],
                ttft_us=r.first_token_time - r.arrival_time,
                e2e_us=r.finish_time - r.arrival_time,
                mean_tbt_us=(sum(tbt) / len(tbt)) if tbt else 0.0,
                slowdown=(r.finish_time - r.arrival_time) / self.isolated_time(r.spec),
                squashes=r.squash_count,
                adapter_hit=r.adapter_hit,
                bypassed=r.bypass_flag,
                tbt_samples=list(tbt),
            )
        )

    def _squash(self, r: RequestState) -> None:
        """Abort a bypass request that outran its prediction; it re-enters its
        queue (arrival order) and restarts from prefill when re-admitted."""
        self.squash_events += 1
        r.squash_count += 1
        self._release_memory(r)
        self.decoding.remove(r)
        r.phase = Phase.SQUASHED
        r.tokens_generated = 0
        r.first_token_time = None
        r.last_token_time = None
        r.tbt_samples = []
        r.bypass_victim = None
        r.adapter_ready = False
        r.phase = Phase.QUEUED
        self.scheduler.requeue_squashed(r, self.now)

    # -- scheduling -----------------------------------------------------------

    def _cache_capacity_target(self, kv_reserved: int) -> int:
        cap = self.cfg.hardware.total_token_slots - kv_reserved
        if self.cfg.cache.token_cap is not None:
            cap = min(cap, self.cfg.cache.token_cap)
        return max(cap, 0)

    def _assert_memory(self) -> None:
        if self.kv_actual + self.cache.used_tokens > self.cfg.hardware.total_token_slots:
            raise SimulationInvariantError(
                f"memory ledger exceeded: kv={self.kv_actual} "
                f"cache={self.cache.used_tokens} > {self.cfg.hardware.total_token_slots}"
            )

    def _try_schedule(self) -> None:
        self._hints = self.scheduler.pending_adapter_hints()
        self.cache.set_capacity(
            self._cache_capacity_target(self.kv_reserved), self._hints, self.now
        )
        self._assert_memory()

        result = self.scheduler.generate_batch(self.now, self._oracle)
        if not result.conservation_holds():
            raise SimulationInvariantError(
                f"quota conservation violated at t={self.now}: {result}"
            )
        for state in result.admitted:
            self.queue_admitted[state.queue_index] = (
                self.queue_admitted.get(state.queue_index, 0) + 1
            )
        for q, queue in enumerate(self.scheduler.queues):
            self._occupancy_sum[q] = self._occupancy_sum.get(q, 0) + len(queue)
        self._occupancy_samples += 1

        if self.cfg.cache.prefetch is not PrefetchMode.OFF:
            self._issue_prefetches()

        prefills = self.ready_prefills
        decoders = self.decoding
        if not prefills and not decoders:
            return
        duration = self.cost.step_duration(prefills, decoders, self.rank_of)
        for r in prefills:
            self.kv_actual += r.spec.input_tokens
        self.ready_prefills = []
        self.current_step = (prefills, list(decoders))
        self.step_active = True
        self.steps += 1
        self._step_ema = 0.8 * self._step_ema + 0.2 * duration
        self._push(self.now + duration, _STEP)

    def _issue_prefetches(self) -> None:
        candidates = self.cache.prefetch_candidates(
            self.scheduler.queued_adapter_ids_priority(),
            self.cache.free_tokens,
            self.now,
        )
        for aid in candidates:
            if aid in self.in_flight:
                continue
            self.cache.begin_load(aid, self.now)
            completion = self.link.enqueue(self.catalog[aid].size_bytes, self.now)
            self.in_flight[aid] = completion
            self.waiters.setdefault(aid, [])
            self._push(completion, _TRANSFER, aid)


class _Oracle:
    """Memory authority the scheduler consults while assembling a batch."""

    def __init__(self, sim: Simulation):
        self.sim = sim

    def adapter_charge(self, state: RequestState) -> int:
        entry = self.sim.cache.lookup(state.spec.adapter_id)
        if entry.resident or entry.loading:
            return 0
        return entry.size_tokens

    def adapter_fits_free(self, state: RequestState) -> bool:
        entry = self.sim.cache.lookup(state.spec.adapter_id)
        if entry.resident or entry.loading:
            return True
        return entry.size_tokens <= self.sim.cache.free_tokens

    def try_admit(self, state: RequestState, now: TimePoint) -> AdmitOutcome:
        sim = self.sim
        entry = sim.cache.lookup(state.spec.adapter_id)
        if (entry.resident and entry.rc > 0) or entry.loading:
            ne_extra = 0
        else:
            ne_extra = entry.size_tokens
        reservation = state.spec.input_tokens + state.predicted_output_tokens
        cap_after = sim._cache_capacity_target(sim.kv_reserved + reservation)
        non_evictable = sim.cache.non_evictable_tokens
        if non_evictable + ne_extra > cap_after:
            blocked = "kv" if non_evictable > cap_after else "adapter"
            return AdmitOutcome(False, blocked)

        state.reserved_tokens = reservation
        sim.kv_reserved += reservation
        # Take the reference before shrinking so the shrink cannot evict the
        # very adapter this admission needs.
        result = sim.cache.acquire(state.spec.adapter_id, now)
        sim.cache.set_capacity(cap_after, sim._hints, now)
        if result.hit:
            sim.adapter_hits += 1
            state.adapter_hit = True
            state.adapter_ready = True
            state.phase = Phase.PREFILL
            sim.ready_prefills.append(state)
            return AdmitOutcome(True)
        sim.adapter_misses += 1
        state.adapter_hit = False
        state.adapter_ready = False
        state.phase = Phase.LOADING_ADAPTER
        aid = state.spec.adapter_id
        if aid in sim.in_flight:
            sim.waiters[aid].append(state)
        else:
            sim.cache.evict_until(entry.size_tokens, sim._hints, now)
            sim.cache.begin_load(aid, now)
            completion = sim.link.enqueue(result.load_bytes, now)
            sim.in_flight[aid] = completion
            sim.waiters[aid] = [state]
            sim._push(completion, _TRANSFER, aid)
        return AdmitOutcome(True)

    def head_memory_eta(self, state: RequestState, now: TimePoint) -> TimePoint:
        """When the blocked head's memory should free up: walk running
        requests in estimated finish order, accumulating the KV reservations
        and sole-user adapter footprints they will release, until the head's
        deficit is covered."""
        sim = self.sim
        if not sim.decoding:
            return INF_TIME
        entry = sim.cache.lookup(state.spec.adapter_id)
        ne_extra = 0 if (entry.rc > 0 or entry.loading or entry.resident) else entry.size_tokens
        reservation = state.spec.input_tokens + state.predicted_output_tokens
        cap_after = sim._cache_capacity_target(sim.kv_reserved + reservation)
        deficit = max(sim.cache.non_evictable_tokens + ne_extra - cap_after, 1)
        step = max(sim._step_ema, 1.0)
        holders: dict[str, int] = {}
        for r in sim.decoding:
            holders[r.spec.adapter_id] = holders.get(r.spec.adapter_id, 0) + 1
        finishes = sorted(
            (
                now + _round_us(max(r.predicted_output_tokens - r.tokens_generated, 1) * step),
                r.request_id,
                r,
            )
            for r in sim.decoding
        )
        freed = 0
        for finish_time, _, r in finishes:
            freed += r.reserved_tokens
            if holders[r.spec.adapter_id] == 1:
                freed += sim.cache.lookup(r.spec.adapter_id).size_tokens
            if freed >= deficit:
                return finish_time
        return finishes[-1][0]

    def estimate_completion(self, state: RequestState, now: TimePoint) -> TimePoint:
        sim = self.sim
        aid = state.spec.adapter_id
        entry = sim.cache.lookup(aid)
        t = now
        if not entry.resident:
            if aid in sim.in_flight:
                t = max(t, sim.in_flight[aid])
            else:
                t += sim.link.transfer_us(entry.spec.size_bytes)
        rank = sim.rank_of[aid]
        t += sim.cost.prefill_step_us(state.spec.input_tokens, rank)
        step = max(sim._step_ema, 1.0)
        t += _round_us(max(state.predicted_output_tokens - 1, 0) * step)
        return t


def simulate(
    cfg: SimulationConfig,
    specs: Optional[list[RequestSpec]] = None,
    scheduler: Optional[SchedulerBase] = None,
) -> RunResult:
    """Build and run one simulation; identical (config, specs) inputs produce
    identical results."""
    return Simulation(cfg, specs=specs, scheduler=scheduler).run()
