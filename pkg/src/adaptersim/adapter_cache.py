"""GPU-resident adapter store with dynamic capacity, compound cost-aware
eviction, reference counting, and queue-driven prefetch.

The same implementation backs the LRU and FairShare baselines (they differ
only in score weights) and the no-cache baseline (entries are dropped as
soon as their reference count hits zero).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import AdapterSpec, CacheConfig, CachePolicy, PrefetchMode, TimePoint


class InsufficientEvictableMemory(RuntimeError):
    """Even evicting every RC=0 entry cannot free the requested space."""


class CacheFault(AssertionError):
    """A cache operation violated a precondition (logic fault)."""


@dataclass
class AdapterEntry:
    """Residency state and eviction metadata for one adapter.

    Usage history survives eviction so a reloaded adapter keeps its
    frequency standing within the sliding window.
    """

    spec: AdapterSpec
    last_used: TimePoint = 0
    rc: int = 0
    resident: bool = False
    loading: bool = False
    use_events: deque = field(default_factory=deque)

    @property
    def size_tokens(self) -> int:
        return self.spec.size_tokens

    def frequency(self, now: TimePoint, window_us: int) -> int:
        cutoff = now - window_us
        events = self.use_events
        while events and events[0] <= cutoff:
            events.popleft()
        return len(events)


@dataclass(frozen=True)
class AcquireResult:
    hit: bool
    load_bytes: int = 0


_POLICY_WEIGHTS = {
    CachePolicy.LRU: (0.0, 1.0, 0.0),
    CachePolicy.FAIRSHARE: (1 / 3, 1 / 3, 1 / 3),
}


class AdapterCache:
    """Adapter cache for a single simulated node.

    All operations are synchronous state transitions invoked by the engine;
    `capacity_tokens` is pushed down by the engine before every scheduling
    step and never drops below the footprint of in-use entries.
    """

    def __init__(self, cfg: CacheConfig, catalog: dict[str, AdapterSpec]):
        self.cfg = cfg
        if cfg.policy in _POLICY_WEIGHTS:
            self.weights = _POLICY_WEIGHTS[cfg.policy]
        else:
            self.weights = (cfg.weight_frequency, cfg.weight_recency, cfg.weight_size)
        self.entries = {aid: AdapterEntry(spec) for aid, spec in catalog.items()}
        self.capacity_tokens = 0
        self.used_tokens = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.loads = 0
        self._arrivals: dict[str, deque] = {}

    # -- residency and reference counting ---------------------------------

    def lookup(self, adapter_id: str) -> AdapterEntry:
        return self.entries[adapter_id]

    @property
    def free_tokens(self) -> int:
        return self.capacity_tokens - self.used_tokens

    @property
    def non_evictable_tokens(self) -> int:
        return sum(
            e.size_tokens
            for e in self.entries.values()
            if (e.resident and e.rc > 0) or e.loading
        )

    def resident_tokens_recount(self) -> int:
        """Recompute occupancy from scratch (accounting cross-check)."""
        return sum(
            e.size_tokens for e in self.entries.values() if e.resident or e.loading
        )

    def acquire(self, adapter_id: str, now: TimePoint) -> AcquireResult:
        """Take a reference if resident; otherwise report the bytes to load."""
        entry = self.entries[adapter_id]
        if entry.resident:
            entry.rc += 1
            entry.last_used = now
            entry.use_events.append(now)
            self.hits += 1
            return AcquireResult(hit=True)
        self.misses += 1
        return AcquireResult(hit=False, load_bytes=entry.spec.size_bytes)

    def take_ref(self, adapter_id: str, now: TimePoint) -> None:
        """Reference a just-loaded adapter (the miss was already counted)."""
        entry = self.entries[adapter_id]
        if not entry.resident:
            raise CacheFault(f"take_ref on non-resident adapter {adapter_id}")
        entry.rc += 1
        entry.last_used = now
        entry.use_events.append(now)

    def release(self, adapter_id: str, now: TimePoint) -> None:
        """Drop one reference; the entry stays resident (RC=0 makes it
        eviction-eligible, it is not discarded)."""
        entry = self.entries[adapter_id]
        if entry.rc < 1:
            raise CacheFault(f"release on adapter {adapter_id} with RC=0")
        entry.rc -= 1
        if entry.rc == 0 and self.cfg.policy is CachePolicy.NONE:
            # No-cache baseline: unused adapters leave GPU memory at once.
            entry.resident = False
            self.used_tokens -= entry.size_tokens

    def begin_load(self, adapter_id: str, now: TimePoint) -> None:
        """Reserve space for an in-flight transfer (caller made room)."""
        entry = self.entries[adapter_id]
        if entry.resident or entry.loading:
            raise CacheFault(f"begin_load on already-present adapter {adapter_id}")
        entry.loading = True
        self.used_tokens += entry.size_tokens
        self.loads += 1

    def finish_load(self, adapter_id: str, now: TimePoint) -> None:
        entry = self.entries[adapter_id]
        if not entry.loading:
            raise CacheFault(f"finish_load without begin_load for {adapter_id}")
        entry.loading = False
        entry.resident = True
        entry.last_used = now

    # -- scoring and eviction ----------------------------------------------

    def score(
        self,
        entry: AdapterEntry,
        candidates: list[AdapterEntry],
        now: TimePoint,
        weights: Optional[tuple[float, float, float]] = None,
    ) -> float:
        """Compound eviction score; higher means more valuable to keep.

        Each feature is min-max normalized to [0, 1] over the eligible
        candidate set (an all-equal feature normalizes to 1), so the three
        weights stay comparable regardless of units. Recency is the
        normalized last-used timestamp: most recent -> 1.
        """
        wf, wr, ws = weights if weights is not None else self.weights
        window = self.cfg.frequency_window_us
        freqs = [c.frequency(now, window) for c in candidates]
        recs = [c.last_used for c in candidates]
        # Reload cost spans more than an order of magnitude across ranks;
        # compress it log-scale so min-max does not turn the size feature
        # into a plain big-adapter indicator.
        sizes = [math.log2(c.size_tokens) for c in candidates]

        def norm(value: float, values: list) -> float:
            lo, hi = min(values), max(values)
            if hi == lo:
                return 1.0
            return (value - lo) / (hi - lo)

        return (
            wf * norm(entry.frequency(now, window), freqs)
            + wr * norm(entry.last_used, recs)
            + ws * norm(math.log2(entry.size_tokens), sizes)
        )

    def _eligible(self) -> list[AdapterEntry]:
        return [
            e for e in self.entries.values()
            if e.resident and e.rc == 0 and not e.loading
        ]

    def _pick_victim(self, hints: set[str], now: TimePoint) -> Optional[AdapterEntry]:
        """Lowest-score eligible entry; adapters wanted by queued requests
        form a second tier, touched only once the first is exhausted."""
        eligible = self._eligible()
        if not eligible:
            return None
        tier = [e for e in eligible if e.spec.adapter_id not in hints] or eligible
        return min(
            tier,
            key=lambda e: (
                self.score(e, eligible, now),
                e.size_tokens,
                e.spec.adapter_id,
            ),
        )

    def _evict(self, entry: AdapterEntry) -> str:
        if entry.rc != 0 or entry.loading:
            raise CacheFault(f"attempted to evict in-use adapter {entry.spec.adapter_id}")
        entry.resident = False
        self.used_tokens -= entry.size_tokens
        self.evictions += 1
        return entry.spec.adapter_id

    def evict_until(
        self, needed_tokens: int, hints: set[str], now: TimePoint
    ) -> list[str]:
        """Evict lowest-score entries until free space >= needed_tokens.

        Atomic: if the target is unreachable even after evicting every RC=0
        entry, nothing is evicted and InsufficientEvictableMemory is raised
        so the scheduler can defer admission.
        """
        if self.free_tokens >= needed_tokens:
            return []
        evictable = sum(e.size_tokens for e in self._eligible())
        if self.free_tokens + evictable < needed_tokens:
            raise InsufficientEvictableMemory(
                f"need {needed_tokens} tokens, only {self.free_tokens + evictable} freeable"
            )
        evicted = []
        while self.free_tokens < needed_tokens:
            victim = self._pick_victim(hints, now)
            evicted.append(self._evict(victim))
        return evicted

    def set_capacity(self, tokens: int, hints: set[str], now: TimePoint) -> list[str]:
        """Resize to the engine-supplied capacity, shrinking by eviction.

        Capacity never drops below current in-use occupancy: active and
        in-flight adapters are not evictable.
        """
        evicted = []
        while self.used_tokens > tokens:
            victim = self._pick_victim(hints, now)
            if victim is None:
                break
            evicted.append(self._evict(victim))
        self.capacity_tokens = max(tokens, self.used_tokens)
        return evicted

    # -- prefetch ------------------------------------------------------------

    def note_arrival(self, adapter_id: str, now: TimePoint) -> None:
        """Record a request arrival for the histogram prefetcher."""
        if self.cfg.prefetch is not PrefetchMode.HISTOGRAM:
            return
        self._arrivals.setdefault(adapter_id, deque()).append(now)

    def _arrival_count(self, adapter_id: str, now: TimePoint) -> int:
        events = self._arrivals.get(adapter_id)
        if not events:
            return 0
        cutoff = now - self.cfg.frequency_window_us
        while events and events[0] <= cutoff:
            events.popleft()
        return len(events)

    def prefetch_candidates(
        self,
        queued_adapter_ids: Iterable[str],
        free_tokens: int,
        now: TimePoint,
    ) -> list[str]:
        """Missing adapters worth loading into currently free space.

        Queue-driven mode walks queued requests in priority order; histogram
        mode additionally ranks non-queued adapters by their arrival count
        in the last window. Never requires eviction: candidates are chosen
        greedily while they fit in free_tokens.
        """
        if self.cfg.prefetch is PrefetchMode.OFF:
            return []
        chosen: list[str] = []
        chosen_set: set[str] = set()
        budget = free_tokens
        queued_list = list(queued_adapter_ids)
        for aid in queued_list:
            entry = self.entries[aid]
            if entry.resident or entry.loading or aid in chosen_set:
                continue
            if entry.size_tokens <= budget:
                chosen.append(aid)
                chosen_set.add(aid)
                budget -= entry.size_tokens
        if self.cfg.prefetch is PrefetchMode.HISTOGRAM:
            queued_set = set(queued_list)
            ranked = sorted(
                (
                    (self._arrival_count(aid, now), aid)
                    for aid, entry in self.entries.items()
                    if not entry.resident and not entry.loading
                    and aid not in chosen_set and aid not in queued_set
                ),
                key=lambda pair: (-pair[0], pair[1]),
            )
            for count, aid in ranked:
                if count == 0:
                    break
                size = self.entries[aid].size_tokens
                if size <= budget:
                    chosen.append(aid)
                    chosen_set.add(aid)
                    budget -= size
        return chosen
