"""Independent reference implementations used to cross-check the package.

These deliberately share no code with the implementations they verify.
"""
from __future__ import annotations

import random
from collections import OrderedDict


class LruCacheOracle:
    """Plain capacity-limited LRU over (id, size) entries.

    access() returns the ids evicted to make room, oldest first.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: OrderedDict[str, int] = OrderedDict()
        self.used = 0

    def access(self, key: str, size: int) -> list[str]:
        evicted = []
        if key in self.entries:
            self.entries.move_to_end(key)
            return evicted
        while self.used + size > self.capacity and self.entries:
            old, old_size = self.entries.popitem(last=False)
            self.used -= old_size
            evicted.append(old)
        self.entries[key] = size
        self.used += size
        return evicted


def kmeans_1d_optimal(xs: list[float], k: int) -> tuple[float, list[float]]:
    """Exhaustive (dynamic-programming) optimal 1-D k-means.

    Returns (wcss, centroids). O(k * n^2); fine for fixture-sized inputs.
    """
    xs = sorted(xs)
    n = len(xs)
    prefix = [0.0]
    prefix_sq = [0.0]
    for x in xs:
        prefix.append(prefix[-1] + x)
        prefix_sq.append(prefix_sq[-1] + x * x)

    def cost(i: int, j: int) -> float:
        cnt = j - i
        if cnt <= 0:
            return 0.0
        s = prefix[j] - prefix[i]
        sq = prefix_sq[j] - prefix_sq[i]
        return max(sq - s * s / cnt, 0.0)

    inf = float("inf")
    dp = [[inf] * (n + 1) for _ in range(k + 1)]
    cut = [[0] * (n + 1) for _ in range(k + 1)]
    dp[0][0] = 0.0
    for kk in range(1, k + 1):
        for j in range(1, n + 1):
            for i in range(kk - 1, j):
                c = dp[kk - 1][i] + cost(i, j)
                if c < dp[kk][j]:
                    dp[kk][j] = c
                    cut[kk][j] = i
    bounds = []
    j = n
    for kk in range(k, 0, -1):
        i = cut[kk][j]
        bounds.append((i, j))
        j = i
    bounds.reverse()
    centroids = [
        (prefix[hi] - prefix[lo]) / (hi - lo) for lo, hi in bounds if hi > lo
    ]
    return dp[k][n], centroids


def mm1_mean_sojourn(lam: float, mu: float, n_customers: int, seed: int) -> float:
    """Simulate an M/M/1 FIFO queue; returns the mean time in system."""
    rng = random.Random(seed)
    clock = 0.0
    server_free_at = 0.0
    total = 0.0
    for _ in range(n_customers):
        clock += rng.expovariate(lam)
        start = max(clock, server_free_at)
        service = rng.expovariate(mu)
        server_free_at = start + service
        total += server_free_at - clock
    return total / n_customers
