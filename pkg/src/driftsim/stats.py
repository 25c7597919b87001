"""Streaming Monte Carlo statistics with deterministic parallel aggregation.

``MCStats`` is an immutable (count, mean, m2) triple updated one value at a
time (Welford) or merged pairwise (pooled-moment identity).  Aggregation of
a large run set always folds fixed-size chunks in chunk-index order, so the
result is bit-identical for every worker count.

Non-finite inputs poison the accumulator instead of being dropped: Girsanov
weights can explode, and silent averaging would hide it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalFailureError

# Fixed data decomposition for parallel reductions.  The chunk size is a
# constant of the release, not of the worker count: changing --workers must
# not change where chunk boundaries fall, or merge rounding would differ.
CHUNK_RUNS = 65536

# 95% normal-approximation interval.
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class MCStats:
    """Streaming aggregate: count, mean, and sum of squared deviations.

    Attributes:
        count: Number of accumulated values.
        mean: Running mean (0.0 when empty).
        m2: Sum of squared deviations from the mean.
        poisoned: True once any non-finite value was offered.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    poisoned: bool = False

    @property
    def variance(self) -> float:
        """Unbiased sample variance; 0 for fewer than two values."""
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> float:
        if self.count < 1:
            return 0.0
        return math.sqrt(self.variance / self.count)

    @property
    def ci95(self) -> tuple[float, float]:
        """Normal-approximation 95% interval for the mean (approximate)."""
        half = _Z95 * self.stderr
        return (self.mean - half, self.mean + half)

    def require_clean(self, context: str = "statistics") -> "MCStats":
        """Raise loudly if any non-finite value was accumulated."""
        if self.poisoned:
            raise NumericalFailureError(
                f"{context}: non-finite values entered the accumulator"
            )
        return self


def mc_accumulate(stats: MCStats, value: float) -> MCStats:
    """One-pass Welford update; non-finite values set the poisoned flag.

    The poisoned flag propagates through every later update and merge; it is
    never silently cleared.
    """
    if not math.isfinite(value):
        return replace(stats, poisoned=True)
    n = stats.count + 1
    delta = value - stats.mean
    mean = stats.mean + delta / n
    m2 = stats.m2 + delta * (value - mean)
    return MCStats(count=n, mean=mean, m2=m2, poisoned=stats.poisoned)


def mc_merge(a: MCStats, b: MCStats) -> MCStats:
    """Exact pooled-moment merge: equals stats of the concatenated sample."""
    if a.count == 0:
        return replace(b, poisoned=a.poisoned or b.poisoned)
    if b.count == 0:
        return replace(a, poisoned=a.poisoned or b.poisoned)
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return MCStats(count=n, mean=mean, m2=m2, poisoned=a.poisoned or b.poisoned)


def mc_from_samples(values: np.ndarray) -> MCStats:
    """Build MCStats from an array in one vectorized pass.

    Uses a two-pass mean/deviation computation within the array, which is at
    least as stable as Welford for a single chunk.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n == 0:
        return MCStats()
    poisoned = not bool(np.isfinite(values).all())
    if poisoned:
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            return MCStats(poisoned=True)
        values, n = finite, finite.size
    mean = float(values.mean())
    dev = values - mean
    m2 = float(dev @ dev)
    return MCStats(count=n, mean=mean, m2=m2, poisoned=poisoned)


def chunk_bounds(n_runs: int, chunk_runs: int = CHUNK_RUNS) -> list[tuple[int, int]]:
    """Fixed [start, stop) run-index chunks, independent of worker count."""
    return [(s, min(s + chunk_runs, n_runs)) for s in range(0, n_runs, chunk_runs)]


def map_reduce_stats(chunk_fn, n_runs: int, workers: int = 1,
                     chunk_runs: int = CHUNK_RUNS) -> MCStats:
    """Evaluate ``chunk_fn(start, stop) -> ndarray`` over fixed chunks and fold.

    Chunks may be computed by any number of workers, but per-chunk stats are
    always merged sequentially in chunk-index order, so the result is
    bit-identical for every ``workers`` value.
    """
    bounds = chunk_bounds(n_runs, chunk_runs)
    parts = map_chunks(chunk_fn, bounds, workers)
    out = MCStats()
    for part in parts:
        out = mc_merge(out, mc_from_samples(part))
    return out


def map_chunks(chunk_fn, bounds, workers: int = 1) -> list:
    """Run ``chunk_fn`` over chunk bounds, returning results in chunk order."""
    if workers <= 1 or len(bounds) <= 1:
        return [chunk_fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(chunk_fn, s, e) for s, e in bounds]
        return [f.result() for f in futures]
