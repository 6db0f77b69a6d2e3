"""Server-side history of recent update index-sets.

The ledger answers "how many of the updates applied in [j, i) touched
coordinate k" with one binary search per retained record, while holding only
the index lists of updates that some outstanding pull might still query.
Eviction is driven by the oldest outstanding pull timestamp, so retained
memory is bounded by the worst pull-to-push delay times the update size.
"""

from __future__ import annotations

from collections import deque
from itertools import islice

import numpy as np

from .errors import LedgerError, StalenessUnavailableError


class UpdateLedger:
    """Consecutive (timestamp, sorted index array) records, oldest first."""

    def __init__(self):
        self._records: deque[np.ndarray] = deque()
        self._base = 0  # timestamp of the oldest retained record

    def __len__(self) -> int:
        return len(self._records)

    @property
    def oldest_timestamp(self) -> int | None:
        return self._base if self._records else None

    @property
    def next_timestamp(self) -> int:
        """Timestamp the next record must carry."""
        return self._base + len(self._records)

    def record(self, timestamp: int, indices: np.ndarray) -> None:
        """Append the index set of the update applied at ``timestamp``."""
        if not self._records:
            self._base = timestamp
        elif timestamp != self.next_timestamp:
            raise LedgerError(
                f"timestamp gap: expected {self.next_timestamp}, got {timestamp}"
            )
        self._records.append(np.ascontiguousarray(indices, dtype=np.int64))

    def evict_older_than(self, min_timestamp: int) -> None:
        """Drop records no outstanding pull can still query (t < min_timestamp)."""
        while self._records and self._base < min_timestamp:
            self._records.popleft()
            self._base += 1

    def retained_index_count(self) -> int:
        return sum(len(rec) for rec in self._records)

    def _window(self, j: int, i: int):
        if j > i:
            raise LedgerError(f"pull timestamp {j} exceeds current timestamp {i}")
        if j == i:
            return ()
        if i > self.next_timestamp:
            raise LedgerError(
                f"window [{j}, {i}) reaches past last recorded update "
                f"{self.next_timestamp - 1}"
            )
        if not self._records or j < self._base:
            raise StalenessUnavailableError(
                f"window [{j}, {i}) partially evicted; oldest retained is "
                f"{self.oldest_timestamp}"
            )
        return islice(self._records, j - self._base, i - self._base)

    def staleness_many(self, keys: np.ndarray, j: int, i: int) -> np.ndarray:
        """Per-coordinate staleness for each key: the number of updates in
        [j, i) whose index set contains the key."""
        keys = np.asarray(keys, dtype=np.int64)
        counts = np.zeros(len(keys), dtype=np.int64)
        for rec in self._window(j, i):
            if not len(rec):
                continue
            pos = np.minimum(np.searchsorted(rec, keys), len(rec) - 1)
            counts += rec[pos] == keys
        return counts

    def staleness(self, k: int, j: int, i: int) -> int:
        """Staleness of a single coordinate."""
        return int(self.staleness_many(np.array([k]), j, i)[0])


def modulated_rate(alpha: float, sigma: int) -> float:
    """Learning rate after staleness modulation: alpha when sigma is 0,
    alpha / sigma otherwise."""
    if sigma < 0:
        raise ValueError("staleness must be nonnegative")
    return alpha if sigma == 0 else alpha / sigma
