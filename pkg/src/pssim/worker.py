"""Simulated edge-device workers.

A worker's iteration spans two activations: it pulls a parameter snapshot and
samples a mini-batch at one activation, and delivers the resulting update at
the next, so other workers' pushes land in between and create staleness.
Batches are drawn uniformly with replacement from the worker's private shard.
After every delivered push the worker crashes with its configured
probability; a crashed worker is fail-stop and its shard leaves the system
with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compression import DenseUpdate, SelectionPolicy, SparseUpdate, make_update
from .errors import ConfigurationError
from .nn import ModelArch, ParamVector, sgd_step

FAST = "fast"
MEDIUM = "medium"
SLOW = "slow"
SPEED_CLASSES = (FAST, MEDIUM, SLOW)

# Mean activation period per class; 1:10:100 so expected push rates are 100:10:1.
BASE_DELAY = {FAST: 1.0, MEDIUM: 10.0, SLOW: 100.0}
DELAY_JITTER = (0.5, 1.5)  # uniform factor on the base period


def assign_speed_classes(n: int, mix: tuple[float, float, float]) -> list[str]:
    """Deterministic largest-remainder allocation of n workers to classes,
    in worker-id order (fast block, then medium, then slow)."""
    if len(mix) != 3 or any(f < 0 for f in mix):
        raise ConfigurationError(f"speed mix {mix} must be three nonnegative fractions")
    if abs(sum(mix) - 1.0) > 1e-9:
        raise ConfigurationError(f"speed mix {mix} must sum to 1")
    raw = [f * n for f in mix]
    counts = [int(r) for r in raw]
    remainders = sorted(
        range(3), key=lambda c: (-(raw[c] - counts[c]), c)
    )
    for c in remainders[: n - sum(counts)]:
        counts[c] += 1
    out: list[str] = []
    for cls, count in zip(SPEED_CLASSES, counts):
        out.extend([cls] * count)
    return out


@dataclass
class Worker:
    worker_id: int
    shard: np.ndarray  # indices into the shared training arrays
    batch_size: int
    arch: ModelArch
    train_x: np.ndarray
    train_y: np.ndarray
    protocol: str
    policy: SelectionPolicy | None
    speed_class: str
    crash_prob: float
    sample_rng: np.random.Generator
    delay_rng: np.random.Generator
    crash_rng: np.random.Generator
    select_rng: np.random.Generator
    alive: bool = True
    pushes: int = 0
    _snapshot: np.ndarray | None = field(default=None, repr=False)
    _pull_timestamp: int = 0
    _batch: np.ndarray | None = field(default=None, repr=False)

    @property
    def has_pending(self) -> bool:
        return self._snapshot is not None

    def begin_iteration(self, values: np.ndarray, timestamp: int) -> None:
        """Store the pulled snapshot and draw this iteration's mini-batch."""
        self._snapshot = values
        self._pull_timestamp = timestamp
        self._batch = self.shard[
            self.sample_rng.integers(0, len(self.shard), size=self.batch_size)
        ]

    def compute_update(self) -> SparseUpdate | DenseUpdate:
        """Run one mini-batch step on the stored snapshot and compress it.
        Consumes the pending iteration."""
        theta = ParamVector(self._snapshot, self.arch.segments, self._pull_timestamp)
        xb = self.train_x[self._batch]
        yb = self.train_y[self._batch]
        j = self._pull_timestamp
        self._snapshot = None
        self._batch = None
        grad = sgd_step(self.arch, theta, xb, yb)
        if self.policy is None:
            return DenseUpdate(grad, j, self.worker_id)
        return make_update(
            grad, self.arch.segments, self.policy, j, self.worker_id, self.select_rng
        )

    def next_delay(self) -> float:
        """Simulated time until this worker's next activation."""
        return BASE_DELAY[self.speed_class] * self.delay_rng.uniform(*DELAY_JITTER)

    def draw_crash(self) -> bool:
        """Post-push fail-stop draw; True means the worker just died."""
        return self.crash_rng.random() < self.crash_prob
