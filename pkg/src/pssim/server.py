"""The parameter server: authoritative parameters, pulls, and update application.

The server is a single logical event handler; the simulator delivers pushes
one at a time in simulated-time order.  Each accepted push advances the
timestamp by exactly one, whatever the protocol:

* ``asgd``       dense updates, one global rate alpha / max(1, i - j)
* ``comp_asgd``  sparse updates, same global rate rule
* ``adacomp``    sparse updates, per-coordinate rate alpha / max(1, sigma_k)
                 with sigma_k counted from the update ledger

Ingress accounting charges every push, including rejected ones, at its
encoded byte size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compression import (
    GLOBAL_LARGEST,
    GLOBAL_RANDOM,
    PER_TENSOR_LARGEST,
    DenseUpdate,
    SelectionPolicy,
    SparseUpdate,
)
from .errors import ConfigurationError
from .ledger import UpdateLedger
from .nn import ParamVector

ASGD = "asgd"
COMP_ASGD = "comp_asgd"
ADACOMP = "adacomp"
PROTOCOLS = (ASGD, COMP_ASGD, ADACOMP)


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str
    learning_rate: float  # alpha in (0, 1]
    iterations: int  # total update budget I
    selection: SelectionPolicy | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigurationError(
                f"learning_rate {self.learning_rate} not in (0, 1]"
            )
        if self.iterations < 1:
            raise ConfigurationError("iterations must be positive")
        if self.protocol == ASGD:
            if self.selection is not None:
                raise ConfigurationError("asgd sends dense updates; no selection")
        elif self.selection is None:
            raise ConfigurationError(f"{self.protocol} requires a selection policy")
        elif self.protocol == ADACOMP and self.selection.variant != PER_TENSOR_LARGEST:
            raise ConfigurationError("adacomp requires per_tensor_largest selection")
        elif self.protocol == COMP_ASGD and self.selection.variant not in (
            GLOBAL_LARGEST,
            GLOBAL_RANDOM,
        ):
            raise ConfigurationError("comp_asgd requires a global selection variant")


class ParameterServer:
    def __init__(self, theta: ParamVector, config: ProtocolConfig):
        self._theta = theta
        self._config = config
        self._alpha = np.float32(config.learning_rate)
        self._ledger = UpdateLedger() if config.protocol == ADACOMP else None
        self._pulls: dict[int, int] = {}  # worker id -> outstanding pull timestamp
        self.ingress_bytes = 0
        self.rejected_updates = 0
        self.staleness_sum = 0  # global (i - j) over applied updates

    @property
    def timestamp(self) -> int:
        return self._theta.timestamp

    @property
    def theta(self) -> ParamVector:
        return self._theta

    @property
    def ledger(self) -> UpdateLedger | None:
        return self._ledger

    @property
    def applied_updates(self) -> int:
        return self._theta.timestamp

    @property
    def mean_staleness(self) -> float:
        return self.staleness_sum / self.applied_updates if self.applied_updates else 0.0

    def serve_pull(self, worker_id: int | None = None) -> tuple[np.ndarray, int]:
        """Immutable snapshot of the current parameters and their timestamp.

        Passing a worker id registers the pull so the ledger retains every
        record the eventual push may query."""
        if worker_id is not None:
            self._pulls[worker_id] = self.timestamp
        return self._theta.values.copy(), self.timestamp

    def notify_crash(self, worker_id: int) -> None:
        """Release a crashed worker's outstanding pull; it will never push."""
        self._pulls.pop(worker_id, None)
        self._evict()

    def apply_update(self, update: SparseUpdate | DenseUpdate) -> bool:
        """Apply one pushed update; returns False when it was rejected for
        producing non-finite parameters (bytes still counted, timestamp
        unchanged)."""
        i = self.timestamp
        j = update.pull_timestamp
        if not 0 <= j <= i:
            raise ValueError(f"pull timestamp {j} outside [0, {i}]")
        self.ingress_bytes += update.byte_size

        protocol = self._config.protocol
        if protocol == ADACOMP:
            indices = update.indices.astype(np.int64)
            sigma = self._ledger.staleness_many(indices, j, i)
            rates = np.full(len(indices), self._alpha, dtype=np.float32)
            stale = sigma > 0
            rates[stale] = self._alpha / sigma[stale].astype(np.float32)
            with np.errstate(over="ignore", invalid="ignore"):
                new_values = self._theta.values[indices] - rates * update.values
            if not np.isfinite(new_values).all():
                return self._reject(update)
            self._theta.values[indices] = new_values
            self._ledger.record(i, indices)
        else:
            sigma = i - j
            rate = self._alpha if sigma == 0 else self._alpha / np.float32(sigma)
            if isinstance(update, DenseUpdate):
                if len(update.values) != len(self._theta.values):
                    raise ConfigurationError("dense update length mismatch")
                with np.errstate(over="ignore", invalid="ignore"):
                    new_values = self._theta.values - rate * update.values
                if not np.isfinite(new_values).all():
                    return self._reject(update)
                self._theta.values = new_values
            else:
                indices = update.indices.astype(np.int64)
                with np.errstate(over="ignore", invalid="ignore"):
                    new_values = self._theta.values[indices] - rate * update.values
                if not np.isfinite(new_values).all():
                    return self._reject(update)
                self._theta.values[indices] = new_values

        self._theta.timestamp += 1
        self.staleness_sum += i - j
        self._release_pull(update.worker_id)
        return True

    def _reject(self, update) -> bool:
        self.rejected_updates += 1
        self._release_pull(update.worker_id)
        return False

    def _release_pull(self, worker_id: int) -> None:
        self._pulls.pop(worker_id, None)
        self._evict()

    def _evict(self) -> None:
        if self._ledger is None:
            return
        horizon = min(self._pulls.values(), default=self.timestamp)
        self._ledger.evict_older_than(horizon)
