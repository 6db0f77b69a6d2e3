"""Gradient selection and the sparse-update wire codec.

Wire format (little-endian):

    u32 pull_timestamp | u32 entry_count | entry_count x (u32 index, f32 value)

so an encoded update is exactly ``8 + 8 * entries`` bytes.  Dense updates are
never index-coded; they cost ``8 + 4 * len`` bytes (header plus raw float32
values).  The worker id is transport metadata and is not on the wire.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ConfigurationError
from .nn import TensorSpec

PER_TENSOR_LARGEST = "per_tensor_largest"
GLOBAL_LARGEST = "global_largest"
GLOBAL_RANDOM = "global_random"
VARIANTS = (PER_TENSOR_LARGEST, GLOBAL_LARGEST, GLOBAL_RANDOM)

HEADER_BYTES = 8
ENTRY_BYTES = 8
DENSE_VALUE_BYTES = 4

_HEADER = struct.Struct("<II")
_ENTRY_DTYPE = np.dtype([("index", "<u4"), ("value", "<f4")])


@dataclass(frozen=True)
class SelectionPolicy:
    variant: str
    ratio: float  # fraction of coordinates kept, in (0, 1]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown selection variant {self.variant!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigurationError(f"selection ratio {self.ratio} not in (0, 1]")


@dataclass(eq=False)
class SparseUpdate:
    """Sorted (index, value) entries plus the pull timestamp they were based on."""

    indices: np.ndarray  # uint32, strictly increasing
    values: np.ndarray  # float32, finite and nonzero
    pull_timestamp: int
    worker_id: int = 0

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.uint32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        # worker_id is not part of the wire identity
        return (
            isinstance(other, SparseUpdate)
            and self.pull_timestamp == other.pull_timestamp
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    @property
    def byte_size(self) -> int:
        return HEADER_BYTES + ENTRY_BYTES * len(self.indices)

    def validate(self) -> None:
        if len(self.indices) != len(self.values):
            raise CodecError("index/value length mismatch")
        if len(self.indices) and np.any(np.diff(self.indices.astype(np.int64)) <= 0):
            raise CodecError("indices not strictly increasing")
        if not np.isfinite(self.values).all():
            raise CodecError("non-finite update value")
        if np.any(self.values == 0.0):
            raise CodecError("zero update value")
        if self.pull_timestamp < 0 or self.pull_timestamp > 0xFFFFFFFF:
            raise CodecError("pull timestamp out of u32 range")


@dataclass(eq=False)
class DenseUpdate:
    """Uncompressed update over every coordinate."""

    values: np.ndarray  # float32, length |theta|
    pull_timestamp: int
    worker_id: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def byte_size(self) -> int:
        return HEADER_BYTES + DENSE_VALUE_BYTES * len(self.values)


def _quota(ratio: float, length: int, minimum_one: bool) -> int:
    # floor(ratio * length); the epsilon keeps exact decimal products such as
    # 0.3 * 10 from landing one below the true floor.
    kept = int(ratio * length + 1e-9)
    return max(1, kept) if minimum_one else kept


def _top_abs(values: np.ndarray, k: int) -> np.ndarray:
    """Ascending indices of the k largest-|value| entries; ties keep the
    lower index.

    Selection runs over the nonzero entries only: a zero can never outrank a
    nonzero, and gradients are often mostly exact zeros, which makes
    introselect on the raw array pathologically slow.
    """
    n = len(values)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    mag = np.abs(values)
    nonzero = np.flatnonzero(mag)
    if len(nonzero) <= k:
        # quota reaches into the zeros; pad with the lowest zero indices
        pad = np.setdiff1d(np.arange(n, dtype=np.int64), nonzero, assume_unique=True)
        return np.sort(np.concatenate([nonzero, pad[: k - len(nonzero)]]))
    nz_mag = mag[nonzero]
    candidates = np.argpartition(nz_mag, len(nonzero) - k)[len(nonzero) - k :]
    thresh = nz_mag[candidates].min()
    above = nonzero[nz_mag > thresh]
    tied = nonzero[nz_mag == thresh][: k - len(above)]
    return np.sort(np.concatenate([above, tied]))


def select_grad(
    grad: np.ndarray,
    segments: tuple[TensorSpec, ...],
    policy: SelectionPolicy,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Ascending coordinate indices chosen for transmission.

    per_tensor_largest keeps floor(ratio * L) largest-|value| entries inside
    each segment of length L (a segment with floor(ratio * L) = 0 transmits
    nothing); the global variants keep max(1, floor(ratio * |grad|)) entries
    over the whole vector.  Zero values may be selected when a scope has
    fewer nonzeros than its quota; they are dropped at update construction.
    """
    total = len(grad)
    if segments and segments[-1].end != total:
        raise ConfigurationError("gradient length does not match segment map")
    if policy.variant == PER_TENSOR_LARGEST:
        picked = [
            spec.offset
            + _top_abs(grad[spec.offset : spec.end], _quota(policy.ratio, spec.length, False))
            for spec in segments
        ]
        return np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    k = _quota(policy.ratio, total, True)
    if policy.variant == GLOBAL_LARGEST:
        return _top_abs(grad, k)
    if rng is None:
        raise ConfigurationError("global_random selection needs a random stream")
    return np.sort(rng.choice(total, size=k, replace=False))


def make_update(
    grad: np.ndarray,
    segments: tuple[TensorSpec, ...],
    policy: SelectionPolicy,
    pull_timestamp: int,
    worker_id: int = 0,
    rng: np.random.Generator | None = None,
) -> SparseUpdate:
    """Select, drop zero entries, and wrap into a SparseUpdate."""
    indices = select_grad(grad, segments, policy, rng)
    values = grad[indices]
    nonzero = values != 0.0
    return SparseUpdate(indices[nonzero], values[nonzero], pull_timestamp, worker_id)


def encode(update: SparseUpdate) -> bytes:
    """Serialize; output length is exactly ``update.byte_size``."""
    update.validate()
    entries = np.empty(len(update), dtype=_ENTRY_DTYPE)
    entries["index"] = update.indices
    entries["value"] = update.values
    return _HEADER.pack(update.pull_timestamp, len(update)) + entries.tobytes()


def decode(buf: bytes) -> SparseUpdate:
    """Parse and validate an encoded update; inverse of :func:`encode`."""
    if len(buf) < HEADER_BYTES:
        raise CodecError(f"truncated header: {len(buf)} bytes")
    pull_timestamp, count = _HEADER.unpack_from(buf)
    expected = HEADER_BYTES + ENTRY_BYTES * count
    if len(buf) != expected:
        raise CodecError(f"expected {expected} bytes for {count} entries, got {len(buf)}")
    entries = np.frombuffer(buf, dtype=_ENTRY_DTYPE, offset=HEADER_BYTES)
    update = SparseUpdate(
        entries["index"].copy(), entries["value"].copy(), pull_timestamp
    )
    update.validate()
    return update
