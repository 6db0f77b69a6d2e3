"""Deterministic discrete-event simulation of one training run.

Workers are advanced by a priority queue of activation events ordered by
(simulated time, priority, worker id); update delivery to the parameter
server is therefore globally serialized and every run is a pure function of
its config.  A worker's pull happens at one activation and its push at the
next, so the intervening activity of other workers is what produces
staleness.

Evaluation fires every ``eval_every`` applied updates (as an event at the
same simulated instant, ahead of any later event) and appends one metrics
record per firing.  The optional parallel mode computes gradients in a
thread pool while keeping delivery order, and must produce bit-identical
results to the serial loop.
"""

from __future__ import annotations

import heapq
import json
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .compression import SparseUpdate
from .config import RunConfig
from .data import Dataset, load_mnist, shard_indices, synthetic_dataset
from .errors import ConfigurationError, NumericFault
from .nn import ModelArch, ParamVector, cnn_arch, forward_batch, init_params, mlp_arch
from .rng import stream
from .server import ParameterServer
from .worker import Worker, assign_speed_classes

ACCURACY_THRESHOLDS = (0.90, 0.95, 0.97)

PRIORITY_EVALUATION = 0
PRIORITY_ACTIVATION = 1

EVALUATION = "evaluation"
WORKER_ACTIVATION = "worker_activation"


@dataclass(order=True, frozen=True)
class Event:
    """Queue entry; evaluation events sort ahead of activations at equal time."""

    time: float
    priority: int
    worker_id: int  # -1 for evaluation events
    kind: str = field(compare=False, default=WORKER_ACTIVATION)


@dataclass(frozen=True)
class MetricsRecord:
    applied_updates: int
    sim_time: float
    ingress_bytes: int
    accuracy: float
    live_workers: int


@dataclass
class RunSummary:
    applied_updates: int
    truncated: bool
    sim_time: float
    final_accuracy: float
    max_accuracy: float
    total_ingress_bytes: int
    bytes_to_accuracy: dict[float, int | None]
    live_workers: int
    mean_staleness: float
    rejected_updates: int
    sparse_pushes: int
    sparse_entries: int
    dense_pushes: int
    pushes_by_worker: list[int]
    pushes_by_class: dict[str, int]


@dataclass
class RunReport:
    config: RunConfig
    records: list[MetricsRecord]
    summary: RunSummary
    final_params: np.ndarray  # flat parameter values at run end

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(render_csv(self.config, self.records))


CSV_COLUMNS = ("applied_updates", "sim_time", "ingress_bytes", "accuracy", "live_workers")


def render_csv(config: RunConfig, records: list[MetricsRecord]) -> str:
    """One header comment with the full config (including ma_window), a column
    row, then one row per evaluation.  Byte-identical for identical runs."""
    lines = ["# config: " + json.dumps(asdict(config), sort_keys=True)]
    lines.append(",".join(CSV_COLUMNS))
    for rec in records:
        lines.append(
            f"{rec.applied_updates},{rec.sim_time!r},{rec.ingress_bytes},"
            f"{rec.accuracy!r},{rec.live_workers}"
        )
    return "\n".join(lines) + "\n"


def read_records_csv(path: str | Path) -> tuple[dict, list[MetricsRecord]]:
    """Inverse of :func:`render_csv` for report post-processing."""
    lines = Path(path).read_text().splitlines()
    config = json.loads(lines[0].removeprefix("# config: "))
    if lines[1] != ",".join(CSV_COLUMNS):
        raise ConfigurationError(f"{path}: unexpected CSV columns {lines[1]!r}")
    records = []
    for line in lines[2:]:
        a, t, b, acc, live = line.split(",")
        records.append(MetricsRecord(int(a), float(t), int(b), float(acc), int(live)))
    return config, records


def moving_average(values: list[float], window: int) -> list[float]:
    """Trailing mean over up to ``window`` entries; reproduces the smoothed
    accuracy curve from the raw series."""
    if window < 1:
        raise ConfigurationError("ma_window must be >= 1")
    out = []
    acc = 0.0
    for k, v in enumerate(values):
        acc += v
        if k >= window:
            acc -= values[k - window]
        out.append(acc / min(k + 1, window))
    return out


def series_summary(records: list[MetricsRecord], iterations: int) -> dict:
    """The summary fields derivable from the metric series alone."""
    if not records:
        return {
            "applied_updates": 0,
            "truncated": True,
            "sim_time": 0.0,
            "final_accuracy": 0.0,
            "max_accuracy": 0.0,
            "total_ingress_bytes": 0,
            "bytes_to_accuracy": {t: None for t in ACCURACY_THRESHOLDS},
            "live_workers": 0,
        }
    last = records[-1]
    bytes_to = {}
    for threshold in ACCURACY_THRESHOLDS:
        bytes_to[threshold] = next(
            (r.ingress_bytes for r in records if r.accuracy >= threshold), None
        )
    return {
        "applied_updates": last.applied_updates,
        "truncated": last.applied_updates < iterations,
        "sim_time": last.sim_time,
        "final_accuracy": last.accuracy,
        "max_accuracy": max(r.accuracy for r in records),
        "total_ingress_bytes": last.ingress_bytes,
        "bytes_to_accuracy": bytes_to,
        "live_workers": last.live_workers,
    }


def evaluate(
    arch: ModelArch,
    theta: ParamVector,
    test_x: np.ndarray,
    test_y: np.ndarray,
    chunk: int = 2048,
) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    if len(test_x) == 0:
        raise ConfigurationError("test set is empty")
    hits = 0
    for start in range(0, len(test_x), chunk):
        probs = forward_batch(arch, theta, test_x[start : start + chunk])
        hits += int((probs.argmax(axis=1) == test_y[start : start + chunk]).sum())
    return hits / len(test_x)


def load_dataset(config: RunConfig) -> Dataset:
    if config.dataset == "mnist":
        return load_mnist(config.data_dir)
    return synthetic_dataset(
        config.synthetic_train,
        config.synthetic_test,
        config.synthetic_features,
        config.synthetic_classes,
        stream(config.seed, "data"),
    )


def build_arch(config: RunConfig, dataset: Dataset) -> ModelArch:
    feature_dims = int(np.prod(dataset.train_x.shape[1:]))
    if config.arch == "cnn":
        if feature_dims != 28 * 28:
            raise ConfigurationError(
                f"arch: cnn needs 28x28 inputs, dataset has {feature_dims} features"
            )
        return cnn_arch(dataset.num_classes)
    return mlp_arch(feature_dims, 128, dataset.num_classes)


def _arch_inputs(config: RunConfig, x: np.ndarray) -> np.ndarray:
    if config.arch == "cnn":
        return np.ascontiguousarray(x.reshape(len(x), 28, 28, 1))
    return np.ascontiguousarray(x.reshape(len(x), -1))


def run(config: RunConfig) -> RunReport:
    """Execute one run to its update budget (or until every worker is dead)."""
    config.validate()
    dataset = load_dataset(config)
    arch = build_arch(config, dataset)
    train_x = _arch_inputs(config, dataset.train_x)
    train_y = dataset.train_y
    test_x = _arch_inputs(config, dataset.test_x)
    test_y = dataset.test_y
    if len(test_x) == 0:
        raise ConfigurationError("dataset: test split is empty")

    shards = shard_indices(
        len(train_x), config.workers, config.shard_fraction, stream(config.seed, "shard")
    )
    theta = init_params(arch, stream(config.seed, "init"))
    ps = ParameterServer(theta, config.protocol_config())
    policy = config.selection_policy()
    classes = assign_speed_classes(config.workers, tuple(config.speed_mix))
    workers = [
        Worker(
            worker_id=w,
            shard=shards[w],
            batch_size=config.batch_size,
            arch=arch,
            train_x=train_x,
            train_y=train_y,
            protocol=config.protocol,
            policy=policy,
            speed_class=classes[w],
            crash_prob=config.crash_prob,
            sample_rng=stream(config.seed, "sample", w),
            delay_rng=stream(config.seed, "delay", w),
            crash_rng=stream(config.seed, "crash", w),
            select_rng=stream(config.seed, "select", w),
        )
        for w in range(config.workers)
    ]

    eval_every = config.resolved_eval_every()
    iterations = config.iterations
    records: list[MetricsRecord] = []
    live = config.workers
    now = 0.0
    sparse_pushes = sparse_entries = dense_pushes = 0

    def take_record() -> None:
        records.append(
            MetricsRecord(
                applied_updates=ps.applied_updates,
                sim_time=now,
                ingress_bytes=ps.ingress_bytes,
                accuracy=evaluate(arch, ps.theta, test_x, test_y),
                live_workers=live,
            )
        )

    heap: list[Event] = []
    for w in workers:
        heapq.heappush(heap, Event(w.next_delay(), PRIORITY_ACTIVATION, w.worker_id))

    pool = ThreadPoolExecutor(max_workers=min(config.workers, 8)) if config.parallel else None
    futures: dict[int, Future] = {}
    try:
        while heap:
            event = heapq.heappop(heap)
            now = event.time
            if event.priority == PRIORITY_EVALUATION:
                take_record()
                continue
            if ps.applied_updates >= iterations:
                continue  # drain leftover activations after the budget is met
            worker = workers[event.worker_id]

            if worker.has_pending or event.worker_id in futures:
                update = None
                try:
                    if pool is not None:
                        update = futures.pop(event.worker_id).result()
                    else:
                        update = worker.compute_update()
                except NumericFault:
                    update = None  # skip this push, retry with a fresh pull
                if update is not None:
                    applied = ps.apply_update(update)
                    worker.pushes += 1
                    if isinstance(update, SparseUpdate):
                        sparse_pushes += 1
                        sparse_entries += len(update)
                    else:
                        dense_pushes += 1
                    if applied and ps.applied_updates % eval_every == 0:
                        heapq.heappush(
                            heap, Event(now, PRIORITY_EVALUATION, -1, EVALUATION)
                        )
                    if worker.draw_crash():
                        worker.alive = False
                        live -= 1
                        ps.notify_crash(worker.worker_id)
                        continue
                    if ps.applied_updates >= iterations:
                        continue

            values, ts = ps.serve_pull(worker.worker_id)
            worker.begin_iteration(values, ts)
            if pool is not None:
                futures[worker.worker_id] = pool.submit(worker.compute_update)
            heapq.heappush(
                heap,
                Event(now + worker.next_delay(), PRIORITY_ACTIVATION, worker.worker_id),
            )
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)

    if not records or records[-1].applied_updates != ps.applied_updates:
        take_record()

    summary = RunSummary(
        **series_summary(records, iterations),
        mean_staleness=ps.mean_staleness,
        rejected_updates=ps.rejected_updates,
        sparse_pushes=sparse_pushes,
        sparse_entries=sparse_entries,
        dense_pushes=dense_pushes,
        pushes_by_worker=[w.pushes for w in workers],
        pushes_by_class={
            cls: sum(w.pushes for w in workers if w.speed_class == cls)
            for cls in dict.fromkeys(classes)
        },
    )
    return RunReport(config, records, summary, ps.theta.values)
