import dataclasses

import numpy as np
import pytest

from pssim import (
    ConfigurationError,
    NumericFault,
    ParamVector,
    RunConfig,
    evaluate,
    init_params,
    mlp_arch,
    moving_average,
    run,
    sgd_step,
    stream,
)
from pssim.compression import DENSE_VALUE_BYTES, ENTRY_BYTES, HEADER_BYTES
from pssim.data import shard_indices, synthetic_dataset
from pssim.simulator import (
    Event,
    _arch_inputs,
    build_arch,
    load_dataset,
    read_records_csv,
    render_csv,
    series_summary,
)
from pssim.worker import Worker


def small_config(**overrides):
    base = dict(
        seed=11,
        workers=4,
        batch_size=5,
        iterations=200,
        protocol="asgd",
        learning_rate=0.1,
        synthetic_train=400,
        synthetic_test=200,
        synthetic_features=16,
        synthetic_classes=4,
    )
    base.update(overrides)
    return RunConfig(**base)


def single_node_sgd(config):
    """Independent oracle: plain mini-batch SGD with the same named streams."""
    dataset = load_dataset(config)
    arch = build_arch(config, dataset)
    x = _arch_inputs(config, dataset.train_x)
    y = dataset.train_y
    shard = shard_indices(len(x), 1, config.shard_fraction, stream(config.seed, "shard"))[0]
    theta = init_params(arch, stream(config.seed, "init"))
    sampler = stream(config.seed, "sample", 0)
    alpha = np.float32(config.learning_rate)
    for _ in range(config.iterations):
        batch = shard[sampler.integers(0, len(shard), size=config.batch_size)]
        grad = sgd_step(arch, theta, x[batch], y[batch])
        theta.values = theta.values - alpha * grad
        theta.timestamp += 1
    return theta.values


def test_single_worker_asgd_equals_serial_sgd():
    config = small_config(workers=1, iterations=150)
    report = run(config)
    assert np.array_equal(report.final_params, single_node_sgd(config))


def test_adacomp_full_ratio_serialized_equals_asgd():
    asgd = run(small_config(workers=1, iterations=150))
    adacomp = run(small_config(workers=1, iterations=150, protocol="adacomp", ratio=1.0))
    assert np.array_equal(asgd.final_params, adacomp.final_params)


def test_same_seed_same_bytes():
    config = small_config(protocol="adacomp", ratio=0.1)
    a, b = run(config), run(config)
    assert render_csv(config, a.records) == render_csv(config, b.records)
    assert np.array_equal(a.final_params, b.final_params)


def test_parallel_mode_bit_identical_to_serial():
    serial_cfg = small_config(protocol="adacomp", ratio=0.1, workers=6)
    parallel_cfg = dataclasses.replace(serial_cfg, parallel=True)
    serial, parallel = run(serial_cfg), run(parallel_cfg)
    assert np.array_equal(serial.final_params, parallel.final_params)
    assert serial.records == parallel.records
    assert render_csv(parallel_cfg, run(parallel_cfg).records) == render_csv(
        parallel_cfg, parallel.records
    )


def test_event_ordering_is_time_then_priority_then_worker():
    events = sorted(
        [
            Event(2.0, 1, 3),
            Event(1.0, 1, 2),
            Event(1.0, 0, -1),
            Event(1.0, 1, 0),
        ]
    )
    assert [(e.time, e.priority, e.worker_id) for e in events] == [
        (1.0, 0, -1),
        (1.0, 1, 0),
        (1.0, 1, 2),
        (2.0, 1, 3),
    ]


def test_ingress_bytes_match_closed_form():
    mlp_like = dict(synthetic_features=784, synthetic_classes=10, synthetic_train=800)
    dense = run(small_config(iterations=120, workers=8, **mlp_like))
    theta_size = mlp_arch(784, 128, 10).param_count
    expected_dense = dense.summary.dense_pushes * (
        HEADER_BYTES + DENSE_VALUE_BYTES * theta_size
    )
    assert dense.summary.total_ingress_bytes == expected_dense
    assert dense.summary.dense_pushes == 120

    sparse = run(
        small_config(
            iterations=120, workers=8, protocol="adacomp", ratio=0.01, **mlp_like
        )
    )
    expected_sparse = (
        sparse.summary.sparse_pushes * HEADER_BYTES
        + sparse.summary.sparse_entries * ENTRY_BYTES
    )
    assert sparse.summary.total_ingress_bytes == expected_sparse

    # per-update quota on 784-128-10 at c = 0.01: 1003 + 1 + 12 + 0 = 1016
    assert sparse.summary.sparse_entries == 1016 * 120

    ratio = sparse.summary.total_ingress_bytes / dense.summary.total_ingress_bytes
    assert 0.015 <= ratio <= 0.03

    # compressed protocols stay under ratio + index overhead + headers
    comp = run(
        small_config(
            iterations=120, workers=8, protocol="comp_asgd", ratio=0.01, **mlp_like
        )
    )
    bound = (2 * 0.01) * expected_dense + comp.summary.sparse_pushes * HEADER_BYTES
    for compressed in (sparse, comp):
        assert compressed.summary.total_ingress_bytes <= bound * 1.01


def test_global_random_selection_full_run():
    config = small_config(
        protocol="comp_asgd", selection="global_random", ratio=0.1, iterations=120
    )
    first, second = run(config), run(config)
    assert np.array_equal(first.final_params, second.final_params)
    # per-update entries: max(1, floor(0.1 * |theta|)) minus zero-valued draws
    quota = int(0.1 * mlp_arch(16, 128, 4).param_count)
    assert 0 < first.summary.sparse_entries <= quota * 120


def test_cnn_reference_arch_end_to_end():
    # the 211,690-parameter net through the whole pull/compress/push pipeline
    config = RunConfig(
        seed=2,
        workers=4,
        batch_size=8,
        iterations=40,
        protocol="adacomp",
        ratio=0.01,
        learning_rate=0.1,
        arch="cnn",
        dataset="mnist",
        shard_fraction=0.02,
        eval_every=20,
    )
    report = run(config)
    assert report.summary.applied_updates == 40
    assert len(report.final_params) == 211_690
    # segment quotas at c = 0.01: conv kernels floor(0.72)=0 and floor(11.52)=11,
    # conv biases 0, dense weights floor(2048.0)=2048 and floor(51.2)=51,
    # dense biases floor(5.12)=5 and floor(0.1)=0
    per_update = report.summary.sparse_entries / report.summary.sparse_pushes
    assert per_update <= 11 + 2048 + 5 + 51
    assert report.summary.total_ingress_bytes == (
        report.summary.sparse_pushes * HEADER_BYTES
        + report.summary.sparse_entries * ENTRY_BYTES
    )


def test_mean_staleness_grows_linearly_with_workers():
    means = {}
    for n in (5, 10, 20, 40):
        report = run(
            small_config(
                workers=n,
                iterations=1200,
                synthetic_train=800,
                batch_size=3,
                synthetic_features=8,
            )
        )
        means[n] = report.summary.mean_staleness
        assert 0.5 * (n - 1) <= means[n] <= 1.6 * (n - 1)
    assert means[5] < means[10] < means[20] < means[40]


def test_evaluate_uniform_model_on_balanced_set():
    dataset = synthetic_dataset(100, 1000, 12, 10, stream(0, "data"))
    arch = mlp_arch(12, 8, 10)
    zero = ParamVector(np.zeros(arch.param_count, dtype=np.float32), arch.segments)
    assert evaluate(arch, zero, dataset.test_x, dataset.test_y) == pytest.approx(0.1)


def test_evaluate_memorizing_model_is_perfect():
    # one-hot features routed through identity weights classify every example
    classes = 6
    labels = np.arange(classes).repeat(3)
    x = np.eye(classes, dtype=np.float32)[labels] * 10.0
    arch = mlp_arch(classes, classes, classes)
    theta = ParamVector(np.zeros(arch.param_count, dtype=np.float32), arch.segments)
    theta.view(arch.segments[0])[...] = np.eye(classes, dtype=np.float32) * 5.0
    theta.view(arch.segments[2])[...] = np.eye(classes, dtype=np.float32) * 5.0
    assert evaluate(arch, theta, x, labels) == 1.0


def test_evaluate_empty_test_set_rejected():
    arch = mlp_arch(4, 3, 2)
    theta = ParamVector(np.zeros(arch.param_count, dtype=np.float32), arch.segments)
    with pytest.raises(ConfigurationError):
        evaluate(arch, theta, np.zeros((0, 4), dtype=np.float32), np.zeros(0, dtype=np.int64))


def test_truncated_run_when_all_workers_crash():
    report = run(small_config(workers=3, iterations=500, crash_prob=1.0))
    assert report.summary.truncated
    assert report.summary.applied_updates == 3
    assert report.summary.live_workers == 0
    assert report.records[-1].applied_updates == 3


def test_eval_cadence_and_final_record():
    config = small_config(iterations=95, eval_every=10)
    report = run(config)
    counts = [r.applied_updates for r in report.records]
    assert counts == [10, 20, 30, 40, 50, 60, 70, 80, 90, 95]
    assert report.summary.applied_updates == 95
    assert not report.summary.truncated


def test_metric_series_monotone():
    report = run(small_config(protocol="comp_asgd", ratio=0.2))
    bytes_series = [r.ingress_bytes for r in report.records]
    times = [r.sim_time for r in report.records]
    assert bytes_series == sorted(bytes_series)
    assert times == sorted(times)


def test_csv_roundtrip_and_summary_recompute(tmp_path):
    config = small_config(protocol="adacomp", ratio=0.25, iterations=150)
    report = run(config)
    path = tmp_path / "arm.csv"
    report.write_csv(path)
    loaded_config, loaded_records = read_records_csv(path)
    assert loaded_records == report.records
    assert loaded_config["ma_window"] == config.ma_window
    recomputed = series_summary(loaded_records, loaded_config["iterations"])
    assert recomputed["max_accuracy"] == report.summary.max_accuracy
    assert recomputed["total_ingress_bytes"] == report.summary.total_ingress_bytes
    assert recomputed["bytes_to_accuracy"] == report.summary.bytes_to_accuracy
    assert recomputed["truncated"] == report.summary.truncated


def test_moving_average_definition():
    series = [0.1, 0.2, 0.6, 0.4, 0.8]
    assert moving_average(series, 3) == pytest.approx(
        [0.1, 0.15, 0.3, 0.4, 0.6]
    )
    assert moving_average(series, 1) == pytest.approx(series)


def test_numeric_fault_skips_push_and_retries(monkeypatch):
    original = Worker.compute_update
    failures = {"left": 2}

    def flaky(self):
        if self.worker_id == 0 and failures["left"] > 0:
            failures["left"] -= 1
            self._snapshot = None
            self._batch = None
            raise NumericFault("forced test fault")
        return original(self)

    monkeypatch.setattr(Worker, "compute_update", flaky)
    report = run(small_config(iterations=80))
    assert report.summary.applied_updates == 80
    assert failures["left"] == 0
    assert report.summary.rejected_updates == 0


def test_bytes_to_accuracy_thresholds():
    records = run(small_config(iterations=300, learning_rate=0.3)).records
    summary = series_summary(records, 300)
    reached = summary["bytes_to_accuracy"][0.90]
    assert reached is not None
    first = next(r for r in records if r.accuracy >= 0.90)
    assert reached == first.ingress_bytes


def test_mnist_desk_scale_sanity_baseline():
    # regression floor: 2,000 updates on the 12,000-image subset clear 80%
    report = run(
        RunConfig(
            seed=1,
            workers=20,
            batch_size=10,
            iterations=2000,
            protocol="asgd",
            learning_rate=0.1,
            arch="mlp",
            dataset="mnist",
            shard_fraction=0.2,
            eval_every=500,
        )
    )
    assert report.summary.max_accuracy > 0.8
