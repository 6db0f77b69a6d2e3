import numpy as np
import pytest

from pssim import ConfigurationError, RunConfig, run, stream
from pssim.worker import BASE_DELAY, DELAY_JITTER, Worker, assign_speed_classes

from .conftest import seeded_params, tiny_mlp


def test_speed_class_allocation_exact():
    classes = assign_speed_classes(200, (0.3, 0.4, 0.3))
    assert classes.count("fast") == 60
    assert classes.count("medium") == 80
    assert classes.count("slow") == 60
    assert classes[:60] == ["fast"] * 60  # deterministic block order


def test_speed_class_allocation_remainders():
    for n in (1, 3, 7, 19, 33):
        classes = assign_speed_classes(n, (0.3, 0.4, 0.3))
        assert len(classes) == n
    with pytest.raises(ConfigurationError):
        assign_speed_classes(10, (0.5, 0.5, 0.5))


def make_worker(seed=0, speed="fast", crash_prob=0.0, shard_size=40):
    arch = tiny_mlp(5, 4, 3)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(100, 5)).astype(np.float32)
    y = rng.integers(0, 3, size=100)
    return Worker(
        worker_id=0,
        shard=np.arange(shard_size),
        batch_size=6,
        arch=arch,
        train_x=x,
        train_y=y,
        protocol="asgd",
        policy=None,
        speed_class=speed,
        crash_prob=crash_prob,
        sample_rng=stream(seed, "sample", 0),
        delay_rng=stream(seed, "delay", 0),
        crash_rng=stream(seed, "crash", 0),
        select_rng=stream(seed, "select", 0),
    ), arch


def test_batches_drawn_from_own_shard():
    worker, arch = make_worker(shard_size=10)
    theta = seeded_params(arch)
    for _ in range(30):
        worker.begin_iteration(theta.values.copy(), 0)
        assert np.all(np.isin(worker._batch, worker.shard))
        worker.compute_update()


def test_update_carries_pull_timestamp():
    worker, arch = make_worker()
    theta = seeded_params(arch)
    worker.begin_iteration(theta.values.copy(), 17)
    update = worker.compute_update()
    assert update.pull_timestamp == 17
    assert not worker.has_pending


def test_delay_scales_with_speed_class():
    lo, hi = DELAY_JITTER
    for speed in ("fast", "medium", "slow"):
        worker, _ = make_worker(speed=speed)
        delays = np.array([worker.next_delay() for _ in range(4000)])
        base = BASE_DELAY[speed]
        assert base * lo <= delays.min() and delays.max() < base * hi
        assert delays.mean() == pytest.approx(base * (lo + hi) / 2, rel=0.02)


def test_push_rate_ratio_monte_carlo():
    # renewal processes at 1:10:100 mean period -> push counts 100:10:1
    counts = {}
    horizon = 10_000.0  # ~1e4 fast pushes
    for speed in ("fast", "slow"):
        worker, _ = make_worker(seed=3, speed=speed)
        t, n = 0.0, 0
        while True:
            t += worker.next_delay()
            if t > horizon:
                break
            n += 1
        counts[speed] = n
    ratio = counts["fast"] / counts["slow"]
    assert 90.0 <= ratio <= 110.0


def test_crash_draw_probabilities():
    worker, _ = make_worker(crash_prob=0.0)
    assert not any(worker.draw_crash() for _ in range(1000))
    worker, _ = make_worker(crash_prob=1.0)
    assert worker.draw_crash()


def run_tiny(p, workers=3, iterations=60, seed=5):
    return run(
        RunConfig(
            seed=seed,
            workers=workers,
            iterations=iterations,
            protocol="asgd",
            batch_size=4,
            crash_prob=p,
            synthetic_train=120,
            synthetic_test=60,
            synthetic_features=8,
            synthetic_classes=3,
        )
    )


def test_worker_survives_run_with_p0():
    report = run_tiny(p=0.0)
    assert report.summary.live_workers == 3
    assert not report.summary.truncated
    assert sum(report.summary.pushes_by_worker) == 60


def test_p1_means_exactly_one_push_each():
    report = run_tiny(p=1.0)
    assert report.summary.truncated
    assert report.summary.applied_updates == 3
    assert report.summary.pushes_by_worker == [1, 1, 1]
    assert report.summary.live_workers == 0


def test_expected_survivors_near_n_minus_p_times_i():
    # each applied push kills its sender with probability p, so deaths over a
    # run concentrate around p * I
    n, iterations, p, seeds = 20, 400, 0.02, range(6)
    survivor_counts = [
        run_tiny(p=p, workers=n, iterations=iterations, seed=s).summary.live_workers
        for s in seeds
    ]
    expected = n - p * iterations  # = 12
    mean = float(np.mean(survivor_counts))
    assert abs(mean - expected) < 3.0


def test_equal_classes_share_pushes_evenly():
    report = run_tiny(p=0.0, workers=5, iterations=1500)
    pushes = np.array(report.summary.pushes_by_worker)
    assert pushes.sum() == 1500
    expected = 1500 / 5
    sigma = np.sqrt(1500 * 0.2 * 0.8)
    assert np.all(np.abs(pushes - expected) <= 3 * sigma)
