import numpy as np
import pytest

from cachechain.errors import ConfigError
from cachechain.workload import (
    RequestTrace,
    SessionSchedule,
    ShotNoiseConfig,
    empirical_popularity,
    gen_session_varying,
    gen_shot_noise,
    gen_static_zipf,
    lifetimes,
    read_trace,
    session_popularity,
    session_sizes,
    write_trace,
    zipf_pmf,
)


def test_zipf_pmf():
    assert np.allclose(zipf_pmf(4, 0.0), 0.25)
    p = zipf_pmf(5, 0.8)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] / p[1] == pytest.approx(2 ** 0.8)
    with pytest.raises(ConfigError):
        zipf_pmf(5, -0.1)


def test_static_zipf_is_seeded_and_matches_pmf():
    n = 200_000
    trace = gen_static_zipf(5, 0.8, n, seed=3)
    again = gen_static_zipf(5, 0.8, n, seed=3)
    assert np.array_equal(trace.contents, again.contents)
    assert not np.array_equal(trace.contents, gen_static_zipf(5, 0.8, n, seed=4).contents)

    assert trace.n_requests == n
    assert np.all(np.diff(trace.timestamps) >= 0)
    assert trace.timestamps[-1] < trace.horizon
    freq = empirical_popularity(trace)
    p = zipf_pmf(5, 0.8)
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / n))


def test_empty_trace():
    trace = gen_static_zipf(5, 0.8, 0, seed=1)
    assert trace.n_requests == 0
    assert np.all(np.isnan(lifetimes(trace)))
    with pytest.raises(ConfigError):
        empirical_popularity(trace)


def test_trace_validation():
    with pytest.raises(ConfigError):
        RequestTrace([0.0, 1.0], [1], 10, 3)
    with pytest.raises(ConfigError):
        RequestTrace([1.0, 0.5], [1, 2], 10, 3)
    with pytest.raises(ConfigError):
        RequestTrace([0.0, 1.0], [1, 4], 10, 3)


def test_empirical_popularity_window():
    trace = RequestTrace([0.0, 1.0, 2.0, 3.0], [1, 1, 2, 3], 10, 3)
    assert list(empirical_popularity(trace, (0.0, 2.0))) == [1.0, 0.0, 0.0]
    assert list(empirical_popularity(trace, (1.0, 4.0))) == pytest.approx([1 / 3, 1 / 3, 1 / 3])
    with pytest.raises(ConfigError):
        empirical_popularity(trace, (5.0, 6.0))
    with pytest.raises(ConfigError):
        empirical_popularity(trace, (2.0, 20.0))


def test_random_fluctuation_keeps_the_average():
    avg = np.full(23, 1 / 23)
    schedule = SessionSchedule.random_fluctuation(avg, 50, concentration=4.0, seed=11)
    assert schedule.popularity.shape == (50, 23)
    assert np.all(schedule.popularity >= 0)
    assert np.allclose(schedule.popularity.sum(axis=1), 1.0)
    assert np.max(np.abs(schedule.popularity.mean(axis=0) - avg)) < 1e-9
    assert schedule.total_variation_steps().min() > 0
    same = SessionSchedule.random_fluctuation(avg, 50, concentration=4.0, seed=11)
    assert np.array_equal(schedule.popularity, same.popularity)


def test_random_fluctuation_skewed_average():
    avg = zipf_pmf(10, 1.2)
    schedule = SessionSchedule.random_fluctuation(avg, 20, concentration=0.5, seed=2)
    assert np.all(schedule.popularity >= 0)
    assert np.max(np.abs(schedule.popularity.mean(axis=0) - avg)) < 1e-9


def test_smooth_change_steps_are_bounded():
    avg = np.full(23, 1 / 23)
    schedule = SessionSchedule.smooth_change(avg, 50, amplitude=0.7)
    assert np.all(schedule.popularity >= 0)
    assert np.max(np.abs(schedule.popularity.mean(axis=0) - avg)) < 1e-12
    steps = schedule.total_variation_steps()
    assert steps.max() <= schedule.step_bound(0.7) + 1e-12
    assert steps.min() > 0


def test_smooth_change_single_session_is_static():
    avg = zipf_pmf(6, 0.8)
    schedule = SessionSchedule.smooth_change(avg, 1, amplitude=0.7)
    assert np.array_equal(schedule.popularity, avg[None, :])


def test_schedule_rejects_bad_input():
    avg = np.full(4, 0.25)
    with pytest.raises(ConfigError):
        SessionSchedule.smooth_change(avg, 10, amplitude=1.5)
    with pytest.raises(ConfigError):
        SessionSchedule.random_fluctuation(avg, 10, concentration=0.0, seed=1)
    with pytest.raises(ConfigError):
        SessionSchedule(avg, np.tile(avg, (3, 1)), "bursty")
    with pytest.raises(ConfigError):
        SessionSchedule(avg, [[0.7, 0.1, 0.1, 0.1]], "random")


def test_session_sizes():
    sizes = session_sizes(1003, 10)
    assert sizes.sum() == 1003
    assert sizes.max() - sizes.min() <= 1


def test_session_trace_follows_schedule():
    avg = np.full(5, 0.2)
    schedule = SessionSchedule.smooth_change(avg, 4, amplitude=0.8)
    trace = gen_session_varying(schedule, 40_000, seed=6)
    assert trace.n_sessions == 4
    assert np.array_equal(np.bincount(trace.session_ids), session_sizes(40_000, 4))
    observed = session_popularity(trace)
    n = 10_000
    bound = 4 * np.sqrt(schedule.popularity * (1 - schedule.popularity) / n) + 1e-12
    assert np.all(np.abs(observed - schedule.popularity) <= bound)


def test_shot_noise_volume_and_lifetimes():
    config = ShotNoiseConfig(total_requests=20_000)
    trace = gen_shot_noise(config, 200, seed=5)
    assert abs(trace.n_requests - 20_000) <= 4 * np.sqrt(20_000)
    assert np.all(np.diff(trace.timestamps) >= 0)
    assert trace.timestamps.min() >= 0
    assert trace.timestamps.max() <= config.arrival_window[1] + config.mean_lifetime * 1.5
    spans = lifetimes(trace)
    assert np.nanmax(spans) <= config.mean_lifetime * 1.5
    # the most popular content is requested early and often
    counts = np.bincount(trace.contents, minlength=201)[1:]
    assert counts[0] == counts.max()


def test_shot_noise_is_seeded():
    config = ShotNoiseConfig(total_requests=2_000)
    a = gen_shot_noise(config, 50, seed=1)
    b = gen_shot_noise(config, 50, seed=1)
    assert np.array_equal(a.timestamps, b.timestamps)
    assert np.array_equal(a.contents, b.contents)


def test_shot_noise_config_validation():
    with pytest.raises(ConfigError):
        ShotNoiseConfig(arrival_window=(50.0, 120.0))
    with pytest.raises(ConfigError):
        ShotNoiseConfig(mean_lifetime=0.0)
    with pytest.raises(ConfigError):
        ShotNoiseConfig(lifetime_spread=1.0)


def test_trace_csv(tmp_path):
    trace = gen_static_zipf(5, 0.8, 100, seed=2)
    path = tmp_path / "trace.csv"
    write_trace(trace, path, {"config_sha256": "abc", "seed": 2})
    lines = path.read_text().splitlines()
    assert lines[:3] == ["# config_sha256=abc", "# seed=2", "timestamp_min,content_id"]
    loaded = read_trace(path, 5)
    assert np.array_equal(loaded.contents, trace.contents)
    assert np.allclose(loaded.timestamps, trace.timestamps)


def test_read_trace_rejects_other_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,k\n0.0,1\n")
    with pytest.raises(ConfigError):
        read_trace(path, 5)


def test_steep_zipf_requests_only_the_head():
    trace = gen_static_zipf(10, 50.0, 1000, seed=2)
    assert np.all(trace.contents == 1)


def test_popular_contents_live_about_the_mean_lifetime():
    config = ShotNoiseConfig()
    trace = gen_shot_noise(config, 10_000, seed=3)
    top = lifetimes(trace)[:100]
    assert not np.isnan(top).any()
    assert top.mean() == pytest.approx(config.mean_lifetime, rel=0.1)


def test_short_lifetimes_collapse_onto_arrivals():
    config = ShotNoiseConfig(total_requests=5_000, mean_lifetime=0.01)
    trace = gen_shot_noise(config, 100, seed=4)
    assert trace.timestamps.max() <= config.arrival_window[1] + 0.015
    assert np.nanmax(lifetimes(trace)) <= 0.015
