import math

import numpy as np
import pytest

from steinlab.errors import ConfigError
from steinlab.sampling import (MCSettings, SamplerSpec, ball_volume, derive_seed, make_rng,
                               mean_and_se, run_replications, sample_batch, sample_configuration,
                               sphere_area, variance_and_se)


@pytest.mark.parametrize("d,R,expected", [(2, 1.0, math.pi), (3, 1.0, 4 * math.pi / 3),
                                          (2, 2.0, 4 * math.pi), (1, 1.0, 2.0)])
def test_ball_volume(d, R, expected):
    assert ball_volume(d, R) == pytest.approx(expected, rel=1e-15)


def test_sphere_area_is_d_times_volume():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_ball_volume_rejects_bad_input():
    with pytest.raises(ValueError):
        ball_volume(2, 0.0)


def test_sampler_rejects_dimension_one():
    with pytest.raises(ConfigError):
        SamplerSpec(1, 1.0)
    with pytest.raises(ConfigError):
        SamplerSpec(2, -1.0)


def test_configuration_is_reproducible():
    a = sample_configuration(SamplerSpec(2, 1.0, 123))
    b = sample_configuration(SamplerSpec(2, 1.0, 123))
    assert a.points.tobytes() == b.points.tobytes()
    assert np.all(np.linalg.norm(a.points, axis=1) < 1.0)


def test_count_moments_match_intensity():
    batch = sample_batch(SamplerSpec(2, 1.0, 7), 100_000)
    n = batch.counts.astype(float)
    mean, se = mean_and_se(n)
    var, vse = variance_and_se(n)
    assert abs(mean - math.pi) <= 3 * math.sqrt(math.pi / 1e5)
    assert abs(var - math.pi) <= 4 * vse


def test_inner_ball_fraction_is_area_ratio():
    batch = sample_batch(SamplerSpec(2, 1.0, 8), 50_000)
    inner = np.linalg.norm(batch.points, axis=1) <= 0.5
    p = inner.mean()
    assert abs(p - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / inner.size)


def test_large_intensity_counts():
    # intensity 256 pi exercises the rejection branch of the Poisson sampler
    batch = sample_batch(SamplerSpec(2, 16.0, 9), 20_000)
    mean, se = mean_and_se(batch.counts.astype(float))
    assert abs(mean - 256 * math.pi) <= 4 * se


def test_derive_seed_basic():
    assert derive_seed(5, 0) != derive_seed(5, 1)
    assert derive_seed(5, 3) == derive_seed(5, 3)
    assert 0 <= derive_seed(2**64 - 1, 10**9) < 2**64


def test_derive_seed_no_collisions_across_masters():
    n = 1_000_000
    seeds = {derive_seed(11, i) for i in range(n)}
    seeds |= {derive_seed(12, i) for i in range(n)}
    assert len(seeds) == 2 * n


def test_replications_independent_of_workers():
    f = lambda b: b.per_config_sum(b.points[:, 0])
    mc1 = MCSettings(20_000, master_seed=3, workers=1, chunk_size=4096)
    mc4 = MCSettings(20_000, master_seed=3, workers=4, chunk_size=4096)
    a = run_replications(f, 2, 1.0, mc1)
    b = run_replications(f, 2, 1.0, mc4)
    assert a.shape == (20_000,)
    assert a.tobytes() == b.tobytes()


def test_batch_configuration_view():
    batch = sample_batch(SamplerSpec(3, 1.0, 4), 10)
    total = sum(len(batch.configuration(i)) for i in range(10))
    assert total == batch.points.shape[0]
    cfg = batch.configuration(3)
    start = int(batch.counts[:3].sum())
    assert np.array_equal(cfg.points, batch.points[start:start + batch.counts[3]])


def test_philox_streams_differ():
    a = make_rng(1).random(4)
    b = make_rng(2).random(4)
    assert not np.allclose(a, b)


def test_mc_settings_validation():
    with pytest.raises(ConfigError):
        MCSettings(0)
    with pytest.raises(ConfigError):
        MCSettings(10, workers=0)
