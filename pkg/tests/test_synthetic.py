import numpy as np
import pytest

from linecodec.hough import line_distances
from linecodec.synthetic import (SyntheticConfig, gen_synthetic, lidar_corpus, line_segments,
                                 uniform_cloud)


def test_noise_free_segments_collinear():
    raw, truth = line_segments(SyntheticConfig(lines=5, points_per_line=20, noise=0, box=256,
                                               seed=3))
    for k, t in enumerate(truth):
        seg = raw[20 * k:20 * (k + 1)]
        assert line_distances(seg, np.array(t.a), np.array(t.b)).max() < 1e-9


def test_two_point_cloud():
    cloud, truth = gen_synthetic(SyntheticConfig(lines=1, points_per_line=2, noise=0, box=64))
    assert len(cloud) == 2 and len(truth) == 1


def test_seeded_and_in_box():
    a, _ = gen_synthetic(SyntheticConfig(lines=20, points_per_line=30, noise=1, box=128, seed=9,
                                         clutter=0.5))
    b, _ = gen_synthetic(SyntheticConfig(lines=20, points_per_line=30, noise=1, box=128, seed=9,
                                         clutter=0.5))
    assert np.array_equal(a.points, b.points)
    assert len(a) == 20 * 30 + 300
    assert a.points.min() >= 0 and a.points.max() <= 127


def test_uniform_and_corpus():
    u = uniform_cloud(1000, 64, 1)
    assert u.points.max() < 64
    c1 = lidar_corpus(2, seed=5, lines=(50, 60))
    c2 = lidar_corpus(2, seed=5, lines=(50, 60))
    assert all(np.array_equal(x.points, y.points) for x, y in zip(c1, c2))


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(lines=0)
    with pytest.raises(ValueError):
        SyntheticConfig(noise=-1)
