import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from linecodec.cloud import (CloudError, EmptyCloud, PlyParseError, PointCloud,
                             UnsupportedEndianness, read_ply, read_xyz, round_half_away,
                             voxelize, write_ply, write_xyz)

coords = hnp.arrays(np.int64, st.tuples(st.integers(1, 60), st.just(3)),
                    elements=st.integers(-2**31, 2**31 - 1))


def test_ascii_three_points(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
                 "property float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n2 0 0\n")
    c = read_ply(p)
    assert len(c) == 3
    assert c.bbox_min.tolist() == [0, 0, 0] and c.bbox_max.tolist() == [2, 0, 0]


def test_empty_vertex_element(tmp_path):
    p = tmp_path / "e.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 0\nproperty int x\n"
                 "property int y\nproperty int z\nend_header\n")
    with pytest.raises(EmptyCloud):
        read_ply(p)


def test_extra_properties_ignored(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty uchar red\nproperty int x\n"
                 "property int y\nproperty int z\nproperty float intensity\nend_header\n"
                 "9 1 2 3 0.5\n7 4 5 6 0.25\n")
    assert read_ply(p).points.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_big_endian_rejected(tmp_path):
    p = tmp_path / "b.ply"
    p.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\n"
                  b"property float y\nproperty float z\nend_header\n" + bytes(12))
    with pytest.raises(UnsupportedEndianness):
        read_ply(p)


def test_truncated_binary(tmp_path):
    c = PointCloud(np.arange(30).reshape(10, 3))
    p = tmp_path / "t.ply"
    write_ply(c, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(PlyParseError):
        read_ply(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex two\nend_header\n")
    with pytest.raises(PlyParseError):
        read_ply(p)


def test_one_point_header(tmp_path):
    p = tmp_path / "one.ply"
    write_ply(PointCloud([[1, 2, 3]]), p, format="ascii")
    assert "element vertex 1" in p.read_text()


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_random_roundtrip_1000(tmp_path, rng, fmt):
    c = PointCloud(rng.integers(-5000, 5000, size=(1000, 3)))
    p = tmp_path / f"r.{fmt}.ply"
    write_ply(c, p, format=fmt)
    assert read_ply(p).same_points(c)


@given(coords, st.booleans())
def test_ply_roundtrip_property(tmp_path_factory, pts, dup):
    c = PointCloud(pts, keep_duplicates=dup)
    d = tmp_path_factory.mktemp("ply")
    write_ply(c, d / "a.ply", format="ascii")
    write_ply(c, d / "b.ply", format="binary")
    a = read_ply(d / "a.ply", keep_duplicates=dup)
    b = read_ply(d / "b.ply", keep_duplicates=dup)
    assert a.same_points(c) and b.same_points(c)


def test_xyz_roundtrip(tmp_path, rng):
    c = PointCloud(rng.integers(0, 100, size=(50, 3)))
    write_xyz(c, tmp_path / "c.xyz")
    assert read_xyz(tmp_path / "c.xyz").same_points(c)


def test_voxelize_rounding():
    assert voxelize([(0.4, 0, 0), (0.6, 0, 0)]).points.tolist() == [[0, 0, 0], [1, 0, 0]]
    assert voxelize([(1, 1, 1)]).points.tolist() == [[1, 1, 1]]


def test_round_half_away():
    x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, 0.49999])
    assert round_half_away(x).tolist() == [1, 2, 3, -1, -2, 0]


def test_voxelize_scale_bound(rng):
    raw = rng.uniform(-10, 10, size=(1000, 3))
    c = voxelize(raw, 0.001, keep_duplicates=True)
    assert np.abs(c.points * 0.001 - raw).max() <= 0.0005 + 1e-12


def test_voxelize_rejects_nan():
    with pytest.raises(CloudError):
        voxelize([(np.nan, 0, 0)])
    with pytest.raises(CloudError):
        voxelize([(0, 0, 0)], scale=0)


@given(coords)
def test_voxelize_idempotent_on_integers(pts):
    c = voxelize(pts.astype(np.float64))
    assert voxelize(c.points.astype(np.float64)).same_points(c)


@given(coords)
def test_bbox_tight(pts):
    c = PointCloud(pts)
    assert np.array_equal(c.bbox_min, c.points.min(axis=0))
    assert np.array_equal(c.bbox_max, c.points.max(axis=0))


def test_dedup_default():
    assert len(PointCloud([[1, 1, 1], [1, 1, 1], [2, 2, 2]])) == 2
    assert len(PointCloud([[1, 1, 1], [1, 1, 1]], keep_duplicates=True)) == 2


def test_out_of_range():
    with pytest.raises(CloudError):
        PointCloud([[2**31, 0, 0]])
