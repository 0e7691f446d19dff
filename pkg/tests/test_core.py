import numpy as np
import pytest

from placevlad import (
    DataError,
    Descriptor,
    DimensionError,
    GeoRecord,
    LocalFeature,
    LocalFeatureMap,
    Method,
    euclidean_distance,
    l2_normalize,
)
from placevlad.core import METHOD_TAGS, TAG_METHODS

from conftest import make_map


class TestL2Normalize:
    def test_three_four_five(self):
        assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-12)

    def test_zero_vector_unchanged(self):
        out = l2_normalize(np.zeros(3))
        assert np.array_equal(out, np.zeros(3))

    def test_symmetric_ones(self):
        assert np.allclose(l2_normalize([1.0, 1.0, 1.0, 1.0]), [0.5] * 4, atol=1e-12)

    def test_result_has_unit_norm(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            v = rng.normal(size=rng.integers(1, 64)) * rng.uniform(0.01, 100)
            assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) < 1e-9

    def test_preserves_dtype(self):
        out = l2_normalize(np.array([3.0, 4.0], dtype=np.float32))
        assert out.dtype == np.float32

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            l2_normalize(np.empty(0))


class TestEuclideanDistance:
    def test_identity_is_zero(self):
        assert euclidean_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_three_four_five(self):
        assert euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=40)
        b = rng.normal(size=40)
        acc = 0.0
        for x, y in zip(a, b):
            acc += (float(x) - float(y)) ** 2
        assert abs(euclidean_distance(a, b) - acc**0.5) < 1e-9

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=8), rng.normal(size=8)
        assert euclidean_distance(a, b) == euclidean_distance(b, a)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            euclidean_distance([1.0], [1.0, 2.0])


class TestLocalFeatureMap:
    def test_valid_map(self, rng):
        fmap = make_map("img", rng.uniform(0, 1, (5, 2)), rng.normal(size=(5, 3)))
        assert fmap.count == 5 and fmap.dim == 3
        assert list(f.x for f in fmap.features()) == list(map(float, fmap.xy[:, 0]))

    def test_empty_map_allowed(self):
        fmap = make_map("img", np.empty((0, 2)), np.empty((0, 4)))
        assert fmap.count == 0 and fmap.dim == 4
        assert fmap.descriptors_normalized()

    def test_coordinates_out_of_range(self):
        with pytest.raises(DataError):
            make_map("img", [[0.5, 1.5]], [[1.0, 0.0]])

    def test_count_mismatch(self):
        with pytest.raises(DimensionError):
            make_map("img", [[0.5, 0.5]], np.ones((2, 3)))

    def test_arrays_frozen(self, rng):
        fmap = make_map("img", [[0.5, 0.5]], [[1.0, 0.0]])
        with pytest.raises(ValueError):
            fmap.xy[0, 0] = 0.0
        with pytest.raises(ValueError):
            fmap.descriptors[0, 0] = 0.0

    def test_normalized_check_tolerance(self):
        fmap = make_map("img", [[0.5, 0.5]], [[1.0 + 5e-6, 0.0]])
        assert fmap.descriptors_normalized()
        fmap = make_map("img", [[0.5, 0.5]], [[1.1, 0.0]])
        assert not fmap.descriptors_normalized()

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            make_map("img", [[0.5, 0.5]], [[np.nan, 0.0]])

    def test_empty_id_rejected(self):
        with pytest.raises(DataError):
            make_map("", [[0.5, 0.5]], [[1.0, 0.0]])


class TestLocalFeature:
    def test_coordinate_bounds(self):
        LocalFeature(0.0, 1.0, np.ones(3, dtype=np.float32))
        with pytest.raises(DataError):
            LocalFeature(-0.1, 0.5, np.ones(3, dtype=np.float32))


class TestDescriptor:
    def test_valid(self):
        d = Descriptor(image_id="a", method=Method.VLAD, values=np.ones(4))
        assert d.dim == 4 and d.values.dtype == np.float32

    def test_rejects_unknown_method(self):
        with pytest.raises(DataError):
            Descriptor(image_id="a", method="vlad", values=np.ones(4))

    def test_rejects_empty_values(self):
        with pytest.raises(DimensionError):
            Descriptor(image_id="a", method=Method.MAC, values=np.empty(0))


class TestGeoRecord:
    def test_bounds(self):
        GeoRecord(image_id="a", latitude=90.0, longitude=-180.0, yaw=0.0)
        with pytest.raises(DataError):
            GeoRecord(image_id="a", latitude=90.5, longitude=0.0)
        with pytest.raises(DataError):
            GeoRecord(image_id="a", latitude=0.0, longitude=181.0)
        with pytest.raises(DataError):
            GeoRecord(image_id="a", latitude=0.0, longitude=0.0, yaw=360.0)

    def test_yaw_optional(self):
        assert GeoRecord(image_id="a", latitude=0.0, longitude=0.0).yaw is None


def test_method_tags_round_trip():
    assert len(METHOD_TAGS) == len(Method)
    for method, tag in METHOD_TAGS.items():
        assert TAG_METHODS[tag] is method
    assert len(set(METHOD_TAGS.values())) == len(Method)


def test_method_string_value():
    assert str(Method.SPVP) == "spvp"
    assert Method("gem") is Method.GEM
