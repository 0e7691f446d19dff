import numpy as np
import pytest

from placevlad import (
    DataError,
    Descriptor,
    DimensionError,
    InsufficientDataError,
    Method,
    build_index,
    l2_normalize,
    search_knn,
    search_knn_batch,
)

from oracles import knn_full_sort


def _descriptor(image_id, values, method=Method.SPVP):
    return Descriptor(
        image_id=image_id,
        method=method,
        values=l2_normalize(np.asarray(values, dtype=np.float32)),
    )


def _random_index(rng, count, dim, method=Method.SPVP, prefix="img"):
    vecs = rng.normal(size=(count, dim))
    descs = [_descriptor(f"{prefix}{i:05d}", vecs[i], method) for i in range(count)]
    return build_index(descs)


class TestBuildIndex:
    def test_entries_retrievable(self, rng):
        index = _random_index(rng, 3, 8)
        assert index.count == 3
        for i in range(3):
            got = index.get(f"img{i:05d}")
            assert got.image_id == f"img{i:05d}"
            assert np.array_equal(got.values, index.matrix[i])

    def test_duplicate_id_rejected(self, rng):
        a = _descriptor("same", rng.normal(size=6))
        b = _descriptor("same", rng.normal(size=6))
        with pytest.raises(DataError):
            build_index([a, b])

    def test_mixed_methods_rejected(self, rng):
        a = _descriptor("a", rng.normal(size=6), Method.SPVP)
        b = _descriptor("b", rng.normal(size=6), Method.BOVW)
        with pytest.raises(DataError):
            build_index([a, b])

    def test_mixed_dims_rejected(self, rng):
        a = _descriptor("a", rng.normal(size=6))
        b = _descriptor("b", rng.normal(size=7))
        with pytest.raises(DimensionError):
            build_index([a, b])

    def test_empty_rejected(self):
        with pytest.raises(InsufficientDataError):
            build_index([])

    def test_memory_overhead_bounded(self):
        # 1e5 x 512 float32 entries; bookkeeping must stay within 2.2x the payload
        count, dim = 100_000, 512
        matrix = np.zeros((count, dim), dtype=np.float32)
        matrix[:, 0] = 1.0
        descs = [
            Descriptor(image_id=f"img{i:06d}", method=Method.SPVP, values=matrix[i])
            for i in range(count)
        ]
        index = build_index(descs)
        assert index.payload_bytes == count * dim * 4
        assert index.approx_memory_bytes <= 2.2 * index.payload_bytes


class TestSearchKnn:
    def test_identical_descriptor_ranks_first_with_zero_distance(self, rng):
        index = _random_index(rng, 50, 16)
        query = Descriptor(image_id="q", method=Method.SPVP, values=index.matrix[17].copy())
        result = search_knn(index, query, 5)
        assert result.query_id == "q"
        assert result.hits[0][0] == "img00017"
        assert result.hits[0][1] == 0.0

    def test_big_n_returns_full_ranking(self, rng):
        index = _random_index(rng, 20, 8)
        query = _descriptor("q", rng.normal(size=8))
        result = search_knn(index, query, 500)
        assert len(result.hits) == 20
        assert sorted(result.ids) == sorted(index.ids)
        dists = [d for _, d in result.hits]
        assert dists == sorted(dists)

    def test_matches_full_sort_oracle(self, rng):
        index = _random_index(rng, 1000, 24)
        queries = [_descriptor(f"q{j}", rng.normal(size=24)) for j in range(50)]
        results = search_knn_batch(index, queries, 20)
        for q, res in zip(queries, results):
            want = knn_full_sort(index.matrix, list(index.ids), q.values, 20)
            assert list(res.ids) == [w[0] for w in want]
            for (_, got_d), (_, want_d) in zip(res.hits, want):
                assert got_d == pytest.approx(want_d, abs=1e-9)

    def test_distance_ties_break_by_id(self, rng):
        v = l2_normalize(rng.normal(size=6).astype(np.float32))
        descs = [
            Descriptor(image_id=name, method=Method.SPVP, values=v.copy())
            for name in ("delta", "alpha", "charlie", "bravo")
        ]
        index = build_index(descs)
        query = Descriptor(image_id="q", method=Method.SPVP, values=v.copy())
        result = search_knn(index, query, 4)
        assert list(result.ids) == ["alpha", "bravo", "charlie", "delta"]

    def test_batch_matches_single_queries(self, rng):
        index = _random_index(rng, 200, 12)
        queries = [_descriptor(f"q{j}", rng.normal(size=12)) for j in range(10)]
        batch = search_knn_batch(index, queries, 7)
        for q, res in zip(queries, batch):
            single = search_knn(index, q, 7)
            assert res.ids == single.ids
            assert [d for _, d in res.hits] == [d for _, d in single.hits]

    def test_method_mismatch_rejected(self, rng):
        index = _random_index(rng, 10, 8)
        query = _descriptor("q", rng.normal(size=8), Method.GEM)
        with pytest.raises(DataError):
            search_knn(index, query, 3)

    def test_dim_mismatch_rejected(self, rng):
        index = _random_index(rng, 10, 8)
        query = _descriptor("q", rng.normal(size=9))
        with pytest.raises(DimensionError):
            search_knn(index, query, 3)

    def test_n_must_be_positive(self, rng):
        index = _random_index(rng, 10, 8)
        query = _descriptor("q", rng.normal(size=8))
        with pytest.raises(ValueError):
            search_knn(index, query, 0)

    def test_results_deterministic_across_calls(self, rng):
        index = _random_index(rng, 300, 10)
        queries = [_descriptor(f"q{j}", rng.normal(size=10)) for j in range(5)]
        first = search_knn_batch(index, queries, 10)
        second = search_knn_batch(index, queries, 10)
        for a, b in zip(first, second):
            assert a.ids == b.ids
            assert [d for _, d in a.hits] == [d for _, d in b.hits]
