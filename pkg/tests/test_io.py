import hashlib
import struct

import numpy as np
import pytest

from placevlad import (
    Codebook,
    DataError,
    Descriptor,
    DimensionError,
    GeoRecord,
    Manifest,
    ManifestRecord,
    Method,
    RankedResult,
    build_index,
    iter_feature_maps,
    l2_normalize_rows,
    load_codebook,
    load_feature_map,
    load_index,
    load_manifest,
    load_pca_model,
    load_results,
    pca_fit,
    save_codebook,
    save_feature_map,
    save_index,
    save_manifest,
    save_pca_model,
    save_results,
)

from conftest import make_map, random_map, unit_rows


class TestFeatureMapFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        fmap = random_map(rng, "scene", 50, 16)
        first = tmp_path / "scene.pvfm"
        second = tmp_path / "again.pvfm"
        save_feature_map(fmap, first)
        loaded = load_feature_map(first)
        assert loaded.image_id == "scene"
        assert np.array_equal(loaded.xy, fmap.xy)
        assert np.array_equal(loaded.descriptors, fmap.descriptors)
        assert (loaded.source_width, loaded.source_height) == (fmap.source_width, fmap.source_height)
        save_feature_map(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_reference_parser_agrees(self, rng, tmp_path):
        count, dim = 10_000, 24
        fmap = random_map(rng, "big", count, dim)
        path = tmp_path / "big.pvfm"
        save_feature_map(fmap, path)

        # independent parse: magic, packed header, little-endian f32 rows,
        # trailing 8-byte blake2b of the payload
        data = path.read_bytes()
        assert data[:4] == b"PVFM"
        payload, checksum = data[4:-8], data[-8:]
        assert hashlib.blake2b(payload, digest_size=8).digest() == checksum
        version, normalized, n, d, w, h = struct.unpack_from("<HBIHHH", payload, 0)
        assert (version, normalized, n, d) == (1, 1, count, dim)
        assert (w, h) == (fmap.source_width, fmap.source_height)
        header_len = struct.calcsize("<HBIHHH")
        rows = np.frombuffer(payload, dtype="<f4", offset=header_len).reshape(count, 2 + dim)
        assert len(payload) == header_len + count * (2 + dim) * 4
        assert np.array_equal(rows[:, :2], fmap.xy)
        assert np.array_equal(rows[:, 2:], fmap.descriptors)

    def test_unnormalized_rows_renormalized_on_load(self, rng, tmp_path):
        raw = unit_rows(rng, 20, 8) * 3.5
        fmap = make_map("raw", rng.uniform(0, 1, (20, 2)), raw)
        path = tmp_path / "raw.pvfm"
        save_feature_map(fmap, path)
        loaded = load_feature_map(path)
        assert loaded.descriptors_normalized()
        want = l2_normalize_rows(fmap.descriptors.astype(np.float64)).astype(np.float32)
        assert np.allclose(loaded.descriptors, want, atol=1e-6)

    def test_empty_map_round_trips(self, tmp_path):
        fmap = make_map("void", np.empty((0, 2)), np.empty((0, 6)))
        path = tmp_path / "void.pvfm"
        save_feature_map(fmap, path)
        loaded = load_feature_map(path)
        assert loaded.count == 0

    def test_truncated_file_rejected(self, rng, tmp_path):
        path = tmp_path / "cut.pvfm"
        save_feature_map(random_map(rng, "cut", 30, 8), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(DataError):
            load_feature_map(path)

    def test_flipped_payload_byte_rejected(self, rng, tmp_path):
        path = tmp_path / "flip.pvfm"
        save_feature_map(random_map(rng, "flip", 30, 8), path)
        data = bytearray(path.read_bytes())
        data[40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_feature_map(path)

    def test_wrong_magic_rejected(self, rng, tmp_path):
        path = tmp_path / "magic.pvfm"
        save_feature_map(random_map(rng, "magic", 5, 4), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_feature_map(path)

    def test_expect_dim_enforced(self, rng, tmp_path):
        path = tmp_path / "dim.pvfm"
        save_feature_map(random_map(rng, "dim", 5, 4), path)
        with pytest.raises(DimensionError):
            load_feature_map(path, expect_dim=8)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_feature_map(tmp_path / "nothing.pvfm")


class TestCodebookFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        cb = Codebook(centroids=unit_rows(rng, 16, 8))
        first = tmp_path / "cb.pvcb"
        second = tmp_path / "cb2.pvcb"
        save_codebook(cb, first)
        loaded = load_codebook(first)
        assert np.array_equal(loaded.centroids, cb.centroids)
        save_codebook(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_corrupt_rejected(self, rng, tmp_path):
        path = tmp_path / "cb.pvcb"
        save_codebook(Codebook(centroids=unit_rows(rng, 4, 4)), path)
        data = bytearray(path.read_bytes())
        data[-1] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_codebook(path)


class TestPcaFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        model = pca_fit(rng.normal(size=(100, 12)), 5, whiten=True)
        first = tmp_path / "m.pvpc"
        second = tmp_path / "m2.pvpc"
        save_pca_model(model, first)
        loaded = load_pca_model(first)
        assert loaded.whiten is True
        assert np.array_equal(loaded.mean, model.mean)
        assert np.array_equal(loaded.components, model.components)
        assert np.array_equal(loaded.eigenvalues, model.eigenvalues)
        save_pca_model(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated_rejected(self, rng, tmp_path):
        path = tmp_path / "m.pvpc"
        save_pca_model(pca_fit(rng.normal(size=(50, 6)), 3), path)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(DataError):
            load_pca_model(path)


class TestIndexFile:
    def _index(self, rng):
        descs = [
            Descriptor(
                image_id=name,
                method=Method.VLAD,
                values=unit_rows(rng, 1, 10)[0],
            )
            for name in ("plain", "uniçode-túl", "z" * 300)
        ]
        return build_index(descs)

    def test_round_trip_bit_exact(self, rng, tmp_path):
        index = self._index(rng)
        first = tmp_path / "a.pvix"
        second = tmp_path / "b.pvix"
        save_index(index, first)
        loaded = load_index(first)
        assert loaded.method is Method.VLAD
        assert loaded.ids == index.ids
        assert np.array_equal(loaded.matrix, index.matrix)
        save_index(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_corrupt_rejected(self, rng, tmp_path):
        path = tmp_path / "a.pvix"
        save_index(self._index(rng), path)
        data = bytearray(path.read_bytes())
        data[10] ^= 0x40
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_index(path)


def _write_maps(rng, tmp_path, names, dim=6):
    records = []
    for i, name in enumerate(names):
        fmap = random_map(rng, name, 10, dim)
        path = tmp_path / f"{name}.pvfm"
        save_feature_map(fmap, path)
        records.append(
            ManifestRecord(
                image_id=name,
                path=path,
                geo=GeoRecord(image_id=name, latitude=36.35 + i * 1e-4, longitude=127.38),
                split="database" if i % 2 == 0 else "query",
            )
        )
    return records


class TestManifest:
    def test_round_trip(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["aa", "bb", "cc"])
        records[1] = ManifestRecord(
            image_id="bb",
            path=records[1].path,
            geo=GeoRecord(image_id="bb", latitude=36.3501, longitude=127.38, yaw=45.0),
            split="query",
        )
        manifest = Manifest(records=tuple(records))
        path = tmp_path / "manifest.csv"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert [r.image_id for r in loaded.records] == ["aa", "bb", "cc"]
        for got, want in zip(loaded.records, manifest.records):
            assert got.split == want.split
            assert got.path.resolve() == want.path.resolve()
            assert got.geo.latitude == want.geo.latitude
            assert got.geo.longitude == want.geo.longitude
            assert got.geo.yaw == want.geo.yaw

    def test_splits_partition_records(self, rng, tmp_path):
        manifest = Manifest(records=tuple(_write_maps(rng, tmp_path, ["a", "b", "c", "d"])))
        assert [r.image_id for r in manifest.database] == ["a", "c"]
        assert [r.image_id for r in manifest.queries] == ["b", "d"]
        geo = manifest.geo_records("query")
        assert [g.image_id for g in geo] == ["b", "d"]

    def test_bad_number_reports_line(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["a", "b"])
        path = tmp_path / "manifest.csv"
        save_manifest(Manifest(records=tuple(records)), path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2].replace("36.35", "not-a-number", 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=r":3:"):
            load_manifest(path)

    def test_missing_feature_file_rejected_unless_disabled(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["a", "b"])
        path = tmp_path / "manifest.csv"
        save_manifest(Manifest(records=tuple(records)), path)
        records[0].path.unlink()
        with pytest.raises(DataError, match="missing"):
            load_manifest(path)
        loaded = load_manifest(path, check_files=False)
        assert len(loaded.records) == 2

    def test_duplicate_ids_rejected(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["a", "b"])
        clone = ManifestRecord(
            image_id="a", path=records[0].path, geo=records[0].geo, split="database"
        )
        with pytest.raises(DataError):
            Manifest(records=(records[0], clone))

    def test_bad_split_rejected(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["a"])
        with pytest.raises(DataError):
            ManifestRecord(
                image_id="x", path=records[0].path, geo=records[0].geo, split="training"
            )

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("id,file\nx,y\n")
        with pytest.raises(DataError, match="header"):
            load_manifest(path)

    def test_iter_feature_maps_uses_manifest_ids(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["one", "two"])
        renamed = ManifestRecord(
            image_id="custom", path=records[0].path, geo=records[0].geo, split="database"
        )
        maps = list(iter_feature_maps([renamed, records[1]]))
        assert [m.image_id for m in maps] == ["custom", "two"]

    def test_iter_feature_maps_rejects_mixed_dims(self, rng, tmp_path):
        records = _write_maps(rng, tmp_path, ["one"], dim=6)
        records += _write_maps(rng, tmp_path, ["wide"], dim=8)
        with pytest.raises(DimensionError):
            list(iter_feature_maps(records))


class TestResultsFile:
    def _results(self):
        return [
            RankedResult(query_id="q0", hits=(("a", 0.0), ("b", 0.125), ("c", 0.5))),
            RankedResult(query_id="q1", hits=(("c", 0.25), ("a", 1.75))),
        ]

    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "results.tsv"
        save_results(self._results(), path)
        loaded = load_results(path)
        assert len(loaded) == 2
        for got, want in zip(loaded, self._results()):
            assert got.query_id == want.query_id
            assert got.hits == want.hits

    def test_non_contiguous_rows_rejected(self, tmp_path):
        path = tmp_path / "results.tsv"
        save_results(self._results(), path)
        lines = path.read_text().splitlines()
        lines.append("q0\t4\td\t0.9")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="contiguous"):
            load_results(path)

    def test_rank_gap_rejected(self, tmp_path):
        path = tmp_path / "results.tsv"
        path.write_text("query_id\trank\timage_id\tdistance\nq0\t1\ta\t0.0\nq0\t3\tb\t0.5\n")
        with pytest.raises(DataError, match="rank"):
            load_results(path)

    def test_empty_table_rejected(self, tmp_path):
        path = tmp_path / "results.tsv"
        path.write_text("query_id\trank\timage_id\tdistance\n")
        with pytest.raises(DataError):
            load_results(path)
