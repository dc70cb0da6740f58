import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from range_al import dataset_io
from range_al.dataset_io import (
    AlRunRecord,
    DatasetManifest,
    LabelMap,
    ManifestEntry,
    PointCloud,
    StepRecord,
    pack_label_words,
    parse_labels,
    parse_point_cloud,
    read_run_record,
    serialize_labels,
    serialize_point_cloud,
    split_label_words,
    split_pool,
    write_run_record,
)
from range_al.errors import (
    MalformedLabels,
    MalformedScan,
    PoolTooLarge,
    StorageError,
    UnknownLabel,
)
from range_al.projection import IGNORE

MAP = LabelMap(raw_to_train={9: 3, 5: 0, 6: 1, 7: 2}, ignore_ids=frozenset({0}))


class TestParsePointCloud:
    def test_two_points_in_order(self):
        data = struct.pack("<8f", 1, 0, 0, 0.5, 0, 1, 0, 0.2)
        cloud = parse_point_cloud(data)
        assert len(cloud) == 2
        np.testing.assert_allclose(cloud.points[0], [1, 0, 0, 0.5])
        np.testing.assert_allclose(cloud.points[1], [0, 1, 0, 0.2])

    def test_empty_bytes(self):
        assert len(parse_point_cloud(b"")) == 0

    def test_bad_length(self):
        with pytest.raises(MalformedScan):
            parse_point_cloud(b"\x00" * 17)

    def test_non_finite(self):
        data = struct.pack("<4f", 1, 0, 0, 0.5)[:-4] + struct.pack("<f", float("nan"))
        with pytest.raises(MalformedScan):
            parse_point_cloud(data)

    def test_round_trip(self, gen):
        pts = gen.normal(0, 5, (100, 4)).astype(np.float32)
        cloud = PointCloud(points=pts)
        again = parse_point_cloud(serialize_point_cloud(cloud))
        np.testing.assert_array_equal(again.points, cloud.points)


class TestParseLabels:
    def test_semantic_instance_split(self):
        word = struct.pack("<I", 0x00010009)  # raw 9, instance 1
        labels, instances = parse_labels(word, MAP)
        assert labels[0] == 3
        assert instances[0] == 1

    def test_ignored_raw_id(self):
        labels, _ = parse_labels(struct.pack("<I", 0), MAP)
        assert labels[0] == IGNORE

    def test_bad_length(self):
        with pytest.raises(MalformedLabels):
            parse_labels(b"\x00" * 6, MAP)

    def test_unknown_raw_strict(self):
        with pytest.raises(UnknownLabel):
            parse_labels(struct.pack("<I", 99), MAP, strict=True)

    def test_unknown_raw_lenient_maps_to_ignore(self):
        labels, _ = parse_labels(struct.pack("<I", 99), MAP)
        assert labels[0] == IGNORE

    def test_label_round_trip(self, gen):
        labels = gen.integers(0, 4, 50).astype(np.int32)
        instances = gen.integers(0, 1000, 50).astype(np.int32)
        data = serialize_labels(labels, instances, MAP)
        l2, i2 = parse_labels(data, MAP)
        np.testing.assert_array_equal(l2, labels)
        np.testing.assert_array_equal(i2, instances)

    @given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=64))
    def test_bit_split_reconstructs_word(self, words):
        arr = np.array(words, dtype=np.uint32)
        semantic, instance = split_label_words(arr)
        np.testing.assert_array_equal(pack_label_words(semantic, instance), arr)


class TestLabelMap:
    def test_rejects_non_contiguous_train_ids(self):
        with pytest.raises(ValueError):
            LabelMap(raw_to_train={1: 0, 2: 2})

    def test_rejects_collisions(self):
        with pytest.raises(ValueError):
            LabelMap(raw_to_train={1: 0, 2: 0})

    def test_rejects_ignore_overlap(self):
        with pytest.raises(ValueError):
            LabelMap(raw_to_train={1: 0}, ignore_ids=frozenset({1}))

    def test_num_classes(self):
        assert MAP.num_classes == 4

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "labelmap.txt"
        dataset_io.save_label_map(MAP, path)
        again = dataset_io.load_label_map(path)
        assert again == MAP


def make_manifest(n):
    return DatasetManifest(entries=[ManifestEntry(f"s/{i}.bin", f"l/{i}.label") for i in range(n)])


class TestSplitPool:
    def test_paper_sizes(self):
        pool, test = split_pool(make_manifest(23201), 6000, 2000, seed=1)
        assert len(pool) == 6000 and len(test) == 2000
        assert not set(pool.tolist()) & set(test.tolist())

    def test_full_pool_no_test(self):
        pool, test = split_pool(make_manifest(10), 10, 0, seed=1)
        assert sorted(pool.tolist()) == list(range(10))
        assert len(test) == 0

    def test_deterministic(self):
        a = split_pool(make_manifest(100), 60, 20, seed=7)
        b = split_pool(make_manifest(100), 60, 20, seed=7)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_different_seed_differs(self):
        a = split_pool(make_manifest(100), 60, 20, seed=7)
        b = split_pool(make_manifest(100), 60, 20, seed=8)
        assert not np.array_equal(a[0], b[0])

    def test_too_large(self):
        with pytest.raises(PoolTooLarge):
            split_pool(make_manifest(10), 8, 3, seed=1)


class TestManifestFile:
    def test_round_trip_preserves_order(self, tmp_path):
        manifest = make_manifest(5)
        path = tmp_path / "manifest.txt"
        dataset_io.save_manifest(manifest, path)
        again = dataset_io.load_manifest(path)
        assert [e.scan_path for e in again.entries] == [e.scan_path for e in manifest.entries]
        assert [e.label_path for e in again.entries] == [e.label_path for e in manifest.entries]

    def test_missing_file_is_storage_error(self, tmp_path):
        with pytest.raises(StorageError):
            dataset_io.load_manifest(tmp_path / "nope.txt")


def record_with_steps(n):
    steps = [
        StepRecord(
            step=k,
            n_labeled=24 * (k + 1),
            selected_ids=list(range(3 * k, 3 * k + 3)),
            test_miou=0.5 + 0.01 * k,
            mean_variance=0.1 / (k + 1),
            mean_bald=0.2 / (k + 1),
            wall_time=0.5 * k,
        )
        for k in range(n)
    ]
    return AlRunRecord(config={"seed": 1, "budget": 24}, steps=steps,
                       pool_indices=[1, 2, 3], test_indices=[4], init_labeled=[1])


class TestRunRecord:
    def test_round_trip_equality(self, tmp_path):
        record = record_with_steps(4)
        path = tmp_path / "record.csv"
        write_run_record(record, path)
        assert read_run_record(path) == record

    def test_25_steps_gives_25_data_rows(self, tmp_path):
        path = tmp_path / "record.csv"
        write_run_record(record_with_steps(25), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 26  # header + 25

    def test_empty_record_header_only(self, tmp_path):
        path = tmp_path / "record.csv"
        write_run_record(record_with_steps(0), path)
        assert path.read_text().splitlines() == [",".join(dataset_io.RECORD_COLUMNS)]

    def test_float_round_trip_precision(self, tmp_path):
        record = record_with_steps(1)
        record.steps[0].test_miou = 1.0 / 3.0
        path = tmp_path / "record.csv"
        write_run_record(record, path)
        assert read_run_record(path).steps[0].test_miou == 1.0 / 3.0

    def test_unwritable_path_is_storage_error(self, tmp_path):
        with pytest.raises(StorageError):
            write_run_record(record_with_steps(1), tmp_path)  # a directory

    def test_scores_csv(self, tmp_path):
        path = tmp_path / "scores.csv"
        dataset_io.write_scores_csv([(0, 5, "bald", 1.25)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,sample_id,heuristic,aggregated_score"
        assert lines[1] == "0,5,bald,1.25"
