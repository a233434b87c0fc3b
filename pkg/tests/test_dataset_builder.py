import json

import numpy as np
import pytest

from conftest import small_spec
from dataset_builder import (SIDECAR_NAME, DatasetSpec, GraspDataset, build_dataset, compute_stats, decode_shard,
                             encode_shard, generate_scene, read_shard)
from errors import DataError
from grasp_oracle import OracleConfig, oracle_eval


def test_build_writes_three_shards_and_sidecar(tiny_data_dir):
    for name in ("train.gqsd", "val.gqsd", "test.gqsd", SIDECAR_NAME):
        assert (tiny_data_dir / name).is_file()
    sidecar = json.loads((tiny_data_dir / SIDECAR_NAME).read_text(encoding="utf-8"))
    assert sidecar["seed"] == 7
    assert sidecar["splits"] == {"train": list(range(8)), "val": [8], "test": [9]}
    assert sidecar["prng"]["generator"] == "numpy.random.PCG64"
    assert set(sidecar["stats"]) == {"gamma", "z_mean", "z_std"}


def test_same_seed_gives_identical_bytes(tiny_data_dir, tmp_path):
    build_dataset(small_spec(), seed=7, out_dir=tmp_path)
    for name in ("train.gqsd", "val.gqsd", "test.gqsd", SIDECAR_NAME):
        assert (tmp_path / name).read_bytes() == (tiny_data_dir / name).read_bytes()


def test_parallel_generation_matches_serial(tiny_data_dir, tmp_path):
    build_dataset(small_spec(max_processes=2), seed=7, out_dir=tmp_path)
    for name in ("train.gqsd", "val.gqsd", "test.gqsd", SIDECAR_NAME):
        assert (tmp_path / name).read_bytes() == (tiny_data_dir / name).read_bytes()


def test_different_seed_changes_the_data(tiny_data_dir, tmp_path):
    build_dataset(small_spec(), seed=8, out_dir=tmp_path)
    assert (tmp_path / "train.gqsd").read_bytes() != (tiny_data_dir / "train.gqsd").read_bytes()


def test_stats_recompute_from_the_train_shard(tiny_dataset):
    stats = compute_stats(tiny_dataset.split("train"))
    assert stats.gamma == pytest.approx(tiny_dataset.stats.gamma, rel=1e-12)
    assert stats.z_mean == pytest.approx(tiny_dataset.stats.z_mean, rel=1e-12)
    assert stats.z_std == pytest.approx(tiny_dataset.stats.z_std, rel=1e-12)


def test_stored_labels_match_the_oracle(tiny_dataset):
    for split in ("train", "val", "test"):
        for record in tiny_dataset.split(split):
            assert record.positives()
            for a in record.annotations:
                robust, _ = oracle_eval(record.shape, a.grasp, tiny_dataset.oracle_cfg, record.meta)
                assert robust == a.robust


def test_scene_streams_are_independent(tiny_dataset):
    spec = small_spec()
    record, entry = generate_scene((3, 7, "train", spec.to_dict(), OracleConfig().to_dict()))
    stored = tiny_dataset.split("train")[3]
    np.testing.assert_array_equal(record.depth.depth, stored.depth.depth)
    assert entry["index"] == 3


def test_shard_roundtrip_is_byte_identical(tiny_data_dir):
    blob = (tiny_data_dir / "train.gqsd").read_bytes()
    assert encode_shard(decode_shard(blob)) == blob


@pytest.mark.parametrize("corrupt", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
    lambda b: b[:6],
])
def test_corrupt_shards_are_rejected(tiny_data_dir, tmp_path, corrupt):
    path = tmp_path / "broken.gqsd"
    path.write_bytes(corrupt((tiny_data_dir / "val.gqsd").read_bytes()))
    with pytest.raises(DataError):
        read_shard(path)


def test_sidecar_and_shard_must_agree(tiny_data_dir, tmp_path):
    for name in ("train.gqsd", "val.gqsd", "test.gqsd"):
        (tmp_path / name).write_bytes((tiny_data_dir / name).read_bytes())
    sidecar = json.loads((tiny_data_dir / SIDECAR_NAME).read_text(encoding="utf-8"))
    sidecar["splits"]["val"] = [8, 9]
    (tmp_path / SIDECAR_NAME).write_text(json.dumps(sidecar), encoding="utf-8")
    with pytest.raises(DataError):
        GraspDataset(tmp_path).split("val")


def test_missing_sidecar_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        GraspDataset(tmp_path)


def test_split_counts():
    assert DatasetSpec(n_scenes=1000).split_counts() == {"train": 800, "val": 100, "test": 100}
    assert small_spec().split_counts() == {"train": 8, "val": 1, "test": 1}


def test_spec_validation():
    with pytest.raises(DataError):
        DatasetSpec(split_fractions=(0.5, 0.2, 0.2))
    with pytest.raises(DataError):
        DatasetSpec(n_pos_range=(0, 3))


def test_dense_test_annotations(tmp_path):
    spec = small_spec(dense_test_annotations=6)
    record, _ = generate_scene((9, 7, "test", spec.to_dict(), OracleConfig().to_dict()))
    assert len(record.annotations) <= 6
    assert all(a.robust for a in record.annotations)


def test_meta_is_float32_quantized():
    meta = DatasetSpec(pixel_scale=0.001).meta()
    assert meta.pixel_scale == float(np.float32(0.001))


def test_labels_flipped_by_quantization_are_resampled(monkeypatch):
    import dataset_builder

    calls = []

    def flip_first(shape, g, cfg, meta):
        robust, quality = oracle_eval(shape, g, cfg, meta)
        calls.append(robust)
        return (not robust, quality) if len(calls) == 1 else (robust, quality)

    monkeypatch.setattr(dataset_builder, "oracle_eval", flip_first)
    spec = small_spec(n_pos_range=(4, 4), n_neg_range=(2, 2))
    record, _ = generate_scene((2, 7, "train", spec.to_dict(), OracleConfig().to_dict()))
    assert len(record.positives()) == 4
    assert sum(not a.robust for a in record.annotations) == 2
    assert len(calls) == 7
