import json

import numpy as np
import pytest

from synthhand.codec import encode_angles, read_record
from synthhand.pipeline import (
    MANIFEST_NAME,
    DatasetManifest,
    ManifestError,
    dataset_digest,
    generate_dataset,
    load_dataset,
    render_record,
    verify_dataset,
)
from synthhand.renderer import CameraConfig, decode_png
from synthhand.sampling import SeedSpec, sample_configuration

SMALL = CameraConfig(width=48, height=48)


def make(space, tmp_path, name="d", count=10, seed=3, workers=1, **kwargs):
    manifest = DatasetManifest.create(space, seed, count, camera=SMALL, **kwargs)
    out = tmp_path / name
    summary = generate_dataset(space, manifest, out, workers=workers, chunk=3)
    return out, manifest, summary


@pytest.fixture(scope="module")
def dataset(space, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    out, manifest, summary = make(space, root, count=12)
    return out, manifest, summary


class TestManifest:
    def test_default_split(self, space):
        m = DatasetManifest.create(space, 1, 2500)
        assert (m.train_count, m.val_count) == (2000, 500)
        m = DatasetManifest.create(space, 1, 100_000)
        assert m.val_count == 500

    def test_counts_must_add_up(self, space):
        with pytest.raises(ManifestError):
            DatasetManifest(1, 10, 5, 4, space.fingerprint)
        with pytest.raises(ManifestError):
            DatasetManifest.create(space, 1, 10, val_count=11)

    def test_seed_range(self, space):
        with pytest.raises(ValueError):
            DatasetManifest.create(space, -1, 10)
        DatasetManifest.create(space, 2 ** 64 - 1, 10)

    def test_json_round_trip(self, space):
        m = DatasetManifest.create(space, 9, 30, camera=SMALL)
        assert DatasetManifest.from_dict(json.loads(m.to_json())) == m

    def test_field_names(self, space):
        keys = set(DatasetManifest.create(space, 9, 30).to_dict())
        assert keys == {
            "master_seed", "count", "train_count", "val_count", "joint_space_fingerprint", "camera", "light",
            "appearance_ranges", "generator_name", "format_version",
        }

    def test_splits_disjoint_and_exhaustive(self, space):
        m = DatasetManifest.create(space, 9, 37, val_count=8)
        train, val = set(m.split_indices("train")), set(m.split_indices("val"))
        assert not train & val
        assert train | val == set(range(37))
        assert all(m.split_of(i) == "train" for i in train)
        assert all(m.split_of(i) == "val" for i in val)

    def test_unsupported_version(self, space):
        d = DatasetManifest.create(space, 9, 3).to_dict()
        d["format_version"] = 2
        with pytest.raises(ManifestError):
            DatasetManifest.from_dict(d)


class TestGenerate:
    def test_layout(self, dataset, space):
        out, manifest, summary = dataset
        assert summary.count == 12
        assert (out / MANIFEST_NAME).is_file()
        assert sorted(p.name for p in (out / "train" / "images").iterdir()) == [f"{i:08d}.png" for i in range(10)]
        assert sorted(p.name for p in (out / "val" / "labels").iterdir()) == ["00000010.txt", "00000011.txt"]
        total = sum(p.stat().st_size for p in out.rglob("*") if p.is_file())
        assert summary.bytes_written == total

    def test_records_match_seeds(self, dataset, space):
        out, manifest, _ = dataset
        ds = load_dataset(out)
        for i in range(manifest.count):
            image, q = read_record(ds.split_dir(manifest.split_of(i)), i, ds.space)
            expected = sample_configuration(space, SeedSpec(manifest.master_seed, i))
            assert np.max(np.abs(q - expected)) <= 1e-6
            assert (image.width, image.height) == (48, 48)

    def test_workers_do_not_change_bytes(self, space, tmp_path):
        a, _, _ = make(space, tmp_path, "a", workers=1)
        b, _, _ = make(space, tmp_path, "b", workers=4)
        assert dataset_digest(a) == dataset_digest(b)

    def test_rerun_is_identical(self, space, tmp_path):
        a, _, _ = make(space, tmp_path, "a")
        first = dataset_digest(a)
        make(space, tmp_path, "a")
        assert dataset_digest(a) == first

    def test_different_seed_differs(self, space, tmp_path):
        a, _, _ = make(space, tmp_path, "a", seed=1, count=2)
        b, _, _ = make(space, tmp_path, "b", seed=2, count=2)
        assert dataset_digest(a) != dataset_digest(b)

    def test_count_zero(self, space, tmp_path):
        out, _, summary = make(space, tmp_path, count=0)
        assert summary.count == 0
        assert (out / MANIFEST_NAME).is_file()
        for split in ("train", "val"):
            for sub in ("images", "labels"):
                assert list((out / split / sub).iterdir()) == []
        assert verify_dataset(out).ok

    def test_rerun_removes_stale_records(self, space, tmp_path):
        make(space, tmp_path, count=6)
        out, _, _ = make(space, tmp_path, count=2)
        assert len(list((out / "train" / "images").iterdir())) == 2

    def test_single_index_regeneration(self, dataset, space):
        out, manifest, _ = dataset
        ds = load_dataset(out)
        for i in (0, 7, 11):
            png, label = render_record(space, manifest, i)
            image_path, label_path = ds.paths(i)
            assert image_path.read_bytes() == png
            assert label_path.read_text(encoding="utf-8") == label + "\n"

    def test_fingerprint_mismatch(self, space, one_joint_space, tmp_path):
        manifest = DatasetManifest.create(one_joint_space, 1, 2)
        with pytest.raises(ManifestError):
            generate_dataset(space, manifest, tmp_path / "x")

    def test_invalid_workers(self, space, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(space, DatasetManifest.create(space, 1, 1), tmp_path / "x", workers=0)


class TestVerify:
    def test_fresh_dataset_is_clean(self, dataset):
        out, manifest, _ = dataset
        report = verify_dataset(out)
        assert report.ok
        assert report.records_checked == manifest.count
        assert report.rederived == 1  # index 0 of 12

    def test_byte_flip_in_tag_name(self, space, tmp_path):
        out, _, _ = make(space, tmp_path, count=8)
        _, label_path = load_dataset(out).paths(5)
        data = bytearray(label_path.read_bytes())
        data[data.index(b"WRJ1")] ^= 0x01
        label_path.write_bytes(bytes(data))
        report = verify_dataset(out)
        assert [i for i, _ in report.failures] == [5]

    def test_truncated_image(self, space, tmp_path):
        out, _, _ = make(space, tmp_path, count=8)
        image_path, _ = load_dataset(out).paths(3)
        data = image_path.read_bytes()
        image_path.write_bytes(data[: len(data) // 2])
        report = verify_dataset(out)
        assert [i for i, _ in report.failures] == [3]
        assert "decode" in report.failures[0][1]

    def test_missing_file(self, space, tmp_path):
        out, _, _ = make(space, tmp_path, count=4)
        load_dataset(out).paths(2)[1].unlink()
        report = verify_dataset(out)
        assert [i for i, _ in report.failures] == [2]
        assert "missing" in report.failures[0][1]

    def test_rederivation_catches_silent_change(self, space, tmp_path):
        out, manifest, _ = make(space, tmp_path, count=4)
        ds = load_dataset(out)
        image_path, label_path = ds.paths(0)
        other = sample_configuration(space, SeedSpec(manifest.master_seed, 1))
        label_path.write_text(encode_angles(space, other) + "\n", encoding="utf-8")
        report = verify_dataset(out)
        assert [i for i, _ in report.failures] == [0]

    def test_wrong_resolution(self, space, tmp_path):
        out, manifest, _ = make(space, tmp_path, count=2)
        ds = load_dataset(out)
        other = DatasetManifest.create(space, manifest.master_seed, 2, camera=CameraConfig(width=32, height=48))
        png, _ = render_record(space, other, 1)
        ds.paths(1)[0].write_bytes(png)
        assert decode_png(ds.paths(1)[0]).width == 32
        report = verify_dataset(out)
        assert [i for i, _ in report.failures] == [1]
        assert "resolution" in report.failures[0][1]

    def test_missing_manifest(self, space, tmp_path):
        out, _, _ = make(space, tmp_path, count=1)
        (out / MANIFEST_NAME).unlink()
        with pytest.raises(ManifestError):
            verify_dataset(out)

    def test_tampered_joint_definition(self, space, tmp_path):
        out, _, _ = make(space, tmp_path, count=1)
        path = out / "joints.def"
        path.write_text(path.read_text().replace("0.085", "0.086", 1))
        with pytest.raises(ManifestError):
            load_dataset(out)
