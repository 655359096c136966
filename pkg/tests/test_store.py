import json

import numpy as np
import pytest

from ccfeat.store import (ConfigError, ManifestError, RunConfig, StoreError,
                          load_manifest, read_feature_store, write_feature_store,
                          write_manifest)


class TestFeatureStore:
    def test_roundtrip(self, tmp_path):
        rows = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
        ids = [f"img{i}" for i in range(5)]
        path = tmp_path / "tf.feat"
        write_feature_store(path, "tf", ids, rows,
                            {"config_hash": "c" * 64, "codebook_hash": "d" * 64})
        store = read_feature_store(path)
        assert store.kind == "tf"
        assert store.dim == 7
        assert store.ids == ids
        assert np.array_equal(store.rows, rows)
        assert store.meta["config_hash"] == "c" * 64
        assert np.array_equal(store.row("img3"), rows[3])
        assert "img3" in store and "nope" not in store

    def test_header_is_diffable_text(self, tmp_path):
        path = tmp_path / "bf.feat"
        write_feature_store(path, "bf", ["a"], np.zeros((1, 3), dtype=np.float32), {})
        head = path.read_bytes().split(b"end-header")[0].decode()
        assert "ccfeat-store 1" in head
        assert "kind bf" in head
        assert "dim 3" in head
        assert "count 1" in head

    def test_unknown_id(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_store(path, "tf", ["a"], np.zeros((1, 2), dtype=np.float32), {})
        with pytest.raises(StoreError):
            read_feature_store(path).row("b")

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(StoreError, match="duplicate"):
            write_feature_store(tmp_path / "x.feat", "tf", ["a", "a"],
                                np.zeros((2, 2), dtype=np.float32), {})

    def test_count_row_mismatch(self, tmp_path):
        with pytest.raises(StoreError):
            write_feature_store(tmp_path / "x.feat", "tf", ["a"],
                                np.zeros((2, 2), dtype=np.float32), {})

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_store(path, "tf", ["a", "b"], np.zeros((2, 4), dtype=np.float32), {})
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(StoreError, match="truncated"):
            read_feature_store(path)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.feat"
        path.write_bytes(b"something else\n")
        with pytest.raises(StoreError):
            read_feature_store(path)

    def test_write_is_deterministic(self, tmp_path):
        rows = np.arange(12, dtype=np.float32).reshape(3, 4)
        for name in ("a.feat", "b.feat"):
            write_feature_store(tmp_path / name, "ff", ["x", "y", "z"], rows,
                                {"config_hash": "e" * 64})
        assert (tmp_path / "a.feat").read_bytes() == (tmp_path / "b.feat").read_bytes()


class TestManifest:
    def _records(self):
        return [{"image_id": "a", "category": "cat1", "split": "train",
                 "image": "img/a.png", "tags_ref": "tags.jsonl"},
                {"image_id": "b", "category": "cat2", "split": "test",
                 "image": "img/b.png", "tags_ref": "tags.jsonl"}]

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._records())
        manifest = load_manifest(path)
        assert [r.image_id for r in manifest.records] == ["a", "b"]
        assert manifest.categories == ["cat1", "cat2"]
        assert manifest.split_records("train")[0].image_id == "a"
        assert manifest.resolve("img/a.png") == tmp_path / "img" / "a.png"

    def test_duplicate_id(self, tmp_path):
        records = self._records()
        records[1]["image_id"] = "a"
        path = tmp_path / "m.json"
        write_manifest(path, records)
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path)

    def test_missing_category(self, tmp_path):
        records = self._records()
        del records[0]["category"]
        path = tmp_path / "m.json"
        write_manifest(path, records)
        with pytest.raises(ManifestError, match="category"):
            load_manifest(path)

    def test_bad_split(self, tmp_path):
        records = self._records()
        records[0]["split"] = "validation"
        path = tmp_path / "m.json"
        write_manifest(path, records)
        with pytest.raises(ManifestError, match="split"):
            load_manifest(path)

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        write_manifest(path, [])
        with pytest.raises(ManifestError, match="empty"):
            load_manifest(path)

    def test_not_a_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_tag_documents_pull_category_from_manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._records())
        (tmp_path / "tags.jsonl").write_text(
            json.dumps({"image_id": "a", "tags": ["plane"]}) + "\n"
            + json.dumps({"image_id": "b", "tags": ["tram", "tram"]}) + "\n")
        docs = load_manifest(path).load_tag_documents()
        assert docs["a"].category == "cat1"
        assert docs["a"].split == "train"
        assert docs["b"].tags == ["tram", "tram"]

    def test_missing_tag_document(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._records())
        (tmp_path / "tags.jsonl").write_text(
            json.dumps({"image_id": "a", "tags": ["plane"]}) + "\n")
        with pytest.raises(ManifestError, match="'b'"):
            load_manifest(path).load_tag_documents()


class TestRunConfig:
    def test_defaults_are_published_settings(self):
        config = RunConfig()
        assert config.k == 25
        assert config.threshold == 0.40
        assert config.scale_factors == (0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
        assert config.base_side == 512
        assert config.agg == "max"

    def test_file_roundtrip_and_stable_hash(self, tmp_path):
        config = RunConfig(k=10, seed=3, embeddings={"wv": "wv.vec"})
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config.to_dict()))
        again = RunConfig.from_file(path)
        assert again == config
        assert again.stable_hash() == config.stable_hash()

    def test_hash_changes_with_content(self):
        assert RunConfig(k=10).stable_hash() != RunConfig(k=11).stable_hash()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"k": 5, "mystery": 1}))
        with pytest.raises(ConfigError, match="mystery"):
            RunConfig.from_file(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)
