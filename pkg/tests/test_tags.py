import json

import pytest
from hypothesis import given, strategies as st

from ccfeat.tags import (TagIngestError, default_stopwords, ingest_tag_documents,
                         normalize_root, remove_stopwords, stopwords_sha256,
                         tokenize, unique_tags)
from oracles import alg1_unique

words = st.text(alphabet="abcdefghij", min_size=1, max_size=6)


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("Airport inside!") == ["airport", "inside"]

    def test_empty(self):
        assert tokenize("") == []

    def test_short_fragments_dropped(self):
        assert tokenize("B&B rooms") == ["rooms"]

    def test_digits_are_separators(self):
        assert tokenize("room42beds") == ["room", "beds"]


class TestRemoveStopwords:
    def test_standard_list(self):
        assert remove_stopwords(["the", "plane"], default_stopwords()) == ["plane"]

    def test_empty(self):
        assert remove_stopwords([], default_stopwords()) == []

    def test_duplicates_retained(self):
        assert remove_stopwords(["plane", "plane"], default_stopwords()) == ["plane", "plane"]

    def test_hash_is_stable(self):
        assert len(stopwords_sha256()) == 64
        assert stopwords_sha256() == stopwords_sha256()


class TestNormalizeRoot:
    def test_plural_strips(self):
        assert normalize_root("planes") == "plane"

    def test_root_unchanged(self):
        assert normalize_root("plane") == "plane"

    def test_ing_form_groups_with_base(self):
        assert normalize_root("snowboarding") == normalize_root("snowboard")

    def test_lemma_table_consulted_first(self):
        assert normalize_root("mice") == normalize_root("mouse")
        assert normalize_root("went") == normalize_root("go")

    def test_bus_variants_group(self):
        assert normalize_root("buses") == normalize_root("bus")

    @given(words)
    def test_deterministic_and_total(self, word):
        assert normalize_root(word) == normalize_root(word)
        assert isinstance(normalize_root(word), str)


class TestUniqueTags:
    def test_plural_group_keeps_byte_order_first(self):
        assert unique_tags(["planes", "plane"], ["plane", "plane"]) == ["plane"]

    def test_empty(self):
        assert unique_tags([], []) == []

    def test_distinct_stems_both_kept(self):
        assert unique_tags(["tram", "metro"], ["tram", "metro"]) == ["tram", "metro"]

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            unique_tags(["a"], [])

    @given(st.lists(words, max_size=12))
    def test_idempotent(self, raw):
        once = unique_tags(raw, [normalize_root(t) for t in raw])
        again = unique_tags(once, [normalize_root(t) for t in once])
        assert once == again

    @given(st.lists(st.tuples(words, st.integers(0, 3)), max_size=12))
    def test_matches_literal_pseudocode_oracle(self, pairs):
        raw = [w for w, _ in pairs]
        stems = [f"s{k}" for _, k in pairs]  # synthetic stems
        assert unique_tags(raw, stems) == alg1_unique(raw, stems)

    @given(st.lists(words, max_size=12))
    def test_output_subset_and_bounded(self, raw):
        out = unique_tags(raw, [normalize_root(t) for t in raw])
        assert len(out) <= len(raw)
        assert set(out) <= set(raw)


class TestIngest:
    def test_pipeline_trace(self, tmp_path):
        p = tmp_path / "tags.jsonl"
        p.write_text(json.dumps({"image_id": "img1", "tags": ["the", "plane", "plane"]}) + "\n")
        docs = ingest_tag_documents(p)
        assert len(docs) == 1
        assert docs[0].image_id == "img1"
        assert sorted(docs[0].tags) == ["plane", "plane"]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "tags.jsonl"
        p.write_text("")
        assert ingest_tag_documents(p) == []

    def test_missing_id_names_record(self, tmp_path):
        p = tmp_path / "tags.jsonl"
        p.write_text(json.dumps({"tags": ["plane"]}) + "\n")
        with pytest.raises(TagIngestError, match="record 1"):
            ingest_tag_documents(p)

    def test_malformed_record_names_index(self, tmp_path):
        p = tmp_path / "tags.jsonl"
        p.write_text('{"image_id": "a", "tags": []}\n{oops\n')
        with pytest.raises(TagIngestError, match="record 2"):
            ingest_tag_documents(p)

    def test_multiword_tag_strings_are_tokenized(self, tmp_path):
        p = tmp_path / "tags.jsonl"
        p.write_text(json.dumps({"image_id": "a", "tags": ["Airport inside!", "PLANE"],
                                 "category": "airport", "split": "train"}) + "\n")
        doc = ingest_tag_documents(p)[0]
        assert doc.tags == ["airport", "inside", "plane"]
        assert doc.category == "airport"
        assert doc.split == "train"
