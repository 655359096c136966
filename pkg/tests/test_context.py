import numpy as np
import pytest

from ccfeat.context import (Codebook, CodebookError, build_filter_bank, extract_tf,
                            merge_filter_banks, read_codebook, top_frequent,
                            write_codebook)
from ccfeat.embed import SimilarityConfig
from ccfeat.tags import TagDocument
from conftest import make_store, random_raw_stores, stores_from_raw
from oracles import naive_tf_bins


def doc(image_id, tags, category=None, split=None):
    return TagDocument(image_id=image_id, tags=list(tags), category=category, split=split)


def unit(angle_cos):
    """Unit vector whose cosine against (1, 0) equals the given value."""
    return [angle_cos, float(np.sqrt(1.0 - angle_cos ** 2))]


def transit_cfg():
    # cos(subway, tram) = 0.9 and cos(subway, pizza) = 0.1 in every family
    entries = {"subway": [1, 0], "tram": unit(0.9), "pizza": unit(0.1),
               "train": unit(0.8)}
    stores = tuple(make_store(f, entries) for f in ("wv", "gv", "ft"))
    return SimilarityConfig(stores=stores)


def tf_cfg():
    """Unit vectors solving cos(train,tram)=0.8, cos(train,pizza)=0.1,
    cos(tram,pizza)=0.1 exactly."""
    entries = {"train": [1.0, 0.0, 0.0],
               "tram": [0.8, 0.6, 0.0],
               "pizza": [0.1, 1.0 / 30.0, float(np.sqrt(0.99 - 1.0 / 900.0))]}
    stores = tuple(make_store(f, entries) for f in ("wv", "gv", "ft"))
    return SimilarityConfig(stores=stores)


class TestTopFrequent:
    def test_direct_count(self):
        docs = [doc("a", ["tram"] * 3 + ["metro"], category="subway")]
        cands = top_frequent(docs, m=500)
        assert cands.words == (("tram", 3), ("metro", 1))

    def test_byte_order_tie_break(self):
        docs = [doc("a", ["b", "a", "b", "a"], category="c")]
        cands = top_frequent(docs, m=1)
        assert cands.words == (("a", 2),)

    def test_empty_vocabulary(self):
        with pytest.raises(CodebookError, match="empty pooled vocabulary"):
            top_frequent([doc("a", [], category="c")])

    def test_mixed_categories_rejected(self):
        with pytest.raises(CodebookError, match="mixed"):
            top_frequent([doc("a", ["x"], category="c1"), doc("b", ["y"], category="c2")])

    def test_variant_counts_fold_into_representative(self):
        # plane/planes share a root; the representative carries both counts
        docs = [doc("a", ["planes", "plane", "planes"], category="c")]
        cands = top_frequent(docs)
        assert cands.words == (("plane", 3),)


class TestBuildFilterBank:
    def test_top1_by_similarity(self):
        cfg = transit_cfg()
        cands = top_frequent([doc("a", ["tram", "pizza"], category="subway")])
        bank = build_filter_bank("subway", cands, k=1, cfg=cfg)
        assert bank.words == ("tram",)
        assert bank.scores[0] == pytest.approx(0.9, abs=1e-9)

    def test_saturation_keeps_all_comparable(self):
        cfg = transit_cfg()
        cands = top_frequent([doc("a", ["tram", "pizza", "train"], category="subway")])
        bank = build_filter_bank("subway", cands, k=100, cfg=cfg)
        assert bank.words == ("tram", "train", "pizza")
        assert list(bank.scores) == sorted(bank.scores, reverse=True)

    def test_oov_candidates_excluded(self):
        cfg = transit_cfg()
        docs = [doc("a", ["tram", "zzz"], category="subway")]
        bank = build_filter_bank("subway", top_frequent(docs), k=10, cfg=cfg)
        assert "zzz" not in bank.words

    def test_oov_label_everywhere_errors(self):
        cfg = transit_cfg()
        cands = top_frequent([doc("a", ["tram"], category="spaceport")])
        with pytest.raises(CodebookError, match="out-of-vocabulary"):
            build_filter_bank("spaceport", cands, k=1, cfg=cfg)

    def test_multitoken_label_uses_mean_vector(self):
        entries = {"airport": [1, 0], "inside": [0, 1], "terminal": unit(np.sqrt(0.5))}
        cfg = SimilarityConfig(stores=(make_store("wv", entries),))
        cands = top_frequent([doc("a", ["terminal"], category="airport inside")])
        bank = build_filter_bank("airport inside", cands, k=1, cfg=cfg)
        assert bank.words == ("terminal",)


class TestMergeFilterBanks:
    def test_union_with_provenance(self):
        b1 = build_bank("c1", ("a", "b"))
        b2 = build_bank("c2", ("b", "c"))
        cb = merge_filter_banks([b1, b2])
        assert cb.words == ("a", "b", "c")
        assert cb.provenance["b"] == ("c1", "c2")

    def test_single_bank_identity(self):
        cb = merge_filter_banks([build_bank("c", ("x", "y"))])
        assert cb.words == ("x", "y")

    def test_disjoint_eight_banks_of_25(self):
        banks = [build_bank(f"c{i}", tuple(f"w{i}_{j}" for j in range(25)))
                 for i in range(8)]
        cb = merge_filter_banks(banks)
        assert len(cb) == 200

    def test_bound_holds(self):
        banks = [build_bank("c1", ("a", "b")), build_bank("c2", ("a", "b"))]
        assert len(merge_filter_banks(banks)) <= 2 * 2


def build_bank(category, words):
    from ccfeat.context import FilterBank
    return FilterBank(category=category, words=tuple(words),
                      scores=tuple(1.0 - 0.01 * i for i in range(len(words))))


def codebook_of(words, threshold=0.40):
    return Codebook(words=tuple(words), provenance={w: ("c",) for w in words},
                    categories=("c",), k=25, threshold=threshold)


class TestExtractTf:
    def test_empty_document_all_zero(self):
        cfg = transit_cfg()
        feat = extract_tf(doc("i", []), codebook_of(["tram", "pizza"]), cfg=cfg)
        assert feat.bins.tolist() == [0, 0]
        assert len(feat.bins) == 2

    def test_exact_match_counts_multiplicity(self):
        # D(tram, pizza) = 0.1 < threshold; tram matches its own bin by string
        feat = extract_tf(doc("i", ["tram", "tram"]), codebook_of(["tram", "pizza"]),
                          cfg=tf_cfg())
        assert feat.bins.tolist() == [2, 0]

    def test_threshold_gate(self):
        # D(train, tram) = 0.8 clears 0.40, D(train, pizza) = 0.1 does not
        feat = extract_tf(doc("i", ["train"]), codebook_of(["tram", "pizza"]),
                          cfg=tf_cfg())
        assert feat.bins.tolist() == [1, 0]

    def test_one_tag_can_hit_many_bins(self):
        entries = {"a": [1, 0], "b": [1, 0], "c": [1, 0]}
        cfg = SimilarityConfig(stores=(make_store("wv", entries),))
        feat = extract_tf(doc("i", ["a"]), codebook_of(["b", "c"]), cfg=cfg)
        assert feat.bins.tolist() == [1, 1]

    def test_lambda_monotonicity(self):
        cfg = transit_cfg()
        cb = codebook_of(["tram", "pizza", "train"])
        d = doc("i", ["train", "subway", "tram"])
        low = extract_tf(d, cb, threshold=0.2, cfg=cfg).bins
        high = extract_tf(d, cb, threshold=0.8, cfg=cfg).bins
        assert (low >= high).all()

    def test_lambda_above_one_leaves_only_exact_matches(self):
        cfg = tf_cfg()
        cb = codebook_of(["tram", "pizza"])
        assert extract_tf(doc("i", ["train"]), cb, threshold=1.5, cfg=cfg).bins.tolist() == [0, 0]
        assert extract_tf(doc("i", ["tram"]), cb, threshold=1.5, cfg=cfg).bins.tolist() == [1, 0]

    def test_oov_tags_contribute_nothing(self):
        cfg = transit_cfg()
        feat = extract_tf(doc("i", ["qqq"]), codebook_of(["tram"]), cfg=cfg)
        assert feat.bins.tolist() == [0]

    def test_empty_codebook_rejected(self):
        cfg = transit_cfg()
        with pytest.raises(CodebookError):
            extract_tf(doc("i", ["tram"]), codebook_of([]), cfg=cfg)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            vocab, raw = random_raw_stores(rng, vocab_size=6)
            cfg = SimilarityConfig(stores=stores_from_raw(raw))
            tags = list(rng.choice(vocab, size=rng.integers(0, 10)))
            filter_words = list(rng.choice(vocab, size=rng.integers(1, 5), replace=False))
            got = extract_tf(doc("i", tags), codebook_of(filter_words), cfg=cfg).bins
            expected = naive_tf_bins(tags, filter_words, raw, threshold=0.40)
            assert got.tolist() == expected


class TestCodebookFile:
    def test_roundtrip(self, tmp_path):
        cb = merge_filter_banks([build_bank("c1", ("a", "b")), build_bank("c2", ("b",))],
                                threshold=0.4, k=25, store_hashes={"wv": "f" * 64})
        path = tmp_path / "codebook.txt"
        write_codebook(cb, path)
        back = read_codebook(path)
        assert back.words == cb.words
        assert back.provenance == cb.provenance
        assert back.categories == cb.categories
        assert back.k == 25
        assert back.threshold == pytest.approx(0.4)
        assert back.store_hashes == cb.store_hashes

    def test_writes_identical_bytes(self, tmp_path):
        cb = merge_filter_banks([build_bank("c1", ("a", "b"))])
        write_codebook(cb, tmp_path / "one.txt")
        write_codebook(cb, tmp_path / "two.txt")
        assert (tmp_path / "one.txt").read_bytes() == (tmp_path / "two.txt").read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "nope.txt"
        p.write_text("hello\n")
        with pytest.raises(CodebookError):
            read_codebook(p)
