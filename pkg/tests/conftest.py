import numpy as np
import pytest

from ccfeat.embed import EmbeddingStore
from ccfeat.synthdata import build_four_class_corpus


def make_store(family, entries, dim=2):
    """In-memory embedding store from plain lists; ``dim`` is the fallback for
    an empty store (every lookup misses anyway)."""
    arrays = {w.lower(): np.asarray(v, dtype=np.float64) for w, v in entries.items()}
    if arrays:
        dim = len(next(iter(arrays.values())))
    return EmbeddingStore(family=family, dim=dim, entries=arrays,
                          source="<test>", sha256="0" * 64)


def random_raw_stores(rng, n_families=3, vocab_size=8, dim=4, missing_rate=0.25):
    """Raw dict stores (word -> list of floats) with random OOV holes."""
    vocab = [f"w{chr(ord('a') + i)}" for i in range(vocab_size)]
    stores = []
    for _ in range(n_families):
        entries = {}
        for w in vocab:
            if rng.random() >= missing_rate:
                entries[w] = list(rng.normal(size=dim))
        stores.append(entries)
    return vocab, stores


def stores_from_raw(raw_stores):
    return tuple(make_store(fam, entries)
                 for fam, entries in zip(("wv", "gv", "ft"), raw_stores))


@pytest.fixture(scope="session")
def four_class_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("four_class")
    return build_four_class_corpus(root)


@pytest.fixture(scope="session")
def four_class_artifacts(four_class_corpus):
    """Codebook and the three feature stores, built once per session."""
    from ccfeat import pipeline
    from ccfeat.store import load_manifest

    root = four_class_corpus["root"]
    config, config_hash = pipeline.load_run_config(four_class_corpus["config"])
    manifest = load_manifest(four_class_corpus["manifest"])
    codebook_path = root / "codebook.txt"
    pipeline.build_codebook_stage(manifest, config, codebook_path)
    paths = {kind: root / f"{kind}.feat" for kind in ("tf", "bf", "ff")}
    pipeline.extract_stage(manifest, config, "tf", paths["tf"],
                           codebook_path=codebook_path, config_hash=config_hash)
    pipeline.extract_stage(manifest, config, "bf", paths["bf"], config_hash=config_hash)
    pipeline.extract_stage(manifest, config, "ff", paths["ff"], config_hash=config_hash)
    return {"root": root, "config": config, "config_hash": config_hash,
            "manifest": manifest, "codebook": codebook_path, "stores": paths,
            "corpus": four_class_corpus}
