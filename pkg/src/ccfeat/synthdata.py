"""Synthetic corpora that exercise the full pipeline at desk scale.

The real tag corpora behind the published experiments are not archivally
available, so demos and end-to-end tests run on generated datasets with known
structure: hand-placed embedding clusters, tag documents whose histograms
separate one pair of categories, and images whose content separates the other.
"""

from __future__ import annotations

import json
import string
from pathlib import Path

import numpy as np
from PIL import Image

from .content import make_stub_manifest
from .store import RunConfig, write_manifest
from .tags import default_stopwords

_LETTERS = string.ascii_lowercase


def _random_word(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        length = int(rng.integers(4, 8))
        word = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=length))
        if word not in taken and word not in default_stopwords():
            taken.add(word)
            return word


def _write_vec(path: Path, entries: dict[str, np.ndarray], header: bool = False) -> None:
    lines = []
    if header:
        dim = len(next(iter(entries.values())))
        lines.append(f"{len(entries)} {dim}")
    for word in entries:
        lines.append(word + " " + " ".join(repr(float(c)) for c in entries[word]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _clustered_embeddings(rng: np.random.Generator, dim: int,
                          clusters: dict[str, list[str]], spread: float = 0.2):
    """Three embedding families placing each cluster's words near one axis.

    A word in several clusters sits on the mean of their axes, so it stays
    similar to every one of its cluster labels.
    """
    directions = {}
    for ci, name in enumerate(clusters):
        d = np.zeros(dim)
        d[ci % dim] = 1.0
        directions[name] = d
    word_dirs: dict[str, list[np.ndarray]] = {}
    for name, words in clusters.items():
        for word in words:
            word_dirs.setdefault(word, []).append(directions[name])
    families = {}
    for family in ("wv", "gv", "ft"):
        entries = {word: np.mean(dirs, axis=0) + spread * rng.normal(size=dim)
                   for word, dirs in word_dirs.items()}
        families[family] = entries
    return families


def build_four_class_corpus(root: str | Path, *, train_per_class: int = 10,
                            test_per_class: int = 5, seed: int = 7,
                            image_side: int = 96, dim: int = 6) -> dict:
    """Four categories where tags separate one pair and image content the other.

    ``harbor``/``marina`` share tag documents record-for-record (water words)
    and ``quarry``/``mesa`` share rock-word documents, so tag features alone
    cannot split a pair. ``harbor``/``quarry`` share warm-toned images and
    ``marina``/``mesa`` cool-toned ones, so content features alone cannot
    either. Only the fusion sees all four clusters.
    """
    root = Path(root)
    (root / "embeddings").mkdir(parents=True, exist_ok=True)
    (root / "backends").mkdir(exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)

    taken: set[str] = set()
    water_words = [_random_word(rng, taken) for _ in range(10)]
    rock_words = [_random_word(rng, taken) for _ in range(10)]
    clusters = {"water": water_words + ["harbor", "marina"],
                "rock": rock_words + ["quarry", "mesa"]}
    families = _clustered_embeddings(rng, dim, clusters)
    for i, (family, entries) in enumerate(sorted(families.items())):
        _write_vec(root / "embeddings" / f"{family}.vec", entries, header=(i == 0))

    make_stub_manifest(root / "backends" / "fg.json", "foreground")
    make_stub_manifest(root / "backends" / "bg.json", "background")

    n = train_per_class + test_per_class
    pair_tags = {"water": [], "rock": []}
    for pool_name, pool in (("water", water_words), ("rock", rock_words)):
        for _ in range(n):
            count = int(rng.integers(8, 15))
            pair_tags[pool_name].append(
                [pool[i] for i in rng.integers(0, len(pool), size=count)])
    # styles must differ in channel direction, not magnitude: the content
    # features are L2-normalized, which erases brightness alone
    pair_images = {"warm": [], "cool": []}
    for style, profile in (("warm", (200.0, 120.0, 55.0)), ("cool", (55.0, 120.0, 200.0))):
        for _ in range(n):
            img = (np.asarray(profile) * rng.uniform(0.85, 1.15)
                   + rng.normal(0.0, 12.0, size=(image_side, image_side, 3)))
            pair_images[style].append(np.clip(img, 0, 255).astype(np.uint8))

    category_traits = {"harbor": ("water", "warm"), "marina": ("water", "cool"),
                       "quarry": ("rock", "warm"), "mesa": ("rock", "cool")}
    records = []
    tag_lines = []
    for category in sorted(category_traits):
        pool_name, style = category_traits[category]
        for i in range(n):
            image_id = f"{category}_{i:03d}"
            img_path = root / "images" / f"{image_id}.png"
            Image.fromarray(pair_images[style][i]).save(img_path)
            tag_lines.append(json.dumps(
                {"image_id": image_id, "tags": pair_tags[pool_name][i]}, sort_keys=True))
            records.append({"image_id": image_id, "category": category,
                            "image": f"images/{image_id}.png",
                            "split": "train" if i < train_per_class else "test",
                            "tags_ref": "tags.jsonl"})
    (root / "tags.jsonl").write_text("\n".join(tag_lines) + "\n", encoding="utf-8")
    write_manifest(root / "manifest.json", records)

    config = RunConfig(
        k=25, threshold=0.40, agg="max", folds=5, runs=1, seed=0,
        c_values=(1.0, 10.0, 100.0), gamma_values=(0.1, 0.01, 0.001),
        embeddings={f: f"embeddings/{f}.vec" for f in ("wv", "gv", "ft")},
        backend_fg="backends/fg.json", backend_bg="backends/bg.json")
    (root / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"root": root, "manifest": root / "manifest.json",
            "config": root / "config.json", "categories": sorted(category_traits)}


def build_codebook_corpus(root: str | Path, *, n_categories: int = 8,
                          vocab_per_category: int = 26, docs_per_category: int = 6,
                          tags_per_doc: int = 60, seed: int = 11, dim: int = 8,
                          k: int = 25) -> dict:
    """Tag-only corpus with one embedding cluster per category.

    Documents also carry pluralized variants of pool words so the unique-tag
    grouping has real work to do. All records land in the training split.
    """
    root = Path(root)
    (root / "embeddings").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    taken: set[str] = set()
    labels = [_random_word(rng, taken) for _ in range(n_categories)]
    pools = {}
    shared = [_random_word(rng, taken) for _ in range(4)]
    for ci, label in enumerate(labels):
        words = [_random_word(rng, taken) for _ in range(vocab_per_category - 2)]
        # two shared words overlap with the neighboring category's pool
        words += [shared[ci % len(shared)], shared[(ci + 1) % len(shared)]]
        pools[label] = words
    clusters = {label: pools[label] + [label] for label in labels}
    families = _clustered_embeddings(rng, dim, clusters, spread=0.25)
    for i, (family, entries) in enumerate(sorted(families.items())):
        _write_vec(root / "embeddings" / f"{family}.vec", entries, header=(i == 0))

    records = []
    tag_lines = []
    for label in labels:
        pool = pools[label]
        for d in range(docs_per_category):
            image_id = f"{label}_{d:02d}"
            picks = [pool[i] for i in rng.integers(0, len(pool), size=tags_per_doc)]
            # pluralize roughly a fifth of the occurrences
            tags = [w + "s" if rng.random() < 0.2 else w for w in picks]
            tag_lines.append(json.dumps({"image_id": image_id, "tags": tags},
                                        sort_keys=True))
            records.append({"image_id": image_id, "category": label,
                            "split": "train", "tags_ref": "tags.jsonl"})
    (root / "tags.jsonl").write_text("\n".join(tag_lines) + "\n", encoding="utf-8")
    write_manifest(root / "manifest.json", records)

    config = RunConfig(k=k, embeddings={f: f"embeddings/{f}.vec" for f in ("wv", "gv", "ft")})
    (root / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"root": root, "manifest": root / "manifest.json",
            "config": root / "config.json", "labels": labels, "pools": pools}
