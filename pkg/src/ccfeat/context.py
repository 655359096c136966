"""Per-category filter banks, the merged codebook, and tag-histogram features.

Each category keeps its top-k candidate tags ranked by averaged embedding
similarity to the category label; the deduplicated union of all banks fixes
the histogram bin layout. A document's feature counts, for every bin, the tag
occurrences whose similarity to that filter word clears the threshold.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import SimilarityConfig, avg_similarity, cosine
from .tags import Normalizer, TagDocument, normalize_root, tokenize, unique_tags

DEFAULT_TOP_M = 500
DEFAULT_K = 25
DEFAULT_THRESHOLD = 0.40


class CodebookError(ValueError):
    """Codebook construction cannot proceed (empty vocabulary, OOV label, ...)."""


@dataclass(frozen=True)
class CategoryCandidates:
    """Top-m frequent unique tags of one category, with occurrence counts."""

    category: str
    words: tuple[tuple[str, int], ...]  # (word, count), count-desc then byte-order


@dataclass(frozen=True)
class FilterBank:
    """Top-k filter words for one category with their similarity scores."""

    category: str
    words: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class Codebook:
    """Ordered deduplicated union of all filter banks.

    The word order defines the histogram bin layout and is deterministic
    given the inputs; provenance maps each word back to the categories whose
    banks contributed it.
    """

    words: tuple[str, ...]
    provenance: dict[str, tuple[str, ...]]
    categories: tuple[str, ...]
    k: int
    threshold: float
    store_hashes: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class ContextFeature:
    image_id: str
    bins: np.ndarray  # nonnegative integer counts, length |codebook|


def top_frequent(docs: Sequence[TagDocument], m: int = DEFAULT_TOP_M,
                 normalizer: Normalizer = normalize_root) -> CategoryCandidates:
    """Top-m frequent unique tags over one category's pooled tag multiset.

    The pooled raw tags are first collapsed by normalized root (each group is
    represented by its byte-order-first raw form) and the representative
    carries the group's total raw occurrence count. Ties break by ascending
    byte order.
    """
    if not docs:
        raise CodebookError("top_frequent: no documents")
    category = docs[0].category
    for d in docs:
        if d.category != category:
            raise CodebookError(
                f"top_frequent: mixed categories ({d.category!r} vs {category!r})")
    pooled = [t for d in docs for t in d.tags]
    if not pooled:
        raise CodebookError(f"top_frequent: category {category!r} has an empty pooled vocabulary")
    roots = [normalizer(t) for t in pooled]
    reps = unique_tags(pooled, roots)
    counts = Counter(roots)
    scored = [(rep, counts[normalizer(rep)]) for rep in reps]
    scored.sort(key=lambda wc: (-wc[1], wc[0]))
    return CategoryCandidates(category=str(category), words=tuple(scored[:m]))


def _label_vector(store, label_tokens: Sequence[str]):
    # multi-token labels embed as the mean of their in-vocabulary token vectors
    vecs = [v for v in (store.lookup(t) for t in label_tokens) if v is not None]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


def label_similarity(label_tokens: Sequence[str], word: str, cfg: SimilarityConfig):
    """Averaged similarity between a (possibly multi-token) label and a word.

    Mirrors :func:`ccfeat.embed.avg_similarity`, with the label embedded per
    family as the mean of its token vectors.
    """
    scores = []
    for store in cfg.stores:
        lv = _label_vector(store, label_tokens)
        wv = store.lookup(word)
        if lv is None or wv is None:
            continue
        scores.append(cosine(lv, wv))
    if not scores:
        return 0.0, False
    denom = len(cfg.stores) if cfg.oov_policy == "zero-if-all-missing" else len(scores)
    return sum(scores) / denom, True


def build_filter_bank(category: str, cands: CategoryCandidates, k: int,
                      cfg: SimilarityConfig) -> FilterBank:
    """Score candidates against the category label and keep the top-k.

    Candidates that resolve in no embedding family are excluded; ties in
    score break by ascending byte order.
    """
    if k < 1:
        raise ValueError("build_filter_bank: k must be >= 1")
    label_tokens = tokenize(category)
    if not label_tokens:
        raise CodebookError(f"category label {category!r} has no usable tokens")
    if all(_label_vector(store, label_tokens) is None for store in cfg.stores):
        raise CodebookError(f"category label {category!r} is out-of-vocabulary in every family")
    scored: list[tuple[float, str]] = []
    for word, _count in cands.words:
        value, comparable = label_similarity(label_tokens, word, cfg)
        if comparable:
            scored.append((value, word))
    scored.sort(key=lambda sw: (-sw[0], sw[1]))
    top = scored[:k]
    return FilterBank(category=category,
                      words=tuple(w for _s, w in top),
                      scores=tuple(s for s, _w in top))


def merge_filter_banks(banks: Sequence[FilterBank], threshold: float = DEFAULT_THRESHOLD,
                       k: int | None = None,
                       store_hashes: dict[str, str] | None = None) -> Codebook:
    """Union of the banks in bank order with first-occurrence dedup."""
    if not banks:
        raise CodebookError("merge_filter_banks: no banks")
    if k is None:
        k = max(len(b.words) for b in banks)
    words: list[str] = []
    provenance: dict[str, list[str]] = {}
    for bank in banks:
        for w in bank.words:
            if w not in provenance:
                provenance[w] = []
                words.append(w)
            provenance[w].append(bank.category)
    return Codebook(words=tuple(words),
                    provenance={w: tuple(cats) for w, cats in provenance.items()},
                    categories=tuple(b.category for b in banks),
                    k=k, threshold=threshold,
                    store_hashes=dict(store_hashes or {}))


def extract_tf(doc: TagDocument, codebook: Codebook,
               threshold: float | None = None,
               cfg: SimilarityConfig | None = None) -> ContextFeature:
    """Histogram of the document's tags over the codebook bins.

    A bin is incremented once per tag occurrence whose similarity to the
    filter word clears the threshold; identical strings match without
    consulting the embeddings at all, so exact matches count even for
    out-of-vocabulary tags. One occurrence may increment several bins.
    """
    if len(codebook) == 0:
        raise CodebookError("extract_tf: empty codebook")
    if cfg is None:
        raise ValueError("extract_tf: a SimilarityConfig is required")
    lam = codebook.threshold if threshold is None else threshold
    bins = np.zeros(len(codebook), dtype=np.int64)
    for tag, count in Counter(doc.tags).items():
        for i, word in enumerate(codebook.words):
            if tag == word:
                bins[i] += count
                continue
            sim = avg_similarity(tag, word, cfg)
            if sim.comparable and sim.value >= lam:
                bins[i] += count
    return ContextFeature(image_id=doc.image_id, bins=bins)


# --- codebook persistence ----------------------------------------------------

_CODEBOOK_MAGIC = "ccfeat-codebook 1"


def write_codebook(codebook: Codebook, path: str | Path) -> None:
    """Persist a codebook as a text file: header, then one word per line with
    its provenance. Byte-identical for identical inputs."""
    lines = [_CODEBOOK_MAGIC,
             f"categories {len(codebook.categories)}",
             f"category-list {','.join(codebook.categories)}",
             f"k {codebook.k}",
             f"threshold {codebook.threshold!r}"]
    for family in sorted(codebook.store_hashes):
        lines.append(f"store {family} {codebook.store_hashes[family]}")
    lines.append(f"words {len(codebook.words)}")
    lines.append("end-header")
    for w in codebook.words:
        lines.append(f"{w}\t{','.join(codebook.provenance[w])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _CODEBOOK_MAGIC:
        raise CodebookError(f"{path}: not a codebook file")
    header: dict[str, str] = {}
    store_hashes: dict[str, str] = {}
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        if line == "end-header":
            body_at = i + 1
            break
        key, _, value = line.partition(" ")
        if key == "store":
            family, _, h = value.partition(" ")
            store_hashes[family] = h
        else:
            header[key] = value
    if body_at is None:
        raise CodebookError(f"{path}: missing end-header")
    words: list[str] = []
    provenance: dict[str, tuple[str, ...]] = {}
    for line in lines[body_at:]:
        if not line:
            continue
        word, _, cats = line.partition("\t")
        words.append(word)
        provenance[word] = tuple(c for c in cats.split(",") if c)
    n_expected = int(header.get("words", len(words)))
    if n_expected != len(words):
        raise CodebookError(f"{path}: header claims {n_expected} words, found {len(words)}")
    categories = tuple(c for c in header.get("category-list", "").split(",") if c)
    return Codebook(words=tuple(words), provenance=provenance, categories=categories,
                    k=int(header.get("k", DEFAULT_K)),
                    threshold=float(header.get("threshold", DEFAULT_THRESHOLD)),
                    store_hashes=store_hashes)
