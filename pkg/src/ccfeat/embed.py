"""Word-embedding stores and the averaged cosine similarity used everywhere else.

A similarity query runs against up to three embedding families (``wv``, ``gv``,
``ft``) and averages the per-family cosine scores. Files are the common text
``.vec`` layout: one ``word c1 ... cd`` record per line, optional ``count dim``
header line.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

FAMILIES = ("wv", "gv", "ft")

#: average over the families where both words resolve (default)
OOV_SKIP_MISSING = "skip-missing-family"
#: fixed denominator over all configured families; missing families count as 0
OOV_STRICT = "zero-if-all-missing"

_OOV_POLICIES = (OOV_SKIP_MISSING, OOV_STRICT)


class EmbeddingParseError(ValueError):
    """An embedding text file that cannot be parsed into a store."""


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable word -> vector map for one embedding family.

    Safe for shared concurrent reads once loaded. Lookups are case-folded to
    lowercase; a miss returns ``None`` rather than any fabricated vector.
    """

    family: str
    dim: int
    entries: dict[str, np.ndarray]
    source: str = ""
    sha256: str = ""

    def lookup(self, word: str) -> np.ndarray | None:
        return self.entries.get(word.lower())

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SimilarityConfig:
    """Which stores participate in averaged similarities, and how OOV is handled."""

    stores: tuple[EmbeddingStore, ...]
    oov_policy: str = OOV_SKIP_MISSING

    def __post_init__(self):
        if not self.stores:
            raise ValueError("SimilarityConfig requires at least one embedding store")
        if self.oov_policy not in _OOV_POLICIES:
            raise ValueError(f"unknown oov_policy {self.oov_policy!r}; expected one of {_OOV_POLICIES}")

    def store_hashes(self) -> dict[str, str]:
        return {s.family: s.sha256 for s in self.stores}


class SimilarityResult(NamedTuple):
    value: float
    #: False when the pair resolved in no family; the caller decides exclusion
    comparable: bool


def _is_header(tokens: list[str]) -> bool:
    if len(tokens) != 2:
        return False
    try:
        count, dim = int(tokens[0]), int(tokens[1])
    except ValueError:
        return False
    return count > 0 and dim > 0


def load_embeddings(path: str | Path, expected_family: str) -> EmbeddingStore:
    """Parse a text embedding file into an :class:`EmbeddingStore`.

    Whitespace-tolerant; duplicate words keep the first occurrence; an
    optional leading ``count dim`` header is consumed. The store dimension is
    the length of the first parsed vector and every later line must match it.
    """
    path = Path(path)
    raw = path.read_bytes()
    sha = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8")

    entries: dict[str, np.ndarray] = {}
    dim: int | None = None
    first_data_line = True
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if first_data_line and _is_header(tokens):
            first_data_line = False
            continue
        first_data_line = False
        word = tokens[0].lower()
        comps = tokens[1:]
        if not comps:
            raise EmbeddingParseError(f"{path}:{lineno}: no vector components for {word!r}")
        try:
            vec = np.array([float(c) for c in comps], dtype=np.float64)
        except ValueError as e:
            raise EmbeddingParseError(f"{path}:{lineno}: non-numeric component ({e})") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingParseError(f"{path}:{lineno}: non-finite component")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise EmbeddingParseError(
                f"{path}:{lineno}: dimension mismatch: got {len(vec)}, expected {dim}"
            )
        if word not in entries:
            entries[word] = vec
    if dim is None:
        raise EmbeddingParseError(f"{path}: empty embedding file")
    return EmbeddingStore(family=expected_family, dim=dim, entries=entries,
                          source=str(path), sha256=sha)


def cosine(k1: Sequence[float] | np.ndarray, k2: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity of two equal-length vectors.

    A zero-norm input yields 0.0 with a RuntimeWarning instead of NaN, so that
    batch codebook construction stays total; a degenerate vector should never
    rank as similar to anything.
    """
    a = np.asarray(k1, dtype=np.float64)
    b = np.asarray(k2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine: shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine of a zero-norm vector defined as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def avg_similarity(word_a: str, word_b: str, cfg: SimilarityConfig) -> SimilarityResult:
    """Averaged per-family cosine similarity of two words.

    Under the default policy the mean runs over the families where *both*
    words are in-vocabulary; with all families resolving this is the plain
    (1/n_families) sum. A pair that resolves nowhere gets value 0 and
    ``comparable=False``.
    """
    if not word_a or not word_b:
        raise ValueError("avg_similarity requires non-empty tokens")
    scores = []
    for store in cfg.stores:
        va = store.lookup(word_a)
        vb = store.lookup(word_b)
        if va is None or vb is None:
            continue
        scores.append(cosine(va, vb))
    if not scores:
        return SimilarityResult(0.0, False)
    if cfg.oov_policy == OOV_STRICT:
        return SimilarityResult(sum(scores) / len(cfg.stores), True)
    return SimilarityResult(sum(scores) / len(scores), True)
