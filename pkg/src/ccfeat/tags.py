"""Annotation-tag preprocessing: tokenizing, stopword removal, root
normalization, and unique-tag extraction over stem-grouped raw tags.

The root normalizer is a pluggable contract; the shipped default is an
irregular-form lemma table followed by a classic suffix-stripping stemmer.
Off-the-shelf stemmers/lemmatizers over- and under-stem web tags, so grouping
happens on these deterministic roots and each group keeps its byte-order-first
raw form.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

_TOKEN_RE = re.compile(r"[^\W\d_]+", re.UNICODE)
_MIN_TOKEN_LEN = 2


class TagIngestError(ValueError):
    """A tag-document file record that cannot be ingested."""


@dataclass
class TagDocument:
    """The pre-processed tag multiset standing in for one image.

    Tags are lowercase and stopword-free; duplicates are kept on purpose so
    histogram bins accumulate frequency.
    """

    image_id: str
    tags: list[str] = field(default_factory=list)
    category: str | None = None
    split: str | None = None


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphabetic separators; tokens shorter
    than two characters are dropped."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= _MIN_TOKEN_LEN]


def remove_stopwords(tokens: Iterable[str], stoplist: frozenset[str] | set[str]) -> list[str]:
    """Order-preserving stopword filter; duplicates of surviving tokens stay."""
    return [t for t in tokens if t not in stoplist]


def _data_text(name: str) -> str:
    return resources.files("ccfeat.data").joinpath(name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    """Fixed English stopword list shipped with the package, one word per line."""
    words = set()
    for line in _data_text("stopwords.txt").splitlines():
        w = line.strip()
        if w and not w.startswith("#"):
            words.add(w)
    return frozenset(words)


@lru_cache(maxsize=None)
def stopwords_sha256() -> str:
    """Hash of the shipped stopword file, for citing the list in reports."""
    raw = resources.files("ccfeat.data").joinpath("stopwords.txt").read_bytes()
    return hashlib.sha256(raw).hexdigest()


@lru_cache(maxsize=None)
def _lemma_table() -> dict[str, str]:
    table = {}
    for line in _data_text("lemmas.txt").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        form, lemma = line.split()
        table[form] = lemma
    return table


# --- classic suffix-stripping stemmer ---------------------------------------

_VOWELS = "aeiou"


def _is_cons(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_cons(word, i - 1)
    return True


def _measure(stem: str) -> int:
    # number of vowel->consonant transitions in the collapsed c/v sequence
    seq: list[bool] = []
    for i in range(len(stem)):
        c = _is_cons(stem, i)
        if not seq or seq[-1] != c:
            seq.append(c)
    return sum(1 for i in range(len(seq) - 1) if not seq[i] and seq[i + 1])


def _has_vowel(stem: str) -> bool:
    return any(not _is_cons(stem, i) for i in range(len(stem)))


def _ends_double_cons(stem: str) -> bool:
    return len(stem) >= 2 and stem[-1] == stem[-2] and _is_cons(stem, len(stem) - 1)


def _ends_cvc(stem: str) -> bool:
    if len(stem) < 3:
        return False
    if not (_is_cons(stem, len(stem) - 3) and not _is_cons(stem, len(stem) - 2)
            and _is_cons(stem, len(stem) - 1)):
        return False
    return stem[-1] not in "wxy"


_STEP2 = [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]

_STEP3 = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]

_STEP4 = [
    "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ion",
    "ism", "ate", "iti", "ous", "ive", "ize", "al", "er", "ic", "ou",
]


def _rule_map(rules):
    return sorted(rules, key=lambda r: -len(r[0] if isinstance(r, tuple) else r))


_STEP2_SORTED = _rule_map(_STEP2)
_STEP3_SORTED = _rule_map(_STEP3)
_STEP4_SORTED = sorted(_STEP4, key=len, reverse=True)


def _stem_suffixes(word: str) -> str:
    # step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]

    # step 1b
    stripped = False
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed") and _has_vowel(word[:-2]):
        word = word[:-2]
        stripped = True
    elif word.endswith("ing") and _has_vowel(word[:-3]):
        word = word[:-3]
        stripped = True
    if stripped:
        if word.endswith(("at", "bl", "iz")):
            word += "e"
        elif _ends_double_cons(word) and not word.endswith(("l", "s", "z")):
            word = word[:-1]
        elif _measure(word) == 1 and _ends_cvc(word):
            word += "e"

    # step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    # step 2: longest matching suffix wins even if its condition fails
    for suffix, repl in _STEP2_SORTED:
        if word.endswith(suffix):
            if _measure(word[: -len(suffix)]) > 0:
                word = word[: -len(suffix)] + repl
            break

    # step 3
    for suffix, repl in _STEP3_SORTED:
        if word.endswith(suffix):
            if _measure(word[: -len(suffix)]) > 0:
                word = word[: -len(suffix)] + repl
            break

    # step 4
    for suffix in _STEP4_SORTED:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if _measure(stem) > 1 and (suffix != "ion" or stem.endswith(("s", "t"))):
                word = stem
            break

    # step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            word = stem

    # step 5b
    if word.endswith("l") and _ends_double_cons(word) and _measure(word) > 1:
        word = word[:-1]

    return word


def normalize_root(tag: str) -> str:
    """Deterministic root of a lowercase token.

    Looks the token up in the irregular-form lemma table first, then applies
    the suffix-stripping stemmer. Same input always yields the same root;
    roots need not be dictionary words, only stable group keys.
    """
    tag = _lemma_table().get(tag, tag)
    if len(tag) <= 2:
        return tag
    return _stem_suffixes(tag)


Normalizer = Callable[[str], str]


def unique_tags(raw: Sequence[str], roots: Sequence[str]) -> list[str]:
    """Collapse raw tags sharing a normalized root to one representative.

    For each position, the raw tags whose root matches are sorted ascending
    by byte order and the first is kept; the final pass removes duplicates
    preserving first-occurrence order. Every output element is a member of
    the input and no two outputs share a root.
    """
    if len(raw) != len(roots):
        raise ValueError(f"unique_tags: length mismatch ({len(raw)} raw vs {len(roots)} roots)")
    groups: dict[str, str] = {}
    for tag, root in zip(raw, roots):
        cur = groups.get(root)
        if cur is None or tag < cur:
            groups[root] = tag
    out: list[str] = []
    seen = set()
    for root in roots:
        rep = groups[root]
        if rep not in seen:
            seen.add(rep)
            out.append(rep)
    return out


def ingest_tag_documents(path: str | Path, stoplist: frozenset[str] | None = None) -> list[TagDocument]:
    """Read a newline-delimited tag-document file into TagDocuments.

    Each record is a JSON object ``{"image_id": ..., "tags": [...],
    "category"?: ..., "split"?: ...}``. Every tag string is tokenized and
    stopword-filtered; the document multiset is the concatenation, duplicates
    retained.
    """
    if stoplist is None:
        stoplist = default_stopwords()
    path = Path(path)
    docs: list[TagDocument] = []
    with path.open(encoding="utf-8") as fh:
        for recno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TagIngestError(f"{path}: record {recno}: invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise TagIngestError(f"{path}: record {recno}: expected an object")
            image_id = rec.get("image_id")
            if not image_id:
                raise TagIngestError(f"{path}: record {recno}: missing image_id")
            raw_tags = rec.get("tags", [])
            if not isinstance(raw_tags, list):
                raise TagIngestError(f"{path}: record {recno}: tags must be a list")
            tags: list[str] = []
            for entry in raw_tags:
                if not isinstance(entry, str):
                    raise TagIngestError(f"{path}: record {recno}: non-string tag {entry!r}")
                tags.extend(remove_stopwords(tokenize(entry), stoplist))
            docs.append(TagDocument(image_id=str(image_id), tags=tags,
                                    category=rec.get("category"), split=rec.get("split")))
    return docs
