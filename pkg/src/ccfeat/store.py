"""Dataset manifests, run configuration, and the binary feature store.

The feature store is a self-describing binary: a diffable text header
(``key value`` lines up to ``end-header``) followed by fixed-layout records
of image id plus float32 row. Every store records the hash of the config that
produced it so downstream stages can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tags import TagDocument, ingest_tag_documents

_STORE_MAGIC = "ccfeat-store 1"
_MANIFEST_FORMAT = "ccfeat-manifest/1"

FEATURE_KINDS = ("tf", "bf", "ff")


class StoreError(ValueError):
    pass


class ManifestError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- run configuration ---------------------------------------------------------

@dataclass
class RunConfig:
    """All knobs of one pipeline run; defaults are the published settings
    (k=25, threshold 0.40, six scales off a 512 base, max aggregation)."""

    k: int = 25
    threshold: float = 0.40
    top_m: int = 500
    scale_factors: tuple[float, ...] = (0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
    base_side: int = 512
    agg: str = "max"
    oov_policy: str = "skip-missing-family"
    c_values: tuple[float, ...] | None = None      # None -> GridSpec default
    gamma_values: tuple[float, ...] | None = None
    folds: int = 5
    runs: int = 1
    train_per_class: int | None = None
    seed: int = 0
    svm_max_passes: int = 5
    embeddings: dict[str, str] = field(default_factory=dict)  # family -> path
    backend_fg: str | None = None
    backend_bg: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("scale_factors", "c_values", "gamma_values"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("scale_factors", "c_values", "gamma_values"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        return cls.from_dict(raw)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def stable_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# --- dataset manifest ------------------------------------------------------------

@dataclass
class ManifestRecord:
    image_id: str
    category: str
    image: str | None = None
    split: str | None = None
    tags_ref: str | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    base_dir: Path

    @property
    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else self.base_dir / p

    def load_tag_documents(self) -> dict[str, TagDocument]:
        """Ingest every referenced tag-document file, keyed by image id.

        Category and split come from the manifest record, which is
        authoritative over whatever the tag file says.
        """
        by_file: dict[str, list[ManifestRecord]] = {}
        for r in self.records:
            if r.tags_ref:
                by_file.setdefault(r.tags_ref, []).append(r)
        docs: dict[str, TagDocument] = {}
        for ref in by_file:
            for doc in ingest_tag_documents(self.resolve(ref)):
                docs[doc.image_id] = doc
        out: dict[str, TagDocument] = {}
        for r in self.records:
            if not r.tags_ref:
                raise ManifestError(f"record {r.image_id!r} has no tag-document reference")
            doc = docs.get(r.image_id)
            if doc is None:
                raise ManifestError(
                    f"record {r.image_id!r}: no tag document found in {r.tags_ref}")
            out[r.image_id] = TagDocument(image_id=r.image_id, tags=doc.tags,
                                          category=r.category, split=r.split)
        return out


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: unreadable manifest ({e})") from None
    if doc.get("format") != _MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a dataset manifest")
    records = []
    seen = set()
    for i, rec in enumerate(doc.get("records", []), start=1):
        image_id = rec.get("image_id")
        if not image_id:
            raise ManifestError(f"{path}: record {i}: missing image_id")
        if image_id in seen:
            raise ManifestError(f"{path}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        category = rec.get("category")
        if not category:
            raise ManifestError(f"{path}: record {i}: missing category")
        split = rec.get("split")
        if split not in (None, "train", "test"):
            raise ManifestError(f"{path}: record {i}: split must be train or test")
        records.append(ManifestRecord(image_id=str(image_id), category=str(category),
                                      image=rec.get("image"), split=split,
                                      tags_ref=rec.get("tags_ref")))
    if not records:
        raise ManifestError(f"{path}: empty manifest")
    return DatasetManifest(records=records, base_dir=path.parent)


def write_manifest(path: str | Path, records: list[dict]) -> None:
    doc = {"format": _MANIFEST_FORMAT, "records": records}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- feature store ----------------------------------------------------------------

@dataclass
class FeatureStore:
    kind: str
    dim: int
    ids: list[str]
    rows: np.ndarray  # (count, dim) float32
    meta: dict[str, str]

    def __post_init__(self):
        self._index = {image_id: i for i, image_id in enumerate(self.ids)}

    def row(self, image_id: str) -> np.ndarray:
        i = self._index.get(image_id)
        if i is None:
            raise StoreError(f"image_id {image_id!r} not in store")
        return self.rows[i]

    def rows_for(self, image_ids) -> np.ndarray:
        return np.stack([self.row(i) for i in image_ids])

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index


def write_feature_store(path: str | Path, kind: str, ids: list[str],
                        rows: np.ndarray, meta: dict[str, str] | None = None) -> None:
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise StoreError("feature rows must be a 2-D matrix")
    if len(ids) != len(rows):
        raise StoreError(f"{len(ids)} ids for {len(rows)} rows")
    if len(set(ids)) != len(ids):
        raise StoreError("duplicate image ids")
    header = [_STORE_MAGIC, f"kind {kind}", f"dim {rows.shape[1]}", f"count {len(ids)}"]
    for key in sorted(meta or {}):
        value = (meta or {})[key]
        if "\n" in key or "\n" in str(value):
            raise StoreError(f"header field {key!r} contains a newline")
        header.append(f"{key} {value}")
    header.append("end-header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for image_id, row in zip(ids, rows):
            encoded = image_id.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise StoreError(f"image_id too long: {image_id[:32]}...")
            fh.write(struct.pack(">H", len(encoded)))
            fh.write(encoded)
            fh.write(row.tobytes(order="C"))


def read_feature_store(path: str | Path) -> FeatureStore:
    path = Path(path)
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline()
            if not line:
                raise StoreError(f"{path}: truncated header")
            text = line.decode("utf-8").rstrip("\n")
            if not header_lines and text != _STORE_MAGIC:
                raise StoreError(f"{path}: not a feature store")
            if text == "end-header":
                break
            header_lines.append(text)
        fields = {}
        for text in header_lines[1:]:
            key, _, value = text.partition(" ")
            fields[key] = value
        try:
            kind = fields.pop("kind")
            dim = int(fields.pop("dim"))
            count = int(fields.pop("count"))
        except (KeyError, ValueError) as e:
            raise StoreError(f"{path}: bad header ({e})") from None
        ids = []
        rows = np.empty((count, dim), dtype=np.float32)
        row_bytes = dim * 4
        for i in range(count):
            len_raw = fh.read(2)
            if len(len_raw) != 2:
                raise StoreError(f"{path}: truncated at record {i}")
            (id_len,) = struct.unpack(">H", len_raw)
            image_id = fh.read(id_len).decode("utf-8")
            payload = fh.read(row_bytes)
            if len(payload) != row_bytes:
                raise StoreError(f"{path}: truncated row for {image_id!r}")
            ids.append(image_id)
            rows[i] = np.frombuffer(payload, dtype=np.float32)
    if len(set(ids)) != len(ids):
        raise StoreError(f"{path}: duplicate image ids")
    return FeatureStore(kind=kind, dim=dim, ids=ids, rows=rows, meta=fields)
