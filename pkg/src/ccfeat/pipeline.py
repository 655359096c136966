"""Stage wiring: codebook construction, batch feature extraction, fusion,
training, evaluation, and the sweep drivers.

Stages communicate only through files (codebook, feature stores, fitted
transforms, reports) so each can be rerun in isolation; every artifact records
the hash of the config that produced it and downstream stages refuse
mismatches. All randomness flows from the single recorded seed.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fetch import CACHE_ENV_VAR

from .classify import (DEFAULT_C_VALUES, DEFAULT_GAMMA_VALUES, GridSpec,
                       confidence_interval, evaluate, grid_search, train_svm)
from .content import (BackendModel, ScaleSet, load_backend, multiscale_features,
                      preprocess_image)
from .context import (Codebook, build_filter_bank, extract_tf, merge_filter_banks,
                      read_codebook, top_frequent, write_codebook)
from .embed import SimilarityConfig, load_embeddings
from .fusion import BLOCK_ORDER, fit_pca, fit_standardizer, project, save_transforms
from .store import (DatasetManifest, FeatureStore, ManifestError, RunConfig,
                    StoreError, file_sha256, read_feature_store, write_feature_store)
from .tags import stopwords_sha256

FEATURE_SETS = {
    "tf": ("tf",),
    "bf": ("bf",),
    "ff": ("ff",),
    "bf+tf": ("tf", "bf"),
    "ff+tf": ("tf", "ff"),
    "df": ("bf", "ff"),
    "ccf": ("tf", "bf", "ff"),
}


def load_run_config(path: str | Path):
    """Load a config file; the hash is taken over the file as written, then
    relative paths are resolved against the config's directory, falling back
    to the $CCFEAT_CACHE directory for shared embedding/model files."""
    path = Path(path)
    config = RunConfig.from_file(path)
    config_hash = config.stable_hash()
    base = path.parent
    cache = os.environ.get(CACHE_ENV_VAR)

    def _resolve(p):
        if p is None:
            return None
        q = Path(p)
        if q.is_absolute():
            return str(q)
        local = base / q
        if not local.exists() and cache and (Path(cache) / q).exists():
            return str(Path(cache) / q)
        return str(local)

    config = replace(
        config,
        embeddings={fam: _resolve(p) for fam, p in config.embeddings.items()},
        backend_fg=_resolve(config.backend_fg),
        backend_bg=_resolve(config.backend_bg),
    )
    return config, config_hash


def similarity_config(config: RunConfig) -> SimilarityConfig:
    if not config.embeddings:
        raise ManifestError("config declares no embedding files")
    stores = tuple(load_embeddings(path, family)
                   for family, path in sorted(config.embeddings.items()))
    return SimilarityConfig(stores=stores, oov_policy=config.oov_policy)


# --- codebook stage -------------------------------------------------------------

def build_codebook_stage(manifest: DatasetManifest, config: RunConfig,
                         out_path: str | Path,
                         sim_cfg: SimilarityConfig | None = None) -> Codebook:
    """Chain tag ingest -> per-category candidates -> filter banks -> codebook
    over the training split, and persist the codebook."""
    sim_cfg = sim_cfg or similarity_config(config)
    docs = manifest.load_tag_documents()
    train_docs = [docs[r.image_id] for r in manifest.records if r.split == "train"]
    if not train_docs:
        raise ManifestError("manifest has no training records")
    banks = []
    for category in sorted({d.category for d in train_docs}):
        cat_docs = [d for d in train_docs if d.category == category]
        cands = top_frequent(cat_docs, config.top_m)
        banks.append(build_filter_bank(category, cands, config.k, sim_cfg))
    codebook = merge_filter_banks(banks, threshold=config.threshold, k=config.k,
                                  store_hashes=sim_cfg.store_hashes())
    write_codebook(codebook, out_path)
    return codebook


# --- extraction stage -------------------------------------------------------------

@dataclass
class ExtractSummary:
    kind: str
    ids: list[str]
    failures: list[tuple[str, str]] = field(default_factory=list)


def _extract_tf_rows(manifest, config, codebook, sim_cfg, workers):
    docs = manifest.load_tag_documents()

    def one(record):
        return extract_tf(docs[record.image_id], codebook,
                          threshold=config.threshold, cfg=sim_cfg).bins

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, manifest.records))
    else:
        rows = [one(r) for r in manifest.records]
    ids = [r.image_id for r in manifest.records]
    return ids, np.asarray(rows, dtype=np.float32), []


def _extract_content_rows(manifest, config, backend: BackendModel, workers):
    scales = ScaleSet(factors=tuple(config.scale_factors), base_side=config.base_side)

    def one(record):
        if not record.image:
            raise ManifestError(f"record {record.image_id!r} has no image path")
        base = preprocess_image(manifest.resolve(record.image), config.base_side)
        return multiscale_features(base, backend, scales, agg=config.agg,
                                   image_id=record.image_id).vec

    ids, rows, failures = [], [], []

    def safe(record):
        try:
            return record.image_id, one(record), None
        except Exception as e:  # per-record failure; the batch continues
            return record.image_id, None, f"{type(e).__name__}: {e}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(safe, manifest.records))
    else:
        results = [safe(r) for r in manifest.records]
    for image_id, vec, err in results:
        if err is None:
            ids.append(image_id)
            rows.append(vec)
        else:
            failures.append((image_id, err))
    matrix = (np.asarray(rows, dtype=np.float32) if rows
              else np.empty((0, 512), dtype=np.float32))
    return ids, matrix, failures


def extract_stage(manifest: DatasetManifest, config: RunConfig, which: str,
                  out_path: str | Path, *, codebook_path: str | Path | None = None,
                  config_hash: str | None = None, workers: int = 1,
                  sim_cfg: SimilarityConfig | None = None) -> ExtractSummary:
    """Batch-extract one feature kind over the whole manifest into a store."""
    config_hash = config_hash or config.stable_hash()
    meta = {"config_hash": config_hash, "config": config.canonical_json()}
    if which == "tf":
        if codebook_path is None:
            raise StoreError("tf extraction needs a codebook path")
        codebook = read_codebook(codebook_path)
        sim_cfg = sim_cfg or similarity_config(config)
        ids, rows, failures = _extract_tf_rows(manifest, config, codebook, sim_cfg, workers)
        meta["codebook_hash"] = file_sha256(codebook_path)
        meta["stopwords_sha256"] = stopwords_sha256()
    elif which in ("ff", "bf"):
        role = "foreground" if which == "ff" else "background"
        backend_path = config.backend_fg if which == "ff" else config.backend_bg
        if backend_path is None:
            raise StoreError(f"config has no backend path for {which}")
        backend = load_backend(backend_path, role)
        ids, rows, failures = _extract_content_rows(manifest, config, backend, workers)
        meta["backend_hash"] = backend.sha256
        meta["agg"] = config.agg
        meta["scales"] = ",".join(str(f) for f in config.scale_factors)
    else:
        raise StoreError(f"unknown feature kind {which!r}")
    write_feature_store(out_path, which, ids, rows, meta)
    return ExtractSummary(kind=which, ids=ids, failures=failures)


# --- fuse / train / evaluate stage ---------------------------------------------

def _splits(manifest: DatasetManifest, config: RunConfig):
    """Train/test id lists per run: the manifest's own split for a single run,
    seeded stratified draws for repeated runs."""
    ids_by_cat: dict[str, list[str]] = {}
    for r in manifest.records:
        ids_by_cat.setdefault(r.category, []).append(r.image_id)
    if config.runs == 1 and all(r.split in ("train", "test") for r in manifest.records):
        train = [r.image_id for r in manifest.records if r.split == "train"]
        test = [r.image_id for r in manifest.records if r.split == "test"]
        return [(train, test)]
    if config.train_per_class is None:
        raise ManifestError(
            "repeated splits need train_per_class in the config "
            "(manifest split labels cover only a single run)")
    splits = []
    for run in range(config.runs):
        rng = np.random.default_rng([config.seed, run])
        train, test = [], []
        for category in sorted(ids_by_cat):
            ids = ids_by_cat[category]
            if len(ids) <= config.train_per_class:
                raise ManifestError(
                    f"category {category!r} has {len(ids)} records, needs more than "
                    f"train_per_class={config.train_per_class}")
            perm = [ids[i] for i in rng.permutation(len(ids))]
            train.extend(perm[:config.train_per_class])
            test.extend(perm[config.train_per_class:])
        splits.append((train, test))
    return splits


def fit_block_transforms(train_block: np.ndarray, target_dim: int):
    """Fit the standardizer and, when the block is oversized, the PCA model on
    training rows only. Split out so leakage checks can intercept it."""
    standardizer = fit_standardizer(train_block)
    std_train = standardizer.apply(train_block)
    pca = fit_pca(std_train, target_dim) if train_block.shape[1] > target_dim else None
    return standardizer, pca


def fuse_train_eval_stage(manifest: DatasetManifest, config: RunConfig,
                          store_paths: dict[str, str | Path], features: str = "ccf",
                          *, out_dir: str | Path | None = None,
                          config_hash: str | None = None) -> dict:
    """Standardize, PCA-equalize, fuse, grid-search, train, and evaluate.

    Repeated splits aggregate into mean +/- 95% CI per metric. The report is
    a plain dict, also written as report.json plus a flat runs.tsv when an
    output directory is given.
    """
    if features not in FEATURE_SETS:
        raise StoreError(f"unknown features flag {features!r}; expected one of {sorted(FEATURE_SETS)}")
    kinds = FEATURE_SETS[features]
    config_hash = config_hash or config.stable_hash()
    stores: dict[str, FeatureStore] = {}
    for kind in kinds:
        if kind not in store_paths:
            raise StoreError(f"features {features!r} needs a {kind!r} store")
        stores[kind] = read_feature_store(store_paths[kind])
        if stores[kind].kind != kind:
            raise StoreError(f"store {store_paths[kind]} holds {stores[kind].kind!r}, not {kind!r}")
        got = stores[kind].meta.get("config_hash")
        if got != config_hash:
            raise StoreError(
                f"store {store_paths[kind]} was produced under config {got}, "
                f"this run is {config_hash}")

    category_of = {r.image_id: r.category for r in manifest.records}
    usable = [r.image_id for r in manifest.records
              if all(r.image_id in stores[k] for k in kinds)]
    skipped = len(manifest.records) - len(usable)

    run_reports = []
    runs = []
    for run_index, (train_ids, test_ids) in enumerate(_splits(manifest, config)):
        train_ids = [i for i in train_ids if i in set(usable)]
        test_ids = [i for i in test_ids if i in set(usable)]
        y_train = np.asarray([category_of[i] for i in train_ids])
        y_test = np.asarray([category_of[i] for i in test_ids])

        block_dims = {k: stores[k].dim for k in kinds}
        q = min(block_dims.values())
        train_parts, test_parts = [], []
        transforms = {}
        for kind in [k for k in BLOCK_ORDER if k in kinds]:
            train_block = stores[kind].rows_for(train_ids).astype(np.float64)
            test_block = stores[kind].rows_for(test_ids).astype(np.float64)
            standardizer, pca = fit_block_transforms(train_block, q)
            tr = standardizer.apply(train_block)
            te = standardizer.apply(test_block)
            if pca is not None:
                tr = project(pca, tr)
                te = project(pca, te)
            transforms[kind] = (standardizer, pca)
            train_parts.append(tr)
            test_parts.append(te)
        X_train = np.concatenate(train_parts, axis=1)
        X_test = np.concatenate(test_parts, axis=1)

        grid = GridSpec(
            c_values=tuple(config.c_values) if config.c_values else DEFAULT_C_VALUES,
            gamma_values=tuple(config.gamma_values) if config.gamma_values else DEFAULT_GAMMA_VALUES)
        best_c, best_gamma, cv_table = grid_search(
            X_train, y_train, grid, folds=config.folds, seed=config.seed,
            max_passes=config.svm_max_passes)
        model = train_svm(X_train, y_train, best_c, best_gamma,
                          max_passes=config.svm_max_passes, seed=config.seed)
        metrics = evaluate(model, X_test, y_test)
        runs.append(metrics)
        run_reports.append({"run": run_index, "C": best_c, "gamma": best_gamma,
                            "n_train": len(train_ids), "n_test": len(test_ids),
                            "fused_dim": int(X_train.shape[1]),
                            **metrics.to_dict()})
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            save_transforms(out_dir / f"transforms_run{run_index}.npz",
                            {k: t[0] for k, t in transforms.items()},
                            {k: t[1] for k, t in transforms.items() if t[1] is not None},
                            {"config_hash": config_hash,
                             "train_ids_sha256": _ids_hash(train_ids)})

    summary = {}
    for name in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
        values = [getattr(m, name) for m in runs]
        if len(values) >= 2:
            ci = confidence_interval(values)
            summary[name] = {"mean": ci.mean, "ci95_halfwidth": ci.halfwidth}
        else:
            summary[name] = {"mean": values[0], "ci95_halfwidth": 0.0}

    report = {
        "features": features,
        "config_hash": config_hash,
        "config": config.to_dict(),
        "seed": config.seed,
        "store_hashes": {k: file_sha256(store_paths[k]) for k in kinds},
        "stopwords_sha256": stopwords_sha256(),
        "coverage": {"records": len(manifest.records), "usable": len(usable),
                     "skipped": skipped},
        "fused_dim": run_reports[0]["fused_dim"] if run_reports else 0,
        "runs": run_reports,
        "summary": summary,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out_dir / "runs.tsv").write_text(render_runs_tsv(report), encoding="utf-8")
    return report


def _ids_hash(ids) -> str:
    import hashlib
    h = hashlib.sha256()
    for i in ids:
        h.update(i.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


def render_runs_tsv(report: dict) -> str:
    cols = ("run", "accuracy", "macro_precision", "macro_recall", "macro_f1", "C", "gamma")
    lines = ["\t".join(cols)]
    for run in report["runs"]:
        lines.append("\t".join(repr(run[c]) if isinstance(run[c], float) else str(run[c])
                               for c in cols))
    return "\n".join(lines) + "\n"


def render_report_text(report: dict) -> str:
    lines = [f"features: {report['features']}   fused dim: {report['fused_dim']}",
             f"config: {report['config_hash'][:12]}   seed: {report['seed']}",
             f"coverage: {report['coverage']['usable']}/{report['coverage']['records']} records"]
    lines.append("")
    lines.append(render_runs_tsv(report).rstrip("\n"))
    lines.append("")
    for name, agg in sorted(report["summary"].items()):
        lines.append(f"{name}: {agg['mean']:.4f} +/- {agg['ci95_halfwidth']:.4f} (95% CI)")
    return "\n".join(lines) + "\n"


# --- sweeps ----------------------------------------------------------------------

def sweep_stage(manifest: DatasetManifest, config: RunConfig, axis: str,
                values, workdir: str | Path, features: str | None = None) -> list[dict]:
    """Re-run the relevant stages along one config axis and tabulate accuracy.

    Axes: ``k`` and ``threshold`` rebuild the tag path (evaluated on tag
    features unless told otherwise); ``agg`` and ``scales`` re-extract the
    content path and evaluate each content kind separately.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []

    def run_eval(cfg, cfg_hash, store_paths, feats):
        report = fuse_train_eval_stage(manifest, cfg, store_paths, feats,
                                       config_hash=cfg_hash)
        acc = report["summary"]["accuracy"]
        return {"features": feats, "accuracy_mean": acc["mean"],
                "accuracy_ci95": acc["ci95_halfwidth"]}

    if axis in ("k", "threshold"):
        feats = features or "tf"
        for value in values:
            cfg = replace(config, **{axis: (int(value) if axis == "k" else float(value))})
            cfg_hash = cfg.stable_hash()
            tag = f"{axis}_{value}"
            codebook_path = workdir / f"codebook_{tag}.txt"
            sim_cfg = similarity_config(cfg)
            build_codebook_stage(manifest, cfg, codebook_path, sim_cfg=sim_cfg)
            store_path = workdir / f"tf_{tag}.feat"
            extract_stage(manifest, cfg, "tf", store_path, codebook_path=codebook_path,
                          config_hash=cfg_hash, sim_cfg=sim_cfg)
            rows.append({"axis": axis, "value": value,
                         **run_eval(cfg, cfg_hash, {"tf": store_path}, feats)})
    elif axis == "agg":
        values = values or ("max", "mean", "min")
        for value in values:
            cfg = replace(config, agg=str(value))
            cfg_hash = cfg.stable_hash()
            for kind in ("ff", "bf"):
                if (cfg.backend_fg if kind == "ff" else cfg.backend_bg) is None:
                    continue
                store_path = workdir / f"{kind}_agg_{value}.feat"
                extract_stage(manifest, cfg, kind, store_path, config_hash=cfg_hash)
                rows.append({"axis": axis, "value": value,
                             **run_eval(cfg, cfg_hash, {kind: store_path}, kind)})
    elif axis == "scales":
        values = values or config.scale_factors
        for value in values:
            cfg = replace(config, scale_factors=(float(value),))
            cfg_hash = cfg.stable_hash()
            for kind in ("ff", "bf"):
                if (cfg.backend_fg if kind == "ff" else cfg.backend_bg) is None:
                    continue
                store_path = workdir / f"{kind}_scale_{value}.feat"
                extract_stage(manifest, cfg, kind, store_path, config_hash=cfg_hash)
                rows.append({"axis": axis, "value": value,
                             **run_eval(cfg, cfg_hash, {kind: store_path}, kind)})
    else:
        raise StoreError(f"unknown sweep axis {axis!r}")

    (workdir / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    lines = ["\t".join(("axis", "value", "features", "accuracy_mean", "accuracy_ci95"))]
    for row in rows:
        lines.append("\t".join(str(row[c]) for c in
                               ("axis", "value", "features", "accuracy_mean", "accuracy_ci95")))
    (workdir / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
