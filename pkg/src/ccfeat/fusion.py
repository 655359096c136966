"""Standardization, PCA reduction to the common minimum block size, and
concatenation of the three feature blocks.

Both transforms are fitted on the training split only and frozen; the fused
vector is always (tag block, background block, foreground block), each at the
minimum of the three source dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-8
BLOCK_ORDER = ("tf", "bf", "ff")


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension mean/std fitted on training rows (population convention,
    std floored at 1e-8 so constant columns map to 0)."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - self.mean) / self.std


@dataclass(frozen=True)
class PcaModel:
    """Top-q eigenvectors of the training covariance, orthonormal rows."""

    mean: np.ndarray
    components: np.ndarray  # (target_dim, source_dim)
    variances: np.ndarray   # non-increasing

    @property
    def source_dim(self) -> int:
        return self.components.shape[1]

    @property
    def target_dim(self) -> int:
        return self.components.shape[0]


@dataclass
class FusedFeature:
    image_id: str
    vec: np.ndarray  # 3 * min(block dims)


def fit_standardizer(train_rows: np.ndarray) -> Standardizer:
    X = np.asarray(train_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FusionError("fit_standardizer needs at least 2 training rows")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    return Standardizer(mean=mean, std=np.maximum(std, STD_FLOOR))


def apply_standardizer(standardizer: Standardizer, rows: np.ndarray) -> np.ndarray:
    return standardizer.apply(rows)


def fit_pca(train_rows: np.ndarray, target_dim: int) -> PcaModel:
    """Fit PCA by eigendecomposition of the population covariance.

    The well-posedness bound is target_dim <= min(rows - 1, source_dim).
    Eigenvector signs are fixed by making each component's largest-magnitude
    entry positive, so refits on identical data are reproducible.
    """
    X = np.asarray(train_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FusionError("fit_pca needs at least 2 training rows")
    n, d = X.shape
    bound = min(n - 1, d)
    if not 1 <= target_dim <= bound:
        raise FusionError(
            f"target_dim {target_dim} out of range: must be within [1, {bound}] "
            f"(min(rows-1={n - 1}, source_dim={d}))")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:target_dim]
    components = eigvecs[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, variances=eigvals[order])


def project(model: PcaModel, rows: np.ndarray) -> np.ndarray:
    """Project rows (or a single row) onto the fitted components."""
    rows = np.asarray(rows, dtype=np.float64)
    return (rows - model.mean) @ model.components.T


def fuse(tf_row: np.ndarray, bf_row: np.ndarray, ff_row: np.ndarray,
         pca_models: dict[str, PcaModel] | None = None) -> np.ndarray:
    """Concatenate the three standardized blocks at the common minimum size.

    Blocks longer than the minimum must come with a fitted PCA model under
    their key in ``pca_models``; blocks already at the minimum pass through.
    """
    blocks = {"tf": np.asarray(tf_row, dtype=np.float64),
              "bf": np.asarray(bf_row, dtype=np.float64),
              "ff": np.asarray(ff_row, dtype=np.float64)}
    pca_models = pca_models or {}
    q = min(len(b) for b in blocks.values())
    parts = []
    for kind in BLOCK_ORDER:
        block = blocks[kind]
        if len(block) == q:
            parts.append(block)
            continue
        model = pca_models.get(kind)
        if model is None:
            raise FusionError(f"block {kind!r} has dim {len(block)} > {q} but no PCA model was fitted")
        if model.source_dim != len(block) or model.target_dim != q:
            raise FusionError(
                f"PCA model for {kind!r} maps {model.source_dim}->{model.target_dim}, "
                f"need {len(block)}->{q}")
        parts.append(project(model, block))
    return np.concatenate(parts)


# --- persistence --------------------------------------------------------------

def save_transforms(path: str | Path, standardizers: dict[str, Standardizer],
                    pca_models: dict[str, PcaModel], meta: dict) -> None:
    """Persist fitted transforms with dims and the fit-split hash in one npz."""
    arrays: dict[str, np.ndarray] = {}
    for kind, s in standardizers.items():
        arrays[f"std_{kind}_mean"] = s.mean
        arrays[f"std_{kind}_std"] = s.std
    for kind, p in pca_models.items():
        arrays[f"pca_{kind}_mean"] = p.mean
        arrays[f"pca_{kind}_components"] = p.components
        arrays[f"pca_{kind}_variances"] = p.variances
    meta = dict(meta)
    meta["pca_dims"] = {k: [p.source_dim, p.target_dim] for k, p in pca_models.items()}
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_transforms(path: str | Path):
    data = np.load(path)
    meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
    standardizers = {}
    pca_models = {}
    for kind in BLOCK_ORDER:
        if f"std_{kind}_mean" in data:
            standardizers[kind] = Standardizer(mean=data[f"std_{kind}_mean"],
                                               std=data[f"std_{kind}_std"])
        if f"pca_{kind}_mean" in data:
            pca_models[kind] = PcaModel(mean=data[f"pca_{kind}_mean"],
                                        components=data[f"pca_{kind}_components"],
                                        variances=data[f"pca_{kind}_variances"])
    return standardizers, pca_models, meta
