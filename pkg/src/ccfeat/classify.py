"""RBF-kernel SVM with a simplified-SMO dual solver, one-vs-rest multiclass,
stratified grid search, and confusion-matrix metrics with t-based confidence
intervals.

The solver is pairwise coordinate ascent on the dual under the box constraint
0 <= alpha_i <= C, terminating when a full sweep finds no KKT violation worse
than the tolerance. Everything is deterministic given the row order and the
recorded seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

DEFAULT_C_VALUES = tuple(range(1, 201)) + tuple(range(1000, 6001, 1000))
DEFAULT_GAMMA_VALUES = tuple(10.0 ** -e for e in range(1, 8))  # 1e-1 .. 1e-7

KKT_TOL = 1e-3


class ClassifyError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grids; defaults are C in {1..200, 1000..6000} and gamma
    in {1e-1 .. 1e-7}."""

    c_values: tuple[float, ...] = DEFAULT_C_VALUES
    gamma_values: tuple[float, ...] = DEFAULT_GAMMA_VALUES

    def __post_init__(self):
        if not self.c_values or not self.gamma_values:
            raise ValueError("GridSpec requires non-empty grids")


def rbf_kernel(x: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x - z||^2)."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"rbf_kernel: shape mismatch {x.shape} vs {z.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def _kernel_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_passes: int,
         rng: np.random.Generator, max_sweeps: int = 500):
    """Simplified SMO on a precomputed kernel matrix; returns (alpha, bias)."""
    n = len(y)
    alpha = np.zeros(n)
    b = 0.0
    f = np.zeros(n)  # decision values without bias
    passes = 0
    sweeps = 0
    while passes < max_passes and sweeps < max_sweeps:
        sweeps += 1
        changed = 0
        for i in range(n):
            e_i = f[i] + b - y[i]
            if not ((y[i] * e_i < -tol and alpha[i] < C) or (y[i] * e_i > tol and alpha[i] > 0)):
                continue
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            e_j = f[j] + b - y[j]
            ai_old, aj_old = alpha[i], alpha[j]
            if y[i] != y[j]:
                lo, hi = max(0.0, aj_old - ai_old), min(C, C + aj_old - ai_old)
            else:
                lo, hi = max(0.0, ai_old + aj_old - C), min(C, ai_old + aj_old)
            if lo >= hi:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue
            aj = aj_old - y[j] * (e_i - e_j) / eta
            aj = min(hi, max(lo, aj))
            if abs(aj - aj_old) < 1e-7:
                continue
            ai = ai_old + y[i] * y[j] * (aj_old - aj)
            ai = min(C, max(0.0, ai))
            d_i = y[i] * (ai - ai_old)
            d_j = y[j] * (aj - aj_old)
            b1 = b - e_i - d_i * K[i, i] - d_j * K[i, j]
            b2 = b - e_j - d_i * K[i, j] - d_j * K[j, j]
            if 0.0 < ai < C:
                b = b1
            elif 0.0 < aj < C:
                b = b2
            else:
                b = 0.5 * (b1 + b2)
            f += d_i * K[:, i] + d_j * K[:, j]
            alpha[i], alpha[j] = ai, aj
            changed += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, b


@dataclass
class SvmModel:
    """One-vs-rest RBF SVM: per-class support vectors, dual coefficients and
    bias, plus the kernel parameters used to train."""

    classes: np.ndarray
    gamma: float
    C: float
    support_vectors: list[np.ndarray]  # per class, (n_sv, d)
    dual_coefs: list[np.ndarray]       # per class, alpha_i * y_i at supports
    biases: list[float]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], len(self.classes)))
        for ci in range(len(self.classes)):
            sv = self.support_vectors[ci]
            if len(sv) == 0:
                out[:, ci] = self.biases[ci]
                continue
            out[:, ci] = _kernel_matrix(X, sv, self.gamma) @ self.dual_coefs[ci] + self.biases[ci]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax takes the first maximum, i.e. ties break by class index
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def train_svm(X: np.ndarray, y: Sequence, C: float, gamma: float, *,
              tol: float = KKT_TOL, max_passes: int = 5, seed: int = 0) -> SvmModel:
    """Train a one-vs-rest RBF SVM with the SMO dual solver.

    Deterministic given fixed row order: each binary subproblem draws its
    working-pair partner from a generator seeded by (seed, class index).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ClassifyError("train_svm: X must be 2-D with one label per row")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ClassifyError("train_svm: need at least 2 classes")
    K = _kernel_matrix(X, X, gamma)
    support_vectors, dual_coefs, biases = [], [], []
    for ci, c in enumerate(classes):
        y_bin = np.where(y == c, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        alpha, b = _smo(K, y_bin, C, tol, max_passes, rng)
        sv_mask = alpha > 1e-12
        support_vectors.append(X[sv_mask].copy())
        dual_coefs.append((alpha * y_bin)[sv_mask])
        biases.append(float(b))
    return SvmModel(classes=classes, gamma=gamma, C=C,
                    support_vectors=support_vectors, dual_coefs=dual_coefs, biases=biases)


def stratified_folds(y: Sequence, folds: int, seed: int = 0) -> np.ndarray:
    """Deterministic stratified fold assignment (one fold index per row)."""
    y = np.asarray(y)
    if folds < 2:
        raise ClassifyError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assignment = np.full(len(y), -1, dtype=np.int64)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < folds:
            raise ClassifyError(
                f"class {c!r} has {len(idx)} rows, fewer than {folds} folds")
        perm = rng.permutation(idx)
        assignment[perm] = np.arange(len(perm)) % folds
    return assignment


def grid_search(X_train: np.ndarray, y_train: Sequence, grid: GridSpec,
                folds: int = 5, seed: int = 0, *,
                tol: float = KKT_TOL, max_passes: int = 5):
    """Pick (C, gamma) by mean stratified-CV accuracy.

    Ties break toward smaller C, then larger gamma; the full CV table is
    returned alongside the winner. Repeats with the same seed are identical.
    """
    X = np.asarray(X_train, dtype=np.float64)
    y = np.asarray(y_train)
    assignment = stratified_folds(y, folds, seed)
    gammas_desc = tuple(sorted(grid.gamma_values, reverse=True))
    cs_asc = tuple(sorted(grid.c_values))
    table = []
    best = None  # (acc, C, gamma)
    for C, gamma in product(cs_asc, gammas_desc):
        fold_accs = []
        for f in range(folds):
            tr = assignment != f
            te = ~tr
            model = train_svm(X[tr], y[tr], C, gamma, tol=tol,
                              max_passes=max_passes, seed=seed)
            fold_accs.append(float(np.mean(model.predict(X[te]) == y[te])))
        mean_acc = float(np.mean(fold_accs))
        table.append({"C": C, "gamma": gamma, "mean_accuracy": mean_acc,
                      "fold_accuracies": fold_accs})
        if best is None or mean_acc > best[0]:
            best = (mean_acc, C, gamma)
    return best[1], best[2], table


# --- metrics -------------------------------------------------------------------

@dataclass
class RunMetrics:
    """Metrics of one train/test run, macro-averaged from the confusion matrix."""

    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray
    labels: list
    per_class: list[dict]
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall, "macro_f1": self.macro_f1,
                "labels": [str(c) for c in self.labels],
                "confusion": self.confusion.tolist(),
                "per_class": self.per_class, "undefined": self.undefined}


def confusion_matrix(y_true: Sequence, y_pred: Sequence, labels: Sequence) -> np.ndarray:
    index = {c: i for i, c in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        conf[index[t], index[p]] += 1
    return conf


def metrics_from_confusion(conf: np.ndarray, labels: Sequence) -> RunMetrics:
    """Precision/recall/F-score per class and macro, with zero denominators
    reported as 0 plus a flag so macro averages stay total."""
    conf = np.asarray(conf)
    total = conf.sum()
    if total == 0:
        raise ClassifyError("empty confusion matrix")
    accuracy = float(np.trace(conf) / total)
    per_class = []
    undefined = []
    for i, label in enumerate(labels):
        tp = float(conf[i, i])
        fp = float(conf[:, i].sum() - tp)
        fn = float(conf[i, :].sum() - tp)
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            undefined.append(f"{label}:precision")
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            undefined.append(f"{label}:recall")
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            undefined.append(f"{label}:f1")
        per_class.append({"label": str(label), "precision": precision,
                          "recall": recall, "f1": f1})
    return RunMetrics(accuracy=accuracy,
                      macro_precision=float(np.mean([m["precision"] for m in per_class])),
                      macro_recall=float(np.mean([m["recall"] for m in per_class])),
                      macro_f1=float(np.mean([m["f1"] for m in per_class])),
                      confusion=conf, labels=list(labels), per_class=per_class,
                      undefined=undefined)


def evaluate(model: SvmModel, X_test: np.ndarray, y_test: Sequence) -> RunMetrics:
    y_test = np.asarray(y_test)
    if len(y_test) == 0:
        raise ClassifyError("evaluate: empty test set")
    known = set(model.classes.tolist())
    unknown = [c for c in np.unique(y_test).tolist() if c not in known]
    if unknown:
        raise ClassifyError(f"evaluate: labels {unknown} were never seen in training")
    y_pred = model.predict(np.asarray(X_test, dtype=np.float64))
    conf = confusion_matrix(y_test, y_pred, model.classes.tolist())
    return metrics_from_confusion(conf, model.classes.tolist())


class ConfidenceInterval(NamedTuple):
    mean: float
    halfwidth: float


def confidence_interval(values: Sequence[float], level: float = 0.95) -> ConfidenceInterval:
    """Two-tailed t-distribution interval over repeated-run values."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ClassifyError("confidence_interval needs at least 2 values")
    mean = float(values.mean())
    if np.all(values == values[0]):  # exact zero variance, no rounding residue
        return ConfidenceInterval(float(values[0]), 0.0)
    sd = float(values.std(ddof=1))
    t_crit = float(stats.t.ppf(0.5 + level / 2.0, len(values) - 1))
    return ConfidenceInterval(mean, t_crit * sd / np.sqrt(len(values)))


# --- persistence ----------------------------------------------------------------

def save_svm(model: SvmModel, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for ci in range(len(model.classes)):
        arrays[f"sv_{ci}"] = model.support_vectors[ci]
        arrays[f"coef_{ci}"] = model.dual_coefs[ci]
    meta = {"classes": [c.item() if hasattr(c, "item") else c for c in model.classes],
            "gamma": model.gamma, "C": model.C, "biases": model.biases}
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_svm(path: str | Path) -> SvmModel:
    data = np.load(path)
    meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
    classes = np.asarray(meta["classes"])
    return SvmModel(classes=classes, gamma=meta["gamma"], C=meta["C"],
                    support_vectors=[data[f"sv_{ci}"] for ci in range(len(classes))],
                    dual_coefs=[data[f"coef_{ci}"] for ci in range(len(classes))],
                    biases=list(meta["biases"]))
