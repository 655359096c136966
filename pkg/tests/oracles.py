"""Independent brute-force oracles the tests check the library against.

Everything here recomputes results from first principles (plain Python loops,
dense enumeration) without touching the code paths under test.
"""

import math

import numpy as np


def naive_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def naive_avg_similarity(word_a, word_b, raw_stores, strict=False):
    """Mean of per-family cosines over families holding both words.

    ``raw_stores`` is a list of plain dicts word -> list of floats. Returns
    (value, comparable).
    """
    scores = []
    for entries in raw_stores:
        if word_a in entries and word_b in entries:
            scores.append(naive_cosine(entries[word_a], entries[word_b]))
    if not scores:
        return 0.0, False
    denom = len(raw_stores) if strict else len(scores)
    return sum(scores) / denom, True


def alg1_unique(raw, stems):
    """Literal translation of the unique-tag pseudocode: for every position,
    gather raw tags with an equal stem, sort ascending, keep the first, then
    drop duplicates in scan order."""
    out = []
    n = len(raw)
    for i in range(n):
        group = [raw[j] for j in range(n) if stems[j] == stems[i]]
        group.sort()
        out.append(group[0])
    unique = []
    for tag in out:
        if tag not in unique:
            unique.append(tag)
    return unique


def naive_tf_bins(doc_tags, filter_words, raw_stores, threshold, strict=False):
    """O(|doc| * |codebook|) double loop recomputing similarities from the raw
    store dicts; exact-string matches count without a threshold check."""
    bins = [0] * len(filter_words)
    for tag in doc_tags:
        for i, word in enumerate(filter_words):
            if tag == word:
                bins[i] += 1
                continue
            value, comparable = naive_avg_similarity(tag, word, raw_stores, strict=strict)
            if comparable and value >= threshold:
                bins[i] += 1
    return bins


def projected_variances(rows, components, mean):
    """Population variance of the training data along each component."""
    centered = np.asarray(rows, dtype=np.float64) - mean
    proj = centered @ np.asarray(components).T
    return proj.var(axis=0)


def grid_dual_svm(X, y, C, gamma, levels=4, refinements=2):
    """Brute-force dual solution by dense enumeration over an alpha grid.

    The equality constraint is eliminated by solving the last alpha from the
    others, so every enumerated point is exactly feasible; two local grid
    refinements around the best point sharpen the resolution. Returns
    (alpha, bias).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    K = np.exp(-gamma * sq)
    Q = (y[:, None] * y[None, :]) * K
    m = n - 1
    lows = np.zeros(m)
    highs = np.full(m, float(C))
    alpha = np.zeros(n)
    for _ in range(refinements + 1):
        axes = [np.linspace(lows[i], highs[i], levels) for i in range(m)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        last = -y[-1] * (mesh @ y[:-1])
        ok = (last >= 0.0) & (last <= C)
        if not ok.any():
            break
        A = np.concatenate([mesh[ok], last[ok, None]], axis=1)
        W = A.sum(axis=1) - 0.5 * ((A @ Q) * A).sum(axis=1)
        alpha = A[int(np.argmax(W))]
        step = (highs - lows) / (levels - 1)
        center = alpha[:-1]
        lows = np.clip(center - step, 0.0, C)
        highs = np.clip(center + step, 0.0, C)
    f = K @ (alpha * y)
    free = (alpha > 1e-8) & (alpha < C - 1e-8)
    if free.any():
        bias = float(np.mean(y[free] - f[free]))
    else:
        sv = alpha > 1e-8
        bias = float(np.mean(y[sv] - f[sv])) if sv.any() else 0.0
    return alpha, bias
