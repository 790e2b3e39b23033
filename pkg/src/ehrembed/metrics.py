"""Evaluation metrics: average precision (AUPRC) and PCA projection."""

import warnings

import numpy as np

from .errors import ContractError, UndefinedMetricError


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve, computed as average precision.

    AP = sum_k (R_k - R_{k-1}) * P_k over ranks in descending score order.
    Ties are broken by original index (stable sort), so the result is fully
    determined by the inputs. Requires at least one positive label.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"auprc: scores {scores.shape} vs labels {labels.shape}")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auprc: no positive labels")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    tp = np.cumsum(ranked)
    precision = tp / np.arange(1, len(ranked) + 1)
    # recall increments by 1/n_pos exactly at positives, so
    # sum (dR * P) reduces to the mean precision at positive ranks
    return float(precision[ranked == 1].sum() / n_pos)


def auprc_multilabel(scores, labels, average: str = "micro") -> float:
    """AUPRC over an (n, k) score/label pair.

    micro: one ranked list over all n*k entries. macro: mean of per-label
    APs, skipping labels without any positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ContractError(f"auprc_multilabel: scores {scores.shape} vs labels {labels.shape}")
    if average == "micro":
        return auprc(scores.reshape(-1), labels.reshape(-1))
    if average == "macro":
        values = []
        for j in range(scores.shape[1]):
            if labels[:, j].sum() > 0:
                values.append(auprc(scores[:, j], labels[:, j]))
        if not values:
            raise UndefinedMetricError("auprc_multilabel: no label has positives")
        return float(np.mean(values))
    raise ContractError(f"auprc_multilabel: unknown average '{average}'")


def pca_project(representations, k: int, tol: float = 1e-10, max_iter: int = 10_000):
    """Project rows onto the top-k principal components.

    Mean-centers, then extracts eigenvectors of the covariance by power
    iteration with deflation. Sign convention: the largest-magnitude
    loading of each component is positive. Returns (coords (n, k'),
    explained_variance_ratios (k',)) with k' <= k when the input is
    rank-deficient (a warning is emitted in that case).
    """
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"pca_project: expected 2-d input, got {x.shape}")
    n, h = x.shape
    if not (n > k >= 1):
        raise ContractError(f"pca_project: need n > k >= 1, got n={n} k={k}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    total_var = float(np.trace(cov))

    components = []
    eigenvalues = []
    deflated = cov.copy()
    for _ in range(k):
        # deterministic start vector; the small ramp avoids starting
        # orthogonal to the leading eigenvector on symmetric inputs
        v = np.ones(h) + np.arange(h) * 1e-3
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = deflated @ v
            norm = np.linalg.norm(w)
            if norm < tol:
                lam = 0.0
                break
            w /= norm
            if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
                v = w
                lam = float(v @ deflated @ v)
                break
            v = w
        else:
            lam = float(v @ deflated @ v)
        if lam <= tol * max(total_var, 1.0):
            warnings.warn(
                f"pca_project: input rank below {k}, returning {len(components)} components")
            break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components.append(v)
        eigenvalues.append(lam)
        deflated = deflated - lam * np.outer(v, v)

    comp = np.array(components).T if components else np.zeros((h, 0))
    coords = centered @ comp
    ratios = np.array(eigenvalues) / total_var if total_var > 0 else np.zeros(len(eigenvalues))
    return coords, ratios
