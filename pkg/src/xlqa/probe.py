"""Embedding-space analyses: 2D PCA and a linear language-ID probe."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .util import canonical_json

_PCA_START_SEED = 0x5EED


class ProbeError(ValueError):
    pass


@dataclass
class Projection2D:
    points: list[tuple[str, float, float, str, str]]  # (id, x, y, language, kind)
    components: np.ndarray  # (2, d) orthonormal rows
    explained_variance: tuple[float, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "x", "y", "language", "kind"])
        for id_, x, y, lang, kind in self.points:
            writer.writerow([id_, f"{x:.8f}", f"{y:.8f}", lang, kind])
        return buf.getvalue()


@dataclass
class ProbeResult:
    holdout_accuracy: float
    train_fraction: float
    seed: int
    languages: tuple[str, str]

    def to_json(self) -> str:
        return canonical_json(
            {
                "holdout_accuracy": round(self.holdout_accuracy, 6),
                "train_fraction": self.train_fraction,
                "seed": self.seed,
                "languages": list(self.languages),
            }
        )


def _power_iteration(
    A: np.ndarray,
    start: np.ndarray,
    previous: list[np.ndarray],
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Dominant eigenvector of A, kept orthogonal to earlier components."""
    v = start.astype(np.float64)
    for prev in previous:
        v -= (v @ prev) * prev
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ProbeError("degenerate start vector in power iteration")
    v /= norm
    for _ in range(max_iter):
        w = A @ v
        for prev in previous:
            w -= (w @ prev) * prev
        norm = float(np.linalg.norm(w))
        if norm < 1e-300:
            # remaining spectrum is (numerically) zero: any orthogonal
            # completion is an eigenvector with eigenvalue 0
            return v
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            return w
        v = w
    return v


def _fix_sign(v: np.ndarray) -> np.ndarray:
    pivot = int(np.argmax(np.abs(v)))
    return -v if v[pivot] < 0 else v


def pca_2d(
    vectors: Sequence[Sequence[float]],
    ids: Sequence[str] | None = None,
    languages: Sequence[str] | None = None,
    kinds: Sequence[str] | None = None,
) -> Projection2D:
    """Top-2 principal components via power iteration with deflation.

    Covariance is X_centered^T X_centered / n.  Each eigenvector's
    largest-magnitude component is made positive so the output sign is
    fixed.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ProbeError(f"need >= 3 vectors of dim >= 2, got shape {X.shape}")
    n, d = X.shape
    ids = list(ids) if ids is not None else [f"p{i:05d}" for i in range(n)]
    languages = list(languages) if languages is not None else [""] * n
    kinds = list(kinds) if kinds is not None else [""] * n
    if not (len(ids) == len(languages) == len(kinds) == n):
        raise ProbeError("metadata lengths do not match the number of vectors")

    centered = X - X.mean(axis=0)
    cov = (centered.T @ centered) / n
    if float(np.trace(cov)) < 1e-12:
        raise ProbeError("rank-deficient input: all points are identical")

    rng = np.random.default_rng(_PCA_START_SEED)
    c1 = _fix_sign(_power_iteration(cov, rng.standard_normal(d), []))
    lam1 = float(c1 @ cov @ c1)
    deflated = cov - lam1 * np.outer(c1, c1)
    c2 = _fix_sign(_power_iteration(deflated, rng.standard_normal(d), [c1]))
    lam2 = float(c2 @ cov @ c2)
    lam1, lam2 = max(lam1, 0.0), max(lam2, 0.0)

    xs = centered @ c1
    ys = centered @ c2
    points = [
        (ids[i], float(xs[i]), float(ys[i]), languages[i], kinds[i]) for i in range(n)
    ]
    return Projection2D(points, np.stack([c1, c2]), (lam1, lam2))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def language_id_probe(
    vectors: Sequence[Sequence[float]],
    labels: Sequence[str],
    seed: int = 0,
    epochs: int = 500,
    lr: float = 1.0,
    train_fraction: float = 2 / 3,
) -> ProbeResult:
    """Logistic-regression probe predicting the language from an embedding.

    Stratified seeded split (default two thirds train, one third
    holdout); full-batch gradient descent; accuracy is measured on the
    holdout only at threshold 0.5.
    """
    X = np.asarray(vectors, dtype=np.float64)
    labels = [str(l) for l in labels]
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ProbeError("labels do not align with vectors")
    classes = sorted(set(labels))
    if len(classes) != 2:
        raise ProbeError(f"probe needs exactly two classes, got {classes}")
    if not 0.0 < train_fraction < 1.0:
        raise ProbeError("train_fraction must lie in (0, 1)")

    y = np.array([classes.index(l) for l in labels], dtype=np.float64)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in (0.0, 1.0):
        members = np.flatnonzero(y == cls)
        if len(members) < 2:
            raise ProbeError(
                f"class {classes[int(cls)]!r} has {len(members)} members; "
                "it cannot appear in both train and holdout"
            )
        members = members[rng.permutation(len(members))]
        n_train = int(round(train_fraction * len(members)))
        n_train = min(max(n_train, 1), len(members) - 1)
        train_idx.extend(members[:n_train])
        test_idx.extend(members[n_train:])

    train_idx = np.array(sorted(train_idx))
    test_idx = np.array(sorted(test_idx))
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    w = np.zeros(Xb.shape[1])
    Xtr, ytr = Xb[train_idx], y[train_idx]
    for _ in range(epochs):
        p = _sigmoid(Xtr @ w)
        grad = Xtr.T @ (p - ytr) / len(ytr)
        w -= lr * grad

    preds = (_sigmoid(Xb[test_idx] @ w) > 0.5).astype(np.float64)
    accuracy = float(np.mean(preds == y[test_idx]))
    return ProbeResult(accuracy, train_fraction, seed, (classes[0], classes[1]))
