"""Intrinsic evaluations of word embeddings.

* word similarity: Spearman correlation between cosine scores and gold pair
  scores, with coverage reporting;
* feature-norm prediction: per-characteristic linear hinge classifiers under
  stratified 5-fold CV, f1 macro-averaged within each category;
* concreteness prediction: RBF kernel ridge regression under 5-fold CV,
  reporting mean out-of-fold R^2;
* sequential embedding combination: concatenate text and visual blocks and
  project onto the top principal components;
* shift analysis: correlate per-word cosine shift between two embedding
  snapshots with concreteness ratings.

All evaluations are read-only with respect to the embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .errors import EvalError, NoOverlap, ParseError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class SimilarityBenchmark:
    name: str
    pairs: tuple  # ((word1, word2, gold score), ...)


@dataclass(frozen=True)
class FeatureNormDataset:
    entities: tuple          # entity words
    characteristics: tuple   # binary attribute names
    categories: dict         # characteristic -> category name
    labels: np.ndarray       # (entities, characteristics) in {0, 1}


@dataclass(frozen=True)
class ConcretenessDataset:
    ratings: dict            # word -> rating


def load_similarity_benchmark(path, name: str | None = None) -> SimilarityBenchmark:
    """TSV "word1<TAB>word2<TAB>score"; duplicate unordered pairs are rejected."""
    path = Path(path)
    pairs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError("expected word1<TAB>word2<TAB>score", path=path, line=lineno)
            try:
                score = float(cols[2])
            except ValueError:
                raise ParseError("score is not a number", path=path, line=lineno)
            if not np.isfinite(score):
                raise ParseError("score is not finite", path=path, line=lineno)
            key = frozenset((cols[0], cols[1]))
            if key in seen:
                raise ParseError(f"duplicate pair {cols[0]}/{cols[1]}", path=path, line=lineno)
            seen.add(key)
            pairs.append((cols[0], cols[1], score))
    return SimilarityBenchmark(name or path.stem, tuple(pairs))


def load_feature_norms(labels_path, categories_path) -> FeatureNormDataset:
    """labels: header of characteristic names, rows "entity<TAB>0/1...";
    categories: lines "characteristic<TAB>category"."""
    labels_path = Path(labels_path)
    with open(labels_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) < 2:
            raise ParseError("header needs >= 1 characteristic", path=labels_path, line=1)
        chars = tuple(header[1:])
        entities, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != len(chars) + 1:
                raise ParseError("wrong column count", path=labels_path, line=lineno)
            try:
                vals = [int(v) for v in cols[1:]]
            except ValueError:
                raise ParseError("labels must be 0/1", path=labels_path, line=lineno)
            if any(v not in (0, 1) for v in vals):
                raise ParseError("labels must be 0/1", path=labels_path, line=lineno)
            entities.append(cols[0])
            rows.append(vals)
    categories_path = Path(categories_path)
    categories = {}
    with open(categories_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError("expected characteristic<TAB>category", path=categories_path, line=lineno)
            if cols[0] in categories:
                raise ParseError(f"characteristic {cols[0]!r} mapped twice", path=categories_path, line=lineno)
            categories[cols[0]] = cols[1]
    missing = [c for c in chars if c not in categories]
    if missing:
        raise ParseError(f"characteristics without category: {missing}", path=categories_path)
    return FeatureNormDataset(
        tuple(entities), chars, categories, np.asarray(rows, dtype=np.int8)
    )


def load_concreteness(path) -> ConcretenessDataset:
    path = Path(path)
    ratings = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError("expected word<TAB>rating", path=path, line=lineno)
            try:
                r = float(cols[1])
            except ValueError:
                raise ParseError("rating is not a number", path=path, line=lineno)
            if not np.isfinite(r):
                raise ParseError("rating is not finite", path=path, line=lineno)
            ratings[cols[0]] = r
    return ConcretenessDataset(ratings)


# ---------------------------------------------------------------------------
# word similarity


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return np.nan
    return float(a @ b) / float(na * nb)


def spearman_eval(embeddings, benchmark: SimilarityBenchmark, restrict_to=None):
    """Spearman rho between cosine model scores and gold scores.

    Pairs with a missing (or zero) embedding are skipped; coverage is the
    evaluated fraction.  restrict_to optionally narrows evaluation to pairs
    whose both words belong to the given word set.
    """
    model_scores, gold_scores = [], []
    total = 0
    for w1, w2, gold in benchmark.pairs:
        if restrict_to is not None and (w1 not in restrict_to or w2 not in restrict_to):
            continue
        total += 1
        e1, e2 = embeddings.get(w1), embeddings.get(w2)
        if e1 is None or e2 is None:
            continue
        cos = _cosine(e1, e2)
        if np.isnan(cos):
            continue
        model_scores.append(cos)
        gold_scores.append(gold)
    if len(model_scores) < 2:
        raise NoOverlap(
            f"benchmark {benchmark.name}: {len(model_scores)} covered pair(s)"
        )
    rho = float(spearmanr(model_scores, gold_scores).statistic)
    coverage = len(model_scores) / total if total else 0.0
    return rho, coverage


# ---------------------------------------------------------------------------
# feature-norm prediction


def _stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator):
    """Fold id per sample; each class is spread round-robin over folds."""
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def _pegasos(X: np.ndarray, y: np.ndarray, lam: float, epochs: int, rng):
    """Per-example hinge-loss SGD with eta_t = 1/(lam*t); y in {-1, +1}.

    The bias enters as an appended constant feature, regularized with the rest.
    """
    n, dim = X.shape
    w = np.zeros(dim)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * float(w @ X[i])
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * y[i]) * X[i]
    return w


def _f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def feature_norm_eval(
    embeddings,
    dataset: FeatureNormDataset,
    folds: int = 5,
    seed: int = 0,
    reg: float = 1e-2,
    epochs: int = 200,
):
    """Per-category f1 of binary attribute prediction from embeddings.

    Characteristics with fewer than `folds` positive or negative covered
    examples are skipped (counted).  Returns (category -> f1,
    characteristic -> f1, skipped count).
    """
    covered = [(e, embeddings[e]) for e in dataset.entities if e in embeddings]
    if not covered:
        raise EvalError("no entity is covered by the embeddings")
    ent_idx = [i for i, e in enumerate(dataset.entities) if e in embeddings]
    X = np.stack([v for _, v in covered]).astype(np.float64)
    X = np.hstack([X, np.ones((len(X), 1))])  # bias feature
    per_char = {}
    skipped = 0
    for ci, char in enumerate(dataset.characteristics):
        y = dataset.labels[ent_idx, ci].astype(np.int64)
        n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
        if n_pos < folds or n_neg < folds:
            skipped += 1
            logger.warning("characteristic %r skipped (%d pos / %d neg)", char, n_pos, n_neg)
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, ci]))
        fold_of = _stratified_folds(y, folds, rng)
        scores = []
        for f in range(folds):
            train = fold_of != f
            w = _pegasos(X[train], np.where(y[train] == 1, 1.0, -1.0), reg, epochs, rng)
            pred = (X[~train] @ w > 0).astype(np.int64)
            scores.append(_f1(y[~train], pred))
        per_char[char] = float(np.mean(scores))
    if not per_char:
        raise EvalError("no characteristic had enough examples per class")
    per_category = {}
    for cat in sorted(set(dataset.categories.values())):
        vals = [f1 for ch, f1 in per_char.items() if dataset.categories[ch] == cat]
        if vals:
            per_category[cat] = float(np.mean(vals))
    return per_category, per_char, skipped


# ---------------------------------------------------------------------------
# concreteness prediction


def _rbf_kernel(A: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * h * h))


def _median_bandwidth(X: np.ndarray) -> float:
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(X * X, axis=1)[None, :]
        - 2.0 * (X @ X.T)
    )
    d = np.sqrt(np.maximum(sq[np.triu_indices(len(X), k=1)], 0.0))
    d = d[d > 0]
    if len(d) == 0:
        return 1.0
    return float(np.median(d))


def concreteness_eval(
    embeddings,
    dataset: ConcretenessDataset,
    folds: int = 5,
    seed: int = 0,
    ridge: float = 1e-3,
):
    """Mean out-of-fold R^2 of RBF kernel ridge regression onto the ratings.

    Bandwidth is the median pairwise training distance; a singular system
    falls back to progressively stronger ridge terms rather than failing.
    """
    words = [w for w in dataset.ratings if w in embeddings]
    if len(words) < 20:
        raise EvalError(f"only {len(words)} covered words (need >= 20)")
    X = np.stack([np.asarray(embeddings[w], dtype=np.float64) for w in words])
    y = np.asarray([dataset.ratings[w] for w in words])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(words))
    fold_of = np.empty(len(words), dtype=np.int64)
    fold_of[order] = np.arange(len(words)) % folds
    r2s = []
    for f in range(folds):
        tr, va = fold_of != f, fold_of == f
        h = _median_bandwidth(X[tr])
        K = _rbf_kernel(X[tr], X[tr], h)
        y_mean = float(y[tr].mean())
        lam = ridge
        while True:
            try:
                alpha = np.linalg.solve(K + lam * np.eye(len(K)), y[tr] - y_mean)
                break
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e3:
                    raise EvalError("kernel system unsolvable even with strong ridge")
        pred = _rbf_kernel(X[va], X[tr], h) @ alpha + y_mean
        ss_res = float(np.sum((y[va] - pred) ** 2))
        ss_tot = float(np.sum((y[va] - y[va].mean()) ** 2))
        r2s.append(1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0)
    return float(np.mean(r2s))


# ---------------------------------------------------------------------------
# sequential combination (concatenate, then PCA)


def pca_components(X: np.ndarray, d: int):
    """Top-d principal components of X via eigendecomposition of the covariance.

    Returns (components as columns of a (dim, d) matrix, column means).
    Component signs are fixed so each column's largest-magnitude entry is
    positive.
    """
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / max(1, len(X) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d]
    W = eigvecs[:, order]
    for j in range(W.shape[1]):
        k = int(np.argmax(np.abs(W[:, j])))
        if W[k, j] < 0:
            W[:, j] = -W[:, j]
    return W, mean


def sequential_baseline(text_embs, visual_embs, d: int):
    """Concatenate text and visual vectors per word, mean-center, PCA to d dims.

    Words missing from the visual side get zeros on the visual block.  Raises
    ConfigError when d exceeds the concatenated dimensionality.
    """
    from .errors import ConfigError

    words = list(text_embs)
    if not words:
        raise ConfigError("empty shared vocabulary")
    t_dim = len(next(iter(text_embs.values())))
    v_dim = len(next(iter(visual_embs.values()))) if visual_embs else 0
    if d > t_dim + v_dim:
        raise ConfigError(f"d={d} exceeds concatenated dimension {t_dim + v_dim}")
    rows = np.zeros((len(words), t_dim + v_dim))
    for i, w in enumerate(words):
        rows[i, :t_dim] = text_embs[w]
        v = visual_embs.get(w) if v_dim else None
        if v is not None:
            rows[i, t_dim:] = v
    W, mean = pca_components(rows, d)
    proj = (rows - mean) @ W
    return {w: proj[i] for i, w in enumerate(words)}


# ---------------------------------------------------------------------------
# shift analysis


@dataclass(frozen=True)
class ShiftResult:
    outcome: str            # "ok" | "no_variance"
    rho: float | None
    words_used: int
    skipped_zero: int


def embedding_shifts(initial, final):
    """Cosine distance between a word's two snapshots; zero vectors skipped."""
    shifts = {}
    skipped = 0
    for w, v0 in initial.items():
        v1 = final.get(w)
        if v1 is None:
            continue
        cos = _cosine(np.asarray(v0), np.asarray(v1))
        if np.isnan(cos):
            skipped += 1
            logger.warning("word %r skipped in shift analysis (zero vector)", w)
            continue
        shifts[w] = 1.0 - cos
    return shifts, skipped


def shift_analysis(initial, final, dataset: ConcretenessDataset) -> ShiftResult:
    """Spearman correlation between embedding shift and concreteness rating."""
    shifts, skipped = embedding_shifts(initial, final)
    common = [w for w in shifts if w in dataset.ratings]
    if len(common) < 2:
        raise NoOverlap(f"{len(common)} words shared between shifts and ratings")
    s = np.asarray([shifts[w] for w in common])
    r = np.asarray([dataset.ratings[w] for w in common])
    # identical snapshots leave only rounding noise in the shifts
    if np.ptp(s) < 1e-12 or np.all(r == r[0]):
        return ShiftResult("no_variance", None, len(common), skipped)
    rho = float(spearmanr(s, r).statistic)
    return ShiftResult("ok", rho, len(common), skipped)
