"""Loss terms and their analytic gradients.

All context-prediction terms share the negative-sampling form

    loss(e, c, negs) = -log s(f(c) . t_e) - sum_neg log s(-f(neg) . t_e)

with s the logistic sigmoid and t_e the shared target embedding of the
entity.  On the text side f(c) is the text context row U_c.  On the visual
side f depends on the context model kind:

    O        f(c) = V_c                 (object lookup table)
    P        f(c) = N u_c               (projected patch activation)
    P_full   f(c) = N u_c               (projected masked-image activation)
    spatial  concat fusion    f(c, s) = M_concat . (v_c ++ s)
             bilinear fusion  f(c, s)[j] = sum_a sum_i s[a] M_bilin[a,i,j] v_c[i]

where s is the 4-d spatial vector and v_c the base context embedding.  The
appearance baseline is a max-margin term

    loss(e) = sum_neg max(0, gamma - cos(t_e, v_e) + cos(t_e, v_neg))

with fixed (not learned) appearance vectors; when their dimension differs
from d they first go through a fixed seeded Gaussian projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateInput, SpatialDataMissing
from .textcorpus import TextPair

BASE_O = "O"
BASE_P = "P"
BASE_P_FULL = "P_full"
SPATIAL_DELTA = "delta"
SPATIAL_CATEGORICAL = "categorical"
FUSION_CONCAT = "concat"
FUSION_BILINEAR = "bilinear"


@dataclass(frozen=True)
class ContextModelKind:
    """One visual context model: a base plus optional spatial fusion."""

    base: str
    spatial: str | None = None
    fusion: str | None = None

    def __post_init__(self):
        if self.base not in (BASE_O, BASE_P, BASE_P_FULL):
            raise ValueError(f"unknown base {self.base!r}")
        if (self.spatial is None) != (self.fusion is None):
            raise ValueError("spatial and fusion must be set together")
        if self.spatial is not None and self.spatial not in (
            SPATIAL_DELTA, SPATIAL_CATEGORICAL,
        ):
            raise ValueError(f"unknown spatial variant {self.spatial!r}")
        if self.fusion is not None and self.fusion not in (
            FUSION_CONCAT, FUSION_BILINEAR,
        ):
            raise ValueError(f"unknown fusion {self.fusion!r}")

    @property
    def is_spatial(self) -> bool:
        return self.spatial is not None

    @property
    def uses_patches(self) -> bool:
        return self.base in (BASE_P, BASE_P_FULL)


@dataclass(frozen=True)
class VisualContext:
    """Data needed to embed one context element under a given kind."""

    row: int | None = None          # object table row (base O)
    feature: np.ndarray | None = None  # activation vector u_c (bases P, P_full)
    s: np.ndarray | None = None     # 4-d spatial vector, when present


@dataclass
class LossTermWeights:
    """Which loss terms are active and how they are weighted."""

    text_on: bool = True
    visual: tuple = ()              # ((ContextModelKind, weight), ...)
    baseline_weight: float = 0.0
    alpha: float = 0.2

    def validate(self) -> None:
        if not self.text_on and not self.visual and self.baseline_weight == 0:
            raise ValueError("at least one loss term must be active")
        if self.alpha < 0 or self.baseline_weight < 0:
            raise ValueError("weights must be >= 0")
        for _, w in self.visual:
            if w < 0:
                raise ValueError("weights must be >= 0")


class GradientBatch:
    """Sparse per-row updates plus dense updates for N and the fusion tensors."""

    __slots__ = ("rows", "dense")

    def __init__(self):
        self.rows: dict = {}    # (matrix name, row index) -> d-vector
        self.dense: dict = {}   # matrix name -> array

    def add_row(self, name: str, idx: int, vec: np.ndarray) -> None:
        key = (name, idx)
        cur = self.rows.get(key)
        if cur is None:
            self.rows[key] = vec.copy()
        else:
            cur += vec

    def add_dense(self, name: str, arr: np.ndarray) -> None:
        cur = self.dense.get(name)
        if cur is None:
            self.dense[name] = arr.copy()
        else:
            cur += arr

    def merge(self, other: "GradientBatch", scale: float = 1.0) -> None:
        for key, vec in other.rows.items():
            cur = self.rows.get(key)
            if cur is None:
                self.rows[key] = scale * vec
            else:
                cur += scale * vec
        for name, arr in other.dense.items():
            cur = self.dense.get(name)
            if cur is None:
                self.dense[name] = scale * arr
            else:
                cur += scale * arr

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.rows.values()) and all(
            np.all(np.isfinite(v)) for v in self.dense.values()
        )


def _neg_log_sigmoid(x: float) -> float:
    # -log s(x) = log(1 + exp(-x)), stable for both signs
    return float(np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# text term


def text_loss_grad(pair: TextPair, negatives, store):
    """Skip-gram negative-sampling loss and exact gradients for one pair."""
    t = store.T[pair.target]
    u_pos = store.U[pair.context]
    x = float(u_pos @ t)
    loss = _neg_log_sigmoid(x)
    coef_pos = expit(x) - 1.0

    grads = GradientBatch()
    grads.add_row("U", pair.context, coef_pos * t)
    grad_t = coef_pos * u_pos
    for n in negatives:
        n = int(n)
        u_n = store.U[n]
        xn = float(u_n @ t)
        loss += _neg_log_sigmoid(-xn)
        coef = expit(xn)
        grad_t = grad_t + coef * u_n
        grads.add_row("U", n, coef * t)
    grads.add_row("T", pair.target, grad_t)
    return loss, grads


# ---------------------------------------------------------------------------
# visual context embedding


def _base_embed(kind: ContextModelKind, ctx: VisualContext, store) -> np.ndarray:
    if kind.base == BASE_O:
        if ctx.row is None:
            raise ValueError("base O needs an object table row")
        return store.V[ctx.row]
    if ctx.feature is None:
        raise ValueError(f"base {kind.base} needs an activation vector")
    return store.N @ ctx.feature


def context_embedding_parts(kind: ContextModelKind, ctx: VisualContext, store):
    """Return (base embedding v_c, fused embedding or None)."""
    v = _base_embed(kind, ctx, store)
    if not kind.is_spatial:
        return v, None
    if ctx.s is None:
        raise SpatialDataMissing("spatial context model without a spatial vector")
    s = np.asarray(ctx.s, dtype=v.dtype)
    if kind.fusion == FUSION_CONCAT:
        z = np.concatenate([v, s])
        return v, store.M_concat @ z
    return v, np.einsum("a,aij,i->j", s, store.M_bilin, v)


def context_embedding(kind: ContextModelKind, ctx: VisualContext, store) -> np.ndarray:
    """The vector f(c) actually used in the loss (fused when spatial)."""
    v, fused = context_embedding_parts(kind, ctx, store)
    return v if fused is None else fused


def _context_backward(kind, ctx, v_base, g_out, store, grads) -> None:
    """Accumulate parameter gradients given d loss / d f(c) = g_out."""
    if kind.is_spatial:
        s = np.asarray(ctx.s, dtype=v_base.dtype)
        if kind.fusion == FUSION_CONCAT:
            z = np.concatenate([v_base, s])
            grads.add_dense("M_concat", np.outer(g_out, z))
            g_v = store.M_concat[:, : store.d].T @ g_out
        else:
            grads.add_dense("M_bilin", np.einsum("a,i,j->aij", s, v_base, g_out))
            g_v = np.einsum("a,aij,j->i", s, store.M_bilin, g_out)
    else:
        g_v = g_out
    if kind.base == BASE_O:
        grads.add_row("V", int(ctx.row), g_v)
    else:
        grads.add_dense("N", np.outer(g_v, ctx.feature))


def visual_loss_grad(entity: int, contexts, negatives, kind: ContextModelKind, store):
    """Negative-sampling loss over visual contexts of one entity.

    negatives[i] holds the negative contexts contrasted with contexts[i];
    the same embedding function applies to positives and negatives.
    """
    if len(contexts) == 0:
        raise ValueError("contexts must be non-empty")
    if len(negatives) != len(contexts):
        raise ValueError("need one negative list per context")
    t = store.T[entity]
    loss = 0.0
    grads = GradientBatch()
    grad_t = np.zeros_like(t)
    for ctx, negs in zip(contexts, negatives):
        v_base, fused = context_embedding_parts(kind, ctx, store)
        f = v_base if fused is None else fused
        x = float(f @ t)
        loss += _neg_log_sigmoid(x)
        coef = expit(x) - 1.0
        grad_t += coef * f
        _context_backward(kind, ctx, v_base, coef * t, store, grads)
        for nc in negs:
            nv_base, nfused = context_embedding_parts(kind, nc, store)
            nf = nv_base if nfused is None else nfused
            xn = float(nf @ t)
            loss += _neg_log_sigmoid(-xn)
            ncoef = expit(xn)
            grad_t += ncoef * nf
            _context_backward(kind, nc, nv_base, ncoef * t, store, grads)
    grads.add_row("T", int(entity), grad_t)
    return loss, grads


# ---------------------------------------------------------------------------
# appearance baseline


_PROJECTION_CACHE: dict = {}


def fixed_projection(d: int, feature_dim: int) -> np.ndarray:
    """Deterministic Gaussian map used when appearance vectors are not d-dim."""
    key = (d, feature_dim)
    if key not in _PROJECTION_CACHE:
        rng = np.random.default_rng(np.random.SeedSequence([8675309, d, feature_dim]))
        _PROJECTION_CACHE[key] = rng.standard_normal((d, feature_dim)) / np.sqrt(
            feature_dim
        )
    return _PROJECTION_CACHE[key]


def _cos_and_grad(t: np.ndarray, v: np.ndarray):
    nt = float(np.linalg.norm(t))
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise DegenerateInput("zero-norm appearance vector")
    cos = float(t @ v) / (nt * nv)
    grad = (v / nv - cos * t / nt) / nt
    return cos, grad


def baseline_loss_grad(entity: int, v_e: np.ndarray, v_negs, store, gamma: float):
    """Max-margin appearance loss; only t_e receives gradient.

    Uses subgradient 0 at the hinge kink and inside the satisfied-margin
    region.  v_e and the negatives stay fixed.
    """
    t = store.T[entity]
    if float(np.linalg.norm(t)) == 0.0:
        raise DegenerateInput("zero-norm target embedding")
    v_negs = np.atleast_2d(np.asarray(v_negs, dtype=t.dtype))
    v_e = np.asarray(v_e, dtype=t.dtype)
    if v_e.shape[0] != store.d:
        R = fixed_projection(store.d, v_e.shape[0]).astype(t.dtype)
        v_e = R @ v_e
        v_negs = v_negs @ R.T
    cos_pos, grad_pos = _cos_and_grad(t, v_e)
    loss = 0.0
    grad_t = np.zeros_like(t)
    for vn in v_negs:
        cos_neg, grad_neg = _cos_and_grad(t, vn)
        margin = gamma - cos_pos + cos_neg
        if margin > 0.0:
            loss += margin
            grad_t += grad_neg - grad_pos
    grads = GradientBatch()
    grads.add_row("T", int(entity), grad_t)
    return loss, grads


# ---------------------------------------------------------------------------
# negative sampling


class UnigramTable:
    """Draws ids proportionally to count^power (word2vec convention)."""

    def __init__(self, counts, power: float = 0.75):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.ndim != 1 or len(counts) == 0:
            raise ValueError("counts must be a non-empty 1-d array")
        p = counts**power
        self.probs = p / p.sum()
        self._cum = np.cumsum(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        idx = np.searchsorted(self._cum, rng.random(k), side="right")
        return np.minimum(idx, len(self.probs) - 1).astype(np.int64)

    def sample_excluding(self, k: int, exclude: int, rng) -> np.ndarray:
        out = self.sample(k, rng)
        if len(self.probs) == 1 or self.probs[exclude] >= 1.0 - 1e-12:
            return out  # nothing else to draw
        for _ in range(10_000):
            mask = out == exclude
            if not mask.any():
                break
            out[mask] = self.sample(int(mask.sum()), rng)
        return out


class FeaturePool:
    """Uniform sampler over feature vectors, avoiding a given image."""

    def __init__(self, entries):
        # entries: sequence of (image_id, vector)
        self.image_ids = [img for img, _ in entries]
        self.vectors = [np.asarray(v) for _, v in entries]
        if not self.vectors:
            raise ValueError("empty feature pool")
        self._distinct_images = len(set(self.image_ids)) > 1

    def __len__(self) -> int:
        return len(self.vectors)

    def sample(self, k: int, rng, exclude_image: str | None = None):
        idx = rng.integers(0, len(self.vectors), size=k)
        if exclude_image is not None and self._distinct_images:
            for _ in range(256):
                mask = np.fromiter(
                    (self.image_ids[i] == exclude_image for i in idx),
                    dtype=bool, count=k,
                )
                if not mask.any():
                    break
                idx[mask] = rng.integers(0, len(self.vectors), size=int(mask.sum()))
        return [self.vectors[i] for i in idx]


@dataclass
class NegativeSamplers:
    """Per-stream negative samplers used during training."""

    text: UnigramTable | None = None
    objects: UnigramTable | None = None
    patches: FeaturePool | None = None


def sample_negatives(
    kind: str | ContextModelKind,
    k: int,
    rng: np.random.Generator,
    samplers: NegativeSamplers,
    *,
    exclude: int | None = None,
    exclude_image: str | None = None,
):
    """Draw k negative contexts for the given term.

    Text and object negatives come from the unigram^0.75 tables over context
    occurrences; patch negatives are uniform features from other images.
    """
    if kind == "text":
        table = samplers.text
    elif isinstance(kind, ContextModelKind) and kind.base == BASE_O:
        table = samplers.objects
    else:
        if samplers.patches is None:
            raise ValueError("no patch pool configured")
        return samplers.patches.sample(k, rng, exclude_image=exclude_image)
    if table is None:
        raise ValueError("no unigram table configured")
    if exclude is not None:
        return table.sample_excluding(k, exclude, rng)
    return table.sample(k, rng)
