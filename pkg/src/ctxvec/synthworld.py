"""Synthetic corpora and scenes with planted category structure.

Words are grouped into categories.  Sentences and scenes both draw their
members from one base category with probability `affinity` (else uniformly
from the other categories), so category mates co-occur in text and in images.
A rule table (entity category, context category) -> relation forces boxes of
governed category pairs into positions/sizes that satisfy the relation for
every generated pair, which gives spatial models a recoverable signal.  Patch
features are noisy category signature vectors, so the projection pathway can
recover categories without real images.

Generated files use exactly the corpus, scene and feature formats the loaders
read; `generate` is deterministic given the spec (same spec + seed twice
yields byte-identical files).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenegraph import (
    BBox,
    KIND_FULL_MASKED,
    KIND_PATCH,
    PatchFeatureSet,
    save_patch_features,
)
from .spatial import categorical_vec

REL_BELOW = "below"
REL_ABOVE = "above"
REL_BESIDE = "beside"
REL_BIGGER = "bigger"
RELATIONS = (REL_BELOW, REL_ABOVE, REL_BESIDE, REL_BIGGER)


@dataclass
class WorldSpec:
    n_categories: int = 4
    words_per_category: int = 10
    scenes: int = 500
    objects_per_scene: int = 4
    affinity: float = 0.9
    rules: dict = field(default_factory=dict)  # (entity_cat, ctx_cat) -> relation
    sentences: int = 500
    tokens_per_sentence: int = 8
    visual_fraction: float = 1.0
    feature_dim: int = 64
    patches_per_entity: int = 2
    image_size: int = 100
    seed: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.affinity <= 1.0:
            raise ValueError("affinity must be in [0, 1]")
        if not 0.0 <= self.visual_fraction <= 1.0:
            raise ValueError("visual_fraction must be in [0, 1]")
        for name in ("n_categories", "words_per_category", "objects_per_scene",
                     "tokens_per_sentence", "feature_dim", "patches_per_entity",
                     "image_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.scenes < 0 or self.sentences < 0:
            raise ValueError("scenes/sentences must be >= 0")
        for (ec, cc), rel in self.rules.items():
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
            if not (0 <= ec < self.n_categories and 0 <= cc < self.n_categories):
                raise ValueError("rule categories out of range")
            if ec == cc:
                raise ValueError("rules must relate two distinct categories")
        if self.scenes > 0 and round(self.visual_fraction * self.words_per_category) < 1:
            raise ValueError("visual_fraction leaves no visual word per category")


@dataclass
class WorldGold:
    categories: dict                 # word -> category id
    visual_words: tuple              # words that occur in scenes
    rules: dict                      # (entity_cat, ctx_cat) -> relation
    words_by_category: list          # category id -> list of words

    def save(self, path) -> None:
        payload = {
            "categories": self.categories,
            "visual_words": list(self.visual_words),
            "rules": [[ec, cc, rel] for (ec, cc), rel in self.rules.items()],
            "words_by_category": self.words_by_category,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "WorldGold":
        payload = json.loads(Path(path).read_text())
        return cls(
            categories=payload["categories"],
            visual_words=tuple(payload["visual_words"]),
            rules={(ec, cc): rel for ec, cc, rel in payload["rules"]},
            words_by_category=payload["words_by_category"],
        )


@dataclass
class GeneratedWorld:
    corpus_path: Path
    scenes_path: Path
    features_path: Path
    gold_path: Path
    benchmark_path: Path
    gold: WorldGold


def _topo_levels(n_categories: int, edges) -> dict:
    """Level per category from a set of (higher, lower) precedence edges."""
    nodes = sorted({a for a, _ in edges} | {b for _, b in edges})
    level = {c: 0 for c in nodes}
    for _ in range(len(nodes) + 1):
        changed = False
        for hi, lo in edges:
            if level[lo] < level[hi] + 1:
                level[lo] = level[hi] + 1
                changed = True
        if not changed:
            return level
    raise ValueError("cyclic rule table")


def _category_layout(spec: WorldSpec):
    """Derive per-category placement parameters satisfying the rule table."""
    # vertical precedence: relation is judged from the entity's viewpoint,
    # so (e, c) -> below means the context category sits lower (larger y)
    vert_edges = set()
    beside_pairs = []
    size_edges = set()
    for (ec, cc), rel in spec.rules.items():
        if rel == REL_BELOW:
            vert_edges.add((ec, cc))
        elif rel == REL_ABOVE:
            vert_edges.add((cc, ec))
        elif rel == REL_BESIDE:
            beside_pairs.append((ec, cc))
        else:
            size_edges.add((ec, cc))

    vert_levels = _topo_levels(spec.n_categories, vert_edges)
    if vert_levels and max(vert_levels.values()) > 3:
        raise ValueError("at most 4 vertical levels are supported")
    size_levels = _topo_levels(spec.n_categories, size_edges)
    if size_levels and max(size_levels.values()) > 3:
        raise ValueError("at most 4 size levels are supported")

    beside_side = {}
    for ec, cc in beside_pairs:
        if ec in vert_levels or cc in vert_levels:
            raise ValueError("a category cannot have both vertical and beside rules")
        beside_side.setdefault(ec, 0.20)
        beside_side.setdefault(cc, 0.80 if beside_side[ec] == 0.20 else 0.20)
        if beside_side[ec] == beside_side[cc]:
            raise ValueError("inconsistent beside rules")

    n_vert = (max(vert_levels.values()) + 1) if vert_levels else 1
    y_centers = np.linspace(0.18, 0.82, n_vert)
    layout = {}
    for cat in range(spec.n_categories):
        if cat in vert_levels:
            y_lo = y_hi = float(y_centers[vert_levels[cat]])
            x_lo, x_hi = 0.42, 0.58
        elif cat in beside_side:
            y_lo = y_hi = 0.5
            x_lo = x_hi = beside_side[cat]
        else:
            x_lo, x_hi = 0.18, 0.82
            y_lo, y_hi = 0.18, 0.82
        size = 6.0 * (1.7 ** size_levels.get(cat, 0)) * spec.image_size / 100.0
        layout[cat] = ((x_lo, x_hi), (y_lo, y_hi), size)
    return layout


def _make_bbox(layout_entry, spec: WorldSpec, rng) -> BBox:
    (x_lo, x_hi), (y_lo, y_hi), size = layout_entry
    img = spec.image_size
    # positional jitter +-0.02 of the image inside the allowed band
    cx = (rng.uniform(x_lo, x_hi) + rng.uniform(-0.02, 0.02)) * img
    cy = (rng.uniform(y_lo, y_hi) + rng.uniform(-0.02, 0.02)) * img
    w = size * rng.uniform(0.95, 1.05)
    h = size * rng.uniform(0.95, 1.05)
    x = min(max(cx - w / 2.0, 0.0), img - w)
    y = min(max(cy - h / 2.0, 0.0), img - h)
    return BBox(round(x, 2), round(y, 2), round(w, 2), round(h, 2))


def _category_signatures(spec: WorldSpec, rng) -> np.ndarray:
    sig = np.full((spec.n_categories, spec.feature_dim), 0.05)
    block = max(1, spec.feature_dim // spec.n_categories)
    for cat in range(spec.n_categories):
        lo = (cat * block) % spec.feature_dim
        sig[cat, lo : lo + block] = 1.0
    # mild per-dimension variation so signatures are not exactly binary
    sig += rng.uniform(0.0, 0.1, size=sig.shape)
    return sig


def _noisy(vec: np.ndarray, rng) -> np.ndarray:
    return np.clip(vec + rng.normal(0.0, 0.1, size=vec.shape), 0.0, None)


def _other_category(base: int, n: int, rng) -> int:
    off = int(rng.integers(1, n))
    return (base + off) % n


def generate(spec: WorldSpec, out_dir) -> GeneratedWorld:
    """Write corpus.txt, scenes.jsonl, features.pfv, gold.json, benchmark.tsv."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    words_by_cat = [
        [f"cat{c}w{k:02d}" for k in range(spec.words_per_category)]
        for c in range(spec.n_categories)
    ]
    categories = {w: c for c, ws in enumerate(words_by_cat) for w in ws}

    n_visual = round(spec.visual_fraction * spec.words_per_category)
    visual_by_cat = []
    for c in range(spec.n_categories):
        chosen = sorted(rng.choice(spec.words_per_category, size=n_visual, replace=False))
        visual_by_cat.append([words_by_cat[c][k] for k in chosen])
    visual_words = tuple(w for ws in visual_by_cat for w in ws)

    signatures = _category_signatures(spec, rng)
    layout = _category_layout(spec)

    # --- corpus
    sentences = []
    for _ in range(spec.sentences):
        base = int(rng.integers(spec.n_categories))
        toks = []
        for _ in range(spec.tokens_per_sentence):
            cat = base
            if spec.n_categories > 1 and rng.random() >= spec.affinity:
                cat = _other_category(base, spec.n_categories, rng)
            toks.append(words_by_cat[cat][int(rng.integers(spec.words_per_category))])
        sentences.append(toks)
    # coverage: every word must appear at least twice so min_count<=2 keeps it
    counts = Counter(t for s in sentences for t in s)
    for c, ws in enumerate(words_by_cat):
        missing = [w for w in ws for _ in range(max(0, 2 - counts[w]))]
        while missing:
            take, missing = missing[: spec.tokens_per_sentence], missing[spec.tokens_per_sentence:]
            while len(take) < spec.tokens_per_sentence:
                take.append(ws[int(rng.integers(len(ws)))])
            sentences.append(take)
    corpus_path = out_dir / "corpus.txt"
    corpus_path.write_text("\n".join(" ".join(s) for s in sentences) + "\n")

    # --- scenes and features
    scenes_path = out_dir / "scenes.jsonl"
    features = PatchFeatureSet(spec.feature_dim)
    scene_lines = []
    img = spec.image_size
    for si in range(spec.scenes):
        image_id = f"img{si:05d}"
        base = int(rng.integers(spec.n_categories))
        cats, objs = [], []
        for _ in range(spec.objects_per_scene):
            cat = base
            if spec.n_categories > 1 and rng.random() >= spec.affinity:
                cat = _other_category(base, spec.n_categories, rng)
            word = visual_by_cat[cat][int(rng.integers(len(visual_by_cat[cat])))]
            bbox = _make_bbox(layout[cat], spec, rng)
            cats.append(cat)
            objs.append({"word": word, "bbox": [bbox.x, bbox.y, bbox.w, bbox.h]})
        _assert_rules_hold(spec, cats, objs, img)
        scene_lines.append(json.dumps(
            {"image_id": image_id, "width": img, "height": img, "objects": objs}
        ))
        for i, cat in enumerate(cats):
            other_idx = [j for j in range(len(cats)) if j != i]
            for k in range(spec.patches_per_entity):
                if other_idx:
                    j = other_idx[int(rng.integers(len(other_idx)))]
                    base_vec = signatures[cats[j]]
                else:
                    base_vec = np.full(spec.feature_dim, 0.05)
                features.add(image_id, i, KIND_PATCH, k, _noisy(base_vec, rng))
            if other_idx:
                base_vec = signatures[[cats[j] for j in other_idx]].mean(axis=0)
            else:
                base_vec = np.full(spec.feature_dim, 0.05)
            features.add(image_id, i, KIND_FULL_MASKED, 0, _noisy(base_vec, rng))
    scenes_path.write_text("\n".join(scene_lines) + ("\n" if scene_lines else ""))
    features_path = out_dir / "features.pfv"
    save_patch_features(features, features_path)

    gold = WorldGold(categories, visual_words, dict(spec.rules), words_by_cat)
    gold_path = out_dir / "gold.json"
    gold.save(gold_path)

    benchmark_path = out_dir / "benchmark.tsv"
    with open(benchmark_path, "w", encoding="utf-8") as fh:
        for w1, w2, score in category_pairs(gold):
            fh.write(f"{w1}\t{w2}\t{score}\n")

    return GeneratedWorld(
        corpus_path, scenes_path, features_path, gold_path, benchmark_path, gold
    )


def _assert_rules_hold(spec: WorldSpec, cats, objs, img) -> None:
    if not spec.rules:
        return
    names = {REL_BELOW: 0, REL_BESIDE: 1, REL_ABOVE: 2, REL_BIGGER: 3}
    for i, ec in enumerate(cats):
        for j, cc in enumerate(cats):
            if i == j:
                continue
            rel = spec.rules.get((ec, cc))
            if rel is None:
                continue
            bi = BBox(*objs[i]["bbox"])
            bj = BBox(*objs[j]["bbox"])
            vec = categorical_vec(bi, bj, img, img).values
            if vec[names[rel]] != 1.0:
                raise AssertionError(
                    f"generated boxes violate rule {rel} for categories {ec}->{cc}"
                )


def category_pairs(gold: WorldGold):
    """All unordered word pairs scored 1.0 for category mates, else 0.0."""
    words = sorted(gold.categories)
    pairs = []
    for a in range(len(words)):
        for b in range(a + 1, len(words)):
            w1, w2 = words[a], words[b]
            score = 1.0 if gold.categories[w1] == gold.categories[w2] else 0.0
            pairs.append((w1, w2, score))
    return pairs
