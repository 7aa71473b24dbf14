"""SGD training loop over the joint text + visual objective.

Each epoch regenerates the text pair stream (dynamic windows) and the visual
example stream, then interleaves mini-batches from both so the streams finish
together.  The text loss trains (T, U); visual context losses train (T, V) or
(T, N, fusion tensors) and are weighted by alpha; the appearance baseline
trains T only.  Per batch, parameter updates are the summed per-example
gradients scaled by the learning rate, with exact multiplicative weight decay
(1 - lr*lambda on N, 1 - lr*mu on the fusion tensors) applied on every visual
batch whose model uses those matrices.

Deterministic mode serializes all updates; given the same config, data and
seed the final store is bit-identical across runs.  Parallel mode applies
row updates from worker threads without locks, so its result is
run-dependent by design.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .modelspec import format_term
from .objectives import (
    BASE_O,
    BASE_P,
    FUSION_BILINEAR,
    FUSION_CONCAT,
    FeaturePool,
    GradientBatch,
    LossTermWeights,
    SPATIAL_DELTA,
    UnigramTable,
    VisualContext,
    baseline_loss_grad,
    text_loss_grad,
    visual_loss_grad,
)
from .scenegraph import KIND_FULL_MASKED, KIND_PATCH
from .spatial import categorical_vec, delta_vec
from .textcorpus import Corpus, TextPair, keep_probabilities, stream_pairs, subsample

logger = logging.getLogger(__name__)

_RNG_TAGS = {
    "text_pairs": 11,
    "text_shuffle": 12,
    "text_negs": 13,
    "visual_build": 21,
    "visual_shuffle": 22,
    "visual_negs": 23,
}


def _rng(seed: int, tag: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _RNG_TAGS[tag], epoch]))


@dataclass
class TrainConfig:
    d: int = 100
    window: int = 5
    negatives: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 64
    alpha: float = 0.2
    lambda_: float = 0.1   # L2 weight decay on N
    mu: float = 0.1        # L2 weight decay on the fusion tensors
    gamma: float = 0.5     # appearance baseline margin
    epochs: int = 5
    seed: int = 1
    deterministic: bool = True
    model: LossTermWeights = field(default_factory=LossTermWeights)
    min_count: int = 1
    subsample: float = 0.0
    debug_checks: bool = False
    workers: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        for name in ("learning_rate", "alpha", "lambda_", "mu", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.negatives < 0 or self.batch_size < 1 or self.window < 1:
            raise ConfigError("bad negatives/batch_size/window")

    def to_dict(self) -> dict:
        from .modelspec import ModelSpec, format_model

        # text term last, baseline first: matches the experiment-table labels
        terms = [kind for kind, _ in self.model.visual]
        if self.model.baseline_weight > 0:
            terms.insert(0, "L")
        if self.model.text_on:
            terms.append("T")
        return {
            "d": self.d,
            "window": self.window,
            "negatives": self.negatives,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "mu": self.mu,
            "gamma": self.gamma,
            "epochs": self.epochs,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "min_count": self.min_count,
            "subsample": self.subsample,
            "model": format_model(ModelSpec(tuple(terms))),
        }


_CONFIG_KEYS = {
    "d": ("d", int),
    "window": ("window", int),
    "negatives": ("negatives", int),
    "learning_rate": ("learning_rate", float),
    "batch_size": ("batch_size", int),
    "alpha": ("alpha", float),
    "lambda": ("lambda_", float),
    "mu": ("mu", float),
    "gamma": ("gamma", float),
    "epochs": ("epochs", int),
    "seed": ("seed", int),
    "deterministic": ("deterministic", None),
    "min_count": ("min_count", int),
    "subsample": ("subsample", float),
    "workers": ("workers", int),
    "debug_checks": ("debug_checks", None),
    "model": ("model", None),
}


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def read_config_file(path) -> dict:
    """Flat key=value config; '#' starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            out[key] = value
    return out


def apply_config_mapping(config: TrainConfig, mapping: dict) -> TrainConfig:
    from .modelspec import parse_model

    for key, raw in mapping.items():
        attr, conv = _CONFIG_KEYS[key]
        if key == "model":
            config.model = parse_model(raw).to_weights(alpha=config.alpha)
        elif conv is None:
            setattr(config, attr, _parse_bool(raw))
        else:
            try:
                setattr(config, attr, conv(raw))
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}")
    return config


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)  # dict term -> mean loss
    update_counts: dict = field(default_factory=dict)  # term -> examples seen
    batch_counts: dict = field(default_factory=dict)   # stream -> batches run
    skipped: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "update_counts": self.update_counts,
            "batch_counts": self.batch_counts,
            "skipped": self.skipped,
            "wall_time": self.wall_time,
        }


class _VisExample(NamedTuple):
    term: int
    entity: int
    row: int
    s: object          # np.ndarray | None
    feature: object    # np.ndarray | None
    image_id: str


def schedule(text_pair_count: int, visual_pair_count: int, batch_size: int, seed: int = 0):
    """Proportionally interleaved batch sequence over both streams.

    Batch i of a stream with n batches sits at fractional position
    (i + 0.5) / n; the merged order is the sort of all positions (text wins
    exact ties), so both streams finish the epoch together.  The result is
    fully determined by the counts; seed is accepted for interface stability.
    """
    if text_pair_count < 0 or visual_pair_count < 0:
        raise ValueError("counts must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    events = []
    for stream, rank, count in (("text", 0, text_pair_count), ("visual", 1, visual_pair_count)):
        if count == 0:
            continue
        n = -(-count // batch_size)
        for i in range(n):
            lo = i * batch_size
            events.append(((i + 0.5) / n, rank, stream, lo, min(lo + batch_size, count)))
    events.sort(key=lambda e: (e[0], e[1]))
    return [(stream, lo, hi) for _, _, stream, lo, hi in events]


def apply_update(store, grads: GradientBatch, lr: float, weight_decay: dict | None = None):
    """One optimizer step: multiplicative decay, then subtract lr * gradient."""
    if weight_decay:
        for name, coef in weight_decay.items():
            if coef:
                getattr(store, name)[...] *= 1.0 - lr * coef
    mats = store.matrices()
    for (name, row), vec in grads.rows.items():
        mats[name][row] -= lr * vec
    for name, arr in grads.dense.items():
        mats[name] -= lr * arr


def _active_visual_terms(model: LossTermWeights):
    terms = []
    for kind, w in model.visual:
        scale = model.alpha * w
        if scale != 0.0:
            terms.append((format_term(kind), kind, scale))
    if model.baseline_weight > 0.0:
        terms.append(("L", "L", model.baseline_weight))
    return terms


def _validate_compat(vis_terms, scenes, features, store):
    if not vis_terms:
        return
    if not scenes:
        raise ConfigError("visual loss terms need scene data")
    for _, kind, _ in vis_terms:
        if kind == "L":
            if features is None:
                raise ConfigError("the appearance baseline needs patch features")
            continue
        if kind.is_spatial:
            if kind.base != BASE_O:
                raise ConfigError(
                    "spatial fusion requires the O base: patch features carry "
                    "no geometry"
                )
            for sc in scenes:
                for inst in sc.instances:
                    if inst.bbox is None:
                        raise ConfigError(
                            f"scene {sc.image_id} has instances without bounding "
                            "boxes; spatial models reject such data"
                        )
        if kind.base == BASE_O:
            for sc in scenes:
                for inst in sc.instances:
                    if store.obj_rows[inst.word] < 0:
                        raise ConfigError(
                            f"word id {inst.word} has no object table row"
                        )
        if kind.uses_patches and features is None:
            raise ConfigError(f"model {format_term(kind)} needs patch features")


def _build_object_table(scenes, store) -> UnigramTable:
    counts = np.zeros(store.obj_vocab_size, dtype=np.int64)
    for sc in scenes:
        for inst in sc.instances:
            counts[store.obj_rows[inst.word]] += 1
    if counts.sum() == 0:
        raise ConfigError("no object occurrences to sample negatives from")
    return UnigramTable(counts)


def _build_pools(features):
    patch_entries, full_entries = [], []
    for (image_id, _, kind, _), vec in features.entries.items():
        if kind == KIND_PATCH:
            patch_entries.append((image_id, vec))
        else:
            full_entries.append((image_id, vec))
    pool_patch = FeaturePool(patch_entries) if patch_entries else None
    pool_full = FeaturePool(full_entries) if full_entries else None
    return pool_patch, pool_full


def _appearance_vector(features, image_id, source_index):
    vec = features.get(image_id, source_index, KIND_PATCH, 0)
    if vec is None:
        vec = features.get(image_id, source_index, KIND_FULL_MASKED, 0)
    return vec


def _build_visual_examples(vis_terms, scenes, features, store, rng, skipped):
    examples = []
    for ti, (name, kind, _) in enumerate(vis_terms):
        if kind == "L":
            for sc in scenes:
                for inst in sc.instances:
                    vec = _appearance_vector(features, sc.image_id, inst.source_index)
                    if vec is None:
                        skipped["missing_appearance"] = skipped.get("missing_appearance", 0) + 1
                        continue
                    examples.append(_VisExample(ti, inst.word, -1, None, vec, sc.image_id))
        elif kind.base == BASE_O:
            spatial_fn = None
            if kind.is_spatial:
                spatial_fn = delta_vec if kind.spatial == SPATIAL_DELTA else categorical_vec
            for sc in scenes:
                insts = sc.instances
                for i, inst in enumerate(insts):
                    for j, ctx in enumerate(insts):
                        if j == i:
                            continue
                        s = None
                        if spatial_fn is not None:
                            s = np.asarray(
                                spatial_fn(inst.bbox, ctx.bbox, sc.width, sc.height).values
                            )
                        examples.append(_VisExample(
                            ti, inst.word, int(store.obj_rows[ctx.word]), s, None,
                            sc.image_id,
                        ))
        else:
            patch_kind = KIND_PATCH if kind.base == BASE_P else KIND_FULL_MASKED
            for sc in scenes:
                for inst in sc.instances:
                    ords = features.ordinals(sc.image_id, inst.source_index, patch_kind)
                    if not ords:
                        skipped["missing_feature"] = skipped.get("missing_feature", 0) + 1
                        continue
                    o = ords[int(rng.integers(len(ords)))]
                    vec = features.get(sc.image_id, inst.source_index, patch_kind, o)
                    examples.append(_VisExample(ti, inst.word, -1, None, vec, sc.image_id))
    if examples:
        order = rng.permutation(len(examples))
        examples = [examples[i] for i in order]
    return examples


def _epoch_text_pairs(corpus: Corpus, window: int, keep_p, pair_rng, shuffle_rng):
    targets, contexts = [], []
    for sent in corpus.sentences:
        ids = sent
        if keep_p is not None:
            ids = subsample(ids, keep_p, pair_rng)
        for t, c in stream_pairs(ids, window, pair_rng):
            targets.append(t)
            contexts.append(c)
    if not targets:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)
    perm = shuffle_rng.permutation(len(targets))
    return targets[perm], contexts[perm]


def _check_finite(store, grads: GradientBatch):
    if not grads.all_finite():
        raise FloatingPointError("non-finite gradient")
    mats = store.matrices()
    for (name, row) in grads.rows:
        if not np.all(np.isfinite(mats[name][row])):
            raise FloatingPointError(f"non-finite values in {name}[{row}]")
    for name in grads.dense:
        if not np.all(np.isfinite(mats[name])):
            raise FloatingPointError(f"non-finite values in {name}")


class _EpochRunner:
    """Executes one epoch's batch sequence against the store."""

    def __init__(self, config, store, vis_terms, text_table, obj_table,
                 pool_patch, pool_full, weight_decay):
        self.cfg = config
        self.store = store
        self.vis_terms = vis_terms
        self.text_table = text_table
        self.obj_table = obj_table
        self.pool_patch = pool_patch
        self.pool_full = pool_full
        self.weight_decay = weight_decay
        self.loss_sums: dict = {}
        self.loss_counts: dict = {}

    def _record(self, name, loss):
        self.loss_sums[name] = self.loss_sums.get(name, 0.0) + loss
        self.loss_counts[name] = self.loss_counts.get(name, 0) + 1

    def text_batch(self, t_ids, c_ids, rng):
        cfg = self.cfg
        acc = GradientBatch()
        for t, c in zip(t_ids, c_ids):
            negs = self.text_table.sample_excluding(cfg.negatives, int(c), rng)
            loss, g = text_loss_grad(TextPair(int(t), int(c)), negs, self.store)
            acc.merge(g)
            self._record("text", loss)
        apply_update(self.store, acc, cfg.learning_rate)
        if cfg.debug_checks:
            _check_finite(self.store, acc)

    def visual_batch(self, examples, rng):
        cfg = self.cfg
        acc = GradientBatch()
        for ex in examples:
            name, kind, scale = self.vis_terms[ex.term]
            if kind == "L":
                pool = self.pool_patch or self.pool_full
                negs = pool.sample(cfg.negatives, rng, exclude_image=ex.image_id)
                loss, g = baseline_loss_grad(
                    ex.entity, ex.feature, np.asarray(negs, dtype=np.float64),
                    self.store, cfg.gamma,
                )
            elif kind.base == BASE_O:
                ctx = VisualContext(row=ex.row, s=ex.s)
                neg_rows = self.obj_table.sample_excluding(cfg.negatives, ex.row, rng)
                neg_ctx = [VisualContext(row=int(r), s=ex.s) for r in neg_rows]
                loss, g = visual_loss_grad(ex.entity, [ctx], [neg_ctx], kind, self.store)
            else:
                pool = self.pool_patch if kind.base == BASE_P else self.pool_full
                ctx = VisualContext(feature=ex.feature)
                negs = pool.sample(cfg.negatives, rng, exclude_image=ex.image_id)
                neg_ctx = [VisualContext(feature=v) for v in negs]
                loss, g = visual_loss_grad(ex.entity, [ctx], [neg_ctx], kind, self.store)
            acc.merge(g, scale)
            self._record(name, loss)
        apply_update(self.store, acc, cfg.learning_rate, self.weight_decay)
        if cfg.debug_checks:
            _check_finite(self.store, acc)


def train(config: TrainConfig, corpus: Corpus, scenes, features, store):
    """Run SGD over the configured loss terms; returns (store, TrainReport)."""
    model = config.model
    model.validate()
    model.alpha = config.alpha
    vis_terms = _active_visual_terms(model)
    if not model.text_on and not vis_terms:
        raise ConfigError("no active loss term (alpha/weights all zero?)")
    _validate_compat(vis_terms, scenes, features, store)

    text_table = UnigramTable(corpus.vocab.count_array()) if model.text_on else None
    need_obj = any(k != "L" and k.base == BASE_O for _, k, _ in vis_terms)
    obj_table = _build_object_table(scenes, store) if need_obj else None
    pool_patch = pool_full = None
    if any(k == "L" or k.uses_patches for _, k, _ in vis_terms):
        pool_patch, pool_full = _build_pools(features)
        for _, kind, _ in vis_terms:
            if kind != "L" and kind.base == BASE_P and pool_patch is None:
                raise ConfigError("model P needs patch-kind features")
            if kind != "L" and kind.uses_patches and kind.base != BASE_P and pool_full is None:
                raise ConfigError("model P_full needs full_masked features")
        if pool_patch is None and pool_full is None:
            raise ConfigError("feature file holds no usable entries")

    weight_decay = {}
    if any(k != "L" and k.uses_patches for _, k, _ in vis_terms):
        weight_decay["N"] = config.lambda_
    if any(k != "L" and k.fusion == FUSION_CONCAT for _, k, _ in vis_terms):
        weight_decay["M_concat"] = config.mu
    if any(k != "L" and k.fusion == FUSION_BILINEAR for _, k, _ in vis_terms):
        weight_decay["M_bilin"] = config.mu

    keep_p = None
    if config.subsample > 0 and model.text_on:
        keep_p = keep_probabilities(corpus.vocab.count_array(), config.subsample)

    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        runner = _EpochRunner(
            config, store, vis_terms, text_table, obj_table,
            pool_patch, pool_full, weight_decay,
        )
        t_ids = c_ids = np.empty(0, dtype=np.int64)
        if model.text_on:
            t_ids, c_ids = _epoch_text_pairs(
                corpus, config.window, keep_p,
                _rng(config.seed, "text_pairs", epoch),
                _rng(config.seed, "text_shuffle", epoch),
            )
        examples = []
        if vis_terms:
            examples = _build_visual_examples(
                vis_terms, scenes, features, store,
                _rng(config.seed, "visual_build", epoch), report.skipped,
            )
        batches = schedule(len(t_ids), len(examples), config.batch_size, config.seed)
        if config.deterministic:
            text_rng = _rng(config.seed, "text_negs", epoch)
            vis_rng = _rng(config.seed, "visual_negs", epoch)
            for stream, lo, hi in batches:
                if stream == "text":
                    runner.text_batch(t_ids[lo:hi], c_ids[lo:hi], text_rng)
                else:
                    runner.visual_batch(examples[lo:hi], vis_rng)
        else:
            def run_batch(item):
                bi, (stream, lo, hi) = item
                rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, 99, epoch, bi])
                )
                if stream == "text":
                    runner.text_batch(t_ids[lo:hi], c_ids[lo:hi], rng)
                else:
                    runner.visual_batch(examples[lo:hi], rng)

            with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
                list(pool.map(run_batch, enumerate(batches)))

        for stream, _, _ in batches:
            report.batch_counts[stream] = report.batch_counts.get(stream, 0) + 1
        epoch_means = {
            name: runner.loss_sums[name] / runner.loss_counts[name]
            for name in runner.loss_sums
        }
        report.epoch_losses.append(epoch_means)
        for name, n in runner.loss_counts.items():
            report.update_counts[name] = report.update_counts.get(name, 0) + n
        logger.info(
            "epoch %d/%d: %s", epoch + 1, config.epochs,
            " ".join(f"{k}={v:.4f}" for k, v in sorted(epoch_means.items())),
        )
    report.wall_time = time.perf_counter() - start
    return store, report
