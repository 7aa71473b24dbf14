import json
from fractions import Fraction

import numpy as np
import pytest

from ctxvec import params, synthworld, trainer
from ctxvec.errors import ConfigError
from ctxvec.modelspec import parse_model
from ctxvec.objectives import GradientBatch
from ctxvec.scenegraph import load_patch_features, load_scenes
from ctxvec.textcorpus import build_vocab, load_corpus
from ctxvec.trainer import (
    TrainConfig,
    apply_config_mapping,
    apply_update,
    read_config_file,
    schedule,
    train,
)


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    spec = synthworld.WorldSpec(
        n_categories=3, words_per_category=5, scenes=120, objects_per_scene=3,
        affinity=0.9, sentences=120, seed=42,
    )
    out = tmp_path_factory.mktemp("world")
    gen = synthworld.generate(spec, out)
    corpus = load_corpus(gen.corpus_path)
    scenes = load_scenes(gen.scenes_path, corpus.vocab)
    feats = load_patch_features(gen.features_path)
    return gen, corpus, scenes, feats


def _store_for(corpus, scenes, d=12, feature_dim=64, seed=5):
    obj_words = np.array(
        sorted({i.word for s in scenes for i in s.instances}), dtype=np.int32
    )
    return params.init(len(corpus.vocab), len(obj_words), d, feature_dim,
                       params.InitSpec(seed=seed), obj_words=obj_words)


def _cfg(model, **kw):
    kw.setdefault("d", 12)
    kw.setdefault("epochs", 2)
    kw.setdefault("seed", 7)
    kw.setdefault("learning_rate", 1e-2)
    return TrainConfig(model=parse_model(model).to_weights(), **kw)


# ---------------------------------------------------------------------------
# config


def test_default_hyperparameters():
    cfg = TrainConfig()
    assert cfg.negatives == 5
    assert cfg.learning_rate == 1e-3
    assert cfg.batch_size == 64
    assert cfg.lambda_ == 0.1
    assert cfg.mu == 0.1
    assert cfg.gamma == 0.5
    assert cfg.alpha == 0.2
    assert cfg.window == 5 and cfg.d == 100 and cfg.deterministic


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "train.cfg"
    p.write_text(
        "# comment\n"
        "d = 16\nwindow=3\nnegatives = 7\nlearning_rate = 0.005\n"
        "batch_size=32\nalpha=0.4\nlambda=0.2\nmu = 0.3\ngamma=0.6\n"
        "epochs=4\nseed=99\ndeterministic=false\nmodel=O+T\n"
    )
    cfg = apply_config_mapping(TrainConfig(), read_config_file(p))
    assert cfg.d == 16 and cfg.window == 3 and cfg.negatives == 7
    assert cfg.learning_rate == 0.005 and cfg.batch_size == 32
    assert cfg.alpha == 0.4 and cfg.lambda_ == 0.2 and cfg.mu == 0.3
    assert cfg.gamma == 0.6 and cfg.epochs == 4 and cfg.seed == 99
    assert cfg.deterministic is False
    assert cfg.model.text_on and len(cfg.model.visual) == 1
    dump = cfg.to_dict()
    assert dump["model"] == "O+T" and dump["lambda"] == 0.2


def test_config_file_unknown_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("nonsense = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(p)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)


# ---------------------------------------------------------------------------
# schedule


def test_schedule_visual_only():
    batches = schedule(0, 100, 64)
    assert [b[0] for b in batches] == ["visual", "visual"]
    assert batches[0][1:] == (0, 64) and batches[1][1:] == (64, 100)


def test_schedule_strict_alternation():
    batches = schedule(640, 640, 64)
    assert len(batches) == 20
    assert [b[0] for b in batches] == ["text", "visual"] * 10


def _reference_schedule(text_count, visual_count, batch):
    # exact-rational reimplementation of the proportional merge
    events = []
    for stream, rank, count in (("text", 0, text_count), ("visual", 1, visual_count)):
        if count == 0:
            continue
        n = -(-count // batch)
        for i in range(n):
            events.append((Fraction(2 * i + 1, 2 * n), rank, stream))
    events.sort(key=lambda e: (e[0], e[1]))
    return [e[2] for e in events]


def test_schedule_matches_rational_reference():
    for t, v in [(1000, 100), (100, 1000), (65, 640), (640, 65), (7, 7)]:
        got = [b[0] for b in schedule(t, v, 64)]
        assert got == _reference_schedule(t, v, 64)


def test_schedule_slices_partition_streams():
    rng = np.random.default_rng(8)
    for _ in range(30):
        t, v, b = int(rng.integers(0, 500)), int(rng.integers(0, 500)), int(rng.integers(1, 100))
        batches = schedule(t, v, b)
        for stream, count in (("text", t), ("visual", v)):
            spans = [(lo, hi) for s, lo, hi in batches if s == stream]
            assert spans == [
                (i * b, min(i * b + b, count)) for i in range(-(-count // b))
            ]


# ---------------------------------------------------------------------------
# optimizer step


def test_weight_decay_exact():
    st = params.init(4, 2, 3, 5, params.InitSpec(seed=1))
    lr, lam, mu = 1e-3, 0.1, 0.2
    n_before = st.N.copy()
    mc_before = st.M_concat.copy()
    apply_update(st, GradientBatch(), lr, {"N": lam, "M_concat": mu})
    assert np.array_equal(st.N, n_before * (1.0 - lr * lam))
    assert np.array_equal(st.M_concat, mc_before * (1.0 - lr * mu))
    assert np.array_equal(st.M_bilin, params.init(4, 2, 3, 5, params.InitSpec(seed=1)).M_bilin)


def test_apply_update_rows_and_dense():
    st = params.init(4, 2, 3, 5, params.InitSpec(seed=2))
    g = GradientBatch()
    g.add_row("T", 1, np.ones(3))
    g.add_dense("N", np.ones((3, 5)))
    t_before, n_before = st.T.copy(), st.N.copy()
    apply_update(st, g, 0.5)
    assert np.array_equal(st.T[1], t_before[1] - 0.5)
    assert np.array_equal(st.T[0], t_before[0])
    assert np.array_equal(st.N, n_before - 0.5)


# ---------------------------------------------------------------------------
# training behaviour


def test_text_loss_decreases(world):
    _, corpus, scenes, feats = world
    cfg = _cfg("T", epochs=2)
    store = _store_for(corpus, scenes)
    _, report = train(cfg, corpus, [], None, store)
    assert report.epoch_losses[1]["text"] < report.epoch_losses[0]["text"]


def test_alpha_zero_matches_text_only(world):
    _, corpus, scenes, feats = world
    store_a = _store_for(corpus, scenes)
    init_copy = store_a.copy()
    cfg_a = _cfg("O+T", alpha=0.0)
    _, rep_a = train(cfg_a, corpus, scenes, feats, store_a)
    store_b = _store_for(corpus, scenes)
    cfg_b = _cfg("T")
    train(cfg_b, corpus, [], None, store_b)
    assert np.array_equal(store_a.T, store_b.T)
    assert np.array_equal(store_a.U, store_b.U)
    # visual parameters untouched at zero weight
    assert np.array_equal(store_a.V, init_copy.V)
    assert np.array_equal(store_a.N, init_copy.N)
    assert np.array_equal(store_a.M_concat, init_copy.M_concat)
    assert np.array_equal(store_a.M_bilin, init_copy.M_bilin)
    assert "O" not in rep_a.update_counts


def test_deterministic_mode_bit_identical(world):
    _, corpus, scenes, feats = world
    stores = []
    for _ in range(2):
        store = _store_for(corpus, scenes)
        cfg = _cfg("Sp(O,δ,b)+T", epochs=2)
        train(cfg, corpus, scenes, feats, store)
        stores.append(store)
    a, b = stores
    for (name, ma), (_, mb) in zip(a.matrices().items(), b.matrices().items()):
        assert np.array_equal(ma, mb), name


def test_joint_training_learns_structure(world):
    gen, corpus, scenes, feats = world
    store = _store_for(corpus, scenes, d=16)
    cfg = _cfg("O+T", epochs=6, alpha=1.0)
    train(cfg, corpus, scenes, feats, store)
    gold = gen.gold
    words = list(gold.categories)
    T = np.stack([store.T[corpus.vocab.id(w)] for w in words])
    T /= np.linalg.norm(T, axis=1, keepdims=True)
    cos = T @ T.T
    cats = np.array([gold.categories[w] for w in words])
    same = cats[:, None] == cats[None, :]
    off = ~np.eye(len(words), dtype=bool)
    assert cos[same & off].mean() > cos[~same].mean()


def test_visual_params_move_only_for_their_kind(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    before_n = store.N.copy()
    cfg = _cfg("O")
    train(cfg, corpus, scenes, feats, store)
    assert np.array_equal(store.N, before_n)  # O never touches the projection
    assert not np.array_equal(store.V, _store_for(corpus, scenes).V)


def test_weight_decay_applies_during_projection_training(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    cfg = _cfg("P", epochs=1, lambda_=0.5)
    _, report = train(cfg, corpus, scenes, feats, store)
    assert report.update_counts["P"] > 0


def test_config_error_spatial_without_boxes(tmp_path, world):
    _, corpus, _, feats = world
    path = tmp_path / "nobox.jsonl"
    w0, w1 = corpus.vocab.words[0], corpus.vocab.words[1]
    path.write_text(json.dumps({
        "image_id": "x", "width": 10, "height": 10,
        "objects": [{"word": w0}, {"word": w1}],
    }) + "\n")
    scenes = load_scenes(path, corpus.vocab)
    store = _store_for(corpus, scenes)
    init_copy = store.copy()
    cfg = _cfg("Sp(O,c,⊕)")
    with pytest.raises(ConfigError):
        train(cfg, corpus, scenes, None, store)
    assert store.allclose(init_copy)  # failed before any update


def test_config_error_patches_without_features(world):
    _, corpus, scenes, _ = world
    store = _store_for(corpus, scenes)
    with pytest.raises(ConfigError):
        train(_cfg("P"), corpus, scenes, None, store)


def test_config_error_spatial_patch_base(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    with pytest.raises(ConfigError):
        train(_cfg("Sp(P,δ,⊕)"), corpus, scenes, feats, store)


def test_config_error_no_scenes_for_visual(world):
    _, corpus, _, feats = world
    store = params.init(len(corpus.vocab), 0, 12, 64, params.InitSpec(seed=1))
    with pytest.raises(ConfigError):
        train(_cfg("O"), corpus, [], feats, store)


def test_parallel_mode_runs(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    cfg = _cfg("O+T", epochs=1, deterministic=False, workers=3)
    _, report = train(cfg, corpus, scenes, feats, store)
    for m in store.matrices().values():
        assert np.all(np.isfinite(m))
    assert report.update_counts["text"] > 0


def test_two_phase_recipe(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    train(_cfg("T", epochs=2), corpus, [], None, store)
    snapshot = store.T.copy()
    train(_cfg("O+T", epochs=1, seed=11), corpus, scenes, feats, store)
    assert not np.array_equal(store.T, snapshot)


def test_report_contents(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    cfg = _cfg("L+O+T", epochs=2)
    _, report = train(cfg, corpus, scenes, feats, store)
    assert len(report.epoch_losses) == 2
    for epoch in report.epoch_losses:
        assert set(epoch) == {"text", "O", "L"}
        assert all(np.isfinite(v) for v in epoch.values())
    assert report.wall_time > 0
    assert report.batch_counts["text"] > 0 and report.batch_counts["visual"] > 0


def test_debug_checks_pass(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    train(_cfg("O+T", epochs=1, debug_checks=True), corpus, scenes, feats, store)


def test_subsampling_reduces_pairs(world):
    _, corpus, scenes, feats = world
    store = _store_for(corpus, scenes)
    _, rep_off = train(_cfg("T", epochs=1), corpus, [], None, store)
    store2 = _store_for(corpus, scenes)
    _, rep_on = train(_cfg("T", epochs=1, subsample=1e-3), corpus, [], None, store2)
    assert rep_on.update_counts["text"] < rep_off.update_counts["text"]
