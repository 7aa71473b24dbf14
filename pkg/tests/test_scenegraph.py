import json
import struct

import numpy as np
import pytest

from ctxvec.errors import EmptyDataset, FormatError, ParseError
from ctxvec.scenegraph import (
    BBox,
    EntityInstance,
    KIND_FULL_MASKED,
    KIND_PATCH,
    PatchFeatureSet,
    SceneRecord,
    load_patch_features,
    load_scenes,
    object_contexts,
    save_patch_features,
)
from ctxvec.textcorpus import build_vocab


@pytest.fixture
def vocab():
    return build_vocab(["apple", "tree", "cup", "apple", "tree", "cup"], min_count=1)


def _scene_line(**overrides):
    rec = {
        "image_id": "img1",
        "width": 100,
        "height": 100,
        "objects": [
            {"word": "apple", "bbox": [10, 10, 20, 20]},
            {"word": "tree", "bbox": [0, 0, 100, 100]},
        ],
    }
    rec.update(overrides)
    return json.dumps(rec)


def test_load_scene_basic(tmp_path, vocab):
    p = tmp_path / "s.jsonl"
    p.write_text(_scene_line() + "\n")
    scenes = load_scenes(p, vocab)
    assert len(scenes) == 1
    sc = scenes[0]
    assert sc.image_id == "img1" and sc.width == 100 and sc.height == 100
    assert len(sc.instances) == 2
    assert sc.instances[0].word == vocab.id("apple")
    assert sc.instances[0].bbox == BBox(10, 10, 20, 20)
    assert sc.instances[1].source_index == 1


def test_load_scene_drops_oov_keeps_scene(tmp_path, vocab):
    p = tmp_path / "s.jsonl"
    objs = [{"word": "apple", "bbox": [1, 1, 5, 5]}, {"word": "unknown"}]
    p.write_text(_scene_line(objects=objs) + "\n")
    scenes = load_scenes(p, vocab)
    assert len(scenes) == 1
    assert len(scenes[0].instances) == 1
    # original indices survive the drop
    assert scenes[0].instances[0].source_index == 0


def test_load_scene_all_oov_dropped_and_empty_dataset(tmp_path, vocab):
    p = tmp_path / "s.jsonl"
    p.write_text(_scene_line(objects=[{"word": "nope"}]) + "\n")
    with pytest.raises(EmptyDataset):
        load_scenes(p, vocab)


def test_load_scene_parse_error_carries_line(tmp_path, vocab):
    p = tmp_path / "s.jsonl"
    p.write_text(_scene_line() + "\n{bad json\n")
    with pytest.raises(ParseError) as ei:
        load_scenes(p, vocab)
    assert ei.value.line == 2


@pytest.mark.parametrize("bad", [
    {"objects": []},
    {"width": 0},
    {"objects": [{"word": "apple", "bbox": [0, 0, 0, 5]}]},      # w <= 0
    {"objects": [{"word": "apple", "bbox": [90, 90, 20, 20]}]},  # out of bounds
    {"objects": [{"word": "apple", "bbox": [1, 2, 3]}]},         # not 4 values
    {"objects": [{"notword": 1}]},                               # missing key
])
def test_load_scene_malformed_records(tmp_path, vocab, bad):
    p = tmp_path / "s.jsonl"
    p.write_text(_scene_line(**bad) + "\n")
    with pytest.raises(ParseError):
        load_scenes(p, vocab)


def test_load_scenes_preserves_order(tmp_path, vocab):
    p = tmp_path / "s.jsonl"
    lines = [_scene_line(image_id=f"im{i}") for i in range(5)]
    p.write_text("\n".join(lines) + "\n")
    scenes = load_scenes(p, vocab)
    assert [s.image_id for s in scenes] == [f"im{i}" for i in range(5)]


def test_object_contexts_basic():
    insts = tuple(EntityInstance(word=0, source_index=i) for i in range(3))
    sc = SceneRecord("x", 10, 10, insts)
    assert object_contexts(sc, 1) == [0, 2]
    one = SceneRecord("y", 10, 10, insts[:1])
    assert object_contexts(one, 0) == []


def test_object_contexts_large_scene():
    # rich-scene density: 31 object instances give each entity 30 contexts
    insts = tuple(EntityInstance(word=0, source_index=i) for i in range(31))
    sc = SceneRecord("big", 500, 500, insts)
    ctx = object_contexts(sc, 7)
    assert len(ctx) == 30 and 7 not in ctx


def test_object_contexts_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        sc = SceneRecord(
            "p", 10, 10,
            tuple(EntityInstance(word=0, source_index=i) for i in range(n)),
        )
        i = int(rng.integers(n))
        ctx = object_contexts(sc, i)
        assert len(ctx) == n - 1 and i not in ctx


def _random_feature_set(rng, dim=7, entries=9):
    fs = PatchFeatureSet(dim)
    for k in range(entries):
        kind = KIND_PATCH if k % 2 else KIND_FULL_MASKED
        fs.add(f"im{k % 3}", k % 4, kind, k % 2, rng.random(dim).astype(np.float32))
    return fs


def test_patch_features_roundtrip_bit_exact(tmp_path):
    fs = _random_feature_set(np.random.default_rng(2))
    p = tmp_path / "f.pfv"
    save_patch_features(fs, p)
    back = load_patch_features(p)
    assert back.feature_dim == fs.feature_dim
    assert set(back.entries) == set(fs.entries)
    for key, vec in fs.entries.items():
        assert np.array_equal(back.entries[key], vec)


def test_patch_features_empty_set_valid(tmp_path):
    p = tmp_path / "f.pfv"
    save_patch_features(PatchFeatureSet(16), p)
    back = load_patch_features(p)
    assert back.feature_dim == 16 and len(back) == 0


def test_patch_features_header_dim(tmp_path):
    fs = PatchFeatureSet(2048)
    rng = np.random.default_rng(0)
    fs.add("a", 0, KIND_PATCH, 0, rng.random(2048).astype(np.float32))
    fs.add("a", 1, KIND_FULL_MASKED, 0, rng.random(2048).astype(np.float32))
    p = tmp_path / "f.pfv"
    save_patch_features(fs, p)
    back = load_patch_features(p)
    assert back.feature_dim == 2048 and len(back) == 2


def test_patch_features_truncated(tmp_path):
    fs = _random_feature_set(np.random.default_rng(3))
    p = tmp_path / "f.pfv"
    save_patch_features(fs, p)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        load_patch_features(p)


def test_patch_features_trailing_bytes(tmp_path):
    fs = _random_feature_set(np.random.default_rng(4))
    p = tmp_path / "f.pfv"
    save_patch_features(fs, p)
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(FormatError):
        load_patch_features(p)


def test_patch_features_bad_magic(tmp_path):
    p = tmp_path / "f.pfv"
    p.write_bytes(b"NOPE" + struct.pack("<IQ", 4, 0))
    with pytest.raises(FormatError):
        load_patch_features(p)


def test_patch_features_rejects_nonfinite(tmp_path):
    fs = PatchFeatureSet(3)
    fs.entries[("a", 0, KIND_PATCH, 0)] = np.array(
        [1.0, np.inf, 0.0], dtype=np.float32
    )
    p = tmp_path / "f.pfv"
    save_patch_features(fs, p)
    with pytest.raises(FormatError):
        load_patch_features(p)


def test_patch_features_wrong_dim_add():
    fs = PatchFeatureSet(4)
    with pytest.raises(FormatError):
        fs.add("a", 0, KIND_PATCH, 0, np.zeros(5, dtype=np.float32))
