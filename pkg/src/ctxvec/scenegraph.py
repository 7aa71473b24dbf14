"""Visual training data: scenes of localized entity instances and patch features.

Scene files are JSON lines, one scene per line:

    {"image_id": str, "width": int, "height": int,
     "objects": [{"word": str, "bbox": [x, y, w, h]}, ...]}

"bbox" is optional per object (datasets without localization).  Patch feature
files are binary (PFV1): magic "PFV1", u32 feature dim B, u64 entry count,
then per entry u16 image-id length, image-id bytes, u32 instance index,
u8 kind tag (0 = full_masked, 1 = patch), u32 patch ordinal, B little-endian
f32 values.  Instance indices refer to positions in the scene file's
"objects" array, so feature files stay valid when loaders drop
out-of-vocabulary objects.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, FormatError, ParseError
from .textcorpus import Vocabulary

logger = logging.getLogger(__name__)

PFV_MAGIC = b"PFV1"
KIND_FULL_MASKED = "full_masked"
KIND_PATCH = "patch"
_KIND_TAGS = {KIND_FULL_MASKED: 0, KIND_PATCH: 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixels; y grows downward."""

    x: float
    y: float
    w: float
    h: float

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0


@dataclass(frozen=True)
class EntityInstance:
    word: int                 # vocabulary id
    bbox: BBox | None = None
    source_index: int = 0     # position in the scene file's objects array


@dataclass(frozen=True)
class SceneRecord:
    image_id: str
    width: float
    height: float
    instances: tuple


def object_contexts(scene: SceneRecord, i: int) -> list:
    """All other instance indices of the scene; duplicates of a word count."""
    if not 0 <= i < len(scene.instances):
        raise IndexError(f"instance index {i} out of range")
    return [j for j in range(len(scene.instances)) if j != i]


def _parse_bbox(raw, width, height):
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValueError("bbox must be [x, y, w, h]")
    x, y, w, h = (float(v) for v in raw)
    if w <= 0 or h <= 0:
        raise ValueError("bbox width/height must be > 0")
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValueError("bbox outside image bounds")
    return BBox(x, y, w, h)


def load_scenes(path, vocab: Vocabulary) -> list:
    """Parse a scene file, dropping out-of-vocabulary objects.

    Scenes left with no instance are dropped too; both drops are counted and
    logged.  Malformed records raise ParseError with the line number, an
    entirely unusable file raises EmptyDataset.
    """
    path = Path(path)
    scenes = []
    dropped_instances = 0
    dropped_scenes = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", path=path, line=lineno)
            try:
                image_id = rec["image_id"]
                width = float(rec["width"])
                height = float(rec["height"])
                objects = rec["objects"]
                if not isinstance(image_id, str):
                    raise ValueError("image_id must be a string")
                if width <= 0 or height <= 0:
                    raise ValueError("width/height must be > 0")
                if not isinstance(objects, list) or not objects:
                    raise ValueError("objects must be a non-empty list")
                instances = []
                for k, obj in enumerate(objects):
                    word = obj["word"]
                    bbox = None
                    if "bbox" in obj and obj["bbox"] is not None:
                        bbox = _parse_bbox(obj["bbox"], width, height)
                    if word not in vocab:
                        dropped_instances += 1
                        continue
                    instances.append(
                        EntityInstance(vocab.id(word), bbox, source_index=k)
                    )
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(str(e), path=path, line=lineno)
            if not instances:
                dropped_scenes += 1
                continue
            scenes.append(SceneRecord(image_id, width, height, tuple(instances)))
    if dropped_instances or dropped_scenes:
        logger.warning(
            "%s: dropped %d out-of-vocabulary instances, %d empty scenes",
            path, dropped_instances, dropped_scenes,
        )
    if not scenes:
        raise EmptyDataset(f"{path}: no usable scene")
    return scenes


class PatchFeatureSet:
    """Precomputed activation vectors keyed by (image_id, instance, kind, ordinal)."""

    def __init__(self, feature_dim: int):
        self.feature_dim = int(feature_dim)
        self.entries: dict = {}

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, image_id: str, instance: int, kind: str, ordinal: int, vec) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (self.feature_dim,):
            raise FormatError(
                f"feature vector has shape {vec.shape}, expected ({self.feature_dim},)"
            )
        if kind not in _KIND_TAGS:
            raise ValueError(f"unknown kind {kind!r}")
        self.entries[(image_id, int(instance), kind, int(ordinal))] = vec

    def get(self, image_id: str, instance: int, kind: str, ordinal: int = 0):
        return self.entries.get((image_id, int(instance), kind, int(ordinal)))

    def ordinals(self, image_id: str, instance: int, kind: str) -> list:
        key = (image_id, int(instance), kind)
        return sorted(o for (img, idx, k, o) in self.entries if (img, idx, k) == key)


def save_patch_features(features: PatchFeatureSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(PFV_MAGIC)
        fh.write(struct.pack("<I", features.feature_dim))
        fh.write(struct.pack("<Q", len(features.entries)))
        for (image_id, instance, kind, ordinal), vec in features.entries.items():
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<IBI", instance, _KIND_TAGS[kind], ordinal))
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def load_patch_features(path) -> PatchFeatureSet:
    """Read a PFV1 file; truncation, trailing bytes or non-finite values fail."""
    path = Path(path)
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != PFV_MAGIC:
        raise FormatError(f"{path}: not a PFV1 file")
    (dim,) = struct.unpack_from("<I", data, 4)
    (count,) = struct.unpack_from("<Q", data, 8)
    if dim < 1:
        raise FormatError(f"{path}: feature dim must be >= 1")
    fs = PatchFeatureSet(dim)
    off = 16
    vec_bytes = 4 * dim
    for _ in range(count):
        try:
            (id_len,) = struct.unpack_from("<H", data, off)
            off += 2
            image_id = data[off : off + id_len].decode("utf-8")
            if len(data) < off + id_len:
                raise struct.error("truncated id")
            off += id_len
            instance, tag, ordinal = struct.unpack_from("<IBI", data, off)
            off += 9
            if len(data) < off + vec_bytes:
                raise struct.error("truncated vector")
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
            off += vec_bytes
        except (struct.error, UnicodeDecodeError) as e:
            raise FormatError(f"{path}: corrupt entry ({e})")
        if tag not in _TAG_KINDS:
            raise FormatError(f"{path}: unknown kind tag {tag}")
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"{path}: non-finite feature values")
        fs.entries[(image_id, instance, _TAG_KINDS[tag], ordinal)] = vec
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    if len(fs.entries) != count:
        raise FormatError(f"{path}: duplicate entry keys")
    return fs
