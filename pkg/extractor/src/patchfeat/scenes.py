"""Standalone reader for the scene JSON-lines format.

One scene per line:

    {"image_id": str, "width": int, "height": int,
     "objects": [{"word": str, "bbox": [x, y, w, h]}, ...]}

The extractor keys feature records by the object's position in the raw
"objects" array, so downstream loaders that drop objects keep valid keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class SceneObject:
    index: int
    word: str
    bbox: tuple | None  # (x, y, w, h) in pixels


@dataclass(frozen=True)
class Scene:
    image_id: str
    width: float
    height: float
    objects: tuple


class SceneFormatError(ValueError):
    pass


def read_scenes(path) -> list:
    scenes = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                objects = []
                for k, obj in enumerate(rec["objects"]):
                    bbox = obj.get("bbox")
                    if bbox is not None:
                        bbox = tuple(float(v) for v in bbox)
                        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
                            raise ValueError("bad bbox")
                    objects.append(SceneObject(k, obj["word"], bbox))
                scenes.append(Scene(
                    rec["image_id"], float(rec["width"]), float(rec["height"]),
                    tuple(objects),
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise SceneFormatError(f"{path}: line {lineno}: {e}")
    if not scenes:
        raise SceneFormatError(f"{path}: no scenes")
    return scenes
