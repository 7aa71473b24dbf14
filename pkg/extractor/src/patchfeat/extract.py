"""Extraction job runner.

For every localized object in every scene the tool emits, per requested
kind:

* full_masked: the full image with the entity's pixels replaced by zeros,
  forwarded through the frozen network and grid-pooled to one vector;
* patch: each sampled context patch (ring around the entity, never
  overlapping it) cropped from the original image, forwarded and pooled.

Records are written in the PFV1 binary layout, keyed by the object's index
in the scene file.  Extraction is deterministic given (job, seed, weights):
patch geometry comes from a per-scene seeded generator, so skipped images
do not shift later scenes' draws.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .pfv import PfvWriter, TAG_FULL_MASKED, TAG_PATCH
from .sampling import sample_patches
from .scenes import read_scenes

logger = logging.getLogger(__name__)

KIND_PATCH = "patch"
KIND_FULL_MASKED = "full_masked"


@dataclass
class ExtractionJob:
    scenes_path: str
    images_dir: str
    out_path: str
    kinds: tuple = (KIND_PATCH, KIND_FULL_MASKED)
    patches_per_entity: int = 3
    scale_min: float = 0.5
    scale_max: float = 1.0
    seed: int = 0
    image_ext: str = ".png"
    image_size: int = 598
    layer: str = "Mixed_7c"
    weights_path: str | None = None

    def validate(self) -> None:
        if not self.kinds or not set(self.kinds) <= {KIND_PATCH, KIND_FULL_MASKED}:
            raise ValueError(f"kinds must be a subset of {{patch, full_masked}}")
        if self.patches_per_entity < 1:
            raise ValueError("patches_per_entity must be >= 1")
        if not 0.0 < self.scale_min <= self.scale_max <= 2.0:
            raise ValueError("scale range must satisfy 0 < min <= max <= 2")


@dataclass
class ExtractionSummary:
    out_path: str
    entries: int = 0
    scenes_total: int = 0
    scenes_skipped: int = 0
    objects_without_bbox: int = 0
    patch_shortfall: int = 0

    @property
    def skip_fraction(self) -> float:
        return self.scenes_skipped / self.scenes_total if self.scenes_total else 0.0


def _load_image(path: Path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _mask_entity(image: np.ndarray, bbox) -> np.ndarray:
    x, y, w, h = bbox
    out = image.copy()
    x0, y0 = max(0, int(round(x))), max(0, int(round(y)))
    x1 = min(image.shape[1], int(round(x + w)))
    y1 = min(image.shape[0], int(round(y + h)))
    out[y0:y1, x0:x1, :] = 0
    return out


def _crop(image: np.ndarray, box) -> np.ndarray:
    x, y, w, h = box
    x0, y0 = max(0, int(round(x))), max(0, int(round(y)))
    x1 = min(image.shape[1], max(x0 + 1, int(round(x + w))))
    y1 = min(image.shape[0], max(y0 + 1, int(round(y + h))))
    return image[y0:y1, x0:x1, :]


def extract(job: ExtractionJob, backbone=None) -> ExtractionSummary:
    job.validate()
    scenes = read_scenes(job.scenes_path)
    if backbone is None:
        from .backbone import InceptionBackbone

        backbone = InceptionBackbone(job.layer, job.image_size, job.weights_path)
    writer = PfvWriter(job.out_path, backbone.feature_dim)
    summary = ExtractionSummary(out_path=str(job.out_path), scenes_total=len(scenes))
    images_dir = Path(job.images_dir)
    for si, scene in enumerate(scenes):
        img_path = images_dir / f"{scene.image_id}{job.image_ext}"
        if not img_path.exists():
            logger.warning("missing image %s, scene skipped", img_path)
            summary.scenes_skipped += 1
            continue
        try:
            image = _load_image(img_path)
        except (OSError, UnidentifiedImageError) as e:
            logger.warning("unreadable image %s (%s), scene skipped", img_path, e)
            summary.scenes_skipped += 1
            continue
        img_h, img_w = image.shape[:2]
        rng = np.random.default_rng(np.random.SeedSequence([job.seed, si]))
        for obj in scene.objects:
            if obj.bbox is None:
                summary.objects_without_bbox += 1
                continue
            if KIND_FULL_MASKED in job.kinds:
                masked = _mask_entity(image, obj.bbox)
                writer.add(scene.image_id, obj.index, TAG_FULL_MASKED, 0,
                           backbone.features(masked))
                summary.entries += 1
            if KIND_PATCH in job.kinds:
                boxes = sample_patches(
                    obj.bbox, img_w, img_h, job.patches_per_entity,
                    (job.scale_min, job.scale_max), rng,
                )
                summary.patch_shortfall += job.patches_per_entity - len(boxes)
                for k, box in enumerate(boxes):
                    writer.add(scene.image_id, obj.index, TAG_PATCH, k,
                               backbone.features(_crop(image, box)))
                    summary.entries += 1
    writer.write()
    logger.info(
        "%s: %d entries from %d/%d scenes (%d objects without bbox, "
        "%d patches short)",
        job.out_path, summary.entries,
        summary.scenes_total - summary.scenes_skipped, summary.scenes_total,
        summary.objects_without_bbox, summary.patch_shortfall,
    )
    return summary
