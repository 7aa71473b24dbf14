"""PFV1 binary feature file writer.

Layout: magic "PFV1", u32 feature dim B, u64 entry count; per entry
u16 image-id byte length, image-id bytes, u32 instance index, u8 kind tag
(0 = full_masked, 1 = patch), u32 patch ordinal, B little-endian f32 values.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PFV1"
TAG_FULL_MASKED = 0
TAG_PATCH = 1


class PfvWriter:
    def __init__(self, path, feature_dim: int):
        self.path = path
        self.feature_dim = int(feature_dim)
        self.records = []  # (image_id, instance, tag, ordinal, vector)

    def add(self, image_id: str, instance: int, tag: int, ordinal: int, vec) -> None:
        vec = np.asarray(vec, dtype="<f4")
        if vec.shape != (self.feature_dim,):
            raise ValueError(
                f"vector shape {vec.shape} != ({self.feature_dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError("non-finite feature values")
        self.records.append((image_id, int(instance), int(tag), int(ordinal), vec))

    def write(self) -> int:
        with open(self.path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", self.feature_dim))
            fh.write(struct.pack("<Q", len(self.records)))
            for image_id, instance, tag, ordinal, vec in self.records:
                raw = image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<IBI", instance, tag, ordinal))
                fh.write(vec.tobytes())
        return len(self.records)
