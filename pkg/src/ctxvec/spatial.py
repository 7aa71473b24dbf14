"""4-d spatial descriptors of the relation between an entity box and a context box.

Two variants:

* delta: (dx, dy, dw, dh) with dx = (cx_c - cx_e)/img_w, dy = (cy_c - cy_e)/img_h
  (y grows downward, so dy > 0 means the context sits below the entity) and
  dw = w_c/w_e, dh = h_c/h_e as raw ratios.
* categorical: indicator vector (below, beside, above, bigger).  The context is
  "below" its entity if |dx| <= dy, "above" if |dx| <= -dy, "beside" otherwise;
  it is "bigger" if dw * dh >= 1.  The only overlap of the first two rules is
  dx = dy = 0, which classifies as "below".

Normalizing dx by image width and dy by image height makes both variants
invariant under a common rescaling of image and boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .scenegraph import BBox

VARIANT_DELTA = "delta"
VARIANT_CATEGORICAL = "categorical"


@dataclass(frozen=True)
class SpatialVec:
    values: tuple
    variant: str


def delta_vec(e: BBox, c: BBox, img_w: float, img_h: float) -> SpatialVec:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be > 0")
    dx = (c.cx - e.cx) / img_w
    dy = (c.cy - e.cy) / img_h
    dw = c.w / e.w
    dh = c.h / e.h
    return SpatialVec((dx, dy, dw, dh), VARIANT_DELTA)


def categorical_vec(e: BBox, c: BBox, img_w: float, img_h: float) -> SpatialVec:
    dx, dy, dw, dh = delta_vec(e, c, img_w, img_h).values
    if abs(dx) <= dy:
        below, beside, above = 1.0, 0.0, 0.0
    elif abs(dx) <= -dy:
        below, beside, above = 0.0, 0.0, 1.0
    else:
        below, beside, above = 0.0, 1.0, 0.0
    bigger = 1.0 if dw * dh >= 1.0 else 0.0
    return SpatialVec((below, beside, above, bigger), VARIANT_CATEGORICAL)
