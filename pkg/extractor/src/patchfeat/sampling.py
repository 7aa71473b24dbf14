"""Geometric sampling of context patches around an entity box.

Patch centers fall in a ring of 0.5 to 1.5 entity radii (half the box
diagonal) around the entity center; patch sides are the entity sides scaled
by a factor drawn from the configured range.  Candidates overlapping the
entity box or leaving the image are rejected and redrawn; an entity can
yield fewer patches than requested when no room exists (e.g. a box covering
the whole image).
"""

from __future__ import annotations

import math


def _overlaps(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def sample_patches(entity_box, img_w, img_h, count, scale_range, rng,
                   max_tries: int = 200) -> list:
    x, y, w, h = entity_box
    cx, cy = x + w / 2.0, y + h / 2.0
    radius = 0.5 * math.hypot(w, h)
    lo, hi = scale_range
    patches = []
    for _ in range(count):
        for _ in range(max_tries):
            scale = rng.uniform(lo, hi)
            pw, ph = scale * w, scale * h
            dist = rng.uniform(0.5, 1.5) * radius
            angle = rng.uniform(0.0, 2.0 * math.pi)
            pcx = cx + dist * math.cos(angle)
            pcy = cy + dist * math.sin(angle)
            px, py = pcx - pw / 2.0, pcy - ph / 2.0
            if px < 0 or py < 0 or px + pw > img_w or py + ph > img_h:
                continue
            if _overlaps((px, py, pw, ph), entity_box):
                continue
            patches.append((px, py, pw, ph))
            break
    return patches
