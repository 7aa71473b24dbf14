"""Command-line interface for the feature extractor.

Exit codes: 0 success, 1 usage error, 2 data error or more than 10% of
scenes skipped.  PATCHFEAT_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    p = _Parser(prog="patchfeat", description=__doc__)
    p.add_argument("--scenes", required=True, help="scene JSON-lines file")
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--out", required=True, help="output PFV1 feature file")
    p.add_argument("--kinds", default="patch,full_masked",
                   help="comma-separated subset of {patch,full_masked}")
    p.add_argument("--patches-per-entity", type=int, default=3)
    p.add_argument("--scale-min", type=float, default=0.5,
                   help="patch size as a fraction of the entity box, lower bound")
    p.add_argument("--scale-max", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-ext", default=".png")
    p.add_argument("--image-size", type=int, default=598,
                   help="network input side length")
    p.add_argument("--layer", default="Mixed_7c",
                   help="graph node whose activations are pooled")
    p.add_argument("--weights", help="local network weights file (state dict)")
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, os.environ.get("PATCHFEAT_LOG", "INFO").upper(),
                      logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    from .backbone import BackboneError
    from .extract import ExtractionJob, extract
    from .scenes import SceneFormatError

    job = ExtractionJob(
        scenes_path=args.scenes,
        images_dir=args.images,
        out_path=args.out,
        kinds=tuple(k.strip() for k in args.kinds.split(",") if k.strip()),
        patches_per_entity=args.patches_per_entity,
        scale_min=args.scale_min,
        scale_max=args.scale_max,
        seed=args.seed,
        image_ext=args.image_ext,
        image_size=args.image_size,
        layer=args.layer,
        weights_path=args.weights,
    )
    try:
        job.validate()
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        summary = extract(job)
    except (SceneFormatError, BackboneError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if summary.skip_fraction > 0.10:
        print(
            f"error: {summary.scenes_skipped}/{summary.scenes_total} scenes "
            "skipped (> 10%)", file=sys.stderr,
        )
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
