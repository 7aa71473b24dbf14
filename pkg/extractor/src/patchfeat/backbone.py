"""Frozen CNN wrapper producing pooled activation vectors.

The default network is torchvision's Inception-V3; activations are taken at
a configurable graph node (default Mixed_7c, a 2048-channel grid: 17x17 at
the 598px input size) and mean-pooled over the spatial grid to one vector.
Weights are loaded from a local file when given, otherwise torchvision's
pretrained weights are used (requires a populated download cache).  Images
are forwarded one at a time so results do not depend on batch composition.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from torchvision.models import inception_v3
from torchvision.models.feature_extraction import create_feature_extractor
from torchvision.transforms import functional as TF

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BackboneError(RuntimeError):
    pass


class InceptionBackbone:
    def __init__(self, layer: str = "Mixed_7c", image_size: int = 598,
                 weights_path=None):
        self.layer = layer
        self.image_size = int(image_size)
        torch.manual_seed(0)  # fixed init when no weights file is given
        model = inception_v3(weights=None, init_weights=True, aux_logits=True)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        else:
            try:
                from torchvision.models import Inception_V3_Weights

                pretrained = inception_v3(weights=Inception_V3_Weights.DEFAULT)
                model = pretrained
            except Exception as e:
                raise BackboneError(
                    "pretrained weights unavailable; pass a local weights file "
                    f"(--weights): {e}"
                )
        model.eval()
        try:
            import warnings

            with warnings.catch_warnings():
                # tracing an eval-mode graph is intentional here
                warnings.filterwarnings("ignore", message="NOTE: The nodes obtained")
                self._extractor = create_feature_extractor(
                    model, return_nodes={layer: "feat"}
                )
        except ValueError as e:
            raise BackboneError(f"unknown layer {layer!r}: {e}")
        self._mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
        self._std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
        self.feature_dim = int(self.features(
            np.zeros((8, 8, 3), dtype=np.uint8)
        ).shape[0])

    def features(self, image: np.ndarray) -> np.ndarray:
        """Pooled activation vector for one RGB uint8 image (H x W x 3)."""
        x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float()
        x = x / 255.0
        x = TF.resize(x, [self.image_size, self.image_size], antialias=True)
        x = (x - self._mean) / self._std
        with torch.no_grad():
            out = self._extractor(x.unsqueeze(0))["feat"]
        if out.ndim == 4:
            vec = out.mean(dim=(2, 3))[0]
        else:
            vec = out.reshape(out.shape[0], out.shape[1], -1).mean(dim=2)[0]
        return vec.numpy().astype(np.float32)
