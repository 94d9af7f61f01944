"""Constructed generator stand-ins with known equivariance behavior."""

import numpy as np

from surfgan.surface import Region, SurfaceAnnotation


class ListDataset:
    def __init__(self, anns):
        self.anns = list(anns)

    def __len__(self):
        return len(self.anns)

    def load(self, index):
        return self.anns[index]


class PointwiseMockModel:
    """Output is a pointwise function of (image, embedding, region class),
    so it commutes exactly with integer translations and flips."""

    z_dim = 4

    def generate(self, ann: SurfaceAnnotation, z, truncation: float = 1.0):
        out = np.empty((ann.height, ann.width, 3), dtype=np.float32)
        known = ann.mask.known
        body = ann.mask.body
        dil = ann.mask.dilated
        out[known] = ann.image[known]
        out[dil] = np.float32(-0.25)
        e = ann.embeddings.data[body]
        out[body] = np.tanh(e[:, :3] * 1.7)
        return out


class ConstantPatternModel:
    """Ignores every input and returns one fixed non-uniform image."""

    z_dim = 4

    def __init__(self, height, width, seed=0):
        rng = np.random.default_rng(seed)
        self.pattern = rng.uniform(-1, 1, (height, width, 3)).astype(np.float32)

    def generate(self, ann, z, truncation: float = 1.0):
        return self.pattern.copy()


class DeterministicModel:
    """Ignores z entirely; used to pin diversity at zero."""

    z_dim = 4

    def generate(self, ann, z, truncation: float = 1.0):
        out = ann.image.copy()
        out[ann.mask.generate] = 0.5
        return out
