from typing import List, Sequence

import numpy as np

from metrics.abc_distance import AbstractDistanceSvc, DistanceError
from numerics import ops
from numerics.tensor import Tensor


class FeatureExtractor:
    """
    Frozen random-weight conv stack used as a perceptual feature space.

    Three stages (3×3 conv + SiLU) of widths 8-16-32 with 2×2 mean pooling between stages; the feature
    vector is every stage output flattened and concatenated. Weights are drawn once from the seed.
    """

    def __init__(self, channels: int = 1, widths: Sequence[int] = (8, 16, 32), seed: int = 0, kernel: int = 3):
        self.channels = channels
        self.widths = tuple(widths)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        c_in = channels
        for c_out in self.widths:
            weight = (rng.standard_normal((c_out, c_in, kernel, kernel)) * np.sqrt(2.0 / (c_in * kernel * kernel))).astype(np.float32)
            bias = (0.1 * rng.standard_normal(c_out)).astype(np.float32)
            weight.flags.writeable = False
            bias.flags.writeable = False
            self.weights.append(weight)
            self.biases.append(bias)
            c_in = c_out

    def features(self, images: np.ndarray) -> np.ndarray:
        """(B, C, H, W) -> (B, F) concatenated stage outputs."""
        h = Tensor(np.asarray(images, dtype=np.float32))
        stage_outputs = []
        for stage, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if stage > 0 and h.shape[2] % 2 == 0 and h.shape[3] % 2 == 0:
                h = ops.avg_pool2(h)
            h = ops.silu(ops.conv2d(h, Tensor(weight), Tensor(bias)))
            stage_outputs.append(h.data.reshape(h.shape[0], -1))
        return np.concatenate(stage_outputs, axis=1)


class FeatureDistanceSvc(AbstractDistanceSvc):
    """1 - cosine similarity of FeatureExtractor vectors; a self-contained stand-in for LPIPS."""
    kind = 'feature_distance'
    label = 'feature_distance (LPIPS proxy)'

    def __init__(self, extractor: FeatureExtractor):
        super().__init__()
        self.extractor = extractor

    @staticmethod
    def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
        u = u.astype(np.float64)
        v = v.astype(np.float64)
        uu, vv = float(np.dot(u, u)), float(np.dot(v, v))
        if uu == 0.0 or vv == 0.0:
            raise DistanceError("feature_distance: zero-norm feature vector, cosine similarity undefined")
        cosine = float(np.dot(u, v)) / np.sqrt(uu * vv)
        return float(np.clip(1.0 - cosine, 0.0, 2.0))

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        self.check_shapes(a, b)
        shape = (1, -1, *a.shape[-2:])
        return self.cosine_distance(self.extractor.features(a.reshape(shape))[0],
                                    self.extractor.features(b.reshape(shape))[0])
