import numpy as np
from scipy.ndimage import uniform_filter

from metrics.abc_distance import AbstractDistanceSvc


class SsimDistanceSvc(AbstractDistanceSvc):
    """1 - SSIM over uniform windows, averaged over channels; images live in [-1, 1] (data range 2)."""
    kind = 'ssim_distance'
    label = 'ssim_distance'

    def __init__(self, window: int = 7, k1: float = 0.01, k2: float = 0.03, data_range: float = 2.0):
        super().__init__()
        self.window = window
        self.c1 = (k1 * data_range) ** 2
        self.c2 = (k2 * data_range) ** 2

    def _local_stats(self, a: np.ndarray, b: np.ndarray):
        h, w = a.shape
        if h < self.window or w < self.window:
            # too small for a sliding window: one window over the whole image
            return (np.array([a.mean()]), np.array([b.mean()]), np.array([(a * a).mean()]),
                    np.array([(b * b).mean()]), np.array([(a * b).mean()]))
        pad = (self.window - 1) // 2
        crop = (slice(pad, h - pad), slice(pad, w - pad))

        def local_mean(x):
            return uniform_filter(x, size=self.window)[crop]

        return local_mean(a), local_mean(b), local_mean(a * a), local_mean(b * b), local_mean(a * b)

    def ssim(self, a: np.ndarray, b: np.ndarray) -> float:
        self.check_shapes(a, b)
        a = a.astype(np.float64).reshape(-1, *a.shape[-2:])
        b = b.astype(np.float64).reshape(-1, *b.shape[-2:])
        channel_scores = []
        for ca, cb in zip(a, b):
            mu_a, mu_b, e_aa, e_bb, e_ab = self._local_stats(ca, cb)
            var_a = e_aa - mu_a * mu_a
            var_b = e_bb - mu_b * mu_b
            cov = e_ab - mu_a * mu_b
            numerator = (2 * mu_a * mu_b + self.c1) * (2 * cov + self.c2)
            denominator = (mu_a * mu_a + mu_b * mu_b + self.c1) * (var_a + var_b + self.c2)
            channel_scores.append(np.mean(numerator / denominator))
        return float(np.mean(channel_scores))

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return 1.0 - self.ssim(a, b)
