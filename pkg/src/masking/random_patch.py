import math

import numpy as np

from masking.abc_mask import AbstractMaskSvc, band_index


class RandomPatchMaskSvc(AbstractMaskSvc):
    """Inpaint ceil(N²·cover) patches of the N×N grid, drawn without replacement on every call."""

    def __init__(self):
        super().__init__()

    def build_mask(self, spec, attempt_index: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
        n = spec.grid_size
        count = math.ceil(n * n * spec.cover_fraction)
        chosen = rng.choice(n * n, size=count, replace=False)
        patch_keep = np.ones(n * n, dtype=np.uint8)
        patch_keep[chosen] = 0
        patch_keep = patch_keep.reshape(n, n)
        return patch_keep[band_index(height, n)[:, None], band_index(width, n)[None, :]]


random_patch_svc = RandomPatchMaskSvc()
