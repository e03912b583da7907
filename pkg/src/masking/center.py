import math

import numpy as np

from masking.abc_mask import AbstractMaskSvc


class CenterMaskSvc(AbstractMaskSvc):
    def __init__(self):
        super().__init__()

    def build_mask(self, spec, attempt_index: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
        # side = floor(sqrt(H·W·cover)); isqrt of the floored area gives the same value without float error
        side = min(math.isqrt(int(height * width * spec.cover_fraction)), height, width)
        side = max(side, 1)
        top, left = (height - side) // 2, (width - side) // 2
        mask = np.ones((height, width), dtype=np.uint8)
        mask[top:top + side, left:left + side] = 0
        return mask


center_svc = CenterMaskSvc()
