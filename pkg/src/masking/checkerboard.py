import numpy as np

from masking.abc_mask import AbstractMaskSvc, band_index


class CheckerboardMaskSvc(AbstractMaskSvc):
    """N×N patch grid; patch (i, j) is kept iff (i + j + a) is even."""

    def __init__(self, alternating: bool):
        super().__init__()
        self.alternating = alternating

    def build_mask(self, spec, attempt_index: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
        rows = band_index(height, spec.grid_size)
        cols = band_index(width, spec.grid_size)
        # a = attempt index inverts the pattern on every attempt; the fixed variant always uses a = 0
        a = attempt_index if self.alternating else 0
        return ((rows[:, None] + cols[None, :] + a) % 2 == 0).astype(np.uint8)


alternating_checkerboard_svc = CheckerboardMaskSvc(alternating=True)
fixed_checkerboard_svc = CheckerboardMaskSvc(alternating=False)
