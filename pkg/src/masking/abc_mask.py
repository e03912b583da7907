import abc

import numpy as np


class AbstractMaskSvc(abc.ABC):
    def __init__(self):
        pass

    @abc.abstractmethod
    def build_mask(self, spec, attempt_index: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
        """Return an (height, width) uint8 grid, 1 = keep and 0 = inpaint."""
        pass


def band_index(length: int, grid: int) -> np.ndarray:
    """Band of every pixel along one axis: band b spans [floor(b·L/N), floor((b+1)·L/N))."""
    bands = np.empty(length, dtype=np.int64)
    for b in range(grid):
        bands[b * length // grid:(b + 1) * length // grid] = b
    return bands
