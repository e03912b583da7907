import numpy as np

from metrics.abc_distance import AbstractDistanceSvc


class MseDistanceSvc(AbstractDistanceSvc):
    kind = 'mse'
    label = 'mse'

    def __init__(self):
        super().__init__()

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        self.check_shapes(a, b)
        diff = a.astype(np.float64) - b.astype(np.float64)
        return float(np.mean(diff * diff))
