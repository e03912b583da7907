import abc

import numpy as np


class DistanceError(ValueError):
    pass


class AbstractDistanceSvc(abc.ABC):
    kind = ''
    label = ''

    def __init__(self):
        pass

    @staticmethod
    def check_shapes(a: np.ndarray, b: np.ndarray):
        if a.shape != b.shape:
            raise DistanceError(f"distance: shapes {a.shape} and {b.shape} do not conform")

    @abc.abstractmethod
    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        pass
