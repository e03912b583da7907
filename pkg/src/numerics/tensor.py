from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    """
    Dense row-major array plus the bookkeeping reverse-mode differentiation needs.

    Leaves created with requires_grad=True are the trainable parameters of a graph. Results of ops on
    tensors that require no gradient carry no graph attachment and behave as immutable values.
    """
    __slots__ = ('data', 'requires_grad', 'name', 'op', '_parents', '_backward', '_consumed')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f", name='{self.name}'" if self.name else ''
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(op: str, data: np.ndarray, parents: Sequence[Tensor],
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap an op output; the node joins a graph only when some input needs a gradient."""
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


class ComputeGraph:
    """
    The graph reachable from a scalar loss, in topological order.

    A graph runs backward exactly once. Gradients live in a dict local to that pass, so nothing can be
    accumulated twice into a parameter.
    """

    def __init__(self, loss: Tensor):
        if loss.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._consumed:
            raise GraphError("graph already ran backward; rebuild the forward pass before another backward")
        self.loss = loss
        self.nodes: List[Tensor] = self._topological_order(loss)
        self.parameters: List[Tensor] = [n for n in self.nodes if n.is_leaf and n.requires_grad]

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        # iterative DFS; the ε-network graphs are deep enough to make recursion uncomfortable
        order, visited = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> Dict[str, np.ndarray]:
        if self.loss._consumed:
            raise GraphError("graph already ran backward; rebuild the forward pass before another backward")
        self.loss._consumed = True

        grads: Dict[int, np.ndarray] = {id(self.loss): np.ones_like(self.loss.data)}
        for node in reversed(self.nodes):
            grad = grads.get(id(node))
            if grad is None or node._backward is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                # fan-out: contributions from every consumer add up
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

        result = {}
        for index, param in enumerate(self.parameters):
            name = param.name or f'param{index}'
            result[name] = grads.get(id(param), np.zeros_like(param.data)).astype(param.data.dtype, copy=False)
        return result


def backward(loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every trainable leaf, keyed by parameter name."""
    return ComputeGraph(loss).backward()
