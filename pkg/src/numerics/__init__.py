from numerics.tensor import Tensor, ComputeGraph, ShapeError, GraphError, backward
from numerics.adam import AdamState, NonFiniteGradientError, adam_step, clip_grad_norm
