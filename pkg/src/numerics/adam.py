from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from numerics.tensor import Tensor, ShapeError


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper) -> 'AdamState':
        state = cls(**hyper)
        for name, param in params.items():
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float = 1.0) -> float:
    """Rescale grads in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = (grads[name] * factor).astype(grads[name].dtype, copy=False)
    return total


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> Mapping[str, Tensor]:
    # validate everything before touching any parameter so a bad gradient leaves the model intact
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape or state.m[name].shape != param.shape:
            raise ShapeError(f"adam_step: parameter '{name}' shape {param.shape} and gradient shape {grad.shape} do not conform")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"adam_step: non-finite gradient for parameter '{name}', update aborted")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        dtype = param.data.dtype
        state.m[name] = (state.beta1 * state.m[name] + (1.0 - state.beta1) * grad).astype(dtype, copy=False)
        state.v[name] = (state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad).astype(dtype, copy=False)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        param.data = (param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(dtype, copy=False)
    return params
