"""
Differentiable forward ops over numerics.Tensor.

Every op checks shapes up front, computes with numpy, and (when an input requires a gradient) attaches a
closure returning one gradient per input. No op broadcasts implicitly; the few broadcasts the ε-network
needs (bias, per-channel time offsets) are ops of their own.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from numerics.tensor import Tensor, ShapeError, as_tensor, make_result


def _require_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('add', a, b)
    return make_result('add', a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('sub', a, b)
    return make_result('sub', a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('mul', a, b)
    return make_result('mul', a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = a.data.dtype.type(factor)
    return make_result('scale', a.data * factor, (a,), lambda g: (g * factor,))


def affine(x, weight, bias=None) -> Tensor:
    """x @ weight + bias for x of shape (in,) or (batch, in) and weight of shape (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"affine: shapes {x.shape} and {weight.shape} do not conform")
    parents = [x, weight]
    out = x.data @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"affine: bias shape {bias.shape} and weight shape {weight.shape} do not conform")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        if x.data.ndim == 1:
            grads = [weight.data @ g, np.outer(x.data, g)]
        else:
            grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g if g.ndim == 1 else g.sum(axis=0))
        return grads

    return make_result('affine', out, parents, backward)


def _same_pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _correlate(x: np.ndarray, kernel: np.ndarray, pad: int) -> np.ndarray:
    # x (B, Cin, H, W), kernel (Cout, Cin, k, k) -> (B, Cout, H, W)
    k = kernel.shape[-1]
    windows = sliding_window_view(_same_pad(x, pad), (k, k), axis=(2, 3))
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 cross-correlation with zero padding that preserves H×W; kernels must be odd-sized."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1] \
            or weight.shape[2] != weight.shape[3] or weight.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: shapes {x.shape} and {weight.shape} do not conform")
    pad = (weight.shape[2] - 1) // 2
    out = _correlate(x.data, weight.data, pad)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} and weight shape {weight.shape} do not conform")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        k = weight.shape[2]
        windows = sliding_window_view(_same_pad(x.data, pad), (k, k), axis=(2, 3))
        grad_weight = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        # input gradient: correlate with the flipped kernel, in/out channels swapped
        flipped = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grads = [_correlate(g, flipped, pad), grad_weight]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result('conv2d', out, parents, backward)


def silu(x) -> Tensor:
    x = as_tensor(x)
    gate = expit(x.data)
    return make_result('silu', x.data * gate, (x,), lambda g: (g * gate * (1 + x.data * (1 - gate)),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return make_result('mean', np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
                       lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def sum_of_squares(x) -> Tensor:
    x = as_tensor(x)
    return make_result('sum_of_squares', np.asarray(np.sum(x.data * x.data), dtype=x.data.dtype), (x,),
                       lambda g: (2 * g * x.data,))


def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} do not conform")
    split = a.shape[1]
    return make_result('concat_channels', np.concatenate([a.data, b.data], axis=1), (a, b),
                       lambda g: (g[:, :split], g[:, split:]))


def add_channelwise(x, offsets) -> Tensor:
    """Add a per-(batch, channel) offset to every pixel of a (B, C, H, W) feature map."""
    x, offsets = as_tensor(x), as_tensor(offsets)
    if x.data.ndim != 4 or offsets.shape != x.shape[:2]:
        raise ShapeError(f"add_channelwise: shapes {x.shape} and {offsets.shape} do not conform")
    return make_result('add_channelwise', x.data + offsets.data[:, :, None, None], (x, offsets),
                       lambda g: (g, g.sum(axis=(2, 3))))


def avg_pool2(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"avg_pool2: shape {x.shape} needs even height and width")
    b, c, h, w = x.shape
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.data.dtype.type(0.25),)

    return make_result('avg_pool2', out, (x,), backward)


def upsample2(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2: shape {x.shape} is not (B, C, H, W)")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_result('upsample2', out, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


OPS = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'scale': scale,
    'affine': affine,
    'conv2d': conv2d,
    'silu': silu,
    'mean': mean,
    'sum_of_squares': sum_of_squares,
    'concat_channels': concat_channels,
    'add_channelwise': add_channelwise,
    'avg_pool2': avg_pool2,
    'upsample2': upsample2,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    op = OPS.get(kind)
    if op is None:
        raise NotImplementedError(f'op - {kind} - is not supported')
    return op(*inputs, **attrs)


def mse_loss(prediction, target) -> Tensor:
    diff = sub(prediction, target)
    return scale(sum_of_squares(diff), 1.0 / diff.size)
