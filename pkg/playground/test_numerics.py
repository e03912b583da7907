import numpy as np
import pytest
from scipy.signal import correlate2d

from numerics import AdamState, GraphError, NonFiniteGradientError, ShapeError, Tensor, adam_step, backward, clip_grad_norm
from numerics import ops


def _leaf(values, name='p'):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, name=name)


def test_silu_of_zero_is_zero():
    assert ops.forward_op('silu', Tensor([0.0])).item() == 0.0


def test_sum_of_squares():
    assert ops.forward_op('sum_of_squares', Tensor([1.0, -2.0, 3.0])).item() == pytest.approx(14.0)


def test_conv2d_all_ones():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3)))).numpy()[0, 0]
    assert out[1, 1] == pytest.approx(9.0)
    for corner in (out[0, 0], out[0, 2], out[2, 0], out[2, 2]):
        assert corner == pytest.approx(4.0)
    assert out[0, 1] == pytest.approx(6.0)


def test_conv2d_matches_scipy_correlate():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64)).numpy()
    for n in range(2):
        for o in range(4):
            expected = sum(correlate2d(x[n, c], w[o, c], mode='same') for c in range(3)) + b[o]
            np.testing.assert_allclose(out[n, o], expected, rtol=1e-10, atol=1e-10)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as ex:
        ops.forward_op('add', Tensor(np.zeros(2)), Tensor(np.zeros(3)))
    message = str(ex.value)
    assert 'add' in message and '(2,)' in message and '(3,)' in message


def test_unknown_op():
    with pytest.raises(NotImplementedError):
        ops.forward_op('softmax', Tensor([1.0]))


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).data.dtype == np.float32
    assert ops.silu(Tensor([1.0, 2.0])).data.dtype == np.float32


def test_item_needs_single_element():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_grad_of_sum_of_squares():
    x = _leaf([1.0, 2.0], name='x')
    grads = backward(ops.sum_of_squares(x))
    np.testing.assert_allclose(grads['x'], [2.0, 4.0])


def test_grad_of_mean():
    x = _leaf(np.arange(4.0), name='x')
    np.testing.assert_allclose(backward(ops.mean(x))['x'], [0.25] * 4)


def test_fan_out_gradients_add_up():
    x = _leaf([1.0, -0.5], name='x')
    # d/dx (x + x)^2 = 8x
    np.testing.assert_allclose(backward(ops.sum_of_squares(ops.add(x, x)))['x'], [8.0, -4.0])


def test_unnamed_parameters_get_positional_keys():
    a, b = _leaf([1.0], name=None), _leaf([2.0], name=None)
    grads = backward(ops.sum_of_squares(ops.mul(a, b)))
    assert sorted(grads) == ['param0', 'param1']


def test_non_scalar_loss_rejected():
    with pytest.raises(GraphError):
        backward(ops.silu(_leaf([1.0, 2.0])))


def test_graph_reuse_rejected():
    loss = ops.sum_of_squares(_leaf([1.0, 2.0]))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_constants_build_no_graph():
    out = ops.add(Tensor([1.0]), Tensor([2.0]))
    assert not out.requires_grad and out.is_leaf


def _check_gradients(build, leaves, h=1e-5, tol=1e-4):
    """Compare backward() against central differences for every entry of every leaf."""
    analytic = backward(build())
    for leaf in leaves:
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = build().item()
            flat[i] = original - h
            down = build().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        error = np.linalg.norm(analytic[leaf.name] - numeric) / max(np.linalg.norm(analytic[leaf.name]) + np.linalg.norm(numeric), 1e-12)
        assert error < tol, f"{leaf.name}: relative error {error:.2e}"


def _weighted(out, rng):
    weights = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return ops.mean(ops.mul(out, weights))


def _case(kind, rng):
    """(build, leaves) for one random small instance of an op."""
    if kind in ('add', 'sub', 'mul'):
        a, b = _leaf(rng.normal(size=(3, 4)), 'a'), _leaf(rng.normal(size=(3, 4)), 'b')
        return lambda: _weighted(ops.forward_op(kind, a, b), np.random.default_rng(1)), [a, b]
    if kind == 'affine':
        x, w, b = _leaf(rng.normal(size=(2, 3)), 'x'), _leaf(rng.normal(size=(3, 5)), 'w'), _leaf(rng.normal(size=5), 'b')
        return lambda: _weighted(ops.affine(x, w, b), np.random.default_rng(1)), [x, w, b]
    if kind == 'conv2d':
        x = _leaf(rng.normal(size=(2, 2, 4, 5)), 'x')
        w, b = _leaf(rng.normal(size=(3, 2, 3, 3)), 'w'), _leaf(rng.normal(size=3), 'b')
        return lambda: _weighted(ops.conv2d(x, w, b), np.random.default_rng(1)), [x, w, b]
    if kind == 'silu':
        x = _leaf(rng.normal(size=(3, 4)) * 2, 'x')
        return lambda: _weighted(ops.silu(x), np.random.default_rng(1)), [x]
    if kind == 'sum_of_squares':
        x = _leaf(rng.normal(size=(3, 4)), 'x')
        return lambda: ops.sum_of_squares(x), [x]
    if kind == 'concat_channels':
        a, b = _leaf(rng.normal(size=(2, 1, 2, 2)), 'a'), _leaf(rng.normal(size=(2, 3, 2, 2)), 'b')
        return lambda: _weighted(ops.concat_channels(a, b), np.random.default_rng(1)), [a, b]
    if kind == 'add_channelwise':
        x, o = _leaf(rng.normal(size=(2, 3, 2, 2)), 'x'), _leaf(rng.normal(size=(2, 3)), 'o')
        return lambda: _weighted(ops.add_channelwise(x, o), np.random.default_rng(1)), [x, o]
    if kind == 'avg_pool2':
        x = _leaf(rng.normal(size=(1, 2, 4, 4)), 'x')
        return lambda: _weighted(ops.avg_pool2(x), np.random.default_rng(1)), [x]
    if kind == 'upsample2':
        x = _leaf(rng.normal(size=(1, 2, 2, 3)), 'x')
        return lambda: _weighted(ops.upsample2(x), np.random.default_rng(1)), [x]
    if kind == 'mse_loss':
        p, t = _leaf(rng.normal(size=(2, 3)), 'p'), Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
        return lambda: ops.mse_loss(p, t), [p]
    raise KeyError(kind)


DIFFERENTIABLE = ['add', 'sub', 'mul', 'affine', 'conv2d', 'silu', 'sum_of_squares', 'concat_channels',
                  'add_channelwise', 'avg_pool2', 'upsample2', 'mse_loss']


@pytest.mark.parametrize('kind', DIFFERENTIABLE)
@pytest.mark.parametrize('seed', [0, 1, 2])
def test_gradients_match_finite_differences(kind, seed):
    build, leaves = _case(kind, np.random.default_rng(seed))
    _check_gradients(build, leaves)


@pytest.mark.slow
def test_gradients_match_finite_differences_hundred_trials():
    for trial in range(100):
        kind = DIFFERENTIABLE[trial % len(DIFFERENTIABLE)]
        build, leaves = _case(kind, np.random.default_rng(1000 + trial))
        _check_gradients(build, leaves)


def test_adam_zero_gradient_leaves_params_unchanged():
    params = {'w': _leaf([1.0, -2.0], name='w')}
    state = AdamState.for_params(params, lr=0.1)
    for _ in range(5):
        adam_step(params, {'w': np.zeros(2)}, state)
    np.testing.assert_array_equal(params['w'].data, [1.0, -2.0])
    assert state.step == 5


def test_adam_without_momentum_steps_by_lr():
    params = {'w': _leaf([0.0, 0.0], name='w')}
    state = AdamState.for_params(params, lr=0.01, beta1=0.0, beta2=0.0)
    g = np.array([3.0, -0.5])
    adam_step(params, {'w': g}, state)
    np.testing.assert_allclose(params['w'].data, -0.01 * g / (np.abs(g) + state.eps))


def test_adam_descends_quadratic():
    params = {'w': _leaf([0.0], name='w')}
    state = AdamState.for_params(params, lr=0.5)
    distances = [3.0]
    for _ in range(5):
        w = params['w'].data
        adam_step(params, {'w': 2 * (w - 3.0)}, state)
        distances.append(abs(float(params['w'].data[0]) - 3.0))
    assert all(b < a for a, b in zip(distances, distances[1:]))
    assert distances[-1] < 1.0


def test_adam_nan_gradient_aborts_and_names_parameter():
    params = {'a': _leaf([1.0], name='a'), 'b': _leaf([2.0], name='b')}
    state = AdamState.for_params(params)
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        adam_step(params, {'a': np.array([1.0]), 'b': np.array([np.nan])}, state)
    assert params['a'].data[0] == 1.0
    assert state.step == 0


def test_adam_shape_mismatch():
    params = {'w': _leaf([1.0, 2.0], name='w')}
    with pytest.raises(ShapeError):
        adam_step(params, {'w': np.zeros(3)}, AdamState.for_params(params))


def test_clip_grad_norm():
    grads = {'a': np.array([3.0]), 'b': np.array([4.0])}
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.sqrt(grads['a'] ** 2 + grads['b'] ** 2), [1.0], rtol=1e-9)

    small = {'a': np.array([0.3])}
    clip_grad_norm(small, 1.0)
    assert small['a'][0] == 0.3
