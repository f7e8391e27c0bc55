"""Reverse-mode gradients: per-op finite-difference checks and tape rules."""

import numpy as np
import pytest

from hsimvt import GradGraph, Tensor, UsageError, check_gradients, numeric_gradient
from hsimvt import ops

RNG = np.random.default_rng(20)
TOL = 1e-6  # float64 central differences are far tighter than the 1e-4 gate


def _param(shape):
    return Tensor(RNG.normal(size=shape), requires_grad=True)


def _check(model_fn, params):
    report = check_gradients(model_fn, params, tolerance=TOL)
    assert report.ok, report.summary()


def test_conv3d_gradients():
    x = _param((4, 4, 5))
    k = _param((2, 3, 3, 3))
    b = _param((2,))
    probe = Tensor(RNG.normal(size=(4, 4, 10)))
    _check(lambda: ops.sum_all(ops.mul(ops.conv3d(x, k, b), probe)),
           {"x": x, "kernels": k, "bias": b})


def test_conv3d_gradients_batched():
    x = _param((2, 3, 3, 4))
    k = _param((2, 1, 3, 3))
    b = _param((2,))
    probe = Tensor(RNG.normal(size=(2, 3, 3, 8)))
    _check(lambda: ops.sum_all(ops.mul(ops.conv3d(x, k, b), probe)),
           {"x": x, "kernels": k, "bias": b})


def test_conv2d_gradients():
    x = _param((2, 4, 5, 3))
    k = _param((4, 3, 3, 3))
    b = _param((4,))
    probe = Tensor(RNG.normal(size=(2, 4, 5, 4)))
    _check(lambda: ops.sum_all(ops.mul(ops.conv2d(x, k, b), probe)),
           {"x": x, "kernels": k, "bias": b})


def test_affine_gradients():
    x = _param((5, 3))
    w = _param((3, 4))
    b = _param((4,))
    probe = Tensor(RNG.normal(size=(5, 4)))
    _check(lambda: ops.sum_all(ops.mul(ops.affine(x, w, b), probe)),
           {"x": x, "w": w, "b": b})


@pytest.mark.parametrize("transpose_b", [False, True])
def test_matmul_gradients_batched(transpose_b):
    a = _param((3, 4, 5))
    b = _param((3, 2, 5) if transpose_b else (3, 5, 2))
    probe = Tensor(RNG.normal(size=(3, 4, 2)))
    _check(lambda: ops.sum_all(ops.mul(ops.matmul(a, b, transpose_b=transpose_b), probe)),
           {"a": a, "b": b})


def test_matmul_gradient_broadcast_b():
    a = _param((3, 4, 5))
    b = _param((5, 2))
    probe = Tensor(RNG.normal(size=(3, 4, 2)))
    _check(lambda: ops.sum_all(ops.mul(ops.matmul(a, b), probe)), {"a": a, "b": b})


def test_softmax_gradients():
    x = _param((4, 6))
    probe = Tensor(RNG.normal(size=(4, 6)))
    _check(lambda: ops.sum_all(ops.mul(ops.softmax_rows(x), probe)), {"x": x})


def test_relu_gradient_away_from_kink():
    x = Tensor(RNG.normal(size=(5, 5)) + np.sign(RNG.normal(size=(5, 5))) * 0.5,
               requires_grad=True)
    probe = Tensor(RNG.normal(size=(5, 5)))
    _check(lambda: ops.sum_all(ops.mul(ops.relu(x), probe)), {"x": x})


def test_box_mean_and_tile_and_concat_gradients():
    x = _param((2, 3, 3, 4))
    v = _param((4,))
    probe = Tensor(RNG.normal(size=(2, 3, 4)))

    def model():
        pooled = ops.box_mean(x, (0, 2), (1, 3))          # (2, 4)
        lifted = ops.reshape(pooled, (2, 1, 4))
        tiled = ops.tile_vector(v, 2)                      # (2, 1, 4)
        both = ops.concat([lifted, tiled, ops.add(lifted, tiled)], axis=1)
        return ops.sum_all(ops.mul(both, probe))

    _check(model, {"x": x, "v": v})


def test_scale_add_mul_gradients():
    a = _param((3, 3))
    b = _param((3, 3))
    _check(lambda: ops.sum_all(ops.scale(ops.mul(ops.add(a, b), b), 0.7)),
           {"a": a, "b": b})


def test_numeric_gradient_matches_backward_for_input():
    x = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(RNG.normal(size=(4, 2)))

    def fn(t):
        return ops.sum_all(ops.relu(ops.matmul(t, w)))

    with GradGraph() as graph:
        loss = fn(x)
    graph.backward(loss)
    fd = numeric_gradient(fn, x)
    np.testing.assert_allclose(x.grad, fd, atol=1e-8)


def test_gradients_accumulate_across_graphs():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    for _ in range(2):
        with GradGraph() as graph:
            loss = ops.sum_all(ops.scale(x, 3.0))
        graph.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full((2, 2), 6.0))


def test_no_graph_means_no_tracking():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = ops.relu(x)
    assert not y.requires_grad
    assert x.grad is None


def test_graph_cannot_nest():
    with GradGraph():
        with pytest.raises(UsageError):
            with GradGraph():
                pass


def test_graph_active_only_inside_context():
    from hsimvt.tensor import active_graph
    assert active_graph() is None
    with GradGraph() as g:
        assert active_graph() is g
    assert active_graph() is None


def test_backward_requires_scalar_and_single_use():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradGraph() as graph:
        y = ops.scale(x, 2.0)
        loss = ops.sum_all(y)
    with pytest.raises(UsageError):
        graph.backward(y)  # non-scalar
    graph.backward(loss)
    with pytest.raises(UsageError):
        graph.backward(loss)  # tape already consumed


def test_check_gradients_reports_per_parameter():
    x = _param((2, 2))
    report = check_gradients(lambda: ops.sum_all(ops.mul(x, x)), [x])
    assert list(report.per_param) == ["param0"]
    assert report.max_rel_err < 1e-6
    assert "ok" in report.summary()


def test_diamond_reuse_accumulates_correctly():
    """One tensor feeding two branches must receive both adjoints."""
    x = Tensor(np.array([1.5, -0.5, 2.0]), requires_grad=True)

    def model():
        doubled = ops.scale(x, 2.0)
        return ops.sum_all(ops.add(ops.mul(doubled, x), doubled))

    # d/dx (2x^2 + 2x) = 4x + 2
    with GradGraph() as graph:
        loss = model()
    graph.backward(loss)
    np.testing.assert_allclose(x.grad, 4 * x.data + 2, atol=1e-12)
