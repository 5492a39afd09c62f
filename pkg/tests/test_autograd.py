import numpy as np
import pytest

from dcan.autograd import (Parameter, ShapeError, Tape, Tensor, backward,
                           conv2d, dense, dropout, elementwise,
                           global_average_pool, grad_check,
                           pointwise_activation, relu, sigmoid,
                           spatial_softmax, tsum)


def conv2d_oracle(x, k, b, stride=1, padding="same"):
    """Direct nested-loop convolution, independent of the im2col path."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    if padding == "same":
        ho = -(-h // stride)
        wo = -(-w // stride)
        th = max((ho - 1) * stride + kh - h, 0)
        tw = max((wo - 1) * stride + kw - w, 0)
        xp = np.pad(x, ((0, 0), (th // 2, th - th // 2), (tw // 2, tw - tw // 2), (0, 0)))
    else:
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        xp = x
    out = np.zeros((n, ho, wo, cout))
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                for co in range(cout):
                    acc = b[co]
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                acc += xp[ni, i * stride + di, j * stride + dj, ci] * k[di, dj, ci, co]
                    out[ni, i, j, co] = acc
    return out


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar-valued f w.r.t. array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g.ravel()[i] = (fp - fm) / (2 * h)
    return g


def analytic_grad(op, x_data, weight=None):
    """Gradient of sum(op(x) * weight) via the tape."""
    x = Tensor(x_data, requires_grad=True)
    with Tape() as tape:
        y = op(x)
        if weight is not None:
            y = elementwise("mul", y, Tensor(weight))
        loss = tsum(y)
    backward(loss, tape)
    return x.grad


class TestConv2d:
    def test_scalar_affine(self):
        out = conv2d(Tensor([[[[2.0]]]]), Tensor([[[[3.0]]]]), Tensor([1.0]))
        assert out.data.item() == pytest.approx(7.0)

    def test_valid_summation(self):
        x = Tensor(np.ones((1, 3, 3, 1)))
        k = Tensor(np.ones((3, 3, 1, 1)))
        out = conv2d(x, k, Tensor([0.0]), padding="valid")
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == pytest.approx(9.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 5, 5, 3))
        k = rng.standard_normal((3, 3, 3, 4))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding="same")
        np.testing.assert_allclose(out.data, conv2d_oracle(x, k, b), atol=1e-12)

    @pytest.mark.parametrize("h,w,k,stride,padding", [
        (4, 4, 1, 1, "same"), (5, 7, 3, 1, "same"), (8, 8, 3, 2, "same"),
        (6, 5, 3, 1, "valid"), (8, 6, 3, 2, "valid"), (7, 7, 1, 2, "same"),
    ])
    def test_oracle_shape_sweep(self, h, w, k, stride, padding):
        rng = np.random.default_rng(hash((h, w, k, stride)) % 2**32)
        x = rng.standard_normal((2, h, w, 2))
        kern = rng.standard_normal((k, k, 2, 3))
        b = rng.standard_normal(3)
        out = conv2d(Tensor(x), Tensor(kern), Tensor(b), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, kern, b, stride, padding),
                                   atol=1e-12)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(ShapeError, match="channel"):
            conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 4))),
                   Tensor(np.zeros(4)))

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 4, 4, 2))
        k = rng.standard_normal((3, 3, 2, 2))
        b = rng.standard_normal(2)
        kt, bt = Tensor(k, requires_grad=True), Tensor(b, requires_grad=True)
        xt = Tensor(x, requires_grad=True)
        with Tape() as tape:
            loss = tsum(conv2d(xt, kt, bt, stride=2))
        backward(loss, tape)
        for arr, grad in ((x, xt.grad), (k, kt.grad), (b, bt.grad)):
            num = numeric_grad(lambda: conv2d(Tensor(x), Tensor(k), Tensor(b),
                                              stride=2).data.sum(), arr)
            np.testing.assert_allclose(grad, num, atol=1e-6)


class TestDense:
    def test_identity(self):
        out = dense(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_hand_arithmetic(self):
        out = dense(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
        assert out.data.item() == pytest.approx(6.0)

    def test_matches_matmul_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 8))
        w = rng.standard_normal((8, 3))
        b = rng.standard_normal(3)
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                expected[i, j] = b[j]
                for m in range(8):
                    expected[i, j] += x[i, m] * w[m, j]
        np.testing.assert_allclose(dense(Tensor(x), Tensor(w), Tensor(b)).data,
                                   expected, atol=1e-12)

    def test_rejects_rank3(self):
        with pytest.raises(ShapeError):
            dense(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))


class TestActivations:
    def test_sigmoid_symmetry(self):
        assert sigmoid(Tensor([0.0])).data.item() == pytest.approx(0.5)

    def test_relu_definition(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            pointwise_activation("tanh", Tensor([0.0]))

    def test_sigmoid_gradient_fd(self):
        x = np.array([1.0])
        g = analytic_grad(sigmoid, x)
        num = numeric_grad(lambda: sigmoid(Tensor(x)).data.sum(), x, h=1e-6)
        np.testing.assert_allclose(g, num, atol=1e-7)

    def test_sigmoid_range(self):
        out = sigmoid(Tensor([-500.0, 500.0])).data
        assert np.all(out >= 0.0) and np.all(out <= 1.0) and np.all(np.isfinite(out))


class TestSpatialSoftmax:
    def test_uniform_logits(self):
        out = spatial_softmax(Tensor(np.zeros((1, 2, 2, 1))))
        np.testing.assert_allclose(out.data, 0.25)

    def test_analytic_softmax(self):
        out = spatial_softmax(Tensor(np.array([0.0, np.log(3.0)]).reshape(1, 1, 2, 1)))
        np.testing.assert_allclose(out.data.ravel(), [0.25, 0.75], atol=1e-12)

    def test_sums_and_jvp(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 4, 4, 3))
        out = spatial_softmax(Tensor(x)).data
        np.testing.assert_allclose(out.reshape(2, 16, 3).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out > 0.0) and np.all(out < 1.0)
        w = rng.standard_normal(x.shape)
        g = analytic_grad(spatial_softmax, x, weight=w)
        num = numeric_grad(lambda: (spatial_softmax(Tensor(x)).data * w).sum(), x)
        np.testing.assert_allclose(g, num, atol=1e-6)


class TestElementwise:
    def test_mul(self):
        out = elementwise("mul", Tensor([1.0, 2.0, 3.0]), Tensor([2.0, 2.0, 2.0]))
        np.testing.assert_array_equal(out.data, [2.0, 4.0, 6.0])

    def test_add_identity(self):
        x = np.array([1.5, -2.0])
        out = elementwise("add", Tensor(x), Tensor(np.zeros(2)))
        np.testing.assert_array_equal(out.data, x)

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            elementwise("mul", Tensor(np.zeros(3)), Tensor(np.zeros((3, 1))))

    def test_mul_gradients_fd(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        at, bt = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        with Tape() as tape:
            loss = tsum(elementwise("mul", at, bt))
        backward(loss, tape)
        np.testing.assert_allclose(at.grad, numeric_grad(lambda: (a * b).sum(), a), atol=1e-7)
        np.testing.assert_allclose(bt.grad, numeric_grad(lambda: (a * b).sum(), b), atol=1e-7)


class TestGlobalAveragePool:
    def test_constant(self):
        out = global_average_pool(Tensor(np.full((1, 3, 3, 2), 3.0)))
        np.testing.assert_allclose(out.data, 3.0)

    def test_arithmetic(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1)
        assert global_average_pool(Tensor(x)).data.item() == pytest.approx(2.5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 4, 3))
        expected = np.zeros((2, 3))
        for n in range(2):
            for c in range(3):
                s = 0.0
                for i in range(3):
                    for j in range(4):
                        s += x[n, i, j, c]
                expected[n, c] = s / 12
        np.testing.assert_allclose(global_average_pool(Tensor(x)).data, expected, atol=1e-12)


class TestDropout:
    def test_inference_identity(self):
        x = np.random.default_rng(6).standard_normal((3, 3))
        out = dropout(Tensor(x), 0.5, training=False)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_rate(self):
        x = np.random.default_rng(7).standard_normal(10)
        out = dropout(Tensor(x), 0.0, training=True, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, x)

    def test_rejects_rate_one(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, training=True, rng=np.random.default_rng(0))

    def test_monte_carlo(self):
        rng = np.random.default_rng(42)
        x = np.full(10**5, 2.0)
        out = dropout(Tensor(x), 0.3, training=True, rng=rng).data
        surviving = (out != 0).mean()
        assert abs(surviving - 0.7) < 0.01
        assert abs(out.mean() - x.mean()) < 0.01 * abs(x.mean())


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(8).standard_normal((2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = tsum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(elementwise("mul", x, x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_fanout_sums_branches(self):
        # x feeds two branches: x*x and x+x; grad = 2x + 2
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            a = elementwise("mul", x, x)
            b = elementwise("add", x, x)
            loss = tsum(elementwise("add", a, b))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [8.0])

    def test_rejects_nonscalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = elementwise("add", x, x)
        with pytest.raises(ShapeError):
            backward(y, tape)


class TestGradCheck:
    def test_linear_model_exact(self):
        theta = Parameter(np.array([2.0]))

        def f():
            return tsum(elementwise("mul", theta.tensor, Tensor([3.0])))

        report = grad_check(f, {"theta": theta}, tol=1e-10)
        assert report["passed"]
        assert report["max_relative_error"] < 1e-10

    def test_conv_sigmoid_sum(self):
        rng = np.random.default_rng(9)
        k = Parameter(rng.standard_normal((3, 3, 2, 2)) * 0.5)
        b = Parameter(rng.standard_normal(2) * 0.5)
        x = Tensor(rng.standard_normal((1, 4, 4, 2)))

        def f():
            return tsum(sigmoid(conv2d(x, k.tensor, b.tensor)))

        report = grad_check(f, {"k": k, "b": b}, tol=1e-6)
        assert report["passed"], report
