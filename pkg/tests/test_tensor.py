import numpy as np
import pytest

from biofuse import tensor as T
from biofuse.tensor import GradTape, ShapeError, Tensor

from gradcheck import fd_gradient, max_rel_err
from oracles import conv2d_ref, matmul_ref, maxpool2d_ref, softmax_xent_ref


# --- the oracles themselves, against hand-worked numbers ------------------

def test_matmul_oracle_hand_case():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(matmul_ref(a, b), [[19.0, 22.0], [43.0, 50.0]])
    assert np.array_equal(matmul_ref(a, np.array([1.0, -1.0])), [-1.0, -1.0])


def test_conv_oracle_hand_case():
    # one channel, 3x3 input, 2x2 kernel, no padding:
    # each output = sum of the 2x2 window times [[1,0],[0,1]] plus bias 10
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    k = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    b = np.array([10.0])
    out = conv2d_ref(x, k, b)
    assert np.array_equal(out, [[[14.0, 16.0], [20.0, 22.0]]])


def test_conv_oracle_padding_hand_case():
    # 2x2 input padded to 4x4, 3x3 kernel, so the output stays 2x2. The
    # top-left output only sees the four real values through kernel taps
    # (1,1), (1,2), (2,1), (2,2).
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    k = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    out = conv2d_ref(x, k, np.array([0.0]), padding=1)
    expect = np.array([[[1 * 4 + 2 * 5 + 3 * 7 + 4 * 8,
                         1 * 3 + 2 * 4 + 3 * 6 + 4 * 7],
                        [1 * 1 + 2 * 2 + 3 * 4 + 4 * 5,
                         1 * 0 + 2 * 1 + 3 * 3 + 4 * 4]]], dtype=np.float64)
    assert np.array_equal(out, expect)


def test_maxpool_oracle_hand_case():
    x = np.array([[[1.0, 5.0, 2.0, 0.0],
                   [3.0, 4.0, 1.0, 1.0],
                   [0.0, 1.0, 9.0, 2.0],
                   [1.0, 1.0, 1.0, 1.0]]])
    out = maxpool2d_ref(x, 2, 2)
    assert np.array_equal(out, [[[5.0, 2.0], [1.0, 9.0]]])


# --- forward agreement with the oracles ------------------------------------

def test_matmul_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(8):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(got, matmul_ref(a, b), rtol=1e-12, atol=1e-12)
        v = rng.standard_normal(k)
        got_v = T.matmul(Tensor(a), Tensor(v)).data
        assert np.allclose(got_v, matmul_ref(a, v), rtol=1e-12, atol=1e-12)


def test_conv2d_matches_oracle_across_shapes():
    rng = np.random.default_rng(7)
    cases = [
        # (c_in, h, w, c_out, kh, kw, stride, padding)
        (1, 5, 5, 2, 3, 3, 1, 0),
        (2, 6, 6, 3, 3, 3, 1, 1),
        (3, 7, 5, 2, 2, 2, 2, 0),
        (2, 8, 8, 4, 3, 3, 2, 1),
        (1, 4, 4, 1, 1, 1, 1, 0),
        (2, 5, 7, 3, 3, 2, 1, 1),
    ]
    for c_in, h, w, c_out, kh, kw, stride, padding in cases:
        x = rng.standard_normal((c_in, h, w))
        k = rng.standard_normal((c_out, c_in, kh, kw))
        b = rng.standard_normal(c_out)
        got = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, padding).data
        want = conv2d_ref(x, k, b, stride, padding)
        assert got.shape == want.shape
        assert np.allclose(got, want, rtol=1e-11, atol=1e-11)


def test_conv2d_output_shape_formula():
    rng = np.random.default_rng(3)
    for _ in range(10):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        kh = int(rng.integers(1, 4))
        kw = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        h = int(rng.integers(kh, kh + 6))
        w = int(rng.integers(kw, kw + 6))
        out = T.conv2d(Tensor(rng.standard_normal((c_in, h, w))),
                       Tensor(rng.standard_normal((c_out, c_in, kh, kw))),
                       Tensor(np.zeros(c_out)), stride, padding)
        oh = (h + 2 * padding - kh) // stride + 1
        ow = (w + 2 * padding - kw) // stride + 1
        assert out.shape == (c_out, oh, ow)


def test_maxpool_matches_oracle():
    rng = np.random.default_rng(19)
    for size, stride in [(2, 2), (2, 1), (3, 2), (3, 3)]:
        for _ in range(4):
            c = int(rng.integers(1, 4))
            h = int(rng.integers(size, size + 6))
            w = int(rng.integers(size, size + 6))
            x = rng.standard_normal((c, h, w))
            got = T.maxpool2d(Tensor(x), size, stride).data
            assert np.array_equal(got, maxpool2d_ref(x, size, stride))


def test_dense_is_affine_map():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    x = rng.standard_normal(6)
    out = T.dense(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(out, matmul_ref(w, x) + b, rtol=1e-12, atol=1e-12)


def test_global_avg_pool_forward():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4, 5))
    out = T.global_avg_pool(Tensor(x)).data
    assert np.allclose(out, x.mean(axis=(1, 2)), rtol=1e-14, atol=1e-15)


def test_activations_forward():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.array_equal(T.relu(Tensor(x)).data, [0.0, 0.0, 0.0, 0.5, 2.0])
    assert np.allclose(T.tanh(Tensor(x)).data, np.tanh(x), atol=1e-15)
    assert np.allclose(T.sigmoid(Tensor(x)).data, 1 / (1 + np.exp(-x)),
                       atol=1e-15)
    with pytest.raises(ValueError):
        T.activation(Tensor(x), "softplus")


def test_sigmoid_saturates_without_overflow():
    out = T.sigmoid(Tensor(np.array([-1e4, -50.0, 50.0, 1e4]))).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 or out[0] < 1e-300
    assert out[3] == 1.0
    assert 0.0 <= out.min() and out.max() <= 1.0


def test_softmax_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(23)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        z = rng.standard_normal(n) * 3.0
        label = int(rng.integers(n))
        got = T.softmax_cross_entropy(Tensor(z), label).item()
        assert abs(got - softmax_xent_ref(z, label)) < 1e-10


def test_softmax_cross_entropy_extreme_logits_stay_finite():
    z = np.array([1e4, -1e4, 0.0])
    loss = T.softmax_cross_entropy(Tensor(z), 0).item()
    assert np.isfinite(loss)
    assert loss == pytest.approx(0.0, abs=1e-12)
    loss_worst = T.softmax_cross_entropy(Tensor(z), 1).item()
    assert np.isfinite(loss_worst)
    assert loss_worst == pytest.approx(2e4, rel=1e-9)


def test_softmax_probs_sum_to_one():
    rng = np.random.default_rng(1)
    for scale in [1.0, 100.0, 1e4]:
        p = T.softmax_probs(rng.standard_normal(6) * scale)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p.min() >= 0.0


# --- gradients against central differences ---------------------------------

def _composite_cnn_loss(x, k, b, w1, b1, w2, b2, label, record=False):
    """conv -> relu -> maxpool -> flatten -> dense -> tanh -> dense -> xent"""
    def run():
        h = T.conv2d(x, k, b, stride=1, padding=1)
        h = T.relu(h)
        h = T.maxpool2d(h, 2, 2)
        h = T.flatten(h)
        h = T.tanh(T.dense(h, w1, b1))
        logits = T.dense(h, w2, b2)
        return T.softmax_cross_entropy(logits, label)
    if record:
        return run()
    return run().item()


def test_gradients_match_finite_differences_composite_graph():
    # ten independent seeded graphs; every parameter entry is probed
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        x = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        w1 = Tensor(rng.standard_normal((5, 27)) * 0.3, requires_grad=True)
        b1 = Tensor(np.zeros(5), requires_grad=True)
        w2 = Tensor(rng.standard_normal((4, 5)) * 0.3, requires_grad=True)
        b2 = Tensor(np.zeros(4), requires_grad=True)
        label = seed % 4
        params = [x, k, b, w1, b1, w2, b2]

        with GradTape() as tape:
            loss = _composite_cnn_loss(x, k, b, w1, b1, w2, b2, label,
                                       record=True)
        tape.backward(loss, params)

        for p in params:
            fd = fd_gradient(
                lambda: _composite_cnn_loss(x, k, b, w1, b1, w2, b2, label),
                p.data)
            err = max_rel_err(p.grad, fd, floor=1e-5)
            assert err < 1e-4, f"seed {seed}: rel err {err:.2e}"


def test_gradients_sigmoid_gap_concat_graph():
    for seed in range(5):
        rng = np.random.default_rng(300 + seed)
        x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 2, 2)) * 0.5, requires_grad=True)
        kb = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        v = Tensor(rng.standard_normal(4), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 7)) * 0.4, requires_grad=True)
        wb = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        params = [x, k, kb, v, w, wb]

        def build(record=False):
            def run():
                a = T.global_avg_pool(T.sigmoid(T.conv2d(x, k, kb)))
                joined = T.concat([a, v])
                out = T.dense(joined, w, wb)
                return T.scale(T.tensor_sum(T.tanh(out)), 0.5)
            return run() if record else run().item()

        with GradTape() as tape:
            loss = build(record=True)
        tape.backward(loss, params)

        for p in params:
            fd = fd_gradient(lambda: build(), p.data)
            assert max_rel_err(p.grad, fd, floor=1e-5) < 1e-4


def test_gradient_accumulates_when_tensor_reused():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with GradTape() as tape:
        y = T.add(x, x)                  # 2x
        z = T.add(y, x)                  # 3x
        loss = T.tensor_sum(z)
    tape.backward(loss)
    assert np.array_equal(x.grad, [3.0, 3.0, 3.0])


def test_gradient_flows_through_both_branches():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    with GradTape() as tape:
        a = T.scale(x, 3.0)
        b = T.tanh(x)
        loss = T.tensor_sum(T.add(a, b))
    tape.backward(loss)
    expect = 3.0 + (1.0 - np.tanh(x.data) ** 2)
    assert np.allclose(x.grad, expect, atol=1e-14)


def test_maxpool_tie_routes_gradient_to_first_row_major():
    # all four entries equal: the whole window gradient lands on (0, 0)
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = T.tensor_sum(T.maxpool2d(x, 2, 2))
    tape.backward(loss)
    assert np.array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    # tie between (0,1) and (1,0): row-major order picks (0,1)
    x2 = Tensor(np.array([[[0.0, 5.0], [5.0, 1.0]]]), requires_grad=True)
    with GradTape() as tape:
        loss = T.tensor_sum(T.maxpool2d(x2, 2, 2))
    tape.backward(loss)
    assert np.array_equal(x2.grad, [[[0.0, 1.0], [0.0, 0.0]]])


def test_backward_fills_untouched_params_with_zeros():
    x = Tensor(np.array([1.0]), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = T.tensor_sum(T.scale(x, 2.0))
    tape.backward(loss, [x, unused])
    assert np.array_equal(x.grad, [2.0])
    assert np.array_equal(unused.grad, np.zeros((2, 2)))


def test_backward_rejects_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_nested_tapes_rejected():
    with GradTape():
        with pytest.raises(RuntimeError):
            with GradTape():
                pass


def test_ops_outside_tape_do_not_track():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.scale(x, 2.0)
    assert y.requires_grad is False
    assert x.grad is None


def test_constructor_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        Tensor(np.array([np.inf]))


def test_shape_errors():
    t = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        T.matmul(t, Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        T.add(t, Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))),
                 Tensor(np.zeros(1)))          # kernel larger than input
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))),
                 Tensor(np.zeros(1)))          # channel mismatch
    with pytest.raises(ShapeError):
        T.dense(Tensor(np.ones(4)), Tensor(np.ones((3, 5))),
                Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        T.maxpool2d(Tensor(np.ones((1, 2, 2))), 3, 1)
    with pytest.raises(IndexError):
        T.softmax_cross_entropy(Tensor(np.ones(3)), 3)


def test_conv2d_stride_and_padding_validation():
    x = Tensor(np.ones((1, 4, 4)))
    k = Tensor(np.ones((1, 1, 2, 2)))
    b = Tensor(np.zeros(1))
    with pytest.raises(ValueError):
        T.conv2d(x, k, b, stride=0)
    with pytest.raises(ValueError):
        T.conv2d(x, k, b, padding=-1)


def test_concat_roundtrip_and_gradient_slicing():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0]), requires_grad=True)
    c = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    with GradTape() as tape:
        joined = T.concat([a, b, c])
        loss = T.tensor_sum(T.scale(joined, 1.0))
    assert np.array_equal(joined.data, [1, 2, 3, 4, 5, 6])
    tape.backward(loss)
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [1.0])
    assert np.array_equal(c.grad, [1.0, 1.0, 1.0])


def test_reshape_backward_restores_shape():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3),
               requires_grad=True)
    with GradTape() as tape:
        y = T.reshape(x, (3, 2))
        loss = T.tensor_sum(y)
    tape.backward(loss)
    assert x.grad.shape == (2, 3)
    assert np.array_equal(x.grad, np.ones((2, 3)))
