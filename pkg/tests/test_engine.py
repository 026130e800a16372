import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmfusion.engine import (GRUCell, Parameter, SplitMix64, Tensor, checkpoint, grad_check,
                              gru_cell, ops, using)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv2d(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(np.eye(2), x).data, x)


def test_matmul_against_triple_loop():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    expected = naive_matmul(a, b)
    assert np.array_equal(expected, [[19, 22], [43, 50]])
    assert np.array_equal(ops.matmul(a, b).data, expected)


def test_matmul_empty_inner():
    out = ops.matmul(np.zeros((3, 0)), np.zeros((0, 2)))
    assert out.shape == (3, 2) and not out.data.any()


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="inner dimensions"):
        ops.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


# -- conv2d ------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 4))
    k = np.zeros((3, 3, 1, 1))
    for c in range(3):
        k[c, c] = 1.0
    assert np.array_equal(ops.conv2d(x, k).data, x)


def test_conv_zero_kernel():
    x = np.random.default_rng(1).normal(size=(1, 2, 5, 5))
    assert not ops.conv2d(x, np.zeros((3, 2, 3, 3)), padding=1).data.any()


@pytest.mark.parametrize("shape,kshape,stride,pad", [
    ((1, 2, 5, 5), (3, 2, 3, 3), 1, 0),
    ((2, 4, 9, 9), (3, 4, 3, 3), 2, 1),
    ((2, 3, 7, 6), (2, 3, 2, 3), 1, 2),
    ((1, 1, 8, 8), (1, 1, 7, 7), 1, 3),
])
def test_conv_matches_nested_loops(shape, kshape, stride, pad):
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=shape), rng.normal(size=kshape)
    got = ops.conv2d(x, w, stride=stride, padding=pad).data
    assert np.max(np.abs(got - naive_conv2d(x, w, stride, pad))) < 1e-12


def test_conv_kernel_too_large():
    with pytest.raises(ValueError, match="larger than padded input"):
        ops.conv2d(np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 5, 5)))


# -- softmax / layer_norm / activations -------------------------------------

def test_softmax_cases():
    assert np.allclose(ops.softmax(np.zeros(4)).data, 0.25, atol=0, rtol=0)
    got = ops.softmax(np.array([0.0, math.log(3.0)])).data
    assert np.allclose(got, [0.25, 0.75], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(-50, 50))
def test_softmax_rows_and_shift_invariance(values, shift):
    x = np.array(values)
    y = ops.softmax(x).data
    assert abs(y.sum() - 1.0) < 1e-9 and np.all(y >= 0)
    assert np.allclose(ops.softmax(x + shift).data, y, atol=1e-12)


def test_layer_norm_cases():
    one, zero = np.ones(3), np.zeros(3)
    assert np.array_equal(ops.layer_norm(np.full(3, 7.0), one, zero).data, zero)
    x = np.random.default_rng(3).normal(size=(4, 3))
    beta = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(ops.layer_norm(x, zero, beta).data, np.broadcast_to(beta, (4, 3)))
    got = ops.layer_norm(np.array([1.0, 2.0, 3.0]), one, zero, eps=0.0).data
    assert np.allclose(got, [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=16).filter(lambda v: np.std(v) > 1e-2))
def test_layer_norm_moments(values):
    d = len(values)
    y = ops.layer_norm(np.array(values), np.ones(d), np.zeros(d), eps=1e-12).data
    assert abs(y.mean()) < 1e-9
    assert abs(y.var() - 1.0) < 1e-6


def test_activation_values():
    assert ops.activation(np.array(0.0), "sigmoid").item() == 0.5
    assert ops.activation(np.array(-3.0), "relu").item() == 0.0
    assert abs(ops.activation(np.array(0.0), "softplus").item() - math.log(2.0)) < 1e-15
    assert abs(ops.activation(np.array(1.5), "silu").item() - 1.5 / (1 + math.exp(-1.5))) < 1e-15
    with pytest.raises(ValueError):
        ops.activation(np.zeros(2), "gelu")


def test_relu_gradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    ops.relu(x).sum().backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_sigmoid_no_overflow():
    y = ops.sigmoid(np.array([-1000.0, 1000.0])).data
    assert np.array_equal(y, [0.0, 1.0])


# -- GRU ---------------------------------------------------------------------

def _zero_gru(d_in, d_h):
    cell = GRUCell(SplitMix64(0), d_in, d_h)
    for _, p in cell.named_parameters():
        p.data[...] = 0.0
    return cell


def test_gru_zero_weights():
    cell = _zero_gru(3, 2)
    assert not gru_cell(np.zeros(3), np.zeros(2), cell).data.any()


def test_gru_closed_update_gate_copies_state():
    cell = _zero_gru(3, 2)
    cell.b_z.data[...] = -60.0
    h = np.array([0.3, -0.7])
    out = gru_cell(np.array([1.0, 2.0, 3.0]), h, cell).data
    assert np.allclose(out, h, atol=1e-20)


def test_gru_against_scalar_oracle():
    cell = GRUCell(SplitMix64(11), 3, 3)
    rng = np.random.default_rng(4)
    x, h = rng.normal(size=3), rng.normal(size=3)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    xh = list(x) + list(h)
    z = [sig(sum(cell.w_z.data[i, j] * xh[j] for j in range(6)) + cell.b_z.data[i]) for i in range(3)]
    r = [sig(sum(cell.w_r.data[i, j] * xh[j] for j in range(6)) + cell.b_r.data[i]) for i in range(3)]
    xrh = list(x) + [r[i] * h[i] for i in range(3)]
    cand = [math.tanh(sum(cell.w_h.data[i, j] * xrh[j] for j in range(6)) + cell.b_h.data[i]) for i in range(3)]
    expected = [(1 - z[i]) * h[i] + z[i] * cand[i] for i in range(3)]
    assert np.max(np.abs(gru_cell(x, h, cell).data - expected)) < 1e-12


def test_gru_dimension_mismatch():
    with pytest.raises(ValueError):
        gru_cell(np.zeros(4), np.zeros(2), _zero_gru(3, 2))


# -- backward ----------------------------------------------------------------

def test_backward_sum_of_squares():
    x = Parameter(np.array([1.0, -2.0, 3.5]))
    (x * x).sum().backward()
    assert np.array_equal(x.grad, 2 * x.data)


def test_backward_accumulates_without_reset():
    x = Parameter(np.array([1.0, 2.0]))
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.array_equal(x.grad, [6.0, 6.0])


def test_backward_constant_loss_leaves_zero_grads():
    p = Parameter(np.ones(3))
    p.zero_grad()
    Tensor(np.array(4.0)).backward()
    assert np.array_equal(p.grad, np.zeros(3))


def test_backward_requires_scalar():
    p = Parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        (p * 2.0).backward()


def test_two_layer_composite_vs_finite_differences():
    rng = SplitMix64(5)
    w1, w2 = Parameter(rng.normal((4, 3))), Parameter(rng.normal((2, 4)))
    x = np.random.default_rng(5).normal(size=(5, 3))

    def loss():
        return ops.tanh(ops.linear(ops.sigmoid(ops.linear(x, w1)), w2)).sum()

    assert grad_check(loss, [w1, w2], step=1e-5) < 1e-6


# -- grad_check ----------------------------------------------------------------

def test_grad_check_quadratic():
    p = Parameter(np.array([0.5, -1.5, 2.0]))
    assert grad_check(lambda: (p * p * 3.0 + p).sum(), [p]) < 1e-9


def test_grad_check_independent_function():
    p = Parameter(np.array([0.5, -1.5]))
    assert grad_check(lambda: Tensor(np.array(2.0)), [p]) == 0.0


def test_grad_check_detects_wrong_gradient():
    p = Parameter(np.array([0.5, -1.5]))
    assert grad_check(lambda: (ops.corrupt_gradient(p, 1.5) ** 2).sum(), [p]) > 0.1


def test_grad_check_reports_non_finite_coordinate():
    p = Parameter(np.array([1e-6, 1.0]), name="w")

    def f():
        return ops.log(p).sum()

    with np.errstate(invalid="ignore"), using(check_finite=False), pytest.raises(FloatingPointError, match=r"w\[\(0,\)\]"):
        grad_check(f, [p], step=1e-5)


def test_grad_check_requires_float64():
    p = Parameter(np.ones(2))
    with using(precision="float32"), pytest.raises(RuntimeError):
        grad_check(lambda: p.sum(), [p])


RANDOM_OPS = {
    "softmax": lambda t: ops.softmax(t, axis=-1),
    "log_softmax": lambda t: ops.log_softmax(t, axis=0),
    "layer_norm": lambda t: ops.layer_norm(t, np.linspace(0.5, 1.5, t.shape[-1]), np.zeros(t.shape[-1])),
    "silu": ops.silu,
    "softplus": ops.softplus,
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
    "exp": ops.exp,
    "max": lambda t: t.max(axis=1),
    "maxpool": lambda t: ops.max_pool2d(t.reshape(1, 1, 4, 4)),
    "avgpool": lambda t: ops.avg_pool2d(t.reshape(1, 1, 4, 4)),
    "upsample": lambda t: ops.upsample_nearest2d(t.reshape(1, 2, 2, 4)),
    "transpose": lambda t: t.T * np.arange(16.0).reshape(4, 4),
    "getitem": lambda t: t[np.array([0, 2, 2]), 1:3],
    "flip": lambda t: ops.flip(t, 0) * np.arange(16.0).reshape(4, 4),
    "pad": lambda t: ops.pad_axis(t, 0, 2, 1),
    "concat": lambda t: ops.concat([t, t * 2.0], axis=1),
    "div": lambda t: t / (t * t + 1.0),
}


@pytest.mark.parametrize("name", sorted(RANDOM_OPS))
def test_every_op_passes_grad_check(name):
    x = Parameter(np.random.default_rng(6).normal(size=(4, 4)))
    weights = np.random.default_rng(7).normal(size=RANDOM_OPS[name](x).shape)
    assert grad_check(lambda: (RANDOM_OPS[name](x) * weights).sum(), [x]) < 1e-4


def test_conv2d_grad_check():
    rng = np.random.default_rng(8)
    x = Parameter(rng.normal(size=(2, 2, 5, 5)))
    k = Parameter(rng.normal(size=(3, 2, 3, 3)))
    b = Parameter(rng.normal(size=3))
    weights = rng.normal(size=(2, 3, 3, 3))
    assert grad_check(lambda: (ops.conv2d(x, k, b, stride=2, padding=1) * weights).sum(), [x, k, b]) < 1e-4


def test_matmul_broadcast_grad_check():
    rng = np.random.default_rng(9)
    a, b, v = Parameter(rng.normal(size=(2, 3, 4))), Parameter(rng.normal(size=(4, 2))), Parameter(rng.normal(size=4))
    assert grad_check(lambda: ((a @ b) ** 2).sum() + (a @ v).sum(), [a, b, v]) < 1e-4


def test_forward_nan_is_an_error():
    with pytest.raises(FloatingPointError, match="log"):
        ops.log(np.array([-1.0]))


# -- precision context ---------------------------------------------------------

def test_float32_mode_is_explicit():
    assert Tensor([1.0]).dtype == np.float64
    with using(precision="float32"):
        assert Tensor([1.0]).dtype == np.float32
        assert ops.softmax(Tensor([1.0, 2.0])).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


# -- rng -----------------------------------------------------------------------

def test_splitmix_reference_values():
    # reference outputs of the published SplitMix64 for seed 0
    assert [int(v) for v in SplitMix64(0).next_u64(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_splitmix_streams_are_reproducible():
    a, b = SplitMix64(42), SplitMix64(42)
    assert np.array_equal(a.uniform((5,)), b.uniform((5,)))
    u = SplitMix64(1).uniform((1000,), -2.0, 3.0)
    assert u.min() >= -2.0 and u.max() < 3.0


# -- checkpoint ------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    arrays = {"a.weight": np.random.default_rng(0).normal(size=(3, 2)), "b": np.array([np.pi]),
              "scalarish": np.array([[1e-300, -0.0]])}
    path = tmp_path / "m.evmf"
    checkpoint.save(path, arrays)
    back = checkpoint.load(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_layout():
    blob = checkpoint.encode({"w": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"EVMF"
    assert blob[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert blob[12:14] == (1).to_bytes(2, "little") and blob[14:15] == b"w"
    assert blob[15] == 2 and blob[16:24] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(blob[24:], "<f8").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"NOPE" + bytes(8))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(checkpoint.encode({"w": np.ones(3)})[:-4])
