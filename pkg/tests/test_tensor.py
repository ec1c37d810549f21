import numpy as np
import numpy.testing as npt
import pytest

from dialrank import tensor as T
from dialrank.tensor import Tensor

from fd import assert_grads_match, finite_difference, max_rel_err


def randt(rng, *shape, requires_grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# forward values


def test_softmax_constant_row_is_uniform():
    for k in (1, 3, 7):
        out = T.softmax(Tensor(np.full((2, k), 1.7)), axis=1)
        npt.assert_allclose(out.data, 1.0 / k)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5))
    out = T.matmul(Tensor(np.eye(4)), Tensor(x))
    npt.assert_array_equal(out.data, np.eye(4) @ x)
    npt.assert_allclose(out.data, x)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 9)) * 3
    y = T.softmax(Tensor(x), axis=1).data
    npt.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
    y_shift = T.softmax(Tensor(x + 11.25), axis=1).data
    npt.assert_allclose(y, y_shift, atol=1e-12)


def test_max_reduce_values_and_first_index_ties():
    x = Tensor([[1.0, 3.0, 3.0], [2.0, 0.0, -1.0]], requires_grad=True)
    values, idx = T.max_reduce(x, axis=1)
    npt.assert_array_equal(values.data, [3.0, 2.0])
    npt.assert_array_equal(idx, [1, 0])
    values.backward(np.array([1.0, 1.0]))
    npt.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])  # tie routes to first index


def test_mask_fill_forward_and_no_gradient_through_mask():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    mask = np.array([[True, False, False], [False, False, True]])
    out = T.mask_fill(x, mask, -5.0)
    npt.assert_array_equal(out.data, [[-5, 1, 1], [1, 1, -5]])
    T.sum_reduce(out).backward()
    npt.assert_array_equal(x.grad, [[0, 1, 1], [1, 1, 0]])


def test_embedding_lookup_gathers_and_accumulates():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([[0, 2], [2, 2]])
    out = T.embedding_lookup(table, ids)
    npt.assert_array_equal(out.data[0, 1], [6, 7, 8])
    T.sum_reduce(out).backward()
    npt.assert_array_equal(table.grad[2], [3, 3, 3])  # row used three times
    npt.assert_array_equal(table.grad[1], [0, 0, 0])


def test_embedding_lookup_rejects_out_of_range():
    table = Tensor(np.zeros((4, 3)))
    with pytest.raises(IndexError):
        T.embedding_lookup(table, np.array([4]))


def test_sigmoid_cross_entropy_matches_textbook_formula():
    rng = np.random.default_rng(2)
    z = rng.normal(size=7) * 2
    y = (rng.random(7) > 0.5).astype(float)
    out = T.sigmoid_cross_entropy(Tensor(z), y)
    p = 1.0 / (1.0 + np.exp(-z))
    expected = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    npt.assert_allclose(out.data, expected, rtol=1e-12)


def test_concat_and_slice_round_trip():
    rng = np.random.default_rng(3)
    a, b = randt(rng, 2, 3), randt(rng, 2, 4)
    out = T.concat([a, b], axis=1)
    npt.assert_array_equal(out.data[:, :3], a.data)
    back = out[:, 3:]
    npt.assert_array_equal(back.data, b.data)


# ---------------------------------------------------------------------------
# error handling


def test_shape_errors_name_both_shapes():
    with pytest.raises(T.ShapeError) as info:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(info.value) and "(4, 2)" in str(info.value)
    with pytest.raises(T.ShapeError) as info:
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    assert "(2, 3)" in str(info.value)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_checked_mode_flags_non_finite():
    T.set_checked(True)
    try:
        with pytest.raises(T.NonFiniteError):
            T.exp(Tensor(np.array([1000.0])))
        T.exp(Tensor(np.array([1.0])))  # fine
    finally:
        T.set_checked(False)


def test_dtype_switching():
    assert Tensor([1.0]).dtype == np.float64
    with T.using_dtype(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        T.set_default_dtype(np.int32)


# ---------------------------------------------------------------------------
# backward: accumulation and reuse


def test_value_used_k_times_gets_k_contributions():
    x = Tensor([2.0], requires_grad=True)
    (x + x + x).backward(np.array([1.0]))
    npt.assert_array_equal(x.grad, [3.0])

    y = Tensor([3.0], requires_grad=True)
    (y * y).backward(np.array([1.0]))  # d(y^2)/dy = 2y
    npt.assert_array_equal(y.grad, [6.0])


def test_linear_graph_closed_form():
    # z = 2a + 3a = 5a elementwise, so dz/da = 5 everywhere
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    z = a * 2.0 + a * 3.0
    T.sum_reduce(z).backward()
    npt.assert_array_equal(a.grad, np.full((2, 3), 5.0))


def test_masked_positions_do_not_influence_loss():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 4))
    mask = np.zeros((3, 4), dtype=bool)
    mask[1, 2] = mask[0, 0] = True

    def loss_for(data):
        t = Tensor(data, requires_grad=True)
        out = T.sum_reduce(T.tanh(T.mask_fill(t, mask, 0.0)))
        out.backward()
        return out.item(), t.grad

    base, grad = loss_for(x)
    perturbed = x.copy()
    perturbed[mask] += 100.0
    after, grad2 = loss_for(perturbed)
    assert base == after
    assert np.all(grad[mask] == 0) and np.all(grad2[mask] == 0)


# ---------------------------------------------------------------------------
# gradients vs central finite differences (h=1e-5, float64, rel err < 1e-4)


OP_NAMES = [
    "add",
    "add_broadcast",
    "sub",
    "mul",
    "mul_broadcast",
    "matmul",
    "matmul_batched",
    "concat",
    "slice",
    "transpose",
    "reshape",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "softmax",
    "max_reduce",
    "sum_reduce",
    "sum_axis",
    "embedding_lookup",
    "mask_fill",
    "sigmoid_cross_entropy",
]


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a = randt(rng, 3, 4)
    b = randt(rng, 3, 4)
    row = randt(rng, 4)
    m1 = randt(rng, 3, 4)
    m2 = randt(rng, 4, 2)
    bm1 = randt(rng, 2, 3, 4)
    bm2 = randt(rng, 2, 4, 2)
    table = randt(rng, 5, 3)
    ids = np.array([[0, 1, 4], [4, 4, 2]])
    mask = rng.random((3, 4)) > 0.6
    labels = (rng.random((3, 4)) > 0.5).astype(float)

    cases = {
        "add": (lambda: T.add(a, b), [a, b]),
        "add_broadcast": (lambda: T.add(a, row), [a, row]),
        "sub": (lambda: T.sub(a, b), [a, b]),
        "mul": (lambda: T.mul(a, b), [a, b]),
        "mul_broadcast": (lambda: T.mul(a, row), [a, row]),
        "matmul": (lambda: T.matmul(m1, m2), [m1, m2]),
        "matmul_batched": (lambda: T.matmul(bm1, bm2), [bm1, bm2]),
        "concat": (lambda: T.concat([a, b, a], axis=1), [a, b]),
        "slice": (lambda: a[1:, :2], [a]),
        "transpose": (lambda: T.transpose(bm1, (1, 0, 2)), [bm1]),
        "reshape": (lambda: T.reshape(a, (2, 6)), [a]),
        "tanh": (lambda: T.tanh(a), [a]),
        "sigmoid": (lambda: T.sigmoid(a), [a]),
        "relu": (lambda: T.relu(a), [a]),
        "exp": (lambda: T.exp(a), [a]),
        "softmax": (lambda: T.softmax(a, axis=1), [a]),
        "max_reduce": (lambda: T.max_reduce(a, axis=1)[0], [a]),
        "sum_reduce": (lambda: T.sum_reduce(a), [a]),
        "sum_axis": (lambda: T.sum_reduce(a, axis=0, keepdims=True), [a]),
        "embedding_lookup": (lambda: T.embedding_lookup(table, ids), [table]),
        "mask_fill": (lambda: T.mask_fill(a, mask, 2.5), [a]),
        "sigmoid_cross_entropy": (lambda: T.sigmoid_cross_entropy(a, labels), [a]),
    }
    build, params = cases[name]
    assert_grads_match(build, params, rtol=1e-4)


def test_finite_difference_helper_self_check():
    # sanity-check the oracle itself on d/dx sum(x^2) = 2x
    x = np.array([1.0, -2.0, 0.5])
    (grad,) = finite_difference(lambda: float((x**2).sum()), [x])
    assert max_rel_err(grad, 2 * x) < 1e-8
