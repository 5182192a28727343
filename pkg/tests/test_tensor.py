"""Autodiff core: oracles for forward values, finite differences for grads."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmasr import tensor as tn
from mmasr.errors import ContractError, NumericError, ShapeError
from mmasr.tensor import Tensor

RNG = np.random.default_rng(1234)


def matmul_loops(a, b):
    """Triple-loop reference, accumulating in the same j-order as BLAS-free numpy."""
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def test_matmul_matches_loop_oracle():
    a = RNG.standard_normal((4, 3))
    b = RNG.standard_normal((3, 5))
    got = tn.matmul(Tensor(a), Tensor(b)).data
    assert np.allclose(got, matmul_loops(a, b), rtol=0, atol=1e-12)


def test_matmul_identity_and_zero():
    a = RNG.standard_normal((3, 3))
    assert np.array_equal(tn.matmul(Tensor(a), Tensor(np.eye(3))).data, a)
    z = tn.matmul(Tensor(a), Tensor(np.zeros((3, 2)))).data
    assert np.array_equal(z, np.zeros((3, 2)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        tn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_associativity():
    for _ in range(20):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((4, 5))
        c = RNG.standard_normal((5, 2))
        left = tn.matmul(tn.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = tn.matmul(Tensor(a), tn.matmul(Tensor(b), Tensor(c))).data
        denom = np.maximum(np.abs(left), 1.0)
        assert np.max(np.abs(left - right) / denom) < 1e-9


def test_softmax_frozen_extended_precision_values():
    # softmax([1, 2, 3]) computed at 60 decimal digits, rounded to float64
    expected = np.array([
        0.0900305731703804579980221,
        0.2447284710547976524729596,
        0.6652409557748218895290183,
    ])
    got = tn.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0]
    assert np.max(np.abs(got - expected)) < 1e-15


def test_softmax_uniform_row():
    got = tn.softmax_rows(Tensor([[2.0, 2.0, 2.0, 2.0]])).data[0]
    assert np.allclose(got, 0.25, atol=1e-15)


def test_softmax_shift_invariance():
    x = RNG.standard_normal((3, 5))
    a = tn.softmax_rows(Tensor(x)).data
    b = tn.softmax_rows(Tensor(x + 123.456)).data
    assert np.max(np.abs(a - b)) < 1e-12


@given(st.floats(min_value=-1e4, max_value=1e4), st.floats(min_value=-1e4, max_value=1e4))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one_at_large_magnitude(lo, hi):
    x = np.array([[lo, hi, (lo + hi) / 2.0, 0.0]])
    s = tn.softmax_rows(Tensor(x)).data.sum()
    assert abs(s - 1.0) < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        tn.softmax_rows(Tensor([[1.0, np.inf]]))
    with pytest.raises(NumericError):
        tn.log_softmax_rows(Tensor([[np.nan, 0.0]]))


def test_log_softmax_matches_log_of_softmax():
    x = RNG.standard_normal((4, 6))
    a = tn.log_softmax_rows(Tensor(x)).data
    b = np.log(tn.softmax_rows(Tensor(x)).data)
    assert np.max(np.abs(a - b)) < 1e-12


def test_grad_check_sum_is_exact():
    x = RNG.standard_normal((3, 4))
    assert tn.grad_check(tn.sum_all, x) < 1e-9


def test_grad_check_elementwise_square():
    # d/dx sum(x*x) = 2x -> [2, 4, 6]
    x = Tensor([1.0, 2.0, 3.0])
    loss = tn.sum_all(tn.mul(x, x))
    loss.backward()
    assert np.max(np.abs(x.grad - np.array([2.0, 4.0, 6.0]))) < 1e-12
    assert tn.grad_check(lambda t: tn.sum_all(tn.mul(t, t)), np.array([1.0, 2.0, 3.0])) < 1e-7


def test_grad_check_softmax_column():
    x = RNG.standard_normal((2, 4))
    f = lambda t: tn.sum_all(tn.slice_cols(tn.softmax_rows(t), 0, 1))
    assert tn.grad_check(f, x) < 1e-6


def test_grad_check_eps_bounds():
    with pytest.raises(ContractError):
        tn.grad_check(tn.sum_all, np.ones(2), eps=1e-2)
    with pytest.raises(ContractError):
        tn.grad_check(tn.sum_all, np.ones(2), eps=1e-9)


def test_grad_check_requires_scalar():
    with pytest.raises(ContractError):
        tn.grad_check(lambda t: t, np.ones(3))


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        Tensor(np.ones((2, 2))).backward()


def test_broadcast_add_gradients():
    a = Tensor(RNG.standard_normal((3, 4)))
    b = Tensor(RNG.standard_normal((1, 4)))
    tn.sum_all(tn.add(a, b)).backward()
    assert np.array_equal(a.grad, np.ones((3, 4)))
    assert np.array_equal(b.grad, np.full((1, 4), 3.0))


def test_logaddexp_handles_neg_inf():
    a = Tensor(np.array([-np.inf, 0.0]))
    b = Tensor(np.array([-np.inf, -np.inf]))
    y = tn.logaddexp(a, b)
    assert np.isneginf(y.data[0])
    assert y.data[1] == 0.0
    tn.sum_all(y).backward()
    assert np.all(np.isfinite(a.grad))
    assert np.all(np.isfinite(b.grad))


def test_logaddexp_grad_check():
    a = RNG.standard_normal(5)
    b = Tensor(RNG.standard_normal(5))
    f = lambda t: tn.sum_all(tn.logaddexp(t, b))
    assert tn.grad_check(f, a) < 1e-6


def test_concat_slice_grads():
    x = RNG.standard_normal((4, 3))
    f = lambda t: tn.sum_all(tn.mul(tn.slice_rows(t, 1, 3), tn.slice_rows(t, 1, 3)))
    assert tn.grad_check(f, x) < 1e-6
    g = lambda t: tn.sum_all(tn.mul(tn.concat_rows([t, t]), tn.concat_rows([t, t])))
    assert tn.grad_check(g, x) < 1e-6


def test_gather_rows_accumulates_duplicates():
    table = Tensor(RNG.standard_normal((3, 2)))
    out = tn.gather_rows(table, [1, 1, 0])
    tn.sum_all(out).backward()
    assert np.array_equal(table.grad, np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]]))


def test_take_entries_forward_and_grad():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    got = tn.take_entries(a, [0, 1], [2, 0])
    assert np.array_equal(got.data, np.array([2.0, 3.0]))
    x = RNG.standard_normal((3, 4))
    f = lambda t: tn.sum_all(tn.mul(tn.take_entries(t, [0, 2], [1, 3]),
                                    tn.take_entries(t, [0, 2], [1, 3])))
    assert tn.grad_check(f, x) < 1e-6


def test_mean_pool_rows_ragged_tail():
    x = np.arange(10.0).reshape(5, 2)
    pooled = tn.mean_pool_rows(Tensor(x), 2).data
    expected = np.array([x[0:2].mean(axis=0), x[2:4].mean(axis=0), x[4:5].mean(axis=0)])
    assert np.array_equal(pooled, expected)
    f = lambda t: tn.sum_all(tn.mul(tn.mean_pool_rows(t, 2), tn.mean_pool_rows(t, 2)))
    assert tn.grad_check(f, x) < 1e-6


def test_no_grad_records_no_graph():
    with tn.no_grad():
        y = tn.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    assert y._parents == ()
    assert y._backward is None


def test_silu_and_power_grads():
    x = RNG.standard_normal((3, 3))
    assert tn.grad_check(lambda t: tn.sum_all(tn.silu(t)), x) < 1e-6
    pos = np.abs(RNG.standard_normal(4)) + 0.5
    assert tn.grad_check(lambda t: tn.sum_all(tn.power(t, -0.5)), pos) < 1e-6
