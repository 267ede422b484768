import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mutualfriends import autodiff as ad
from mutualfriends.autodiff import AdaGrad, Tape, Tensor

dims = st.integers(min_value=1, max_value=8)


def fd_check(build_loss, params, rng_seed=0, tol=1e-4):
    err = ad.finite_difference_check(
        build_loss, params, n_coords=4, rng=np.random.default_rng(rng_seed))
    assert err < tol, f"max relative error {err}"


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


@settings(max_examples=20, deadline=None)
@given(n=dims, k=dims, m=dims, seed=st.integers(0, 10_000))
def test_matmul_gradient(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, n, k), rand(rng, k, m)
    w = rng.standard_normal((n, m))
    fd_check(lambda: ad.tsum(ad.mul(ad.matmul(a, b), Tensor(w))), {"a": a, "b": b})


@settings(max_examples=15, deadline=None)
@given(n=dims, m=dims, seed=st.integers(0, 10_000))
def test_add_mul_broadcast_gradients(n, m, seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, n, m)
    row = rand(rng, 1, m)
    col = rand(rng, n, 1)
    w = Tensor(rng.standard_normal((n, m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.add(a, row), w)), {"a": a, "row": row})
    fd_check(lambda: ad.tsum(ad.mul(ad.mul(a, col), w)), {"a": a, "col": col})


@settings(max_examples=15, deadline=None)
@given(n=dims, m=dims, seed=st.integers(0, 10_000), axis=st.integers(0, 1))
def test_concat_gradient(n, m, seed, axis):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, n, m), rand(rng, n, m)
    w = Tensor(rng.standard_normal((2 * n, m) if axis == 0 else (n, 2 * m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.concat([a, b], axis=axis), w)), {"a": a, "b": b})


@settings(max_examples=15, deadline=None)
@given(n=dims, m=dims, seed=st.integers(0, 10_000))
def test_elementwise_gradients(n, m, seed):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((n, m)))
    for op in (ad.sigmoid, ad.tanh):
        a = rand(rng, n, m)
        fd_check(lambda: ad.tsum(ad.mul(op(a), w)), {"a": a})
    a = rand(rng, n, m)
    fd_check(lambda: ad.tsum(ad.affine_scalar(a, -1.7, 0.3)), {"a": a})


@settings(max_examples=15, deadline=None)
@given(n=dims, m=dims, seed=st.integers(0, 10_000),
       tau=st.sampled_from([0.5, 1.0, 2.0]))
def test_softmax_gradient(n, m, seed, tau):
    rng = np.random.default_rng(seed)
    a = rand(rng, n, m)
    w = Tensor(rng.standard_normal((n, m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.softmax(a, temperature=tau), w)), {"a": a})


@settings(max_examples=15, deadline=None)
@given(rows=dims, m=dims, n_idx=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_gather_gradient(rows, m, n_idx, seed):
    rng = np.random.default_rng(seed)
    table = rand(rng, rows, m)
    idx = rng.integers(0, rows, size=n_idx)  # duplicates accumulate
    w = Tensor(rng.standard_normal((n_idx, m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.gather_rows(table, idx), w)), {"t": table})


@settings(max_examples=15, deadline=None)
@given(rows=st.integers(2, 8), m=dims, seed=st.integers(0, 10_000))
def test_scatter_gradient(rows, m, seed):
    rng = np.random.default_rng(seed)
    base = rand(rng, rows, m)
    n_idx = rng.integers(1, rows + 1)
    idx = rng.choice(rows, size=n_idx, replace=False)
    patch = rand(rng, n_idx, m)
    w = Tensor(rng.standard_normal((rows, m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.scatter_rows(base, idx, patch), w)),
             {"base": base, "patch": patch})


@settings(max_examples=15, deadline=None)
@given(m=dims, seed=st.integers(0, 10_000))
def test_segment_max_gradient(m, seed):
    rng = np.random.default_rng(seed)
    segment_ids = np.sort(rng.integers(0, 4, size=rng.integers(1, 9)))
    x = rand(rng, len(segment_ids), m)
    w = Tensor(rng.standard_normal((5, m)))  # segment 4 may be empty
    fd_check(lambda: ad.tsum(ad.mul(ad.segment_max(x, segment_ids, 5), w)), {"x": x})


@settings(max_examples=15, deadline=None)
@given(k=st.integers(2, 5), n=dims, m=dims, seed=st.integers(0, 10_000))
def test_maximum_reduce_gradient(k, n, m, seed):
    rng = np.random.default_rng(seed)
    tensors = [rand(rng, n, m) for _ in range(k)]
    w = Tensor(rng.standard_normal((n, m)))
    fd_check(lambda: ad.tsum(ad.mul(ad.maximum_reduce(tensors), w)),
             {f"t{i}": t for i, t in enumerate(tensors)})


@settings(max_examples=15, deadline=None)
@given(n=dims, classes=st.integers(2, 8), seed=st.integers(0, 10_000),
       weighted=st.booleans())
def test_cross_entropy_gradient(n, classes, seed, weighted):
    rng = np.random.default_rng(seed)
    logits = rand(rng, n, classes)
    targets = rng.integers(0, classes, size=n)
    weights = rng.random(n) if weighted else None
    fd_check(lambda: ad.cross_entropy(logits, targets, weights), {"logits": logits})


@settings(max_examples=10, deadline=None)
@given(n=dims, din=dims, h=dims, seed=st.integers(0, 10_000))
def test_lstm_cell_gradient(n, din, h, seed):
    rng = np.random.default_rng(seed)
    params = ad.lstm_params(din, h, rng)
    x = rand(rng, n, din)
    h0, c0 = rand(rng, n, h), rand(rng, n, h)
    w = Tensor(rng.standard_normal((n, h)))

    def loss():
        hh, cc = ad.lstm_cell(x, h0, c0, params)
        return ad.tsum(ad.add(ad.mul(hh, w), ad.mul(cc, w)))

    fd_check(loss, {"x": x, "h0": h0, "c0": c0, **params})


def test_lstm_three_steps_gradient():
    rng = np.random.default_rng(7)
    params = ad.lstm_params(4, 5, rng)
    xs = [rand(rng, 1, 4) for _ in range(3)]
    w = Tensor(rng.standard_normal((1, 5)))

    def loss():
        h, c = ad.zeros((1, 5)), ad.zeros((1, 5))
        for x in xs:
            h, c = ad.lstm_cell(x, h, c, params)
        return ad.tsum(ad.mul(h, w))

    fd_check(loss, {**params, **{f"x{i}": x for i, x in enumerate(xs)}})


def test_lstm_zero_weights_zero_hidden():
    params = {
        "wx": Tensor(np.zeros((3, 8))), "wh": Tensor(np.zeros((2, 8))),
        "b": Tensor(np.zeros((1, 8))),
    }
    x = Tensor(np.random.default_rng(0).standard_normal((1, 3)))
    h, c = ad.lstm_cell(x, Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), params)
    assert np.all(h.data == 0.0)
    assert np.all(c.data == 0.0)
    # with nonzero previous cell state: c' = 0.5 c_prev, h' = 0.5 tanh(c')
    c_prev = Tensor(np.ones((1, 2)))
    h2, c2 = ad.lstm_cell(x, Tensor(np.zeros((1, 2))), c_prev, params)
    assert np.allclose(c2.data, 0.5)
    assert np.allclose(h2.data, 0.5 * np.tanh(0.5))


def test_softmax_values():
    out = ad.softmax(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]])
    out = ad.softmax(Tensor([[math.log(2.0), 0.0]]))
    assert np.allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-12)


def test_softmax_sums_to_one_and_permutation():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 7))
    y = ad.softmax(Tensor(x), temperature=0.5).data
    assert np.all(np.abs(y.sum(axis=1) - 1.0) < 1e-12)
    perm = rng.permutation(7)
    y_perm = ad.softmax(Tensor(x[:, perm]), temperature=0.5).data
    assert np.allclose(y[:, perm], y_perm, rtol=1e-12, atol=1e-15)


def test_maximum_reduce_values():
    out = ad.maximum_reduce([Tensor([[1.0, 4.0]]), Tensor([[3.0, 2.0]])])
    assert np.array_equal(out.data, [[3.0, 4.0]])


def test_backward_sum_gives_ones():
    theta = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ad.tsum(theta)
    tape.backward(loss)
    assert np.array_equal(theta.grad, np.ones((3, 4)))


def test_backward_requires_scalar():
    theta = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        out = ad.tanh(theta)
    with pytest.raises(ad.ShapeError):
        tape.backward(out)


def test_second_backward_accumulates():
    theta = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.tsum(theta)
    tape.backward(loss)
    first = theta.grad.copy()
    with Tape() as tape2:
        loss2 = ad.tsum(theta)
    tape2.backward(loss2)
    assert np.array_equal(theta.grad, 2 * first)
    theta.zero_grad()
    assert theta.grad is None


def test_shape_errors():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(a, b)
    with pytest.raises(ad.ShapeError):
        ad.add(a, b)
    with pytest.raises(ad.ShapeError):
        ad.mul(a, b)


def test_adagrad_hand_example():
    theta = Tensor(np.array([[1.0]]), requires_grad=True)
    theta.grad = np.array([[0.5]])
    opt = AdaGrad({"theta": theta}, lr=0.5, eps=1e-8)
    opt.step()
    assert opt.accum["theta"][0, 0] == pytest.approx(0.25)
    assert theta.data[0, 0] == pytest.approx(0.5, abs=1e-6)


def test_adagrad_zero_gradient_noop():
    theta = Tensor(np.array([[1.0]]), requires_grad=True)
    opt = AdaGrad({"theta": theta}, lr=0.5)
    theta.grad = np.array([[0.0]])
    opt.step()
    assert theta.data[0, 0] == 1.0
    assert opt.accum["theta"][0, 0] == 0.0


def test_adagrad_second_step_smaller():
    theta = Tensor(np.array([[1.0]]), requires_grad=True)
    opt = AdaGrad({"theta": theta}, lr=0.5)
    theta.grad = np.array([[0.5]])
    opt.step()
    after_first = theta.data[0, 0]
    theta.grad = np.array([[0.5]])
    opt.step()
    second_move = after_first - theta.data[0, 0]
    first_move = 1.0 - after_first
    assert 0 < second_move < first_move


def test_param_init_deterministic():
    a = ad.param((3, 3), np.random.default_rng(42))
    b = ad.param((3, 3), np.random.default_rng(42))
    assert np.array_equal(a.data, b.data)
    assert np.all(np.abs(a.data) <= 0.1)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": ad.param((4, 5), rng), "b": ad.param((1, 5), rng)}
    path = str(tmp_path / "ckpt.npz")
    ad.save_checkpoint(path, tensors, meta={"config": {"hidden": 4}})
    loaded, meta = ad.load_checkpoint(path)
    assert meta == {"config": {"hidden": 4}}
    for name, t in tensors.items():
        assert np.array_equal(loaded[name].data, t.data)
