import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liemotion import core
from liemotion.core import tensor as T
from liemotion.core import (AdamState, GRUCell, Linear, NonFiniteError, ShapeError, Tape, Tensor,
                            adam_step, gaussian_kl, grad_check, gru_step, reparameterize)
from liemotion.core.checkpoint import CheckpointError, decode, encode

import oracles


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_matmul_identity_and_tanh_zero():
    A = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)
    np.testing.assert_array_equal(T.tanh(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor(np.array([[1000.0]])))


def test_ops_record_only_when_tracked():
    with Tape() as tape:
        T.add(Tensor(np.ones((1, 1))), Tensor(np.ones((1, 1))))
        assert not tape.records
        T.add(Tensor(np.ones((1, 1)), requires_grad=True), Tensor(np.ones((1, 1))))
        assert len(tape.records) == 1


def test_random_op_chain_gradients():
    rng = np.random.default_rng(0)
    a, b, c = param(rng, 3, 4), param(rng, 4, 2), param(rng, 1, 2)

    def f():
        x = T.tanh(T.add(T.matmul(a, b), c))
        y = T.mul(T.sigmoid(x), T.concat([T.slice_cols(x, 0, 1),
                                          T.slice_cols(x, 1, 2)], axis=1))
        z = T.concat([y, T.slice_rows(T.exp(T.scale(x, 0.3)), 0, 2)], axis=0)
        return T.sum_all(T.square(T.sub(z, T.clip(z, -0.2, 0.5))))

    rep = grad_check(f, [a, b, c])
    assert rep.passed, rep


def test_linear_grad_exact():
    rng = np.random.default_rng(1)
    w = param(rng, 3, 5)
    x = Tensor(rng.standard_normal((4, 5)))
    rep = grad_check(lambda: T.sum_all(T.linear(x, w)), [w])
    assert rep.max_rel_error < 1e-8  # central differences are exact up to rounding


def test_gru_zero_parameters():
    cell = GRUCell(3, 4)
    h = gru_step(cell, Tensor(np.random.default_rng(2).standard_normal((2, 3))),
                 Tensor(np.zeros((2, 4))))
    np.testing.assert_array_equal(h.data, np.zeros((2, 4)))


def test_gru_scalar_hand_evaluation():
    cell = GRUCell(1, 1)
    # gates [r, z, n]: input weights, hidden weights, biases
    cell.w_ih.data[:] = [[0.5], [-0.3], [0.8]]
    cell.w_hh.data[:] = [[0.2], [0.4], [-0.6]]
    cell.bias.data[:] = [[0.1, -0.2, 0.05]]
    x, h = 0.7, -0.4
    sig = lambda v: 1 / (1 + np.exp(-v))
    r = sig(0.5 * x + 0.2 * h + 0.1)
    z = sig(-0.3 * x + 0.4 * h - 0.2)
    n = np.tanh(0.8 * x - 0.6 * (r * h) + 0.05)
    want = z * h + (1 - z) * n
    got = gru_step(cell, Tensor(np.array([[x]])), Tensor(np.array([[h]]))).item()
    assert abs(got - want) < 1e-15


def test_gru_unrolled_gradient():
    rng = np.random.default_rng(3)
    cell = GRUCell(3, 4, rng)
    xs = [param(rng, 2, 3) for _ in range(3)]
    h0 = param(rng, 2, 4)

    def f():
        h = h0
        for x in xs:
            h = cell(x, h)
        return T.sum_all(T.square(h))

    rep = grad_check(f, list(cell.parameters().values()) + xs + [h0])
    assert rep.passed, rep


def test_fk_after_linear_gradient(skeleton):
    rng = np.random.default_rng(4)
    lin = Linear(5, 3 * skeleton.bone_count, rng)
    x = Tensor(rng.standard_normal((2, 5)))
    root = param(rng, 2, 3)
    target = rng.standard_normal((2, 3 * skeleton.joint_count))

    def f():
        j = core.forward_kinematics(lin(x), root, skeleton)
        return T.sum_all(T.square(T.sub(j, Tensor(target))))

    rep = grad_check(f, [lin.weight, lin.bias, root])
    assert rep.passed, rep


def test_fk_gradient_at_zero_rotation(skeleton):
    omega = Tensor(np.zeros((1, 3 * skeleton.bone_count)), requires_grad=True)
    root = Tensor(np.zeros((1, 3)))
    target = np.random.default_rng(5).standard_normal((1, 3 * skeleton.joint_count))
    f = lambda: T.sum_all(T.square(T.sub(core.forward_kinematics(omega, root, skeleton),
                                         Tensor(target))))
    assert grad_check(f, [omega]).passed


# latent helpers -------------------------------------------------------------

def test_reparameterize_zero_variance_and_determinism():
    mu = Tensor(np.arange(4.0).reshape(2, 2))
    z = reparameterize(mu, Tensor(np.full((2, 2), -1e9)), np.random.default_rng(0))
    np.testing.assert_allclose(z.data, mu.data, atol=1e-2)  # std = e^-5 after clamping
    a = reparameterize(mu, Tensor(np.zeros((2, 2))), np.random.default_rng(7)).data
    b = reparameterize(mu, Tensor(np.zeros((2, 2))), np.random.default_rng(7)).data
    assert np.array_equal(a, b)


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mu = np.array([[0.3, -1.2]])
    lv = np.array([[0.5, -0.7]])
    z = reparameterize(Tensor(np.repeat(mu, n, 0)), Tensor(np.repeat(lv, n, 0)),
                       np.random.default_rng(1)).data
    sigma = np.exp(lv / 2)
    assert np.all(np.abs(z.mean(0) - mu) < 3 * sigma / np.sqrt(n))


def test_reparameterize_gradient_reaches_mu_and_logvar():
    rng = np.random.default_rng(2)
    mu, lv = param(rng, 3, 2), param(rng, 3, 2)
    f = lambda: T.sum_all(T.square(reparameterize(mu, lv, np.random.default_rng(9))))
    assert grad_check(f, [mu, lv]).passed


def test_kl_closed_forms():
    z = Tensor(np.zeros((1, 3)))
    assert gaussian_kl(z, z, z, z).item() == 0.0
    one = Tensor(np.ones((1, 3)))
    assert abs(gaussian_kl(z, z, one, z).item() - 1.5) < 1e-15


def test_kl_matches_quadrature():
    rng = np.random.default_rng(3)
    for _ in range(5):
        mq, mp = rng.standard_normal(2)
        lq, lp = rng.uniform(-1, 1, 2)
        got = gaussian_kl(*(Tensor(np.array([[v]])) for v in (mq, lq, mp, lp))).item()
        assert abs(got - oracles.kl_quadrature(mq, np.exp(lq), mp, np.exp(lp))) < 1e-6


@settings(max_examples=100)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_kl_non_negative(v):
    t = [Tensor(np.array([[x]])) for x in v]
    assert gaussian_kl(*t).item() >= -1e-15


def test_kl_gradient():
    rng = np.random.default_rng(4)
    ps = [param(rng, 2, 3) for _ in range(4)]
    assert grad_check(lambda: gaussian_kl(*ps), ps).passed


# adam -----------------------------------------------------------------------

def test_adam_fixed_point():
    p = {"w": Tensor(np.array([[1.0, -2.0]]), requires_grad=True)}
    adam_step(p, {"w": np.zeros((1, 2))}, AdamState(weight_decay=0.0))
    np.testing.assert_array_equal(p["w"].data, [[1.0, -2.0]])


def test_adam_first_step():
    p = {"w": Tensor(np.array([[0.5]]), requires_grad=True)}
    st_ = AdamState(weight_decay=0.0)
    adam_step(p, {"w": np.array([[1.0]])}, st_)
    assert abs(p["w"].item() - (0.5 - 2e-4 / (1 + 1e-8))) < 1e-15
    assert st_.step == 1


def test_adam_decreases_quadratic():
    rng = np.random.default_rng(5)
    w = Tensor(rng.standard_normal((1, 5)), requires_grad=True)
    target = rng.standard_normal((1, 5))
    st_ = AdamState(lr=0.05)
    losses = []
    for _ in range(100):
        with Tape() as tape:
            loss = T.sum_all(T.square(T.sub(w, Tensor(target))))
        (g,) = tape.gradient(loss, [w])
        losses.append(loss.item())
        adam_step({"w": w}, {"w": g}, st_)
    assert losses[-1] < 1e-3 * losses[0]
    assert all(b < a for a, b in zip(losses[:20], losses[1:20]))


def test_backward_is_deterministic():
    rng = np.random.default_rng(6)
    cell = GRUCell(2, 3, rng)
    x = Tensor(rng.standard_normal((4, 2)))

    def grads():
        with Tape() as tape:
            loss = T.sum_all(T.square(cell(x, Tensor(np.zeros((4, 3))))))
        return tape.gradient(loss, list(cell.parameters().values()))

    for a, b in zip(grads(), grads()):
        assert np.array_equal(a, b)


# checkpoint container -------------------------------------------------------

def test_checkpoint_round_trip_and_stability():
    rng = np.random.default_rng(7)
    tensors = {"b": rng.standard_normal((2, 3)), "a": rng.standard_normal(4)}
    meta = {"seed": 3, "z": [1, 2], "a": "x"}
    buf = encode(tensors, meta)
    back, m = decode(buf)
    assert m == meta
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    assert encode(dict(reversed(list(tensors.items()))), dict(reversed(list(meta.items())))) == buf
    with pytest.raises(CheckpointError):
        decode(buf[:-1])
    with pytest.raises(CheckpointError):
        decode(b"garbage!" + buf[8:])
