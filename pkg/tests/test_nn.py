import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from numpy.testing import assert_allclose

from dpcert.errors import ConfigError, ValidationError
from dpcert.nn import (
    MlpModel,
    cross_entropy,
    forward,
    hvp_input,
    input_gradient,
    kl_divergence,
    penultimate_features,
    per_sample_gradients,
    softmax,
)

from helpers import central_diff, random_net, rel_err


def reference_forward(model, x):
    """Straight-line forward pass, written independently of dpcert.nn."""
    h = list(x)
    for k, (w, b) in enumerate(model.layers):
        out = []
        for i in range(w.shape[0]):
            s = b[i]
            for j in range(w.shape[1]):
                s += w[i, j] * h[j]
            out.append(s)
        if k < len(model.layers) - 1:
            out = [math.tanh(v) if model.activation == "tanh" else max(v, 0.0) for v in out]
        h = out
    return np.array(h)


def test_identity_forward():
    model = MlpModel([(np.eye(2), np.zeros(2))])
    assert_allclose(forward(model, [1.0, 2.0]).logits, [1.0, 2.0])


def test_softmax_of_zero_logits():
    model = MlpModel([(np.zeros((2, 2)), np.zeros(2))])
    assert_allclose(forward(model, [3.0, -1.0]).probs, [0.5, 0.5])


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(7)
    model = random_net(rng, 5, (6,), 3)
    x = rng.normal(size=5)
    assert_allclose(forward(model, x).logits, reference_forward(model, x), rtol=0, atol=1e-12)


def test_dimension_mismatch():
    model = MlpModel([(np.eye(2), np.zeros(2))])
    with pytest.raises(ConfigError):
        forward(model, [1.0, 2.0, 3.0])


def test_chain_mismatch_rejected():
    with pytest.raises(ConfigError):
        MlpModel([(np.eye(2), np.zeros(2)), (np.ones((2, 3)), np.zeros(2))])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_softmax_normalized_for_large_logits(z):
    p = softmax(np.array(z))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all((p >= 0) & (p <= 1))


@pytest.mark.parametrize("p_y, expected", [(1.0, 0.0), (0.1, math.log(10)), (0.25, math.log(4))])
def test_cross_entropy_values(p_y, expected):
    y = 0
    others = 9 if p_y == 0.1 else 1
    if p_y == 1.0:
        logits = np.array([0.0, -800.0])
    else:
        rest = (1 - p_y) / others
        logits = np.log(np.array([p_y] + [rest] * others))
    trace = forward(MlpModel([(np.eye(len(logits)), logits)]), np.zeros(len(logits)))
    assert cross_entropy(trace, y) == pytest.approx(expected, abs=1e-12)


def test_linear_gradient_closed_form():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    model = MlpModel([(w, b)])
    x, y = rng.normal(size=4), 2
    p = softmax(w @ x + b)
    r = p - np.eye(3)[y]
    grads, gx = per_sample_gradients(model, x[None], [y])
    assert_allclose(grads[0], np.concatenate([np.outer(r, x).ravel(), r]), atol=1e-14)
    assert_allclose(gx[0], r @ w, atol=1e-14)
    assert_allclose(input_gradient(model, x, y), r @ w, atol=1e-14)


def test_duplicated_samples_identical_gradients():
    rng = np.random.default_rng(2)
    model = random_net(rng, 4, (5,), 3)
    x = rng.normal(size=4)
    grads, gx = per_sample_gradients(model, np.stack([x, x]), [1, 1])
    assert np.array_equal(grads[0], grads[1])
    assert np.array_equal(gx[0], gx[1])


@pytest.mark.parametrize("seed", range(4))
def test_per_sample_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = random_net(rng, 4, (5, 4), 3)
    xs = rng.normal(size=(4, 4))
    ys = rng.integers(0, 3, size=4)
    grads, gx = per_sample_gradients(model, xs, ys)
    theta = model.flat()
    for i in range(4):
        def loss_theta(t, i=i):
            return cross_entropy(forward(model.with_flat(t), xs[i]), ys[i])

        def loss_x(v, i=i):
            return cross_entropy(forward(model, v), ys[i])

        assert rel_err(grads[i], central_diff(loss_theta, theta)) <= 1e-4
        assert rel_err(gx[i], central_diff(loss_x, xs[i])) <= 1e-4


def test_saturated_input_gradient_vanishes():
    w = np.array([[30.0, 0.0], [-30.0, 0.0]])
    model = MlpModel([(w, np.zeros(2))])
    x = np.array([1.0, 0.5])
    p = forward(model, x).probs
    assert p[0] >= 1 - 1e-9
    assert np.linalg.norm(input_gradient(model, x, 0)) <= 1e-6


def analytic_linear_hessian(w, b, x):
    p = softmax(w @ x + b)
    return w.T @ (np.diag(p) - np.outer(p, p)) @ w


def test_hvp_linear_matches_analytic():
    rng = np.random.default_rng(3)
    w, b = rng.normal(size=(4, 6)), rng.normal(size=4)
    model = MlpModel([(w, b)])
    x, v = rng.normal(size=6), rng.normal(size=6)
    assert_allclose(hvp_input(model, x, 1, v), analytic_linear_hessian(w, b, x) @ v, atol=1e-6)


def test_hvp_linearity_and_symmetry():
    rng = np.random.default_rng(4)
    model = random_net(rng, 5, (7,), 3)
    x, v, u = rng.normal(size=(3, 5))
    hv = hvp_input(model, x, 0, v)
    assert_allclose(hvp_input(model, x, 0, -v), -hv, rtol=0, atol=0)
    assert_allclose(hvp_input(model, x, 0, 2 * v), 2 * hv, rtol=0, atol=1e-8)
    hu = hvp_input(model, x, 0, u)
    assert abs(u @ hv - v @ hu) <= 1e-6 * max(abs(u @ hv), 1e-12)


def test_hvp_zero_direction_rejected():
    model = MlpModel([(np.eye(2), np.zeros(2))])
    with pytest.raises(ValidationError):
        hvp_input(model, [0.0, 0.0], 0, [0.0, 0.0])


def test_penultimate_features():
    model = MlpModel([(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))], activation="relu")
    assert_allclose(penultimate_features(model, [1.0, -1.0]), [1.0, 0.0])
    rng = np.random.default_rng(5)
    net = random_net(rng, 3, (8,), 2)
    x = rng.normal(size=3)
    f = penultimate_features(net, np.stack([x, x]))
    assert f.shape == (2, 8)
    assert np.array_equal(f[0], f[1])
    single = MlpModel([(np.eye(2), np.zeros(2))])
    assert_allclose(penultimate_features(single, [0.3, 0.4]), [0.3, 0.4])


def test_kl_values():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert kl_divergence([0.75, 0.25], [0.25, 0.75]) == pytest.approx(0.5 * math.log(3), abs=1e-12)
    with pytest.raises(ValidationError):
        kl_divergence([0.5, 0.6], [0.5, 0.5])


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_kl_nonnegative(a, b):
    p = np.array(a) / sum(a)
    q = np.array(b) / sum(b)
    assert kl_divergence(p, q) >= 0.0


def test_determinism():
    a = MlpModel.init(6, (5,), 3, rng=np.random.default_rng(11))
    b = MlpModel.init(6, (5,), 3, rng=np.random.default_rng(11))
    x = np.linspace(-1, 1, 6)
    assert np.array_equal(forward(a, x).logits, forward(b, x).logits)


def test_flat_round_trip():
    model = MlpModel.init(4, (3, 2), 2, rng=np.random.default_rng(0))
    again = model.with_flat(model.flat())
    assert np.array_equal(again.flat(), model.flat())
