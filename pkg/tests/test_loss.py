import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dac.errors import AbstentionSaturationError, InvalidInputError, InvalidTargetError
from dac.loss import (
    abstention_grad,
    abstention_stats_batch,
    alpha_threshold,
    cross_entropy_batch,
    dac_loss,
    dac_loss_batch,
    dac_loss_grad,
    normalized_true_probs,
    softmax,
    true_class_grad,
)


def oracle_loss(logits, j, alpha):
    """Loss straight from the definition, no shared code with the package."""
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    s = p[-1]
    return (1 - s) * -np.log(p[j] / (1 - s)) + alpha * np.log(1 / (1 - s))


def fd_grad(logits, j, alpha, h=1e-5):
    g = np.zeros_like(logits)
    for i in range(logits.size):
        up, dn = logits.copy(), logits.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (oracle_loss(up, j, alpha) - oracle_loss(dn, j, alpha)) / (2 * h)
    return g


def closed_true(p, j, alpha):
    s = p[-1]
    return -(1 - p[j] - s) + s * p[j] * np.log((1 - s) / p[j]) - alpha * s * p[j] / (1 - s)


def closed_abst(p, j, alpha):
    s = p[-1]
    g = -np.log(p[j])
    return s * ((1 - s) * (np.log(1 / (1 - s)) - g) + alpha)


logit_vectors = st.integers(2, 10).flatmap(
    lambda k: arrays(np.float64, k + 1, elements=st.floats(-6, 6, allow_nan=False))
)


def test_softmax_known_value():
    p = softmax([0.0, 0.0, 0.0])
    assert np.allclose(p, 1 / 3)
    assert softmax(np.array([[1000.0, 0.0]]))[0, 0] == pytest.approx(1.0)


def test_softmax_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        softmax([0.0, np.inf, 1.0])


def test_loss_recovers_cross_entropy_without_abstention():
    p = np.array([0.7, 0.3, 0.0])
    assert dac_loss(p, 0, 5.0) == pytest.approx(-math.log(0.7))


def test_loss_known_value():
    p = np.array([0.5, 0.25, 0.25])
    # r = 0.75, c = -log(0.5 / 0.75)
    expected = 0.75 * math.log(1.5) + 0.1 * math.log(1 / 0.75)
    assert dac_loss(p, 0, 0.1) == pytest.approx(expected, rel=1e-14)


def test_loss_infinite_when_true_class_has_no_mass():
    assert dac_loss(np.array([0.0, 0.5, 0.5]), 0, 1.0) == math.inf


def test_normalized_true_probs():
    assert np.allclose(normalized_true_probs([0.2, 0.3, 0.5]), [0.4, 0.6])


@pytest.mark.parametrize(
    "p",
    [[0.5, 0.5], [0.5, 0.6, -0.1], [0.3, 0.3, 0.3], [np.nan, 0.5, 0.5]],
)
def test_invalid_prob_vectors(p):
    with pytest.raises(InvalidInputError):
        dac_loss(np.array(p), 0, 1.0)


def test_abstention_class_is_not_a_target():
    with pytest.raises(InvalidTargetError):
        dac_loss(np.array([0.2, 0.3, 0.5]), 2, 1.0)
    with pytest.raises(InvalidTargetError):
        dac_loss_grad(np.zeros(3), 2, 1.0)


def test_negative_alpha_rejected():
    with pytest.raises(InvalidInputError):
        dac_loss(np.array([0.2, 0.3, 0.5]), 0, -0.1)


def test_saturated_abstention_raises():
    with pytest.raises(AbstentionSaturationError):
        dac_loss(np.array([0.0, 0.0, 1.0]), 0, 1.0)
    with pytest.raises(AbstentionSaturationError):
        dac_loss_grad(np.array([0.0, 0.0, 40.0]), 0, 1.0)


@pytest.mark.parametrize("k", [2, 5, 10])
@pytest.mark.parametrize("alpha", [0.0, 0.1, 1.0, 10.0])
def test_gradient_matches_finite_differences(k, alpha):
    rng = np.random.default_rng(k * 100 + int(alpha * 10))
    for _ in range(40):
        a = rng.normal(0, 2, k + 1)
        j = int(rng.integers(k))
        g = dac_loss_grad(a, j, alpha)
        num = fd_grad(a, j, alpha)
        assert np.allclose(g, num, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 3.0])
def test_gradient_matches_closed_forms(alpha):
    rng = np.random.default_rng(1)
    for _ in range(200):
        k = int(rng.integers(2, 11))
        a = rng.normal(0, 2, k + 1)
        j = int(rng.integers(k))
        p = softmax(a)
        g = dac_loss_grad(a, j, alpha)
        assert g[j] == pytest.approx(closed_true(p, j, alpha), abs=1e-12)
        assert g[k] == pytest.approx(closed_abst(p, j, alpha), abs=1e-12)
        assert true_class_grad(p, j, alpha) == pytest.approx(g[j], abs=1e-12)
        assert abstention_grad(p, j, alpha) == pytest.approx(g[k], abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, st.floats(0, 20), st.data())
def test_gradient_components_sum_to_zero(a, alpha, data):
    k = a.size - 1
    j = data.draw(st.integers(0, k - 1))
    g = dac_loss_grad(a, j, alpha)
    assert abs(g.sum()) < 1e-10


@settings(max_examples=300, deadline=None)
@given(logit_vectors, st.floats(0, 100), st.data())
def test_true_class_gradient_never_positive(a, alpha, data):
    k = a.size - 1
    j = data.draw(st.integers(0, k - 1))
    p = softmax(a)
    if p[-1] >= 1 - 1e-12:
        return
    assert true_class_grad(p, j, alpha) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(logit_vectors, st.data())
def test_abstention_grows_exactly_below_threshold(a, data):
    k = a.size - 1
    j = data.draw(st.integers(0, k - 1))
    p = softmax(a)
    if p[-1] < 1e-9 or p[j] == 0:
        return
    t = alpha_threshold(p, j)
    if t > 1e-6:
        assert abstention_grad(p, j, 0.5 * t) < 0
    assert abstention_grad(p, j, t + 1e-3) > 0


def test_true_class_grad_handles_zero_true_probability():
    assert math.isfinite(true_class_grad(np.array([0.0, 0.5, 0.5]), 0, 1.0))


def test_alpha_threshold_known_value():
    p = np.array([0.5, 0.25, 0.25])
    assert alpha_threshold(p, 0) == pytest.approx(0.75 * math.log(1.5))


def _rows(a, labels, alpha):
    return np.array([dac_loss_grad(a[i], labels[i], alpha) for i in range(len(labels))])


@pytest.mark.parametrize("alpha", [0.0, 0.3, 7.0])
def test_batch_matches_per_sample(alpha):
    rng = np.random.default_rng(3)
    a = rng.normal(0, 3, (16, 5))
    y = rng.integers(0, 4, 16)
    loss, g = dac_loss_batch(a, y, alpha)
    per = [oracle_loss(a[i], y[i], alpha) for i in range(16)]
    assert loss == pytest.approx(np.mean(per), rel=1e-12)
    assert np.allclose(g * 16, _rows(a, y, alpha), atol=1e-12)


def test_batch_is_stable_for_extreme_logits():
    a = np.array([[800.0, -800.0, 0.0], [-800.0, 800.0, 790.0]])
    loss, g = dac_loss_batch(a, np.array([0, 1]), 1.0)
    assert np.isfinite(loss) and np.all(np.isfinite(g))


def test_batch_saturation_raises():
    with pytest.raises(AbstentionSaturationError):
        dac_loss_batch(np.array([[0.0, 0.0, 50.0]]), np.array([0]), 1.0)


def test_batch_rejects_abstention_target():
    with pytest.raises(InvalidTargetError):
        dac_loss_batch(np.zeros((2, 3)), np.array([0, 2]), 1.0)


def test_infinite_alpha_masks_abstention_unit():
    rng = np.random.default_rng(4)
    a = rng.normal(0, 1, (8, 4))
    y = rng.integers(0, 3, 8)
    loss, g = dac_loss_batch(a, y, math.inf)
    ce, gce = cross_entropy_batch(a[:, :3], y)
    assert loss == ce
    assert np.array_equal(g[:, :3], gce) and np.all(g[:, 3] == 0)


def test_cross_entropy_batch_finite_differences():
    rng = np.random.default_rng(5)
    a = rng.normal(0, 1, (4, 3))
    y = np.array([0, 2, 1, 1])
    _, g = cross_entropy_batch(a, y)
    h = 1e-6
    for idx in np.ndindex(a.shape):
        up, dn = a.copy(), a.copy()
        up[idx] += h
        dn[idx] -= h
        num = (cross_entropy_batch(up, y)[0] - cross_entropy_batch(dn, y)[0]) / (2 * h)
        assert g[idx] == pytest.approx(num, abs=1e-8)


def test_abstention_stats_batch():
    a = np.log(np.array([[0.5, 0.25, 0.25], [0.2, 0.6, 0.2]]))
    mass, ce = abstention_stats_batch(a, np.array([0, 1]))
    assert mass == pytest.approx(0.225)
    assert ce == pytest.approx((-math.log(0.5 / 0.75) - math.log(0.6 / 0.8)) / 2)
