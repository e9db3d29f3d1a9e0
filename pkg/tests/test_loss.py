import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from btlner.loss import batch_loss, batch_loss_and_grad, token_loss


def test_uniform_logits_ln3():
    assert token_loss([0.7, 0.7, 0.7], 1, [1, 1, 1]) == pytest.approx(math.log(3), rel=1e-15)


def test_zero_weight_annihilates():
    assert token_loss([50.0, -3.0, 2.0], 1, [1.0, 0.0, 1.0]) == 0.0


def test_scalar_oracle():
    # 0.5 * -log(e^2 / (e^2 + 2)), evaluated at 30 digits with mpmath
    assert token_loss([2.0, 0.0, 0.0], 0, [0.5, 1, 1]) == pytest.approx(0.119772383110942252, rel=1e-14)


def test_large_logits_stable():
    assert token_loss([1000.0, 0.0, -1000.0], 0, [1, 1, 1]) == pytest.approx(0.0, abs=1e-300)
    assert token_loss([1000.0, 0.0, -1000.0], 2, [1, 1, 1]) == pytest.approx(2000.0)


def test_token_loss_errors():
    with pytest.raises(ValueError):
        token_loss([np.inf, 0.0], 0, [1, 1])
    with pytest.raises(ValueError):
        token_loss([0.0, 0.0], 2, [1, 1])


def test_prob_variant_is_negative_weighted_probability():
    x = np.array([2.0, 0.0, 0.0])
    p0 = math.exp(2) / (math.exp(2) + 2)
    assert token_loss(x, 0, [0.5, 1, 1], variant="prob") == pytest.approx(-0.5 * p0)
    with pytest.raises(ValueError):
        token_loss(x, 0, [1, 1, 1], variant="nolog")


def test_weighted_mean_of_two_tokens():
    x = np.array([[1.0, 0.0], [0.0, 3.0]])
    y = np.array([0, 0])
    w = np.array([0.3, 0.9])
    a, b = token_loss(x[0], 0, w), token_loss(x[1], 0, w)
    lb = batch_loss(x, y, [True, True], w)
    assert lb.batch_loss == pytest.approx((a + b) / (2 * 0.3), rel=1e-14)
    assert lb.denominator == pytest.approx(0.6)


def test_masking_equals_removal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 4))
    y = rng.integers(0, 4, 7)
    w = rng.random(4) + 0.1
    mask = np.ones(7, bool)
    mask[3] = False
    masked = batch_loss(x, y, mask, w)
    removed = batch_loss(np.delete(x, 3, 0), np.delete(y, 3), np.ones(6, bool), w)
    assert masked.batch_loss == pytest.approx(removed.batch_loss, rel=1e-14)
    assert np.isnan(masked.per_token_losses[3])
    assert masked.denominator == pytest.approx(removed.denominator)


def test_unmasked_btl_copy_equals_atl_bitwise():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(9, 3)).astype(np.float32)
    y = rng.choice([0, 2], 9)
    w = np.array([0.4, 0.8, 0.8])
    a, ga = batch_loss_and_grad(x, y, np.ones(9, bool), w)
    b, gb = batch_loss_and_grad(x, y, np.isin(y, [0, 2]), w)
    assert a.batch_loss == b.batch_loss
    assert np.array_equal(ga, gb)


def test_all_masked_error():
    with pytest.raises(ValueError, match="masked"):
        batch_loss(np.zeros((2, 3)), [0, 1], [False, False], [1, 1, 1])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        batch_loss(np.zeros((2, 3)), [0], [True], [1, 1, 1])


def _instance(draw_seed, n=12, c=4):
    rng = np.random.default_rng(draw_seed)
    x = rng.normal(size=(n, c)) * 4
    y = rng.integers(0, c, n)
    mask = rng.random(n) > 0.4
    mask[0] = True
    w = rng.random(c) + 0.05
    return x, y, mask, w


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_shift_invariance(seed, shift):
    x, y, mask, w = _instance(seed)
    a = batch_loss(x, y, mask, w).batch_loss
    b = batch_loss(x + shift, y, mask, w).batch_loss
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_masked_rows_have_zero_gradient(seed):
    x, y, mask, w = _instance(seed)
    _, g = batch_loss_and_grad(x, y, mask, w)
    assert (g[~mask] == 0).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unit_weights_match_mean_cross_entropy(seed):
    x, y, _, _ = _instance(seed)
    ref = np.mean([-math.log(math.exp(r[t]) / sum(math.exp(v) for v in r)) for r, t in zip(x, y)])
    got = batch_loss(x, y, np.ones(len(y), bool), np.ones(x.shape[1])).batch_loss
    assert got == pytest.approx(ref, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-20, 20)), st.integers(0, 3), st.floats(0, 10))
def test_monotone_in_target_logit(x, t, bump):
    w = [0.5, 1.0, 0.2, 0.7]
    before = token_loss(x, t, w)
    x2 = x.copy()
    x2[t] += bump
    assert token_loss(x2, t, w) <= before + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    x, y, mask, w = _instance(seed, n=5, c=3)
    _, g = batch_loss_and_grad(x, y, mask, w)
    eps = 1e-6
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num = (batch_loss(xp, y, mask, w).batch_loss - batch_loss(xm, y, mask, w).batch_loss) / (2 * eps)
        assert g[idx] == pytest.approx(num, abs=1e-7)


def test_prob_variant_gradient():
    x, y, mask, w = _instance(5, n=5, c=3)
    _, g = batch_loss_and_grad(x, y, mask, w, "prob")
    eps = 1e-6
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num = (batch_loss(xp, y, mask, w, "prob").batch_loss
               - batch_loss(xm, y, mask, w, "prob").batch_loss) / (2 * eps)
        assert g[idx] == pytest.approx(num, abs=1e-7)
