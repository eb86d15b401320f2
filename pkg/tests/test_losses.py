import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cllrce.errors import ContractError
from cllrce.losses import (
    ScorePartition,
    ce_loss,
    cllr_ce_loss,
    cllr_from_scores,
    cllr_loss,
    partition_scores,
    softplus,
)

LOSS_FNS = [ce_loss, cllr_loss, cllr_ce_loss]


def fd_grad(fn, logits, labels, h=1e-5):
    g = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (fn(up, labels).value - fn(dn, labels).value) / (2 * h)
    return g


def naive_ce(logits, labels):
    # direct formula, no max shift
    total = 0.0
    for row, y in zip(logits, labels):
        total -= math.log(math.exp(row[y]) / sum(math.exp(v) for v in row))
    return total / len(labels)


def naive_cllr(logits, labels):
    tar, non = [], []
    for i, row in enumerate(logits):
        for j, v in enumerate(row):
            (tar if j == labels[i] else non).append(v)
    c_tar = sum(math.log2(1 + math.exp(-s)) for s in tar) / len(tar)
    c_non = sum(math.log2(1 + math.exp(s)) for s in non) / len(non)
    return 0.5 * (c_tar + c_non)


def random_batch(rng, m, n, scale=10.0):
    return rng.uniform(-scale, scale, size=(m, n)), rng.integers(0, n, size=m)


class TestCE:
    def test_two_uniform(self):
        assert ce_loss(np.zeros((1, 2)), np.array([0])).value == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("label", [0, 1, 2, 3])
    def test_four_uniform(self, label):
        assert ce_loss(np.zeros((1, 4)), np.array([label])).value == pytest.approx(math.log(4), abs=1e-12)

    def test_small_batch_against_oracle(self):
        logits = np.array([[2.0, 0.0, -1.0], [0.0, 3.0, 0.0]])
        labels = np.array([0, 1])
        out = ce_loss(logits, labels)
        assert out.value == pytest.approx(naive_ce(logits, labels), rel=1e-6)
        np.testing.assert_allclose(out.grad, fd_grad(ce_loss, logits, labels), rtol=1e-6, atol=1e-10)

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(0)
        logits, labels = random_batch(rng, 6, 5)
        shifted = logits + rng.normal(size=(6, 1)) * 5
        assert ce_loss(shifted, labels).value == pytest.approx(ce_loss(logits, labels).value, abs=1e-9)
        assert abs(cllr_loss(shifted, labels).value - cllr_loss(logits, labels).value) > 1e-6

    @pytest.mark.parametrize("labels", [np.array([2]), np.array([-1]), np.array([0, 1])])
    def test_bad_labels(self, labels):
        with pytest.raises(ContractError):
            ce_loss(np.zeros((1, 2)), labels)

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            ce_loss(np.zeros((3, 1)), np.zeros(3, dtype=int))


class TestPartition:
    def test_pair(self):
        p = partition_scores(np.array([[5.0, -5.0]]), np.array([0]))
        assert p.target_scores.tolist() == [5.0]
        assert p.nontarget_scores.tolist() == [-5.0]

    def test_row_major_order(self):
        p = partition_scores(np.array([[1.0, 2, 3], [4, 5, 6]]), np.array([0, 2]))
        assert p.target_scores.tolist() == [1.0, 6.0]
        assert p.nontarget_scores.tolist() == [2.0, 3.0, 4.0, 5.0]

    def test_multiset_union(self):
        rng = np.random.default_rng(3)
        logits, labels = random_batch(rng, 3, 4)
        p = partition_scores(logits, labels)
        assert p.target_scores.size == 3 and p.nontarget_scores.size == 9
        both = np.sort(np.concatenate([p.target_scores, p.nontarget_scores]))
        np.testing.assert_array_equal(both, np.sort(logits.ravel()))


class TestCllr:
    def test_zero_scores_give_one_bit(self):
        assert cllr_from_scores(ScorePartition(np.zeros(7), np.zeros(11))) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_separation(self):
        assert cllr_from_scores(ScorePartition(np.array([50.0]), np.array([-50.0]))) <= 1e-12

    def test_symmetric_pair(self):
        value = cllr_from_scores(ScorePartition(np.array([2.0]), np.array([-2.0])))
        assert value == pytest.approx(math.log2(1 + math.exp(-2)), abs=1e-12)
        assert value == pytest.approx(0.183118, abs=1e-6)

    def test_empty_sets_rejected(self):
        with pytest.raises(ContractError):
            cllr_from_scores(ScorePartition(np.array([]), np.array([1.0])))
        with pytest.raises(ContractError):
            cllr_from_scores(ScorePartition(np.array([1.0]), np.array([])))

    def test_loss_trivial_values(self):
        assert cllr_loss(np.zeros((1, 2)), np.array([0])).value == pytest.approx(1.0, abs=1e-12)
        assert cllr_loss(np.array([[50.0, -50.0]]), np.array([0])).value <= 1e-12

    def test_against_naive(self):
        rng = np.random.default_rng(1)
        logits, labels = random_batch(rng, 5, 4)
        assert cllr_loss(logits, labels).value == pytest.approx(naive_cllr(logits, labels), rel=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        logits, labels = random_batch(rng, 4, 5, scale=3.0)
        out = cllr_loss(logits, labels)
        np.testing.assert_allclose(out.grad, fd_grad(cllr_loss, logits, labels), rtol=1e-6, atol=1e-10)


class TestCllrCE:
    def test_trivial(self):
        out = cllr_ce_loss(np.zeros((1, 2)), np.array([0]))
        assert out.value == pytest.approx(0.5 * (1 + math.log(2)), abs=1e-12)
        assert out.value == pytest.approx(0.846574, abs=1e-6)

    def test_perfect_separation_leaves_half_ce(self):
        logits = np.array([[40.0, -40.0, -40.0], [-40.0, 40.0, -40.0]])
        labels = np.array([0, 1])
        assert cllr_ce_loss(logits, labels).value == pytest.approx(0.5 * ce_loss(logits, labels).value, abs=1e-15)

    def test_mean_of_components(self):
        rng = np.random.default_rng(4)
        logits, labels = random_batch(rng, 8, 10)
        a, b, c = ce_loss(logits, labels), cllr_loss(logits, labels), cllr_ce_loss(logits, labels)
        assert abs(c.value - 0.5 * (a.value + b.value)) < 1e-12
        np.testing.assert_allclose(c.grad, 0.5 * (a.grad + b.grad), atol=1e-12)


batches = st.tuples(st.integers(1, 16), st.integers(2, 20), st.integers(0, 2**32 - 1))


@settings(max_examples=40, deadline=None)
@given(batches, st.sampled_from(LOSS_FNS))
def test_gradient_matches_finite_differences(shape, fn):
    m, n, seed = shape
    rng = np.random.default_rng(seed)
    logits, labels = random_batch(rng, m, n)
    analytic = fn(logits, labels).grad
    numeric = fd_grad(fn, logits, labels)
    err = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    # relative error, with an absolute floor for entries that are ~0
    assert np.all((err <= 1e-5 * denom) | (err < 1e-9))


@settings(max_examples=50, deadline=None)
@given(batches, st.floats(0.0, 5.0), st.booleans())
def test_cllr_monotone(shape, delta, bump_target):
    m, n, seed = shape
    rng = np.random.default_rng(seed)
    logits, labels = random_batch(rng, m, n)
    p = partition_scores(logits, labels)
    tar, non = p.target_scores.copy(), p.nontarget_scores.copy()
    if bump_target:
        tar[rng.integers(tar.size)] += delta
    else:
        non[rng.integers(non.size)] -= delta
    assert cllr_from_scores(ScorePartition(tar, non)) <= cllr_from_scores(p) + 1e-15


@settings(max_examples=30, deadline=None)
@given(batches, st.sampled_from(LOSS_FNS))
def test_permutation_invariance(shape, fn):
    m, n, seed = shape
    rng = np.random.default_rng(seed)
    logits, labels = random_batch(rng, m, n)
    perm = rng.permutation(m)
    a, b = fn(logits, labels), fn(logits[perm], labels[perm])
    assert b.value == pytest.approx(a.value, rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(b.grad, a.grad[perm], rtol=1e-12, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(batches, st.sampled_from(LOSS_FNS))
def test_nonnegative_and_mean_identity(shape, fn):
    m, n, seed = shape
    rng = np.random.default_rng(seed)
    logits, labels = random_batch(rng, m, n)
    out = fn(logits, labels)
    assert out.value >= 0 and out.grad.shape == logits.shape
    combo = cllr_ce_loss(logits, labels).value
    assert combo == 0.5 * (ce_loss(logits, labels).value + cllr_loss(logits, labels).value)


@pytest.mark.parametrize("fn", LOSS_FNS)
def test_extreme_logits_stay_finite(fn):
    rng = np.random.default_rng(5)
    logits = rng.choice([-700.0, 700.0, 0.0, 699.5], size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    out = fn(logits, labels)
    assert np.isfinite(out.value) and np.all(np.isfinite(out.grad))


def test_softplus_stable_form():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    np.testing.assert_allclose(softplus(x), np.logaddexp(0.0, x), rtol=1e-15)
