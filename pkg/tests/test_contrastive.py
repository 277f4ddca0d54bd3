import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manta import synth
from manta.bundle import crop_sequence
from manta.contrastive import (
    ContrastiveBatch, CropSequence, InsufficientSequencesError, NoTemporalPositiveError, PairSpec,
    build_batch, gradcheck, loss, loss_grad, numeric_batch_grad, per_sample_loss,
    per_sample_loss_from_sims, random_batch, relative_error, temporal_partners, train,
)
from manta.embedder import Embedder
from oracles import naive_loss


def batch_from_sims(s_t, s_b, s_n, tau=1.0):
    """Unit vectors in 2-d realizing the given anchor similarities."""
    def at(s):
        return np.array([s, math.sqrt(max(0.0, 1 - s * s))])

    a = np.array([[1.0, 0.0]])
    return ContrastiveBatch(a, at(s_t)[None], at(s_b)[None], np.stack([at(s) for s in s_n])[None], tau)


@pytest.fixture(scope="module")
def corpus():
    return [crop_sequence(synth.generate_synthetic(c)) for c in synth.corpus_configs()]


# --- pinned values ----------------------------------------------------------------------


def test_zero_sims_two_negatives():
    assert per_sample_loss_from_sims(0.0, 0.0, [[0.0, 0.0]], 0.1)[0] == pytest.approx(0.0, abs=1e-15)


def test_zero_sims_four_negatives():
    assert per_sample_loss_from_sims(0.0, 0.0, [[0.0] * 4], 0.5)[0] == pytest.approx(math.log(2), rel=1e-14)


def test_negative_loss_value():
    got = loss(batch_from_sims(1.0, 1.0, [-1.0], tau=1.0))
    assert got == pytest.approx(-(math.log(2) + 2), rel=1e-14)
    assert got == pytest.approx(-2.6931, abs=1e-4)


@settings(max_examples=100)
@given(st.floats(-1, 1), st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=1, max_size=8),
       st.sampled_from([0.05, 0.1, 0.5, 1.0]), st.booleans())
def test_matches_naive_formula(s_t, s_b, s_n, tau, incl):
    denom = "include-positives" if incl else "negatives"
    got = per_sample_loss_from_sims(s_t, s_b, [s_n], tau, denom)[0]
    assert got == pytest.approx(naive_loss(s_t, s_b, s_n, tau, incl), rel=1e-10, abs=1e-10)


def test_stable_at_small_tau():
    v = per_sample_loss_from_sims(1.0, 1.0, [[-1.0, 1.0]], 1e-4)[0]
    assert np.isfinite(v) and v == pytest.approx(-math.log(2), abs=1e-9)


def test_unknown_denominator():
    with pytest.raises(ValueError):
        per_sample_loss_from_sims(0.0, 0.0, [[0.0]], 0.1, "both")


def test_batch_validation():
    rng = np.random.default_rng(0)
    b = random_batch(rng, 2, 3, 4, 0.1)
    with pytest.raises(ValueError):
        ContrastiveBatch(b.anchors, b.temporal, b.physics, b.negatives[:, :0], 0.1)
    with pytest.raises(ValueError):
        ContrastiveBatch(b.anchors, b.temporal, b.physics, b.negatives, 0.0)


# --- invariances and monotonicity -------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    b = random_batch(rng, 5, 6, 8, 0.2)
    base = per_sample_loss(b)
    perm_k = rng.permutation(6)
    shuffled = ContrastiveBatch(b.anchors, b.temporal, b.physics, b.negatives[:, perm_k], b.tau)
    assert np.array_equal(per_sample_loss(shuffled), base)
    perm_n = rng.permutation(5)
    reordered = ContrastiveBatch(b.anchors[perm_n], b.temporal[perm_n], b.physics[perm_n], b.negatives[perm_n], b.tau)
    assert np.array_equal(per_sample_loss(reordered), base[perm_n])
    assert loss(reordered) == pytest.approx(loss(b), rel=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_loss_permutation_exact_on_sorted_reduction(seed):
    # the batch mean itself is a sum; summing the same values in sorted order
    # is order-independent bit for bit
    rng = np.random.default_rng(seed)
    b = random_batch(rng, 6, 3, 5, 0.1)
    perm = rng.permutation(6)
    a = np.sort(per_sample_loss(b))
    c = np.sort(per_sample_loss(ContrastiveBatch(b.anchors[perm], b.temporal[perm], b.physics[perm],
                                                 b.negatives[perm], b.tau)))
    assert np.array_equal(a, c)


@settings(max_examples=100)
@given(st.floats(-1, 0.99), st.floats(1e-3, 0.5), st.floats(-1, 1),
       st.lists(st.floats(-1, 1), min_size=1, max_size=6), st.sampled_from([0.1, 0.5, 1.0]))
def test_monotone_in_temporal_similarity(s_t, ds, s_b, s_n, tau):
    hi = min(1.0, s_t + ds)
    a = per_sample_loss_from_sims(s_t, s_b, [s_n], tau)[0]
    b = per_sample_loss_from_sims(hi, s_b, [s_n], tau)[0]
    assert b < a


@settings(max_examples=100)
@given(st.floats(-1, 1), st.floats(-1, 1), st.lists(st.floats(-1, 0.99), min_size=1, max_size=6),
       st.integers(0, 5), st.floats(1e-3, 0.5), st.sampled_from([0.1, 0.5, 1.0]))
def test_monotone_in_negative_similarity(s_t, s_b, s_n, k, ds, tau):
    k %= len(s_n)
    raised = list(s_n)
    raised[k] = min(1.0, raised[k] + ds)
    a = per_sample_loss_from_sims(s_t, s_b, [s_n], tau)[0]
    b = per_sample_loss_from_sims(s_t, s_b, [raised], tau)[0]
    assert b > a


@pytest.mark.parametrize("c", [0.5, 2.0, 3.7])
def test_temperature_scaling(c):
    rng = np.random.default_rng(1)
    s_t, s_b, s_n = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4), rng.uniform(-1, 1, (4, 5))
    tau = 0.25
    a = per_sample_loss_from_sims(c * s_t, c * s_b, c * s_n, tau)
    b = per_sample_loss_from_sims(s_t, s_b, s_n, tau / c)
    assert np.max(np.abs(a - b)) <= 1e-12


# --- gradients --------------------------------------------------------------------------


def test_symmetric_positive_gradients():
    rng = np.random.default_rng(2)
    b = random_batch(rng, 3, 4, 6, 0.3)
    b = ContrastiveBatch(b.anchors, b.temporal, b.temporal.copy(), b.negatives, b.tau)
    _, g = loss_grad(b)
    assert np.array_equal(g.temporal, g.physics)


@pytest.mark.parametrize("denominator", ["negatives", "include-positives"])
@pytest.mark.parametrize("tau,k", [(0.05, 1), (0.1, 4), (0.5, 16), (1.0, 4)])
def test_gradient_matches_finite_differences(denominator, tau, k):
    rng = np.random.default_rng(int(tau * 100) + k)
    b = random_batch(rng, 3, k, 8, tau)
    value, ga = loss_grad(b, denominator)
    assert value == pytest.approx(loss(b, denominator), rel=1e-14)
    gn = numeric_batch_grad(b, denominator)
    for name in ("anchors", "temporal", "physics", "negatives"):
        assert relative_error(getattr(ga, name), getattr(gn, name)) < 1e-4


def test_gradient_scales_with_inverse_temperature():
    rng = np.random.default_rng(3)
    b = random_batch(rng, 4, 4, 8, 1.0)
    big = ContrastiveBatch(b.anchors, b.temporal, b.physics, b.negatives, 1e3)
    _, g1 = loss_grad(b)
    _, g2 = loss_grad(big)
    n1 = np.linalg.norm(np.concatenate([g1.anchors.ravel(), g1.negatives.ravel()]))
    n2 = np.linalg.norm(np.concatenate([g2.anchors.ravel(), g2.negatives.ravel()]))
    ratio = n2 / n1
    assert 1e-4 <= ratio <= 1e-2


def test_gradcheck_small():
    rep = gradcheck(seed=1, repeats=1)
    assert rep.n_batches == 12
    assert rep.overall < 1e-4


def test_relative_error_zero():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


# --- batch construction -----------------------------------------------------------------


def test_two_sequences_one_negative_each(corpus):
    b = build_batch(corpus[:2], PairSpec(seed=0))
    assert b.size == 2 and b.k == 1


def test_include_positives_as_negatives(corpus):
    b = build_batch(corpus[:3], PairSpec(seed=0, positives_as_negatives=True))
    assert b.k == 6


def test_temporal_window(corpus):
    pairing = PairSpec(seed=4)
    rng = np.random.default_rng(0)
    for _ in range(10):
        b = build_batch(corpus, pairing, rng=rng)
        for m in b.meta:
            assert 1 <= m.temporal_frame - m.anchor_frame <= 4
            assert 0.1 <= m.beta <= 0.5


def test_negatives_are_other_sequences(corpus):
    b = build_batch(corpus[:4], PairSpec(seed=0))
    for i in range(4):
        rows = set(b.negative_index[i])
        assert i not in rows and rows == set(range(4)) - {i}


def test_batch_determinism(corpus):
    a = build_batch(corpus[:5], PairSpec(seed=9))
    b = build_batch(corpus[:5], PairSpec(seed=9))
    assert np.array_equal(a.anchors, b.anchors) and np.array_equal(a.physics, b.physics)
    assert a.meta == b.meta


def test_insufficient_sequences(corpus):
    with pytest.raises(InsufficientSequencesError):
        build_batch(corpus[:1], PairSpec())


def test_no_temporal_positive(corpus):
    lonely = CropSequence("single", [1], [corpus[0].crops[0]])
    with pytest.raises(NoTemporalPositiveError):
        build_batch([corpus[1], lonely], PairSpec())
    far = CropSequence("far", [1, 9], corpus[0].crops[:2])
    with pytest.raises(NoTemporalPositiveError):
        build_batch([corpus[1], far], PairSpec(temporal_window=4))


def test_temporal_partners_subsequent_only():
    assert temporal_partners([1, 2, 3, 6, 7], 2, 4) == [3, 4]
    assert temporal_partners([1, 2, 3], 2, 4) == []


def test_embedder_config_used(corpus):
    b = build_batch(corpus[:2], PairSpec(), Embedder())
    assert np.allclose(np.linalg.norm(b.anchors, axis=1), 1.0)


# --- training ---------------------------------------------------------------------------


def test_zero_learning_rate_constant_history(corpus):
    r = train(corpus[:6], PairSpec(seed=1), epochs=4, lr=0.0)
    assert len(set(r.history)) == 1


def test_training_deterministic(corpus):
    a = train(corpus[:6], PairSpec(seed=2), epochs=3)
    b = train(corpus[:6], PairSpec(seed=2), epochs=3)
    assert a.history == b.history and a.train_history == b.train_history


def test_training_needs_two_sequences(corpus):
    with pytest.raises(InsufficientSequencesError):
        train(corpus[:1], epochs=1)


def test_training_improves_separation(corpus):
    r = train(corpus, PairSpec(seed=0), epochs=50)
    assert r.separation_after - r.separation_before > 0.1
    assert r.separation_after >= 0.2
    assert r.history[-1] < r.history[0]
