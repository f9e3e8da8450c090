import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.fft import idct

from vts.evalkit import (
    EvaluationError,
    ScoredPair,
    build_pairs,
    cosine_distance,
    eer,
    linear_probe_accuracy,
    mcd,
)


def brute_force_eer(distances, positive):
    """Count FAR/FRR directly at one threshold inside every interval between sorted distances."""
    d = np.asarray(distances, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    u = np.unique(d)
    thresholds = [u[0] - 1.0] + [u[i] for i in range(len(u))]
    pts = []
    for t in thresholds:
        fa = sum(1 for x, p in zip(d, pos) if not p and x <= t) / (~pos).sum()
        fr = sum(1 for x, p in zip(d, pos) if p and x > t) / pos.sum()
        pts.append((fa, fr))
    for (fa0, fr0), (fa1, fr1) in zip(pts, pts[1:]):
        if fa0 == fr0:
            return fa0
        g0, g1 = fa0 - fr0, fa1 - fr1
        if g0 < 0 < g1 or g1 == 0:
            a = -g0 / (g1 - g0)
            return fa0 + a * (fa1 - fa0)
    raise AssertionError("no crossing")


# --- MCD ----------------------------------------------------------------------------

def test_mcd_identity_and_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(20, 40)), rng.normal(size=(20, 40))
    assert mcd(a, a) == 0.0
    assert mcd(a, b) == pytest.approx(mcd(b, a), abs=1e-12)
    assert mcd(a, b) > 0


def test_mcd_hand_case():
    c = np.random.default_rng(1).normal(size=40)
    d = c.copy()
    d[1] += 0.1
    ref = idct(c, type=2, norm="ortho")[None]
    syn = idct(d, type=2, norm="ortho")[None]
    expected = (10 / math.log(10)) * math.sqrt(2) * 0.1
    assert expected == pytest.approx(0.6142, abs=1e-4)
    assert mcd(ref, syn) == pytest.approx(expected, rel=1e-9)


def test_mcd_ignores_energy_coefficient():
    a = np.random.default_rng(2).normal(size=(5, 40))
    assert mcd(a, a + 3.0) == pytest.approx(0.0, abs=1e-12)


def test_mcd_trims_and_warns():
    a = np.zeros((10, 40))
    with pytest.warns(UserWarning):
        assert mcd(a, a[:7]) == 0.0
    with pytest.raises(EvaluationError):
        mcd(a[:0], a)


# --- cosine distance ----------------------------------------------------------------

def test_cosine_distance_cases():
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_distance(a, a) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance(a, -a) == pytest.approx(2.0)
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    with pytest.raises(EvaluationError):
        cosine_distance([0, 0], [1, 0])


# --- pairs --------------------------------------------------------------------------

def _embeddings(n, k, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 8)), rng.integers(0, k, n)


def test_build_pairs_default_composition():
    S, sl = _embeddings(200, 10)
    N, nl = _embeddings(300, 10, 1)
    pairs = build_pairs(S, sl, N, nl, n_pairs=20000, pos_fraction=0.073, rng=np.random.default_rng(0))
    assert len(pairs) == 20000
    assert sum(p.positive for p in pairs) == 1460


def test_build_pairs_desk_default():
    S, sl = _embeddings(50, 4)
    N, nl = _embeddings(60, 4, 1)
    pairs = build_pairs(S, sl, N, nl, rng=np.random.default_rng(0))
    assert len(pairs) == 2000 and sum(p.positive for p in pairs) == 146


def test_build_pairs_with_replacement_warns():
    S, sl = _embeddings(3, 2)
    with pytest.warns(UserWarning):
        pairs = build_pairs(S, sl, S, sl, n_pairs=100, pos_fraction=0.5)
    assert len(pairs) == 100


def test_build_pairs_single_speaker_fails():
    S = np.random.default_rng(0).normal(size=(5, 8))
    with pytest.raises(EvaluationError):
        build_pairs(S, np.zeros(5), S, np.zeros(5), n_pairs=10)


# --- EER ----------------------------------------------------------------------------

def _pairs(pos, neg):
    return [ScoredPair(d, True) for d in pos] + [ScoredPair(d, False) for d in neg]


def test_eer_perfect_separation():
    assert eer(_pairs([0.1, 0.2], [0.8, 0.9])) == 0.0


def test_eer_interleaved_case():
    pos, neg = [0.3, 0.5, 0.7], [0.4, 0.6, 0.8]
    expected = brute_force_eer(pos + neg, [True] * 3 + [False] * 3)
    assert expected == pytest.approx(1 / 3)
    assert eer(_pairs(pos, neg)) == pytest.approx(expected, abs=1e-12)


def test_eer_fully_inverted():
    assert eer(_pairs([0.8, 0.9], [0.1, 0.2])) == 1.0


def test_eer_single_class_rejected():
    with pytest.raises(EvaluationError):
        eer(_pairs([0.1, 0.2], []))


def test_eer_matches_brute_force_randomized():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        d = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        pos = rng.random(n) < rng.uniform(0.1, 0.9)
        pos[0], pos[1] = True, False
        assert eer(distances=d, positive=pos) == pytest.approx(brute_force_eer(d, pos), abs=1e-9)


def test_eer_random_scores_near_half():
    rng = np.random.default_rng(0)
    pairs = _pairs(rng.random(1460), rng.random(20000 - 1460))
    assert abs(eer(pairs) - 0.5) <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=2, max_size=40), st.integers(0, 2**32 - 1))
def test_eer_invariant_under_monotone_transform(ticks, seed):
    d = np.asarray(ticks) / 500.0
    pos = np.random.default_rng(seed).random(len(d)) < 0.5
    pos[0], pos[1] = True, False
    base = eer(distances=d, positive=pos)
    assert eer(distances=np.sqrt(d) * 0.5, positive=pos) == pytest.approx(base, abs=1e-12)
    assert eer(distances=np.exp(3 * d), positive=pos) == pytest.approx(base, abs=1e-12)


def test_scored_pair_range():
    with pytest.raises(ValueError):
        ScoredPair(2.5, True)


# --- probe --------------------------------------------------------------------------

def test_probe_constant_features_is_perfect():
    y = np.repeat(np.arange(4), 30)
    X = np.eye(4)[y] * 5.0 + 1.0
    assert linear_probe_accuracy(X[::2], y[::2], X[1::2], y[1::2]) == 1.0


def test_probe_noise_is_chance():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 2000)
    X = rng.normal(size=(2000, 16))
    acc = linear_probe_accuracy(X[:1000], y[:1000], X[1000:], y[1000:])
    assert abs(acc - 0.25) < 0.05


def test_probe_needs_two_classes():
    with pytest.raises(EvaluationError):
        linear_probe_accuracy(np.ones((4, 2)), np.zeros(4), np.ones((2, 2)), np.zeros(2))
