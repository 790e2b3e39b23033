import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrembed.errors import UndefinedMetricError
from ehrembed.metrics import auprc, auprc_multilabel, pca_project
from ehrembed.oracles import ap_reference, enumerate_ranked_instances
from ehrembed.rng import purpose_rng


def test_auprc_hand_example():
    # ranked: 1,0,1,0 -> (1*1 + (2/3)*1)/2
    assert auprc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(0.83333333333, abs=1e-9)


def test_auprc_perfect_separation():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_auprc_requires_positives():
    with pytest.raises(UndefinedMetricError):
        auprc([0.5, 0.4], [0, 0])


def test_auprc_matches_oracle_small_exhaustive():
    for scores, labels in enumerate_ranked_instances(6):
        assert auprc(scores, labels) == pytest.approx(ap_reference(scores, labels),
                                                      abs=1e-12)


def test_auprc_matches_oracle_random_large():
    rng = purpose_rng(0, "auprc-random")
    for _ in range(300):
        n = int(rng.integers(2, 257))
        scores = rng.random(n)
        labels = (rng.random(n) < 0.3).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        assert auprc(scores, labels) == pytest.approx(
            ap_reference(list(scores), list(labels)), abs=1e-9)


@given(st.lists(st.tuples(st.floats(0, 1, allow_nan=False), st.integers(0, 1)),
                min_size=2, max_size=40))
@settings(max_examples=200, deadline=None)
def test_auprc_invariant_under_monotone_transform(pairs):
    scores = [s for s, _ in pairs]
    labels = [l for _, l in pairs]
    if sum(labels) == 0:
        labels[0] = 1
    base = auprc(scores, labels)
    squeezed = auprc([3.0 * s + 1.0 for s in scores], labels)
    assert squeezed == pytest.approx(base, abs=1e-12)


def test_auprc_tiebreak_is_original_index():
    # equal scores: earlier index ranks first
    assert auprc([0.5, 0.5], [1, 0]) == 1.0
    assert auprc([0.5, 0.5], [0, 1]) == 0.5


def test_multilabel_micro_and_macro():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]])
    labels = np.array([[1, 0], [0, 1], [0, 0]])
    micro = auprc(scores.reshape(-1), labels.reshape(-1))
    assert auprc_multilabel(scores, labels, "micro") == pytest.approx(micro)
    macro = np.mean([auprc(scores[:, 0], labels[:, 0]), auprc(scores[:, 1], labels[:, 1])])
    assert auprc_multilabel(scores, labels, "macro") == pytest.approx(macro)


# ------------------------------------------------------------------- PCA

def test_pca_points_on_a_line():
    rng = purpose_rng(1, "pca-line")
    t = rng.normal(size=50)
    direction = np.array([1.0, -2.0, 0.5])
    points = np.outer(t, direction) + np.array([5.0, 1.0, -3.0])
    coords, ratios = pca_project(points, 1)
    assert ratios[0] >= 1 - 1e-6
    assert coords.shape == (50, 1)


def test_pca_isotropic_gaussian_ratios_roughly_equal():
    rng = purpose_rng(2, "pca-iso")
    x = rng.normal(size=(4000, 3))
    _, ratios = pca_project(x, 3)
    assert np.all(np.abs(ratios - 1.0 / 3) < 0.05)


def test_pca_deterministic():
    rng = purpose_rng(3, "pca-det")
    x = rng.normal(size=(40, 6))
    c1, r1 = pca_project(x, 3)
    c2, r2 = pca_project(x, 3)
    assert np.array_equal(c1, c2) and np.array_equal(r1, r2)


def test_pca_translation_invariant_coordinates():
    rng = purpose_rng(4, "pca-shift")
    x = rng.normal(size=(60, 5))
    c1, _ = pca_project(x, 2)
    c2, _ = pca_project(x + np.array([10.0, -3.0, 4.0, 0.0, 2.0]), 2)
    assert np.allclose(c1, c2, atol=1e-8)


def test_pca_matches_eigendecomposition_oracle():
    rng = purpose_rng(5, "pca-eig")
    x = rng.normal(size=(80, 7)) @ rng.normal(size=(7, 7))
    coords, ratios = pca_project(x, 4)
    centered = x - x.mean(axis=0)
    eigvals = np.sort(np.linalg.eigvalsh(np.cov(centered.T)))[::-1]
    assert np.allclose(ratios, eigvals[:4] / eigvals.sum(), atol=1e-8)
    # coordinate variance along each component equals its eigenvalue
    assert np.allclose(coords.var(axis=0, ddof=1), eigvals[:4], rtol=1e-6)


def test_pca_sign_convention():
    rng = purpose_rng(6, "pca-sign")
    x = rng.normal(size=(30, 4)) * np.array([5.0, 1.0, 0.5, 0.1])
    coords, _ = pca_project(x, 2)
    centered = x - x.mean(axis=0)
    # recover loading vectors by least squares; largest-magnitude entry positive
    for j in range(2):
        v, *_ = np.linalg.lstsq(centered, coords[:, j], rcond=None)
        v /= np.linalg.norm(v)
        assert v[np.argmax(np.abs(v))] > 0


def test_pca_rank_deficient_warns_and_truncates():
    rng = purpose_rng(7, "pca-rank")
    t = rng.normal(size=(40, 2))
    x = np.concatenate([t, t @ np.ones((2, 1))], axis=1)  # rank 2 in 3-d
    with pytest.warns(UserWarning):
        coords, ratios = pca_project(x, 3)
    assert coords.shape[1] == 2 and len(ratios) == 2
