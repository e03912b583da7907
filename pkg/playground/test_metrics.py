import numpy as np
import pytest
from scipy.signal import correlate2d
from scipy.special import expit
from sklearn.metrics import roc_auc_score

from metrics import (DistanceError, DistanceFactory, FeatureDistanceSvc, FeatureExtractor, MseDistanceSvc,
                     SsimDistanceSvc, roc_auc, support_metric_kind)


def test_mse_examples():
    mse = MseDistanceSvc()
    a = np.random.default_rng(0).uniform(-1, 1, size=(1, 8, 8))
    assert mse.distance(a, a) == 0.0
    assert mse.distance(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.5)) == pytest.approx(0.25)
    assert mse.distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(DistanceError):
        mse.distance(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_ssim_constant_images_global_window():
    ssim = SsimDistanceSvc()
    a, b = np.full((1, 4, 4), 0.5), np.full((1, 4, 4), 0.25)
    expected = (2 * 0.125 + 4e-4) / (0.3125 + 4e-4)
    assert ssim.ssim(a, b) == pytest.approx(expected, abs=1e-12)
    assert ssim.distance(a, b) == pytest.approx(1 - expected, abs=1e-12)
    assert ssim.distance(a, b) == pytest.approx(0.1997, abs=1e-4)


def test_ssim_constant_images_sliding_window():
    # every 7×7 window sees the same constants, so the mean equals the global value
    ssim = SsimDistanceSvc()
    expected = (2 * 0.125 + 4e-4) / (0.3125 + 4e-4)
    assert ssim.ssim(np.full((1, 16, 16), 0.5), np.full((1, 16, 16), 0.25)) == pytest.approx(expected, abs=1e-12)


def test_ssim_distance_range():
    rng = np.random.default_rng(1)
    ssim = SsimDistanceSvc()
    a = rng.uniform(-1, 1, size=(1, 16, 16))
    assert ssim.distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert 0.0 <= ssim.distance(a, -a) <= 2.0


def _feature_oracle(image, seed, widths=(8, 16, 32)):
    """Straight-line float64 rendition of the frozen feature stack for a single (C, H, W) image."""
    rng = np.random.default_rng(seed)
    maps = [c.astype(np.float64) for c in image]
    features = []
    for stage, c_out in enumerate(widths):
        c_in = len(maps)
        weight = (rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (c_in * 9))).astype(np.float32).astype(np.float64)
        bias = (0.1 * rng.standard_normal(c_out)).astype(np.float32).astype(np.float64)
        if stage > 0 and maps[0].shape[0] % 2 == 0 and maps[0].shape[1] % 2 == 0:
            maps = [m.reshape(m.shape[0] // 2, 2, m.shape[1] // 2, 2).mean(axis=(1, 3)) for m in maps]
        outputs = []
        for o in range(c_out):
            z = sum(correlate2d(maps[c], weight[o, c], mode='same') for c in range(c_in)) + bias[o]
            outputs.append(z * expit(z))
        maps = outputs
        features.append(np.concatenate([m.reshape(-1) for m in maps]))
    return np.concatenate(features)


def test_feature_distance_matches_straight_line_oracle():
    rng = np.random.default_rng(7)
    a = rng.uniform(-1, 1, size=(1, 16, 16)).astype(np.float32)
    b = rng.uniform(-1, 1, size=(1, 16, 16)).astype(np.float32)
    u, v = _feature_oracle(a, 7), _feature_oracle(b, 7)
    expected = 1.0 - np.dot(u, v) / np.sqrt(np.dot(u, u) * np.dot(v, v))
    svc = FeatureDistanceSvc(FeatureExtractor(channels=1, seed=7))
    assert svc.distance(a, b) == pytest.approx(expected, abs=1e-5)


def test_feature_extractor_is_frozen_and_deterministic():
    extractor = FeatureExtractor(seed=3)
    with pytest.raises(ValueError):
        extractor.weights[0][0, 0, 0, 0] = 1.0
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 1, 16, 16))
    np.testing.assert_array_equal(extractor.features(x), FeatureExtractor(seed=3).features(x))
    assert extractor.features(x).shape == (2, 8 * 256 + 16 * 64 + 32 * 16)


def test_feature_distance_rejects_zero_features():
    with pytest.raises(DistanceError):
        FeatureDistanceSvc.cosine_distance(np.zeros(4), np.ones(4))


@pytest.mark.parametrize('kind', support_metric_kind)
def test_distances_vanish_on_identity_and_are_symmetric(kind):
    svc = DistanceFactory.create_distance(kind)
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = rng.uniform(-1, 1, size=(1, 16, 16)).astype(np.float32)
        b = rng.uniform(-1, 1, size=(1, 16, 16)).astype(np.float32)
        assert svc.distance(a, a) == pytest.approx(0.0, abs=1e-6)
        assert svc.distance(a, b) == pytest.approx(svc.distance(b, a), abs=1e-12)
        assert svc.distance(a, b) >= 0.0


def test_distance_factory():
    assert isinstance(DistanceFactory.create_distance('mse'), MseDistanceSvc)
    assert DistanceFactory.create_distance('ssim_distance', {'ssim_window': 5}).window == 5
    feature = DistanceFactory.create_distance('feature_distance', {'feature_seed': 4, 'feature_widths': [4, 4, 4]})
    assert feature.extractor.seed == 4 and feature.extractor.widths == (4, 4, 4)
    with pytest.raises(NotImplementedError):
        DistanceFactory.create_distance('lpips')


def test_roc_auc_examples():
    assert roc_auc([0.1, 0.2], [0.8, 0.9]) == 1.0
    assert roc_auc([0.3, 0.3, 0.3], [0.3, 0.3]) == 0.5
    assert roc_auc([0.1, 0.4], [0.3, 0.5]) == 0.75
    with pytest.raises(ValueError):
        roc_auc([], [0.1])


def _brute_force_auc(scores_in, scores_out):
    pairs = 0.0
    for o in scores_out:
        for i in scores_in:
            pairs += 1.0 if o > i else 0.5 if o == i else 0.0
    return pairs / (len(scores_in) * len(scores_out))


def test_roc_auc_matches_brute_force_and_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_in, n_out = rng.integers(1, 101, size=2)
        # coarse grid values force plenty of ties
        scores_in = rng.integers(0, 10, size=n_in) / 10.0
        scores_out = rng.integers(0, 10, size=n_out) / 10.0 + 0.1
        auc = roc_auc(scores_in, scores_out)
        assert auc == pytest.approx(_brute_force_auc(scores_in, scores_out), abs=1e-15)
        assert auc == 1.0 - roc_auc(scores_out, scores_in)
        labels = np.r_[np.zeros(n_in), np.ones(n_out)]
        if 0 < labels.sum() < labels.size:
            assert auc == pytest.approx(roc_auc_score(labels, np.r_[scores_in, scores_out]), abs=1e-12)


def test_roc_auc_invariant_under_increasing_transform():
    rng = np.random.default_rng(2)
    scores_in, scores_out = rng.normal(size=40), rng.normal(0.5, 1.0, size=30)
    auc = roc_auc(scores_in, scores_out)
    assert roc_auc(np.exp(scores_in), np.exp(scores_out)) == auc
    assert roc_auc(3 * scores_in + 1, 3 * scores_out + 1) == auc


def test_roc_auc_swapped_groups_are_exact_complements():
    assert roc_auc([0.5], [0.5, 0.5, 0.0]) == 1.0 - roc_auc([0.5, 0.5, 0.0], [0.5])
    rng = np.random.default_rng(11)
    for _ in range(2000):
        n_in, n_out = rng.integers(1, 8, size=2)
        scores_in = rng.integers(0, 3, size=n_in) / 2.0
        scores_out = rng.integers(0, 3, size=n_out) / 2.0
        assert roc_auc(scores_in, scores_out) == 1.0 - roc_auc(scores_out, scores_in)
