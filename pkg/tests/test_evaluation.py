import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liemotion.evaluation import (ClassifierConfig, ClassifierError, EvalConfig, GaussianStats,
                                  MetricError, class_matched_fid, confidence_interval, diversity,
                                  evaluate_model, extract_features, feature_fid, fid, gaussian_stats,
                                  load_classifier, multimodality, recognition_accuracy,
                                  save_classifier, train_classifier)
from liemotion.evaluation.report import METRICS, record
from liemotion.kinematics import fk_arrays

import oracles


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


# FID ------------------------------------------------------------------------

def test_fid_one_dimensional_closed_forms():
    g = lambda m, v: GaussianStats(np.array([m]), np.array([[v]]))
    assert fid(g(0, 1), g(0, 1)) == 0.0
    assert abs(fid(g(0, 1), g(1, 1)) - 1.0) < 1e-10
    # (m1 - m2)^2 + (s1 - s2)^2 for scalars
    assert abs(fid(g(0.5, 4.0), g(-1.0, 9.0)) - (1.5 ** 2 + 1.0)) < 1e-10
    assert abs(fid(g(0, 0.25), g(0, 0)) - 0.25) < 1e-10


def test_fid_matches_denman_beavers_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        ca, cb = random_spd(rng, 4), random_spd(rng, 4)
        ma, mb = rng.standard_normal((2, 4))
        want = oracles.fid_oracle(ma, ca, mb, cb)
        assert abs(fid(GaussianStats(ma, ca), GaussianStats(mb, cb)) - want) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fid_self_zero_symmetric_non_negative(seed, d):
    rng = np.random.default_rng(seed)
    a = GaussianStats(rng.standard_normal(d), random_spd(rng, d))
    b = GaussianStats(rng.standard_normal(d), random_spd(rng, d))
    assert abs(fid(a, a)) < 1e-8
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    assert fid(a, b) >= 0.0


def test_fid_handles_singular_covariance():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((4, 1))
    a = GaussianStats(np.zeros(4), v @ v.T)
    assert abs(fid(a, a)) < 1e-8


def test_gaussian_stats_validation():
    with pytest.raises(MetricError):
        GaussianStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(MetricError):
        GaussianStats(np.zeros(2), np.diag([1.0, -1e-3]))
    with pytest.raises(MetricError):
        fid(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


def test_gaussian_stats_unbiased():
    f = np.array([[0.0], [2.0]])
    assert gaussian_stats(f).cov[0, 0] == 2.0


def test_class_matched_fid_drops_with_correct_labels():
    rng = np.random.default_rng(2)
    centers = np.array([[0, 0], [5, 0], [0, 5]], dtype=float)
    lab = np.repeat(np.arange(3), 100)
    real = centers[lab] + rng.standard_normal((300, 2))
    gen = centers[lab] + rng.standard_normal((300, 2))
    good = class_matched_fid(gen, lab, real, lab)
    bad = class_matched_fid(gen, rng.permutation(lab), real, lab)
    assert good < 0.2 < bad
    assert abs(feature_fid(gen, real) - feature_fid(gen[rng.permutation(300)], real)) < 1e-9


# diversity / multimodality -------------------------------------------------

def monte_carlo(fn, reps=4000):
    vals = np.array([fn(np.random.default_rng(s)) for s in range(reps)])
    return vals.mean(), reps


def test_diversity_two_point_expectation():
    u, w = np.array([0.0, 0.0]), np.array([3.0, 4.0])
    f = np.stack([u, w])
    mean, var = oracles.paired_distance_moments(f, 1)
    assert mean == pytest.approx(0.5 * 5.0)
    est, n = monte_carlo(lambda r: diversity(f, 1, r))
    assert abs(est - mean) < 3 * np.sqrt(var / n)


@pytest.mark.parametrize("size", [1, 2, 4])
def test_diversity_three_point_expectation(size):
    f = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    mean, var = oracles.paired_distance_moments(f, size)
    est, n = monte_carlo(lambda r: diversity(f, size, r))
    assert abs(est - mean) < 3 * np.sqrt(var / n)


def test_multimodality_three_motion_class():
    f = np.array([[0.0], [1.0], [3.0], [10.0], [10.5]])
    lab = np.array([0, 0, 0, 1, 1])
    m0, v0 = oracles.paired_distance_moments(f[:3], 2)
    m1, v1 = oracles.paired_distance_moments(f[3:], 2)
    est, n = monte_carlo(lambda r: multimodality(f, lab, 2, r))
    assert abs(est - (m0 + m1) / 2) < 3 * np.sqrt((v0 + v1) / 4 / n)


def test_degenerate_sets_give_zero():
    f = np.ones((5, 3))
    rng = np.random.default_rng(0)
    assert diversity(f, 4, rng) == 0.0
    assert multimodality(np.array([[1.0], [1.0], [2.0], [2.0]]), [0, 0, 1, 1], 3, rng) == 0.0


def test_single_class_multimodality_is_diversity():
    f = np.random.default_rng(1).standard_normal((7, 3))
    a = multimodality(f, np.zeros(7, int), 5, np.random.default_rng(4))
    b = diversity(f, 5, np.random.default_rng(4))
    assert a == b


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 100.0))
def test_metrics_positively_homogeneous(seed, s):
    f = np.random.default_rng(seed).standard_normal((6, 3))
    lab = np.array([0, 0, 0, 1, 1, 1])
    d, ds = diversity(f, 4, np.random.default_rng(seed)), diversity(s * f, 4, np.random.default_rng(seed))
    assert d >= 0 and ds == pytest.approx(s * d, rel=1e-12)
    m = multimodality(f, lab, 2, np.random.default_rng(seed))
    ms = multimodality(s * f, lab, 2, np.random.default_rng(seed))
    assert ms == pytest.approx(s * m, rel=1e-12)


def test_metric_errors():
    with pytest.raises(MetricError):
        diversity(np.zeros((0, 3)), 2, np.random.default_rng(0))
    with pytest.raises(MetricError):
        multimodality(np.zeros((2, 3)), [0, 0], 2, np.random.default_rng(0), action_count=2)


# classifier -----------------------------------------------------------------

def static_motions(skeleton, rng, n=6, T=10):
    """Two static poses (arms down vs arms raised), each sample with a small offset."""
    motions, labels = [], []
    for label, angle in ((0, 0.0), (1, 1.2)):
        for _ in range(n):
            omega = rng.normal(0, 0.02, (skeleton.bone_count, 3))
            omega[[4, 8], 2] += angle
            j, _, _ = fk_arrays(np.broadcast_to(omega, (T, skeleton.bone_count, 3)),
                                np.broadcast_to(rng.normal(0, 0.05, 3), (T, 3)), skeleton)
            motions.append(j)
            labels.append(label)
    return motions, np.array(labels)


FAST = ClassifierConfig(hidden_dim=16, crop_length=8, batch_size=16, iterations=60)


@pytest.fixture(scope="module")
def static_clf(skeleton):
    rng = np.random.default_rng(0)
    tr, trl = static_motions(skeleton, rng)
    te, tel = static_motions(skeleton, rng, n=4)
    clf = train_classifier(tr, trl, 2, 0, np.random.default_rng(1), FAST, te, tel)
    return clf, tr, trl, te, tel


def test_static_poses_are_separable(static_clf):
    clf, tr, trl, te, tel = static_clf
    assert clf.held_out_accuracy == 1.0
    assert recognition_accuracy(clf, np.stack(tr), trl) == 1.0
    assert recognition_accuracy(clf, np.stack(te), 1 - tel) == 0.0


def test_classifier_errors(skeleton):
    m, lab = static_motions(skeleton, np.random.default_rng(0), n=2)
    with pytest.raises(ClassifierError):
        train_classifier(m, np.zeros(len(m), int), 2, 0, np.random.default_rng(0), FAST)
    with pytest.raises(ClassifierError):
        train_classifier(m[1:], lab[1:], 2, 0, np.random.default_rng(0), FAST)


def test_classifier_training_is_deterministic(skeleton):
    m, lab = static_motions(skeleton, np.random.default_rng(0), n=3)
    cfg = ClassifierConfig(hidden_dim=8, crop_length=8, batch_size=8, iterations=5)
    a = train_classifier(m, lab, 2, 0, np.random.default_rng(5), cfg)
    b = train_classifier(m, lab, 2, 0, np.random.default_rng(5), cfg)
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data)


@pytest.fixture(scope="module")
def data_clf(small_dataset):
    tr, te = small_dataset.split("train"), small_dataset.split("test")
    cfg = ClassifierConfig(hidden_dim=16, crop_length=16, iterations=80)
    return train_classifier([m.joints for m in tr], [m.action_id for m in tr], 4, 0,
                            np.random.default_rng(0), cfg,
                            [m.joints for m in te], [m.action_id for m in te])


def test_features_shape_determinism_and_invariances(data_clf, small_dataset):
    clf = data_clf
    motion = small_dataset.motions[0].joints[:12]
    f = extract_features(clf, motion[None])
    assert f.shape == (1, 16)
    assert np.array_equal(f, extract_features(clf, motion[None]))
    shifted = motion + np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(extract_features(clf, shifted[None]), f, atol=1e-12)
    assert not np.allclose(extract_features(clf, motion[::-1][None]), f)


def test_probabilities_sum_to_one(static_clf):
    clf, tr = static_clf[0], static_clf[1]
    p = clf.probabilities(np.stack(tr))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_extract_features_mixed_lengths(static_clf, small_dataset):
    clf = static_clf[0]
    ms = [small_dataset.motions[0].joints[:9], small_dataset.motions[1].joints[:12],
          small_dataset.motions[2].joints[:9]]
    f = extract_features(clf, ms)
    assert np.array_equal(f[1], extract_features(clf, ms[1][None])[0])
    # batched with motion 0, so matmul rounding may differ in the last bits
    np.testing.assert_allclose(f[2], extract_features(clf, ms[2][None])[0], rtol=0, atol=1e-12)
    assert np.max(np.abs(f[2] - f[0])) > 1e-3


def test_classifier_checkpoint(tmp_path, static_clf):
    clf, tr = static_clf[0], static_clf[1]
    save_classifier(tmp_path / "c.ckpt", clf)
    back = load_classifier(tmp_path / "c.ckpt")
    assert np.array_equal(extract_features(back, np.stack(tr)), extract_features(clf, np.stack(tr)))
    assert back.held_out_accuracy == clf.held_out_accuracy


# report ---------------------------------------------------------------------

def test_confidence_interval():
    mean, half = confidence_interval([1.0, 2.0, 3.0])
    assert mean == 2.0 and half == pytest.approx(1.959963984540054 / np.sqrt(3))


@pytest.fixture(scope="module")
def real_report(small_dataset, data_clf):
    tr, clf = small_dataset.split("train"), data_clf
    ecfg = EvalConfig(n_samples=120, diversity_size=20, multimodality_size=5, repetitions=4, length=16)
    run = lambda: evaluate_model(None, [m.joints for m in tr], [m.action_id for m in tr], clf,
                                 np.random.default_rng(1), ecfg, seed=1)
    return run(), run(), clf, tr


def test_report_schema_and_determinism(real_report):
    rep, again, _, _ = real_report
    assert rep == again
    assert {(r["source"], r["name"]) for r in rep["records"]} == {("real", n) for n in METRICS}
    for r in rep["records"]:
        assert set(r) == {"source", "name", "value", "ci95", "n", "repetitions", "seed"}
        assert np.isfinite(r["value"]) and np.isfinite(r["ci95"]) and r["repetitions"] == 4
    assert 0.0 <= record(rep, "real", "accuracy")["value"] <= 1.0


def test_real_against_itself_is_near_ideal(real_report):
    rep, _, clf, tr = real_report
    feats = extract_features(clf, [m.joints[:16] for m in tr])
    scale = np.trace(gaussian_stats(feats).cov)
    assert record(rep, "real", "fid")["value"] < 0.1 * scale
    train_acc = recognition_accuracy(clf, [m.joints[:16] for m in tr], [m.action_id for m in tr])
    assert abs(record(rep, "real", "accuracy")["value"] - train_acc) < 0.1
    assert record(rep, "real", "multimodality")["value"] > 0


def test_default_repetitions():
    assert EvalConfig().repetitions == 20


def test_class_matched_fid_skips_thin_classes():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((10, 2))
    lab = np.array([0] * 5 + [1] * 4 + [2])
    want = np.mean([feature_fid(f[lab == c], f[lab == c]) for c in (0, 1)])
    assert class_matched_fid(f, lab, f, lab) == want
    with pytest.raises(MetricError):
        class_matched_fid(f[:3], [0, 1, 2], f[:3], [0, 1, 2])
