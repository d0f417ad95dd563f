import numpy as np
import pytest

from gammaica.errors import ShapeError
from gammaica.evaluation import (
    abs_correlation_matrix,
    evaluate_run,
    linear_identifiability_r2,
    matched_mean_abs_corr,
)
from gammaica.rng import named_stream


def test_identical_estimates_score_one():
    rng = named_stream(0, "sources")
    s = rng.laplace(size=(500, 4))
    rep = matched_mean_abs_corr(s, s)
    assert rep.mean_matched_corr == pytest.approx(1.0, abs=1e-12)
    assert (rep.assignment == np.arange(4)).all()


def test_signed_permutation_scores_one():
    rng = named_stream(1, "sources")
    s = rng.laplace(size=(500, 4))
    perm = np.array([2, 0, 3, 1])
    flips = np.array([1.0, -1.0, -1.0, 1.0])
    est = s[:, perm] * flips
    rep = matched_mean_abs_corr(est, s)
    assert rep.mean_matched_corr == pytest.approx(1.0, abs=1e-12)
    assert (rep.assignment == perm).all()


def test_noise_attenuation_matches_theory():
    rng = named_stream(2, "sources")
    s = rng.normal(size=(10 ** 5, 3))
    est = s + rng.normal(size=s.shape)
    rep = matched_mean_abs_corr(est, s)
    assert abs(rep.mean_matched_corr - 1.0 / np.sqrt(2.0)) < 0.01


def test_invariance_to_scaling_and_permutation():
    rng = named_stream(3, "sources")
    s = rng.laplace(size=(400, 3))
    est = s + 0.3 * rng.normal(size=s.shape)
    base = matched_mean_abs_corr(est, s).mean_matched_corr
    transformed = (est * np.array([3.0, -0.1, 7.0]))[:, [2, 1, 0]]
    again = matched_mean_abs_corr(transformed, s).mean_matched_corr
    assert again == pytest.approx(base, abs=1e-12)


def test_matching_beats_diagonal():
    rng = named_stream(4, "sources")
    est = rng.normal(size=(300, 4))
    tru = rng.normal(size=(300, 4))
    rep = matched_mean_abs_corr(est, tru)
    assert rep.mean_matched_corr >= np.diag(rep.corr_matrix).mean() - 1e-12


def test_zero_variance_column_warns_and_zeroes():
    rng = named_stream(5, "sources")
    est = rng.normal(size=(100, 2))
    est[:, 1] = 3.14
    tru = rng.normal(size=(100, 2))
    with pytest.warns(UserWarning):
        corr = abs_correlation_matrix(est, tru)
    assert (corr[1, :] == 0).all()


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        matched_mean_abs_corr(np.zeros((10, 2)), np.zeros((10, 3)))


def test_r2_exact_linear_model():
    rng = named_stream(6, "sources")
    q = rng.laplace(size=(1000, 4))
    a = rng.normal(size=(4, 4))
    h = q @ a.T + rng.normal(size=4)
    r2, mean_r2 = linear_identifiability_r2(h, q)
    assert (r2 > 1 - 1e-10).all()
    assert mean_r2 > 1 - 1e-10


def test_r2_null_model():
    rng = named_stream(7, "sources")
    h = rng.normal(size=(10 ** 4, 4))
    q = rng.normal(size=(10 ** 4, 4))
    _, mean_r2 = linear_identifiability_r2(h, q)
    assert mean_r2 < 0.05


def test_r2_invariant_under_affine_feature_maps():
    rng = named_stream(8, "sources")
    q = rng.laplace(size=(500, 3))
    h = np.tanh(q @ rng.normal(size=(3, 3)))
    _, base = linear_identifiability_r2(h, q)
    a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    _, moved = linear_identifiability_r2(h @ a.T + rng.normal(size=3), q)
    assert moved == pytest.approx(base, abs=1e-9)


def test_r2_rank_deficient_warns():
    rng = named_stream(9, "sources")
    h = rng.normal(size=(100, 2))
    h = np.concatenate([h, h[:, :1]], axis=1)   # duplicated column
    q = rng.normal(size=(100, 3))
    with pytest.warns(UserWarning, match="rank"):
        linear_identifiability_r2(h, q)


def test_evaluate_run_bundles_metrics():
    rng = named_stream(10, "sources")
    s = rng.laplace(size=(300, 3))
    rep = evaluate_run(s, s, features=s, transformed_truth=np.abs(s))
    assert rep.mean_matched_corr == pytest.approx(1.0)
    assert rep.r2_per_component is not None
    doc = rep.to_document()
    assert set(doc) >= {"corr_matrix", "assignment", "mean_matched_corr", "mean_r2"}
