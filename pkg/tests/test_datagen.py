import numpy as np
import pytest

from gammaica import datagen
from gammaica.datagen import (
    ArSourceSpec,
    ContaminationSpec,
    SegmentedSourceSpec,
    contaminate,
    gen_ar_sources,
    gen_segmented_sources,
    invert_mixing,
    make_ar_series,
    make_pcl_pairs,
    make_segmented_series,
    mix_nonlinear,
)
from gammaica.errors import ConfigError, InputError
from gammaica.numerics import FeatureNetwork, Layer, forward


def test_paper_scale_configuration_dimensions():
    spec = SegmentedSourceSpec(dim=10, n_segments=256, segment_length=512, seed=0)
    s, labels, scales = gen_segmented_sources(spec)
    assert s.shape == (512 * 256, 10)
    assert labels.shape == (512 * 256,)
    assert scales.shape == (256, 10)
    assert (np.bincount(labels) == 512).all()


def test_degenerate_scale_range_mad():
    c = 0.4
    spec = SegmentedSourceSpec(dim=2, n_segments=8, segment_length=4000,
                               scale_range=(c, c), seed=1)
    s, labels, scales = gen_segmented_sources(spec)
    assert np.allclose(scales, c)
    for k in range(8):
        mad = np.abs(s[labels == k]).mean()
        se = c / np.sqrt(4000 * 2)   # MAD of Laplace(0, c) is c, sd of |X| is c
        assert abs(mad - c) < 3 * se


def test_segment_length_one_gives_label_ramp():
    spec = SegmentedSourceSpec(dim=2, n_segments=6, segment_length=1, seed=2)
    _, labels, _ = gen_segmented_sources(spec)
    assert (labels == np.arange(6)).all()


def test_labels_partition_contiguously():
    spec = SegmentedSourceSpec(dim=3, n_segments=5, segment_length=7, seed=3)
    _, labels, _ = gen_segmented_sources(spec)
    assert (np.diff(labels) >= 0).all()
    assert (np.bincount(labels) == 7).all()


def test_ar_sources_iid_when_rho_zero():
    s = gen_ar_sources(ArSourceSpec(dim=2, length=20000, rho=0.0, seed=4))
    for j in range(2):
        ac = np.corrcoef(s[1:, j], s[:-1, j])[0, 1]
        assert abs(ac) < 3.0 / np.sqrt(20000)


def test_ar_sources_lag_autocorrelation():
    s = gen_ar_sources(ArSourceSpec(dim=3, length=65536, rho=0.7, seed=5))
    assert s.shape == (65536, 3)
    for j in range(3):
        ac = np.corrcoef(s[1:, j], s[:-1, j])[0, 1]
        assert abs(ac - 0.7) < 0.01


def test_contaminate_eps_zero_noop():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(100, 3))
    out, mask = contaminate(s, None, ContaminationSpec(eps=0.0, seed=6))
    assert not mask.any()
    assert (out == s).all()
    assert out is not s


def test_contaminate_mask_fraction():
    s = np.zeros((10 ** 5, 2))
    _, mask = contaminate(s, None, ContaminationSpec(eps=0.1, family="laplace", seed=7))
    assert abs(mask.mean() - 0.1) < 0.003


def test_contaminate_replacement_laplace_scale():
    s = np.zeros((2 * 10 ** 5, 1))
    out, mask = contaminate(s, None,
                            ContaminationSpec(eps=0.5, family="replacement-laplace",
                                              scale=3.0, seed=8))
    mad = np.abs(out[mask]).mean()
    assert abs(mad - 3.0) < 0.05
    assert (out[~mask] == 0).all()


def test_contaminate_modulated_mixture_needs_labels():
    s = np.zeros((50, 2))
    with pytest.raises(ConfigError):
        contaminate(s, None, ContaminationSpec(eps=0.2, family="modulated-gauss-mixture", seed=9))


def test_contaminate_modulated_mixture_means_in_range():
    spec = ContaminationSpec(eps=1.0 - 1e-9, family="modulated-gauss-mixture", seed=10)
    labels = np.repeat(np.arange(4), 5000)
    s = np.zeros((20000, 3))
    out, mask = contaminate(s, labels, spec)
    vals = out[mask]
    # draws concentrate near [1, 4] or [-4, -1]; sd-0.5 tails stay within +-6.5
    assert (np.abs(vals) < 6.5).all()
    assert (np.abs(vals) > 0.05).mean() > 0.99
    frac_hi = (vals > 0).mean()
    assert abs(frac_hi - 0.5) < 0.02


def test_unknown_family_rejected():
    with pytest.raises(ConfigError):
        ContaminationSpec(eps=0.1, family="cauchy")


def test_mix_identity_weights_is_leaky_relu_chain():
    s = np.array([[1.0, -1.0], [-2.0, 0.5]])
    layers = [Layer(np.eye(2), np.zeros(2), "leaky_relu", 0.2) for _ in range(3)]
    net = FeatureNetwork(layers)
    out, _ = forward(net, s)
    expected = s.copy()
    for _ in range(3):
        expected = np.where(expected >= 0, expected, 0.2 * expected)
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_mixing_inverts_exactly():
    rng = np.random.default_rng(11)
    s = rng.laplace(size=(500, 10))
    x, net = mix_nonlinear(s, 3, seed=12)
    assert len(net.layers) == 3
    back = invert_mixing(net, x)
    assert np.abs(back - s).max() < 1e-8


def test_pcl_pairs_counts_and_bijection():
    x = np.arange(6.0).reshape(3, 2)
    pairs = make_pcl_pairs(x, seed=13)
    assert pairs.n_pairs == 2
    assert sorted(pairs.perm.tolist()) == [0, 1]
    with pytest.raises(InputError):
        make_pcl_pairs(x[:1], seed=13)


def test_pcl_negative_pairs_decorrelated():
    s = gen_ar_sources(ArSourceSpec(dim=2, length=10 ** 4, rho=0.7, seed=14))
    pairs = make_pcl_pairs(s, seed=14)
    neg = pairs.negatives_prev()
    corrs = [abs(np.corrcoef(pairs.x_cur[:, j], neg[:, j])[0, 1]) for j in range(2)]
    assert np.mean(corrs) < 0.02


def test_generation_reproducible_bit_exact():
    spec = SegmentedSourceSpec(dim=3, n_segments=4, segment_length=16, seed=15)
    cont = ContaminationSpec(eps=0.2, family="laplace", seed=15)
    a = make_segmented_series(spec, cont)
    b = make_segmented_series(spec, cont)
    assert (a.x == b.x).all()
    assert (a.s_clean == b.s_clean).all()
    assert (a.outlier_mask == b.outlier_mask).all()


def test_contamination_toggle_does_not_shift_sources():
    spec = SegmentedSourceSpec(dim=3, n_segments=4, segment_length=16, seed=16)
    clean = make_segmented_series(spec, None)
    dirty = make_segmented_series(spec, ContaminationSpec(eps=0.3, family="laplace", seed=16))
    assert (clean.s_clean == dirty.s_clean).all()


def test_series_roundtrip(tmp_path):
    spec = SegmentedSourceSpec(dim=2, n_segments=3, segment_length=8, seed=17)
    series = make_segmented_series(spec, ContaminationSpec(eps=0.25, seed=17))
    path = tmp_path / "series.npz"
    datagen.save_series(path, series)
    loaded = datagen.load_series(path)
    assert (loaded.x == series.x).all()
    assert (loaded.u == series.u).all()
    assert (loaded.s_clean == series.s_clean).all()
    assert (loaded.outlier_mask == series.outlier_mask).all()
    for a, b in zip(loaded.mixing.param_arrays(), series.mixing.param_arrays()):
        assert (a == b).all()
    assert loaded.provenance == series.provenance


def test_ar_series_roundtrip(tmp_path):
    series = make_ar_series(ArSourceSpec(dim=2, length=64, rho=0.7, seed=18),
                            ContaminationSpec(eps=0.1, family="replacement-laplace", seed=18))
    path = tmp_path / "ar.npz"
    datagen.save_series(path, series)
    loaded = datagen.load_series(path)
    assert loaded.u is None
    assert (loaded.x == series.x).all()
