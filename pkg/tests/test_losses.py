import numpy as np
import pytest

from gammaica.errors import InputError, ParameterError
from gammaica.losses import (
    BINARY,
    MULTICLASS,
    ContrastiveBatch,
    GammaLossSpec,
    baseline_ce_loss,
    estimate_nu,
    gamma_binary_loss,
    gamma_multiclass_loss,
)
from gammaica.rng import named_stream

GAMMAS = (0.1, 0.5, 1.0, 5.0)


def binary_batch(zp, zn):
    return ContrastiveBatch.binary_pairs(np.asarray(zp, float), np.asarray(zn, float))


@pytest.mark.parametrize("gamma", GAMMAS)
def test_uniform_binary_closed_form(gamma):
    batch = binary_batch(np.zeros(8), np.zeros(8))
    loss, _ = gamma_binary_loss(batch, GammaLossSpec(gamma, BINARY))
    assert abs(loss - np.log(2.0) / (gamma + 1.0)) < 1e-12


@pytest.mark.parametrize("gamma", GAMMAS)
@pytest.mark.parametrize("k", (2, 4, 10))
def test_uniform_multiclass_closed_form(gamma, k):
    batch = ContrastiveBatch.multiclass(np.zeros((6, k)), np.zeros(6, dtype=int))
    loss, _ = gamma_multiclass_loss(batch, GammaLossSpec(gamma, MULTICLASS, k))
    assert abs(loss - np.log(k) / (gamma + 1.0)) < 1e-12


def test_binary_gamma_limit_is_logistic_ce():
    batch = binary_batch(np.zeros(5), np.zeros(5))
    loss, _ = gamma_binary_loss(batch, GammaLossSpec(1e-6, BINARY))
    assert abs(loss - np.log(2.0)) < 1e-5


def test_multiclass_gamma_limit_is_softmax_ce():
    batch = ContrastiveBatch.multiclass(np.zeros((5, 4)), np.zeros(5, dtype=int))
    loss, _ = gamma_multiclass_loss(batch, GammaLossSpec(1e-6, MULTICLASS, 4))
    assert abs(loss - np.log(4.0)) < 1e-5


def test_binary_derived_value():
    # frozen via naive scalar evaluation of the power formula
    batch = binary_batch([0.3, -0.1], [0.2, -0.5])
    loss, _ = gamma_binary_loss(batch, GammaLossSpec(0.5, BINARY))
    assert abs(loss - 0.41346066907054846) < 1e-12


def test_multiclass_derived_value():
    batch = ContrastiveBatch.multiclass(
        np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]), np.array([0, 1, 0])
    )
    loss, _ = gamma_multiclass_loss(batch, GammaLossSpec(0.3, MULTICLASS, 2))
    assert abs(loss - 0.2973399090011511) < 1e-12


def naive_binary(zp, zn, g):
    w = g / (g + 1.0)
    s = lambda t: 1.0 / (1.0 + np.exp(-t))
    total = (s((g + 1) * zp) ** w).sum() + (s(-(g + 1) * zn) ** w).sum()
    return -np.log(total / (2 * zp.size)) / g


def naive_multiclass(z, u, g):
    w = g / (g + 1.0)
    num = np.exp(z[np.arange(len(u)), u]) ** g
    den = (np.exp(z) ** (g + 1)).sum(axis=1) ** w
    return -np.log((num / den).mean()) / g


def test_agrees_with_naive_formula_on_random_batches():
    rng = named_stream(5, "sources")
    for g in (0.2, 0.7, 1.3):
        zp, zn = rng.normal(size=12), rng.normal(size=12)
        loss, _ = gamma_binary_loss(binary_batch(zp, zn), GammaLossSpec(g, BINARY))
        assert abs(loss - naive_binary(zp, zn, g)) < 1e-10
        z = rng.normal(size=(9, 5))
        u = rng.integers(0, 5, 9)
        loss, _ = gamma_multiclass_loss(
            ContrastiveBatch.multiclass(z, u), GammaLossSpec(g, MULTICLASS, 5)
        )
        assert abs(loss - naive_multiclass(z, u, g)) < 1e-10


def test_baseline_ce_values():
    loss, _ = baseline_ce_loss(binary_batch(np.zeros(4), np.zeros(4)))
    assert abs(loss - np.log(2.0)) < 1e-12
    batch = ContrastiveBatch.multiclass(np.zeros((5, 3)), np.array([0, 1, 2, 0, 1]))
    loss, _ = baseline_ce_loss(batch)
    assert abs(loss - np.log(3.0)) < 1e-12


def test_gamma_zero_dispatches_to_ce():
    rng = named_stream(6, "sources")
    zp, zn = rng.normal(size=7), rng.normal(size=7)
    l0, (gp0, gn0) = gamma_binary_loss(binary_batch(zp, zn), GammaLossSpec(0.0, BINARY))
    l1, (gp1, gn1) = baseline_ce_loss(binary_batch(zp, zn))
    assert l0 == l1 and (gp0 == gp1).all() and (gn0 == gn1).all()


def test_gamma_continuity_on_random_batches():
    rng = named_stream(7, "sources")
    for _ in range(25):
        zp, zn = rng.normal(size=10), rng.normal(size=10)
        tiny, _ = gamma_binary_loss(binary_batch(zp, zn), GammaLossSpec(1e-6, BINARY))
        ce, _ = baseline_ce_loss(binary_batch(zp, zn))
        assert abs(tiny - ce) < 1e-5
        z = rng.normal(size=(8, 4))
        u = rng.integers(0, 4, 8)
        tiny, _ = gamma_multiclass_loss(
            ContrastiveBatch.multiclass(z, u), GammaLossSpec(1e-6, MULTICLASS, 4)
        )
        ce, _ = baseline_ce_loss(ContrastiveBatch.multiclass(z, u))
        assert abs(tiny - ce) < 1e-5


def central_diff(f, x, h=1e-6):
    out = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_o = out.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f()
        flat_x[i] = orig - h
        fm = f()
        flat_x[i] = orig
        flat_o[i] = (fp - fm) / (2 * h)
    return out


@pytest.mark.parametrize("gamma", (0.0, 0.3, 1.0))
def test_binary_gradients_match_finite_differences(gamma):
    rng = named_stream(8, "sources")
    zp, zn = rng.normal(size=6), rng.normal(size=6)
    spec = GammaLossSpec(gamma, BINARY)
    _, (gp, gn) = gamma_binary_loss(binary_batch(zp, zn), spec)
    num_p = central_diff(lambda: gamma_binary_loss(binary_batch(zp, zn), spec)[0], zp)
    num_n = central_diff(lambda: gamma_binary_loss(binary_batch(zp, zn), spec)[0], zn)
    assert np.abs(gp - num_p).max() / max(1.0, np.abs(num_p).max()) < 1e-6
    assert np.abs(gn - num_n).max() / max(1.0, np.abs(num_n).max()) < 1e-6


@pytest.mark.parametrize("gamma", (0.0, 0.3, 1.0))
def test_multiclass_gradients_match_finite_differences(gamma):
    rng = named_stream(9, "sources")
    z = rng.normal(size=(5, 3))
    u = rng.integers(0, 3, 5)
    spec = GammaLossSpec(gamma, MULTICLASS, 3)
    _, grad = gamma_multiclass_loss(ContrastiveBatch.multiclass(z, u), spec)
    num = central_diff(
        lambda: gamma_multiclass_loss(ContrastiveBatch.multiclass(z, u), spec)[0], z
    )
    assert np.abs(grad - num).max() / max(1.0, np.abs(num).max()) < 1e-6


def test_log_domain_stability_at_extreme_scores():
    for z in (500.0, -500.0):
        batch = binary_batch([z, -z], [z, -z])
        loss, (gp, gn) = gamma_binary_loss(batch, GammaLossSpec(1.0, BINARY))
        assert np.isfinite(loss) and np.isfinite(gp).all() and np.isfinite(gn).all()
        logits = np.array([[z, -z], [-z, z], [0.0, 0.0]])
        mb = ContrastiveBatch.multiclass(logits, np.array([0, 1, 0]))
        loss, grad = gamma_multiclass_loss(mb, GammaLossSpec(1.0, MULTICLASS, 2))
        assert np.isfinite(loss) and np.isfinite(grad).all()


def test_validation_errors():
    with pytest.raises(ParameterError):
        GammaLossSpec(-0.5, BINARY)
    with pytest.raises(InputError):
        ContrastiveBatch.binary_pairs(np.zeros(0), np.zeros(0))
    with pytest.raises(InputError):
        ContrastiveBatch.binary_pairs(np.zeros(3), np.zeros(4))
    with pytest.raises(InputError):
        ContrastiveBatch.binary_pairs(np.array([np.inf]), np.array([0.0]))
    with pytest.raises(InputError):
        ContrastiveBatch.multiclass(np.zeros((3, 2)), np.array([0, 1, 2]))
    with pytest.raises(InputError):
        gamma_binary_loss(
            ContrastiveBatch.multiclass(np.zeros((2, 2)), np.array([0, 1])),
            GammaLossSpec(1.0, BINARY),
        )


# --- nu diagnostic -----------------------------------------------------------

def test_nu_zero_contamination():
    assert estimate_nu(np.zeros(0), 0.0, GammaLossSpec(1.0, BINARY)) == 0.0


def test_nu_constant_score_closed_form():
    nu = estimate_nu(np.zeros(100), 0.1, GammaLossSpec(1.0, BINARY))
    assert abs(nu - 0.1 * 2.0 ** -0.5) < 1e-12


def test_nu_rejects_gamma_zero():
    with pytest.raises(ParameterError):
        estimate_nu(np.zeros(3), 0.1, GammaLossSpec(0.0, BINARY))


def test_nu_separated_support_monte_carlo():
    # uniform target on [0,1], uniform outliers on [2,3]: at r = r* the ratio
    # vanishes on the outlier support, so every score is -inf and nu = 0
    rng = named_stream(11, "outliers")
    x_out = rng.uniform(2.0, 3.0, size=10 ** 5)
    scores = np.full_like(x_out, -np.inf)   # log r*(x) = log 0 off the target support
    nu = estimate_nu(scores, 0.1, GammaLossSpec(1.0, BINARY))
    assert nu == 0.0


def test_nu_shrinks_with_gamma_near_separated_supports():
    # perturbed ratio r = r* + 0.1 on the outlier support (r* = 0 there)
    scores = np.full(1000, np.log(0.1))
    nu_small = estimate_nu(scores, 0.1, GammaLossSpec(0.1, BINARY))
    nu_large = estimate_nu(scores, 0.1, GammaLossSpec(1.0, BINARY))
    assert nu_large < nu_small
