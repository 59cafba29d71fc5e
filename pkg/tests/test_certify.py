import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from dpcert.certify import (
    ABSTAIN,
    CertificationOutcome,
    SmoothingConfig,
    acr,
    certified_accuracy_at,
    certify,
    clopper_pearson_lower,
    radius_two_sided,
    sample_counts,
)
from dpcert.errors import ConfigError, DomainError, ValidationError
from dpcert.nn import MlpModel
from dpcert.special import beta_quantile, betainc, erfc, inv_norm_cdf, norm_cdf

from oracles import beta_lower_bound_bisection, normal_quantile, normal_quantile_by_quadrature


def constant(label):
    return lambda batch: np.full(batch.shape[0], label)


# -- special functions ------------------------------------------------------

def test_inv_norm_cdf_center_and_reference():
    assert inv_norm_cdf(0.5) == 0.0
    assert inv_norm_cdf(0.999) == pytest.approx(3.090232, abs=1e-6)
    assert inv_norm_cdf(0.999) == pytest.approx(normal_quantile_by_quadrature(0.999), abs=1e-12)


def test_inv_norm_cdf_symmetry():
    # dyadic p so both p and 1 - p are exact
    p = np.arange(1, 2**12) / 2**12
    assert np.max(np.abs(inv_norm_cdf(p) + inv_norm_cdf(1 - p))) <= 1e-12


def test_inv_norm_cdf_domain():
    for bad in (0.0, 1.0, -0.1, 1.5, float("nan")):
        with pytest.raises(DomainError):
            inv_norm_cdf(bad)


@pytest.mark.parametrize("p", [1e-12, 1e-9, 1e-5, 0.01, 0.3, 0.7, 0.99, 1 - 1e-9])
def test_inv_norm_cdf_against_oracle(p):
    assert abs(inv_norm_cdf(p) - normal_quantile(p)) <= 1e-9


def test_erfc_matches_stdlib():
    xs = np.linspace(-5, 8, 500)
    ref = np.array([math.erfc(v) for v in xs])
    assert np.max(np.abs(erfc(xs) - ref) / ref) <= 1e-12
    assert norm_cdf(0.0) == 0.5


def test_betainc_closed_forms():
    assert betainc(1, 1, 0.3) == pytest.approx(0.3, abs=1e-15)
    assert betainc(5, 1, 0.7) == pytest.approx(0.7**5, rel=1e-13)
    assert betainc(1, 4, 0.2) == pytest.approx(1 - 0.8**4, rel=1e-13)
    assert beta_quantile(0.25, 1, 1) == pytest.approx(0.25, abs=1e-12)


# -- Clopper-Pearson --------------------------------------------------------

def test_clopper_pearson_examples():
    assert clopper_pearson_lower(0, 50, 0.01) == 0.0
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.001**0.01, abs=1e-12)
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.933254, abs=1e-6)
    assert clopper_pearson_lower(75, 100, 0.05) == pytest.approx(beta_lower_bound_bisection(75, 100, 0.05), abs=1e-8)
    with pytest.raises(ValidationError):
        clopper_pearson_lower(5, 4, 0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.data())
def test_clopper_pearson_monotonicity(n, data):
    k = data.draw(st.integers(0, n - 1))
    a1 = data.draw(st.floats(0.001, 0.2))
    a2 = data.draw(st.floats(0.001, 0.2))
    assert clopper_pearson_lower(k, n, a1) <= clopper_pearson_lower(k + 1, n, a1) + 1e-12
    lo_a, hi_a = sorted((a1, a2))
    assert clopper_pearson_lower(k + 1, n, lo_a) <= clopper_pearson_lower(k + 1, n, hi_a) + 1e-12


# -- radius / counts / certify ---------------------------------------------

def test_radius_two_sided():
    assert radius_two_sided(0.999, 0.001, 0.5) == pytest.approx(1.545116, abs=1e-6)
    for p in (0.1, 0.4, 0.77):
        assert radius_two_sided(p, p, 0.8) == 0.0


def test_sample_counts():
    rng = np.random.default_rng(0)
    model = MlpModel([(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))])
    counts = sample_counts(model, np.array([0.5, 0.0]), 0.0, 137, rng, 2)
    assert counts.tolist() == [137, 0]
    counts = sample_counts(model, np.array([0.1, 0.0]), 1.0, 5001, rng, 2, batch_size=700)
    assert counts.sum() == 5001
    assert sample_counts(constant(2), np.zeros(3), 1.0, 50, rng, 3).tolist() == [0, 0, 50]


def test_certify_constant_classifier_closed_form():
    cfg = SmoothingConfig(sigma=0.5, n0=100, n=10_000, alpha=0.001)
    out = certify(constant(1), np.zeros(4), cfg, np.random.default_rng(0), num_classes=3)
    assert out.predicted == 1
    expected = 0.5 * normal_quantile(0.001 ** (1 / 10_000))
    assert out.radius == pytest.approx(expected, abs=1e-9)
    assert out.radius == pytest.approx(1.5993, abs=1e-3)


def test_certify_abstains_on_coin_flip():
    rng = np.random.default_rng(1)

    def coin(batch):
        return rng.integers(0, 2, size=batch.shape[0])

    out = certify(coin, np.zeros(2), SmoothingConfig(0.5, 100, 1000, 0.001), np.random.default_rng(2), 2)
    assert out.abstained and out.radius == 0.0


def test_certify_radius_grows_with_sigma():
    cfg = lambda s: SmoothingConfig(s, 10, 500, 0.01)
    r1 = certify(constant(0), np.zeros(2), cfg(0.25), np.random.default_rng(0), 2).radius
    r2 = certify(constant(0), np.zeros(2), cfg(1.0), np.random.default_rng(0), 2).radius
    assert r2 == pytest.approx(4 * r1, rel=1e-12)


def test_smoothing_config_validation():
    with pytest.raises(ConfigError):
        SmoothingConfig(sigma=0.0)
    with pytest.raises(ConfigError):
        SmoothingConfig(alpha=1.0)
    assert SmoothingConfig() == SmoothingConfig(0.25, 100, 10_000, 0.001)


# -- summaries ------------------------------------------------------------

def test_acr_examples():
    assert acr([CertificationOutcome(1, 1.2, 0.9)], [1]) == pytest.approx(1.2)
    assert acr([CertificationOutcome(ABSTAIN)] * 3, [0, 1, 2]) == 0.0
    two = [CertificationOutcome(0, 1.0, 0.9), CertificationOutcome(2, 5.0, 0.99)]
    assert acr(two, [0, 1]) == pytest.approx(0.5)


outcome_st = st.one_of(
    st.just(CertificationOutcome(ABSTAIN)),
    st.builds(CertificationOutcome, st.integers(0, 2), st.floats(0.001, 3.0), st.just(0.9)),
)


@given(st.lists(st.tuples(outcome_st, st.integers(0, 2)), min_size=1, max_size=30))
def test_certified_accuracy_monotone(pairs):
    outcomes = [p[0] for p in pairs]
    labels = [p[1] for p in pairs]
    grid = np.linspace(0, 4, 17)
    acc = certified_accuracy_at(outcomes, labels, grid)
    assert np.all(np.diff(acc) <= 0)
    correct = np.mean([o.predicted == y for o, y in zip(outcomes, labels)])
    assert acc[0] == pytest.approx(correct)
    assert acc[-1] == 0.0
