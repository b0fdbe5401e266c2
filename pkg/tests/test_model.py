import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import logsumexp

from mixhawkes.errors import (
    ConfigurationError,
    DomainError,
    NonFiniteParameterError,
    NonstationaryError,
    StructureError,
    ValidationError,
)
from mixhawkes.model import (
    Dataset,
    ModelParams,
    ModelStructure,
    Priors,
    SubjectData,
    branching_ratio,
    conditional_intensity,
    excitation,
    expected_cluster_size,
    immigrant_compensator,
    linear_predictors,
    loglik_branching,
    loglik_conditional,
    offspring_compensator,
    total_compensator,
)

from conftest import make_params, make_subject

# frozen with mpmath at 30 digits
EXP_MINUS_4 = 0.0183156388887341802937
ONE_PLUS_EXP_MINUS_06 = 1.54881163609402644481
ONE_MINUS_EXP_MINUS_06 = 0.451188363905973555185
LOGLIK_ONE_EVENT = -2.45118836390597355518
WEIBULL_COMP_10 = 3.97164117362140771339


def all_branchings(n):
    return itertools.product(*[range(j + 1) for j in range(n)])


# -- types ------------------------------------------------------------------


def test_subject_bins_contiguous_and_counts_on_tracked_only():
    s = make_subject(3.0, tracked=[1, 0, 1], counts=[2, 5, 0])
    assert [b[0] for b in s.bins] == [1, 2, 3]
    assert s.bins[1] == (2, False, None)
    assert s.total_count == 2
    assert s.missing_intervals() == [(1.0, 2.0)]


def test_subject_rejects_wrong_bin_count_and_negative_counts():
    with pytest.raises(ValidationError):
        SubjectData("a", 3.0, np.ones(2, bool), np.zeros(2))
    with pytest.raises(ValidationError):
        SubjectData("a", 2.0, np.ones(2, bool), [1, -1])
    with pytest.raises(ValidationError):
        SubjectData("a", 0.0, np.ones(0, bool), [])


def test_params_positive_and_finite():
    with pytest.raises(DomainError):
        make_params(alpha=0.0)
    with pytest.raises(NonFiniteParameterError):
        make_params(beta=(np.inf,))


def test_structure_always_has_intercepts():
    s = ModelStructure(background_covariates=("a",), offspring_covariates=())
    assert s.background_names == ("intercept", "a")
    assert s.offspring_names == ("intercept",)
    with pytest.raises(ConfigurationError):
        ModelStructure(background_covariates=("intercept",))
    names = ModelStructure(re_background=False, re_offspring=True).parameter_names()
    assert names == ["alpha", "delta", "beta[intercept]", "zeta[intercept]", "xi"]


def test_priors_require_delta_shape_above_one():
    with pytest.raises(ConfigurationError):
        Priors(delta=(1.0, 1.0))
    with pytest.raises(ConfigurationError):
        Priors(alpha=(0.0, 1.0))


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(ValidationError):
        Dataset([make_subject(sid="a"), make_subject(sid="a")])


# -- linear predictors --------------------------------------------------------


def test_linear_predictors_examples():
    s = make_subject(x=(1.0,), z=(1.0,))
    eta, kappa = linear_predictors(s, make_params(beta=(0.0,), zeta=(math.log(0.348),)))
    assert eta == 1.0
    assert kappa == pytest.approx(0.348, rel=1e-14)
    s = make_subject(x=(1.0, 1.0, 0.0), z=(1.0,))
    eta, _ = linear_predictors(s, make_params(beta=(-3.5, -0.5, 1.0)))
    assert eta == pytest.approx(EXP_MINUS_4, rel=1e-14)


def test_linear_predictor_overflow_is_reported():
    with pytest.raises(NonFiniteParameterError):
        linear_predictors(make_subject(), make_params(beta=(1000.0,)))


# -- intensity and compensators ----------------------------------------------


def test_conditional_intensity_examples():
    s = make_subject()
    assert conditional_intensity(s, make_params(alpha=1.0), [], 3.7) == pytest.approx(1.0)
    p = make_params(alpha=0.9, beta=(math.log(0.03),))
    assert conditional_intensity(s, p, [], 1.0) == pytest.approx(0.027, rel=1e-12)
    v = conditional_intensity(s, make_params(alpha=1.0, delta=0.6), [1.0], 2.0)
    assert v == pytest.approx(ONE_PLUS_EXP_MINUS_06, rel=1e-14)


def test_conditional_intensity_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        conditional_intensity(make_subject(), make_params(), [], 0.0)


def test_compensator_examples():
    assert immigrant_compensator(1.0, 1.0, 2.0) == 2.0
    assert immigrant_compensator(0.9, 1.0, 0.0) == 0.0
    assert immigrant_compensator(0.9, 0.5, 10.0) == pytest.approx(WEIBULL_COMP_10, rel=1e-12)
    quad, _ = integrate.quad(lambda s: 0.5 * 0.9 * s ** -0.1, 0, 10, epsabs=0, epsrel=1e-12)
    assert immigrant_compensator(0.9, 0.5, 10.0) == pytest.approx(quad, rel=1e-8)
    assert offspring_compensator(0.6, 0.6, 3.0, 3.0) == 0.0
    assert offspring_compensator(0.6, 0.6, 0.0, 1.0) == pytest.approx(ONE_MINUS_EXP_MINUS_06,
                                                                      rel=1e-14)
    assert offspring_compensator(0.6, 0.6, 0.0, 1e4) == pytest.approx(branching_ratio(1, 0.6, 0.6))
    with pytest.raises(DomainError):
        offspring_compensator(0.6, 0.6, 2.0, 1.0)


def test_offspring_compensator_monotone_and_bounded():
    t = np.linspace(1.0, 40.0, 200)
    v = offspring_compensator(0.3, 0.5, 1.0, t)
    assert np.all(np.diff(v) >= 0) and np.all(v < 0.3 / 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2000), st.floats(0.05, 3.0), st.integers(0, 2**31))
def test_recursive_and_direct_excitation_agree(n, delta, seed):
    rng = np.random.default_rng(seed)
    ev = np.sort(rng.uniform(0, 500, n))
    pts = rng.uniform(0.01, 520, 50)
    a = excitation(ev, pts, delta)
    b = excitation(ev, pts, delta, direct=True)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)


def test_recursive_and_direct_excitation_agree_at_ten_thousand_events(rng):
    ev = np.sort(rng.uniform(0, 3000, 10_000))
    pts = np.sort(rng.uniform(0.01, 3000, 300))
    np.testing.assert_allclose(excitation(ev, pts, 0.6), excitation(ev, pts, 0.6, direct=True),
                               rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.1, 2.0), st.floats(-3, 1), st.floats(-3, 1),
       st.integers(0, 2**31))
def test_intensity_nonnegative(alpha, delta, b0, z0, seed):
    rng = np.random.default_rng(seed)
    ev = np.sort(rng.uniform(0, 20, rng.integers(0, 15)))
    pts = rng.uniform(1e-6, 20, 40)
    lam = conditional_intensity(make_subject(20.0), make_params(alpha, delta, (b0,), (z0,)),
                                ev, pts)
    assert np.all(lam >= 0)


# -- likelihoods ---------------------------------------------------------------


def test_loglik_conditional_examples():
    assert loglik_conditional(make_subject(3.0), make_params(alpha=1.0), []) == pytest.approx(-3)
    v = loglik_conditional(make_subject(2.0), make_params(alpha=1.0, delta=0.6,
                                                          zeta=(math.log(0.6),)), [1.0])
    assert v == pytest.approx(LOGLIK_ONE_EVENT, rel=1e-13)


def test_loglik_conditional_rejects_nonpositive_event():
    with pytest.raises(DomainError):
        loglik_conditional(make_subject(), make_params(), [0.0, 1.0])


def test_loglik_branching_single_and_empty():
    s = make_subject(5.0)
    p = make_params(alpha=0.9, delta=0.7, beta=(-1.0,), zeta=(-0.5,))
    nu, om = 1.3, 0.8
    t1 = 2.2
    eta, ks = math.exp(-1.0), om * math.exp(-0.5)
    want = (math.log(0.9 * t1 ** -0.1 * nu * eta) - nu * eta * 5.0**0.9
            - ks / 0.7 * (1 - math.exp(-0.7 * (5.0 - t1))))
    assert loglik_branching(s, p, [t1], [0], nu, om) == pytest.approx(want, rel=1e-13)
    assert loglik_branching(s, p, [], [], nu, om) == pytest.approx(-nu * eta * 5.0**0.9)


def test_loglik_branching_rejects_invalid_parent():
    with pytest.raises(StructureError):
        loglik_branching(make_subject(), make_params(), [1.0, 2.0], [0, 2])


def test_marginalization_three_events():
    s = make_subject(6.0)
    p = make_params(alpha=0.8, delta=0.9, beta=(-0.2,), zeta=(-0.4,))
    ev = [0.7, 1.1, 4.0]
    terms = [loglik_branching(s, p, ev, y, 1.2, 0.9) for y in all_branchings(3)]
    assert logsumexp(terms) == pytest.approx(loglik_conditional(s, p, ev, 1.2, 0.9), rel=1e-12)


# -- table arithmetic -----------------------------------------------------------


def test_branching_ratio_and_cluster_size():
    assert branching_ratio(1, 0.348, 0.638) == pytest.approx(0.5455, abs=5e-5)
    assert branching_ratio(1, 0.0, 0.6) == 0.0
    assert branching_ratio(2, 0.3, 0.6) == pytest.approx(1.0)
    assert expected_cluster_size(0.545) == pytest.approx(2.198, abs=1e-3)
    assert expected_cluster_size(0.0) == 1.0
    assert expected_cluster_size(0.992) == pytest.approx(125.0)
    with pytest.raises(NonstationaryError):
        expected_cluster_size(1.0)


def test_total_compensator_matches_quadrature():
    s = make_subject(12.0)
    p = make_params(alpha=0.9, delta=0.6, beta=(-1.0,), zeta=(-1.1,))
    ev = np.array([0.5, 2.0, 2.3, 7.5, 11.0])
    lam = lambda t: float(conditional_intensity(s, p, ev, t, 1.4, 0.7))
    brk = [0.0, *ev, 12.0]
    quad = sum(integrate.quad(lam, a, b, epsabs=0, epsrel=1e-11, limit=200)[0]
               for a, b in zip(brk[:-1], brk[1:]))
    assert total_compensator(s, p, ev, 1.4, 0.7) == pytest.approx(quad, rel=1e-8)
