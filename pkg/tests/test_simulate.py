import math

import numpy as np
import pytest
from scipy import stats

from mixhawkes.errors import ConfigurationError, DomainError, NonstationaryError
from mixhawkes.model import ModelParams
from mixhawkes.simulate import (
    TrackingConfig,
    aggregate_and_censor,
    simulate_events,
    simulate_study,
    simulate_thinning,
    simulate_tracking,
    study_scenario,
)

NO_EXCITATION = -800.0  # exp of this is exactly zero


# -- tracking ------------------------------------------------------------------------


def test_beta_shapes_by_hand():
    assert TrackingConfig(pi0=0.5).beta_shapes() == pytest.approx((0.5, 1.5, 0.5, 1.5))


def test_inconsistent_dispersion_is_rejected():
    with pytest.raises(ConfigurationError):
        TrackingConfig(w2=1.0)
    with pytest.raises(ConfigurationError):
        TrackingConfig(pi0=1.0)


def test_full_start_bump_tracks_the_first_day():
    cfg = TrackingConfig(pi0=0.5, delta_pi1=0.5)
    rng = np.random.default_rng(3)
    assert all(simulate_tracking(cfg, rng)[1][0] for _ in range(2000))


@pytest.mark.parametrize("pi0", [0.25, 0.5, 0.75])
def test_long_run_tracked_fraction(pi0):
    cfg = TrackingConfig(pi0=pi0)
    rng = np.random.default_rng(int(pi0 * 100))
    flags = np.concatenate([simulate_tracking(cfg, rng)[1] for _ in range(10_000)])
    assert abs(flags.mean() - (1 - pi0)) < 0.03


def test_follow_up_bounds():
    rng = np.random.default_rng(4)
    cfg = TrackingConfig()
    horizons = np.array([simulate_tracking(cfg, rng)[0] for _ in range(5000)])
    assert horizons.min() >= 3 and horizons.max() <= 1096


# -- event simulation ---------------------------------------------------------------------


def test_poisson_counts_without_excitation():
    params = ModelParams(1.0, 0.6, [math.log(2.0)], [NO_EXCITATION])
    rng = np.random.default_rng(5)
    n = np.array([simulate_events(params, 1.0, 1.0, 100.0, rng).times.size
                  for _ in range(10_000)])
    edges = np.arange(160, 241, 5)
    obs = np.histogram(n, bins=np.concatenate([[-np.inf], edges, [np.inf]]))[0]
    cdf = stats.poisson.cdf(np.concatenate([edges - 1, [np.inf]]), 200)
    probs = np.diff(np.concatenate([[0.0], cdf]))
    assert stats.chisquare(obs, probs * n.size).pvalue > 0.01


def test_weibull_time_change_gives_unit_poisson():
    bg, alpha, horizon = 0.7, 0.9, 40.0
    params = ModelParams(alpha, 0.6, [math.log(bg)], [NO_EXCITATION])
    rng = np.random.default_rng(6)
    total = bg * horizon**alpha
    scaled, counts = [], []
    for _ in range(2000):
        ev = simulate_events(params, 1.0, 1.0, horizon, rng)
        assert ev.labels.sum() == 0
        # a unit-rate Poisson process on (0, total] given its count is uniform there
        scaled.append(bg * ev.times**alpha / total)
        counts.append(ev.times.size)
    assert stats.kstest(np.concatenate(scaled), "uniform").pvalue > 0.01
    assert np.mean(counts) == pytest.approx(total, abs=4 * math.sqrt(total / 2000))


def test_exact_simulator_agrees_with_thinning():
    alpha, delta, bg, ks, horizon = 1.1, 0.6, 0.2, 0.3, 50.0  # branching ratio 0.5
    params = ModelParams(alpha, delta, [math.log(bg)], [math.log(ks)])
    rng = np.random.default_rng(7)
    n = 10_000
    exact = np.array([simulate_events(params, 1.0, 1.0, horizon, rng).times.size
                      for _ in range(n)], float)
    thin = np.array([simulate_thinning(alpha, delta, bg, ks, horizon, rng).size
                     for _ in range(n)], float)
    se_mean = math.sqrt(exact.var(ddof=1) / n + thin.var(ddof=1) / n)
    assert abs(exact.mean() - thin.mean()) < 2 * se_mean

    def se_var(a):
        c = a - a.mean()
        return math.sqrt(((c**4).mean() - a.var() ** 2) / a.size)

    se_v = math.hypot(se_var(exact), se_var(thin))
    assert abs(exact.var(ddof=1) - thin.var(ddof=1)) < 2 * se_v


def test_thinning_oracle_needs_bounded_background():
    with pytest.raises(DomainError):
        simulate_thinning(0.9, 0.6, 0.2, 0.3, 10.0, np.random.default_rng(0))


def test_events_are_sorted_and_labels_consistent():
    params = ModelParams(0.9, 0.6, [math.log(0.1)], [math.log(0.45)])
    rng = np.random.default_rng(8)
    for _ in range(300):
        ev = simulate_events(params, 1.0, 1.2, 200.0, rng)
        assert np.all(np.diff(ev.times) > 0)
        if ev.labels.size:
            assert ev.labels[0] == 0


def test_offspring_effect_is_capped():
    params = ModelParams(0.9, 0.6, [math.log(0.1)], [math.log(0.5)])
    ev = simulate_events(params, 1.0, 3.0, 10.0, np.random.default_rng(0))
    assert ev.capped and ev.omega == pytest.approx(0.9 * 0.6 / 0.5)
    with pytest.raises(NonstationaryError):
        simulate_events(params, 1.0, 1.0, 10.0, np.random.default_rng(0), br_max=1.0)


# -- aggregation -----------------------------------------------------------------------------


def test_aggregation_examples():
    s, _ = aggregate_and_censor([0.4, 0.9, 1.5], np.ones(2, bool), 2.0)
    np.testing.assert_array_equal(s.counts, [2, 1])
    s, _ = aggregate_and_censor([0.4, 0.9, 1.5], [False, True], 2.0)
    assert not s.tracked[0] and s.counts[1] == 1
    assert s.total_count <= 3
    with pytest.raises(DomainError):
        aggregate_and_censor([2.5], np.ones(2, bool), 2.0)


def test_tracked_counts_equal_events_on_tracked_days():
    rep = simulate_study(study_scenario(m=200, pi0=0.5, variance="high"), seed=3)[0]
    for s, t in zip(rep.dataset, rep.truth["subjects"]):
        day = np.ceil(t["times"]).astype(int) - 1
        assert s.total_count == int(s.tracked[day].sum())


# -- study corpora ------------------------------------------------------------------------------


def test_covariate_cells_within_three_sigma():
    m = 2000
    rep = simulate_study(study_scenario(m=m), seed=11)[0]
    x = np.array([s.x[1:] for s in rep.dataset])
    z = np.array([s.z[1:] for s in rep.dataset])
    cols = np.hstack([x, z])
    sigma = math.sqrt(m * 0.25)
    assert np.all(np.abs(cols.sum(0) - m / 2) < 3 * sigma)
    for a, b in ((0, 1), (0, 2), (1, 3)):
        cell = np.sum((cols[:, a] == 1) & (cols[:, b] == 1))
        assert abs(cell - m / 4) < 3 * math.sqrt(m * 0.25 * 0.75)


def test_study_is_deterministic_per_seed():
    a = simulate_study(study_scenario(m=20), seed=9, n_replicates=2)
    b = simulate_study(study_scenario(m=20), seed=9, n_replicates=2)
    for ra, rb in zip(a, b):
        assert ra.dataset.equals(rb.dataset)
    assert not a[0].dataset.equals(a[1].dataset)


@pytest.mark.xfail(strict=True, reason="reported-event mean below the published 36.5; "
                                       "see the decision ledger")
def test_mean_reported_events_high_variance_half_missing():
    reps = simulate_study(study_scenario(m=400, pi0=0.5, variance="high"), seed=1,
                          n_replicates=3)
    mean = np.mean([r.truth["mean_reported"] for r in reps])
    assert mean == pytest.approx(36.5, rel=0.15)
