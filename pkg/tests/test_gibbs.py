from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from mixhawkes import gibbs, samplers
from mixhawkes.diagnostics import rhat
from mixhawkes.errors import ChainError, ConfigurationError, DomainError, FitError
from mixhawkes.gibbs import Chain, FitConfig, init_params, run_chain, run_fit
from mixhawkes.model import Dataset, ModelParams, ModelStructure, Priors
from mixhawkes.simulate import TRUTH, simulate_study, study_scenario

from conftest import make_subject

NO_RE = ModelStructure(re_background=False, re_offspring=False)


def poisson_panel(m, horizon, rate, seed):
    rng = np.random.default_rng(seed)
    return Dataset([make_subject(horizon, counts=rng.poisson(rate, int(horizon)), sid=f"p{i}")
                    for i in range(m)])


def small_fit_config(**kw):
    base = dict(structure=NO_RE, n_chains=2, n_burnin=5, n_iter=10, seed=3)
    base.update(kw)
    return FitConfig(**base)


# -- initialization ---------------------------------------------------------------


def test_paper_uniform_initial_values_stay_in_their_boxes():
    rng = np.random.default_rng(0)
    structure = ModelStructure(background_covariates=("a",), offspring_covariates=("b",))
    cfg = FitConfig(structure=structure)
    draws = [init_params(structure, cfg, rng) for _ in range(10_000)]
    alpha = np.array([p.alpha for p in draws])
    delta = np.array([p.delta for p in draws])
    phi = np.array([p.phi for p in draws])
    b0 = np.array([p.beta[0] for p in draws])
    assert np.all((alpha > 0.5) & (alpha < 1.5)) and np.all((delta > 0.5) & (delta < 1.5))
    assert np.all((phi > 10) & (phi < 30)) and np.all((b0 > -3) & (b0 < -1))
    assert all(p.beta[1] == 0 and p.zeta[1] == 0 for p in draws)


def test_perturbed_truth_stays_within_ten_percent():
    rng = np.random.default_rng(1)
    structure = ModelStructure(background_covariates=("x1", "x2"),
                               offspring_covariates=("z1", "z2"))
    cfg = FitConfig(structure=structure, init_policy="perturb_truth", truth=TRUTH)
    for _ in range(2000):
        p = init_params(structure, cfg, rng)
        assert 0.81 <= p.alpha <= 0.99
        np.testing.assert_array_less(np.abs(p.beta - TRUTH.beta), 0.1 * np.abs(TRUTH.beta) + 1e-12)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FitConfig(frozen={"gamma"})
    with pytest.raises(ConfigurationError):
        FitConfig(n_iter=10, thin=3)
    with pytest.raises(ConfigurationError):
        FitConfig(init_policy="perturb_truth")
    with pytest.raises(ConfigurationError):
        Chain(Dataset([make_subject()]), FitConfig())


# -- single-block oracles ----------------------------------------------------------


def test_frozen_blocks_keep_their_values():
    ds = poisson_panel(4, 20, 0.5, 0)
    init = ModelParams(0.8, 0.7, [-1.0], [-2.0])
    cfg = small_fit_config(n_chains=1, init_policy="fixed", init_params=init,
                           frozen={"alpha", "zeta"})
    res = run_chain(ds, cfg)
    names = NO_RE.parameter_names()
    assert np.all(res.params[:, names.index("alpha")] == 0.8)
    assert np.all(res.params[:, names.index("zeta[intercept]")] == -2.0)
    assert np.unique(res.params[:, names.index("delta")]).size > 1


def test_background_rate_concentrates_at_events_over_exposure():
    ds = poisson_panel(40, 200, 0.3, 5)
    n_events = sum(s.total_count for s in ds)
    exposure = sum(s.horizon for s in ds)
    init = ModelParams(1.0, 1.0, [-1.0], [-30.0])
    cfg = FitConfig(structure=NO_RE, n_chains=1, n_burnin=20, n_iter=300, seed=2,
                    init_policy="fixed", init_params=init,
                    frozen={"alpha", "delta", "zeta", "branching"})
    res = run_chain(ds, cfg)
    rate = np.exp(res.params[:, NO_RE.parameter_names().index("beta[intercept]")])
    assert rate.mean() == pytest.approx(n_events / exposure, rel=0.05)


def test_zero_event_intercept_matches_grid_posterior():
    horizons = [30.0, 45.0, 60.0]
    ds = Dataset([make_subject(h, sid=f"e{i}") for i, h in enumerate(horizons)])
    priors = Priors(coef_background=(2.0, 1.0))
    init = ModelParams(1.0, 1.0, [-1.0], [-1.0])
    cfg = FitConfig(structure=NO_RE, priors=priors, n_chains=1, n_burnin=0, n_iter=20_000,
                    seed=8, init_policy="fixed", init_params=init,
                    frozen={"alpha", "delta", "zeta"})
    b0 = run_chain(ds, cfg).params[:, NO_RE.parameter_names().index("beta[intercept]")]
    # exp(b0) is Gamma(shape, rate + exposure); tabulate log density on a grid
    shape, rate = 2.0, 1.0 + sum(horizons)
    grid = np.linspace(b0.min() - 1, b0.max() + 1, 4001)
    logp = shape * grid - rate * np.exp(grid)
    w = np.exp(logp - logp.max())
    cdf = np.cumsum(w) / w.sum()
    edges = np.interp(np.linspace(0, 1, 21)[1:-1], cdf, grid)
    observed = np.bincount(np.searchsorted(edges, b0), minlength=20) / b0.size
    assert 0.5 * np.abs(observed - 0.05).sum() < 0.02


# -- bookkeeping and determinism ------------------------------------------------------


def test_draw_counts_follow_thinning():
    ds = poisson_panel(3, 15, 0.5, 1)
    post = run_fit(ds, small_fit_config(n_iter=12, thin=3))
    assert post.params.shape == (2, 4, len(NO_RE.parameter_names()))
    assert post.loglik.shape == post.nu.shape == post.n_missing.shape == (2, 4, 3)


def test_fit_is_deterministic_and_independent_of_workers():
    rep = simulate_study(study_scenario(m=6, pi0=0.5), seed=1)[0]
    cfg = FitConfig(structure=rep.structure, n_chains=2, n_burnin=5, n_iter=10, seed=11)
    a = run_fit(rep.dataset, cfg)
    b = run_fit(rep.dataset, cfg)
    c = run_fit(rep.dataset, replace(cfg, threads=2))
    for other in (b, c):
        for key in ("params", "nu", "omega", "loglik", "n_missing"):
            np.testing.assert_array_equal(getattr(a, key), getattr(other, key))
    assert a.init[0] != a.init[1]


def test_failed_sweep_reports_chain_sweep_and_step(monkeypatch):
    ds = poisson_panel(3, 15, 0.5, 1)
    calls = {"n": 0}

    def broken(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise DomainError("boom")
        return 1.0

    monkeypatch.setattr(samplers, "sample_delta", broken)
    with pytest.raises(ChainError) as info:
        run_chain(ds, small_fit_config(n_chains=1), chain_id=0)
    assert (info.value.sweep, info.value.operation) == (2, "delta")
    calls["n"] = 0
    with pytest.raises(FitError) as info:
        run_fit(ds, small_fit_config(n_chains=1))
    assert 0 in info.value.failures


# -- joint correctness --------------------------------------------------------------------


def test_prior_draws_survive_the_sampler():
    """Draw parameters from the prior, simulate, sweep, and compare marginals."""
    priors = Priors(alpha=(20.0, 20.0), delta=(20.0, 20.0))
    n_rep, n_sweeps = 300, 25
    rng = np.random.default_rng(77)
    prior_a = rng.gamma(20.0, 1 / 20.0, n_rep)
    prior_d = rng.gamma(20.0, 1 / 20.0, n_rep)
    post_a, post_d = [], []
    from mixhawkes.simulate import aggregate_and_censor, simulate_events

    for r in range(n_rep):
        truth = ModelParams(prior_a[r], prior_d[r], [np.log(0.4)], [np.log(0.3)])
        subjects = []
        for i in range(3):
            ev = simulate_events(truth, 1.0, 1.0, 20.0, rng, br_max=0.99)
            tracked = np.ones(20, bool)
            tracked[8:11] = False
            subjects.append(aggregate_and_censor(ev.times, tracked, 20.0, f"g{i}")[0])
        cfg = FitConfig(structure=NO_RE, priors=priors, n_chains=1, n_burnin=n_sweeps - 1,
                        n_iter=1, seed=r, init_policy="fixed", init_params=truth,
                        frozen={"beta", "zeta"})
        res = run_chain(Dataset(subjects), cfg)
        post_a.append(res.params[0, 0])
        post_d.append(res.params[0, 1])
    for prior, post in ((prior_a, post_a), (prior_d, post_d)):
        qq = np.corrcoef(np.sort(prior), np.sort(post))[0, 1]
        assert qq > 0.99
        assert stats.ks_2samp(prior, post).pvalue > 0.001


def test_four_chains_mix_on_the_low_variance_scenario():
    rep = simulate_study(study_scenario(m=100, pi0=0.25, variance="low"), seed=2024)[0]
    cfg = FitConfig(structure=rep.structure, n_chains=4, n_burnin=1000, n_iter=3000, seed=5,
                    threads=4)
    post = run_fit(rep.dataset, cfg)
    assert rhat(post.param("alpha")) < 1.05
