"""Gibbs sampler driver: initialization, sweeps, chains and draw storage.

One sweep updates, in order: the branching structure; the random
effects; alpha, delta and the random-effect precisions by ARS; the
regression coefficients; event times inside tracked bins; event sets
inside untracked intervals.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kern
from .augmentation import (
    IMPUTATION_CAP,
    PanelArrays,
    counters_dict,
    impute_binned_events,
    impute_missing_intervals,
    init_latent_events,
    new_counters,
)
from .errors import ChainError, ConfigurationError, FitError, MixHawkesError
from .model import Dataset, LatentState, ModelParams, ModelStructure, Priors, Process
from .rng import STREAM_CHAIN, stream
from . import samplers as smp

BLOCKS = ("branching", "nu", "omega", "alpha", "delta", "phi", "xi", "beta", "zeta",
          "binned", "missing")
INIT_POLICIES = ("paper_uniform", "perturb_truth", "fixed")


@dataclass
class FitConfig:
    """Run configuration.

    ``frozen`` names blocks from :data:`BLOCKS` that keep their initial
    values; ``init_params`` seeds the ``fixed`` policy and overrides the
    frozen parameters under the other policies.
    """

    structure: ModelStructure = field(default_factory=ModelStructure)
    priors: Priors = field(default_factory=Priors)
    n_chains: int = 4
    n_burnin: int = 2000
    n_iter: int = 10000
    thin: int = 1
    seed: int = 0
    init_policy: str = "paper_uniform"
    init_fraction: float = 0.1
    truth: ModelParams | None = None
    init_params: ModelParams | None = None
    frozen: frozenset = frozenset()
    imputation_cap: float = IMPUTATION_CAP
    threads: int = 1

    def __post_init__(self):
        self.frozen = frozenset(self.frozen)
        unknown = self.frozen - set(BLOCKS)
        if unknown:
            raise ConfigurationError(f"unknown frozen blocks {sorted(unknown)}")
        if self.n_iter <= 0 or self.thin < 1 or self.n_burnin < 0 or self.n_chains < 1:
            raise ConfigurationError("need n_iter > 0, thin >= 1, n_burnin >= 0, n_chains >= 1")
        if self.n_iter % self.thin:
            raise ConfigurationError("n_iter must be a multiple of thin")
        if self.init_policy not in INIT_POLICIES:
            raise ConfigurationError(f"init_policy must be one of {INIT_POLICIES}")
        if self.init_policy == "perturb_truth" and self.truth is None:
            raise ConfigurationError("perturb_truth needs truth parameters")
        if self.init_policy == "fixed" and self.init_params is None:
            raise ConfigurationError("fixed initialization needs init_params")
        if not 0 < self.imputation_cap < 1:
            raise ConfigurationError("imputation cap must lie in (0, 1)")

    @property
    def n_kept(self):
        return self.n_iter // self.thin


def init_params(structure: ModelStructure, config: FitConfig, rng):
    nb, no = len(structure.background_names), len(structure.offspring_names)
    if config.init_policy == "fixed":
        p = config.init_params.copy()
    elif config.init_policy == "perturb_truth":
        t = config.truth
        f = config.init_fraction

        def jitter(v):
            v = np.asarray(v, dtype=float)
            return v * (1.0 + rng.uniform(-f, f, size=v.shape))

        p = ModelParams(float(jitter(t.alpha)), float(jitter(t.delta)), jitter(t.beta),
                        jitter(t.zeta), float(jitter(t.phi)), float(jitter(t.xi)))
    else:
        beta = np.zeros(nb)
        zeta = np.zeros(no)
        alpha, delta = rng.uniform(0.5, 1.5, size=2)
        phi, xi = rng.uniform(10.0, 30.0, size=2)
        beta[0], zeta[0] = rng.uniform(-3.0, -1.0, size=2)
        p = ModelParams(alpha, delta, beta, zeta, phi, xi)
    if config.init_params is not None and config.init_policy != "fixed":
        fixed = config.init_params
        for name in ("alpha", "delta", "phi", "xi"):
            if name in config.frozen:
                setattr(p, name, getattr(fixed, name))
        if "beta" in config.frozen:
            p.beta = fixed.beta.copy()
        if "zeta" in config.frozen:
            p.zeta = fixed.zeta.copy()
    p.check_structure(structure)
    return p


def init_state(dataset: Dataset, config: FitConfig, rng):
    """Initial ``(ModelParams, LatentState)`` under the configured policy."""
    params = init_params(config.structure, config, rng)
    latent = init_latent_events(dataset, rng)
    return params, latent


@dataclass
class ChainResult:
    chain: int
    params: np.ndarray  # (draws, n_params)
    nu: np.ndarray  # (draws, m)
    omega: np.ndarray
    loglik: np.ndarray
    n_missing: np.ndarray
    counters: dict
    init: dict
    seconds: float


class Chain:
    """Mutable state of one Markov chain."""

    def __init__(self, dataset: Dataset, config: FitConfig, chain_id=0, rng=None):
        self.config = config
        self.structure = dataset.complete_structure(config.structure)
        self.dataset = dataset.with_design(self.structure)
        self.priors = config.priors
        self.chain_id = chain_id
        self.rng = stream(config.seed, STREAM_CHAIN, chain_id) if rng is None else rng
        self.panel = PanelArrays.from_dataset(self.dataset)
        self.m = len(self.dataset)
        if self.m < 2 and ((self.structure.re_background and "phi" not in config.frozen)
                           or (self.structure.re_offspring and "xi" not in config.frozen)):
            raise ConfigurationError("random-effect precisions need at least two subjects")
        self.params, self.latent = init_state(self.dataset, replace(config, structure=self.structure),
                                              self.rng)
        self.init = self.params.as_dict(self.structure)
        self.counters = new_counters()
        self.frozen = config.frozen

    # -- helpers -------------------------------------------------------------
    def _predictors(self):
        eta = np.exp(self.panel.x @ self.params.beta)
        kappa = np.exp(self.panel.z @ self.params.zeta)
        return eta, kappa

    def _scales(self):
        eta, kappa = self._predictors()
        return self.latent.nu * eta, self.latent.omega * kappa

    def conditional_state(self):
        lat = self.latent
        n_imm, log_imm, n_off, gap = kern.branching_stats(lat.times, lat.parent, lat.offsets,
                                                          self.panel.horizon)
        subj = lat.subject_index()
        return smp.ConditionalState(
            params=self.params, structure=self.structure, horizon=self.panel.horizon,
            x=self.panel.x, z=self.panel.z, nu=lat.nu, omega=lat.omega, n_immigrants=n_imm,
            log_immigrant_times=log_imm, n_offspring=n_off, offspring_gaps=gap,
            remaining=self.panel.horizon[subj] - lat.times, event_subject=subj)

    # -- one sweep -----------------------------------------------------------
    def sweep(self, index=0):
        step = "branching"
        try:
            p, lat, rng, fz = self.params, self.latent, self.rng, self.frozen
            if "branching" not in fz:
                bg, ks = self._scales()
                lat.parent = kern.sample_parents(lat.times, lat.offsets, bg, p.alpha, ks,
                                                 p.delta, rng)
            cs = self.conditional_state()
            step = "random effects"
            if self.structure.re_background and "nu" not in fz:
                lat.nu = cs.nu = smp.sample_nu(cs, rng)
            if self.structure.re_offspring and "omega" not in fz:
                lat.omega = cs.omega = smp.sample_omega(cs, rng)
            step = "alpha"
            if "alpha" not in fz:
                p.alpha = smp.sample_alpha(cs, self.priors, rng)
            step = "delta"
            if "delta" not in fz:
                p.delta = smp.sample_delta(cs, self.priors, rng)
            step = "phi"
            if self.structure.re_background and "phi" not in fz:
                p.phi = smp.sample_phi(cs, self.priors, rng)
            step = "xi"
            if self.structure.re_offspring and "xi" not in fz:
                p.xi = smp.sample_xi(cs, self.priors, rng)
            step = "coefficients"
            self._update_coefficients(cs)
            bg, ks = self._scales()
            step = "binned imputation"
            if "binned" not in fz:
                impute_binned_events(lat, self.panel, p.alpha, ks, p.delta, rng, self.counters)
            step = "missing imputation"
            if "missing" not in fz:
                self.latent, _ = impute_missing_intervals(
                    lat, self.panel, p.alpha, bg, ks, p.delta, rng, self.counters,
                    cap=self.config.imputation_cap)
        except MixHawkesError as exc:
            raise ChainError(self.chain_id, index, step, exc) from exc
        except (FloatingPointError, ValueError, ZeroDivisionError) as exc:
            raise ChainError(self.chain_id, index, step, exc) from exc

    def _update_coefficients(self, cs):
        p, fz = self.params, self.frozen
        for process, coef, block, effect in (
                (Process.BACKGROUND, p.beta, "beta", "nu"),
                (Process.OFFSPRING, p.zeta, "zeta", "omega")):
            if block in fz:
                continue
            design = self.panel.x if process is Process.BACKGROUND else self.panel.z
            centered = self.structure.centered(process)
            for k in range(coef.size):
                old = coef[k]
                coef[k] = smp.sample_coefficient(process, k, cs, self.priors, self.rng)
                if centered:
                    # hold the centered effect fixed while the predictor moves
                    arr = getattr(self.latent, effect)
                    arr *= np.exp((old - coef[k]) * design[:, k])

    def pointwise_loglik(self):
        bg, ks = self._scales()
        lat = self.latent
        return kern.pointwise_loglik(lat.times, lat.offsets, self.panel.horizon, bg,
                                     self.params.alpha, ks, self.params.delta)

    def param_vector(self):
        return np.array(list(self.params.as_dict(self.structure).values()))

    def run(self, callback=None):
        cfg = self.config
        start = time.perf_counter()
        n_keep = cfg.n_kept
        names = self.structure.parameter_names()
        out = {
            "params": np.empty((n_keep, len(names))),
            "nu": np.empty((n_keep, self.m)),
            "omega": np.empty((n_keep, self.m)),
            "loglik": np.empty((n_keep, self.m)),
            "n_missing": np.empty((n_keep, self.m), dtype=np.int64),
        }
        kept = 0
        total = cfg.n_burnin + cfg.n_iter
        for it in range(total):
            self.sweep(it)
            if it >= cfg.n_burnin and (it - cfg.n_burnin + 1) % cfg.thin == 0:
                out["params"][kept] = self.param_vector()
                out["nu"][kept] = self.latent.nu
                out["omega"][kept] = self.latent.omega
                out["loglik"][kept] = self.pointwise_loglik()
                out["n_missing"][kept] = self.latent.n_missing_events()
                kept += 1
            if callback is not None:
                callback(self, it)
        return ChainResult(self.chain_id, counters=counters_dict(self.counters), init=self.init,
                           seconds=time.perf_counter() - start, **out)


def run_chain(dataset: Dataset, config: FitConfig, chain_id=0, callback=None) -> ChainResult:
    return Chain(dataset, config, chain_id).run(callback)


@dataclass
class PosteriorDraws:
    """Kept draws of every chain; arrays are indexed ``[chain, draw, ...]``."""

    param_names: list
    params: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    loglik: np.ndarray
    n_missing: np.ndarray
    subject_ids: list
    structure: ModelStructure
    counters: list = field(default_factory=list)
    init: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.params.shape[0]

    @property
    def n_draws(self):
        return self.params.shape[1]

    def param(self, name):
        return self.params[:, :, self.param_names.index(name)]

    def beta(self):
        cols = [self.param_names.index(f"beta[{n}]") for n in self.structure.background_names]
        return self.params[:, :, cols]

    def zeta(self):
        cols = [self.param_names.index(f"zeta[{n}]") for n in self.structure.offspring_names]
        return self.params[:, :, cols]

    @classmethod
    def from_chains(cls, results, subject_ids, structure):
        results = sorted(results, key=lambda r: r.chain)
        stack = lambda key: np.stack([getattr(r, key) for r in results])
        return cls(structure.parameter_names(), stack("params"), stack("nu"), stack("omega"),
                   stack("loglik"), stack("n_missing"), list(subject_ids), structure,
                   [r.counters for r in results], [r.init for r in results],
                   [r.seconds for r in results])


def _chain_job(args):
    dataset, config, chain_id = args
    try:
        return chain_id, run_chain(dataset, config, chain_id), None
    except MixHawkesError as exc:
        return chain_id, None, exc


def default_threads():
    return int(os.environ.get("MIXHAWKES_THREADS", "1"))


def run_fit(dataset: Dataset, config: FitConfig) -> PosteriorDraws:
    """Run every chain; results do not depend on the worker count."""
    structure = dataset.complete_structure(config.structure)
    config = replace(config, structure=structure)
    jobs = [(dataset, config, c) for c in range(config.n_chains)]
    workers = max(1, min(config.threads, config.n_chains))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_chain_job, jobs))
    else:
        outcomes = [_chain_job(j) for j in jobs]
    failures = {c: e for c, _, e in outcomes if e is not None}
    if failures:
        raise FitError(failures)
    return PosteriorDraws.from_chains([r for _, r, _ in outcomes], dataset.subject_ids,
                                      structure)
