"""Synthetic data: tracking trajectories, exact event simulation,
censoring to daily counts and full study corpora."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .errors import ConfigurationError, DomainError, NonstationaryError
from .model import (
    BIN_WIDTH,
    Dataset,
    ModelParams,
    ModelStructure,
    SubjectData,
    branching_ratio,
)
from .rng import STREAM_STUDY, stream

TRUTH = ModelParams(alpha=0.9, delta=0.6, beta=[-3.5, -0.5, 1.0], zeta=[-1.1, -0.1, 0.1],
                    phi=5.0, xi=50.0)
VARIANCE_LEVELS = {"low": (5.0, 50.0), "medium": (1.0, 10.0), "high": (0.2, 5.0)}


@dataclass(frozen=True)
class TrackingConfig:
    """Inputs of the two-state tracking chain (state 1 = tracked)."""

    dropout_rate: float = 0.0008
    t_min: int = 3
    t_max: int = 1096
    pi0: float = 0.25
    w1: float = 2.0
    w2: float = 4.0
    delta_pi1: float = 0.1

    def __post_init__(self):
        if not 0 < self.pi0 < 1:
            raise ConfigurationError("pi0 must lie in (0, 1)")
        if not (self.t_min >= 1 and self.t_max >= self.t_min):
            raise ConfigurationError("need 1 <= t_min <= t_max")
        if not self.dropout_rate > 0:
            raise ConfigurationError("dropout rate must be positive")
        self.beta_shapes()

    def beta_shapes(self):
        """``(a_p, b_p, a_q, b_q)`` of the transition-probability Beta laws."""
        pi1 = 1.0 - self.pi0
        out = []
        for mean in (pi1 / self.w1, self.pi0 / self.w1):
            var = mean / self.w2
            c = mean * (1.0 - mean) / var - 1.0
            a, b = mean * c, (1.0 - mean) * c
            if not (a > 0 and b > 0):
                raise ConfigurationError(
                    f"non-positive Beta shape ({a:.4g}, {b:.4g}); adjust w1/w2 for pi0")
            out += [a, b]
        return tuple(out)


def simulate_tracking(config: TrackingConfig, rng):
    """Follow-up length (days) and per-day tracked flags for one subject."""
    a_p, b_p, a_q, b_q = config.beta_shapes()
    horizon = int(min(math.floor(rng.exponential(1.0 / config.dropout_rate)) + config.t_min,
                      config.t_max))
    p = rng.beta(a_p, b_p)
    q = rng.beta(a_q, b_q)
    start = min(1.0 - config.pi0 + config.delta_pi1, 1.0)
    state = bool(rng.random() < start)
    flags = np.empty(horizon, dtype=bool)
    day = 0
    # run lengths of a two-state chain are geometric in the leaving probability
    while day < horizon:
        leave = q if state else p
        run = rng.geometric(leave) if leave > 0 else horizon
        flags[day:day + run] = state
        day += run
        state = not state
    return horizon, flags


@dataclass
class SimulatedEvents:
    times: np.ndarray
    labels: np.ndarray  # 0 immigrant, 1 offspring
    omega: float  # offspring effect after capping
    capped: bool


def simulate_events(params: ModelParams, nu, omega, horizon, rng, x=None, z=None,
                    br_max=0.90):
    """Exact draw of one subject's events on ``(0, horizon]``.

    ``omega`` is capped so that the subject's branching ratio does not
    exceed ``br_max``.
    """
    if not br_max < 1:
        raise NonstationaryError("br_max must be below 1")
    x = np.ones(1) if x is None else np.asarray(x, float)
    z = np.ones(1) if z is None else np.asarray(z, float)
    eta = math.exp(float(x @ params.beta))
    kappa = math.exp(float(z @ params.zeta))
    limit = br_max * params.delta / kappa if kappa > 0 else math.inf
    capped = bool(omega > limit)
    omega = min(float(omega), limit)
    times, labels, _ = kern.forward_simulate(0.0, float(horizon), float(nu) * eta, params.alpha,
                                             omega * kappa, params.delta, 0.0, rng,
                                             np.iinfo(np.int64).max)
    return SimulatedEvents(times.copy(), labels.astype(np.int8), omega, capped)


def simulate_thinning(alpha, delta, bg, ks, horizon, rng):
    """Ogata thinning draw; an independent check on :func:`simulate_events`.

    Requires ``alpha >= 1`` so the background is bounded on ``(0, T]``.
    """
    if alpha < 1:
        raise DomainError("thinning oracle needs a nondecreasing background (alpha >= 1)")
    bg_max = bg * alpha * horizon ** (alpha - 1.0)
    out = []
    t = 0.0
    exc = 0.0  # excitation just after t
    while True:
        bound = bg_max + ks * exc
        w = rng.exponential(1.0 / bound)
        t_new = t + w
        if t_new > horizon:
            break
        exc *= math.exp(-delta * w)
        t = t_new
        lam = bg * alpha * t ** (alpha - 1.0) + ks * exc
        if rng.random() * bound <= lam:
            out.append(t)
            exc += 1.0
    return np.array(out)


def aggregate_and_censor(times, tracked, horizon, subject_id="0", x=None, z=None,
                         covariates=None, bin_width=BIN_WIDTH):
    """Daily counts of ``times`` with untracked bins blanked.

    Returns ``(SubjectData, times)``; the second item is the hidden truth.
    """
    times = np.asarray(times, float)
    tracked = np.asarray(tracked, bool)
    if times.size and (times.min() <= 0 or times.max() > horizon):
        raise DomainError("events must lie in (0, horizon]")
    n_bins = tracked.size
    idx = np.ceil(times / bin_width).astype(np.int64) - 1
    counts = np.bincount(idx, minlength=n_bins)[:n_bins]
    counts = np.where(tracked, counts, -1)
    subject = SubjectData(subject_id, horizon, tracked, counts,
                          x=np.ones(1) if x is None else x, z=np.ones(1) if z is None else z,
                          covariates=dict(covariates or {}), bin_width=bin_width)
    return subject, times


@dataclass
class SimConfig:
    """One simulation scenario.

    Covariates are independent Bernoulli(``covariate_prob``) columns,
    ``n_covariates`` per process; with ``shared_covariates`` both
    processes use the same columns.
    """

    m: int = 100
    params: ModelParams = field(default_factory=TRUTH.copy)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    br_max: float = 0.90
    n_covariates: int = 2
    covariate_prob: float = 0.5
    shared_covariates: bool = False
    re_background: bool = True
    re_offspring: bool = True

    def __post_init__(self):
        if not self.br_max < 1:
            raise ConfigurationError("br_max must be below 1")
        if self.m < 1:
            raise ConfigurationError("m must be positive")
        k = self.n_covariates
        if self.params.beta.size != k + 1 or self.params.zeta.size != k + 1:
            raise ConfigurationError("truth coefficients must match n_covariates + intercept")

    @property
    def background_covariates(self):
        k = self.n_covariates
        return tuple(f"c{j + 1}" for j in range(k)) if self.shared_covariates else tuple(
            f"x{j + 1}" for j in range(k))

    @property
    def offspring_covariates(self):
        k = self.n_covariates
        return tuple(f"c{j + 1}" for j in range(k)) if self.shared_covariates else tuple(
            f"z{j + 1}" for j in range(k))

    @property
    def covariate_names(self):
        names = list(self.background_covariates)
        names += [n for n in self.offspring_covariates if n not in names]
        return tuple(names)

    def structure(self, **overrides):
        kinds = {n: "binary" for n in self.covariate_names}
        kw = dict(re_background=self.re_background, re_offspring=self.re_offspring,
                  background_covariates=self.background_covariates,
                  offspring_covariates=self.offspring_covariates, covariate_kinds=kinds)
        kw.update(overrides)
        return ModelStructure(**kw)


def study_scenario(m=100, pi0=0.25, variance="low", **kwargs):
    """Scenario from the simulation grid with the reference truth."""
    phi, xi = VARIANCE_LEVELS[variance]
    params = TRUTH.copy()
    params.phi, params.xi = phi, xi
    return SimConfig(m=m, params=params, tracking=TrackingConfig(pi0=pi0), **kwargs)


@dataclass
class StudyReplicate:
    dataset: Dataset
    structure: ModelStructure
    truth: dict


def simulate_subject(config: SimConfig, rng, subject_id):
    names = config.covariate_names
    covs = {n: float(rng.random() < config.covariate_prob) for n in names}
    x = np.array([1.0] + [covs[n] for n in config.background_covariates])
    z = np.array([1.0] + [covs[n] for n in config.offspring_covariates])
    horizon, flags = simulate_tracking(config.tracking, rng)
    p = config.params
    nu = rng.gamma(p.phi, 1.0 / p.phi) if config.re_background else 1.0
    omega = rng.gamma(p.xi, 1.0 / p.xi) if config.re_offspring else 1.0
    ev = simulate_events(p, nu, omega, horizon, rng, x=x, z=z, br_max=config.br_max)
    subject, _ = aggregate_and_censor(ev.times, flags, horizon, subject_id, x=x, z=z,
                                      covariates=covs)
    truth = {
        "subject_id": subject_id,
        "nu": float(nu),
        "omega_drawn": float(omega),
        "omega": ev.omega,
        "capped": ev.capped,
        "n_events": int(ev.times.size),
        "n_offspring": int(ev.labels.sum()),
        "n_reported": subject.total_count,
        "times": ev.times,
    }
    return subject, truth


def simulate_study(config: SimConfig, seed, n_replicates=1):
    """Replicate datasets; subject ``i`` of replicate ``r`` uses its own stream."""
    out = []
    for r in range(n_replicates):
        subjects, truths = [], []
        for i in range(config.m):
            rng = stream(seed, STREAM_STUDY, r, i)
            s, t = simulate_subject(config, rng, f"s{i + 1:04d}")
            subjects.append(s)
            truths.append(t)
        ds = Dataset(subjects, config.covariate_names)
        p = config.params
        truth = {
            "replicate": r,
            "params": {"alpha": p.alpha, "delta": p.delta, "beta": p.beta.tolist(),
                       "zeta": p.zeta.tolist(), "phi": p.phi, "xi": p.xi},
            "subjects": truths,
            "capped_fraction": float(np.mean([t["capped"] for t in truths])),
            "mean_horizon": float(np.mean([s.horizon for s in subjects])),
            "mean_reported": float(np.mean([t["n_reported"] for t in truths])),
            "missing_fraction": float(1 - np.mean(np.concatenate([s.tracked for s in subjects]))),
        }
        out.append(StudyReplicate(ds, config.structure(), truth))
    return out


def subject_branching_ratios(config: SimConfig, dataset: Dataset, truth):
    """Realized per-subject branching ratios after capping."""
    p = config.params
    return np.array([branching_ratio(t["omega"], math.exp(float(s.z @ p.zeta)), p.delta)
                     for s, t in zip(dataset, truth["subjects"])])
