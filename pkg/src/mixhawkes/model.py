"""Domain types and the likelihood layer of the mixed Hawkes model.

A subject's conditional intensity is

    lambda(t) = nu * eta * alpha * t**(alpha - 1)
                + omega * kappa * sum_{t_j < t} exp(-delta * (t - t_j))

with ``eta = exp(beta @ x)`` and ``kappa = exp(zeta @ z)``. Random
effects ``nu`` and ``omega`` are mean-one Gamma frailties with precisions
``phi`` and ``xi``.

Branching vectors returned or accepted by the public functions in this
module use 0 for an immigrant and ``y`` (1-based) for "offspring of the
``y``-th event". Internally, flat latent arrays store ``y - 1`` with -1
for immigrants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as kern
from .errors import (
    ConfigurationError,
    DomainError,
    NonFiniteParameterError,
    NonstationaryError,
    StructureError,
    ValidationError,
)

BIN_WIDTH = 1.0
INTERCEPT = "intercept"


class Parameterization(str, Enum):
    NON_CENTERED = "non_centered"
    CENTERED = "centered"


class CovariateKind(str, Enum):
    BINARY = "binary"
    GENERAL = "general"


class Process(str, Enum):
    BACKGROUND = "background"
    OFFSPRING = "offspring"


@dataclass(eq=False)
class SubjectData:
    """Observed diary of one subject.

    Parameters
    ----------
    subject_id : str
    horizon : float
        Follow-up length ``T`` in days.
    tracked : ndarray of bool
        One flag per bin; bin ``k`` (0-based) covers ``(k w, (k+1) w]``
        clipped to ``T``.
    counts : ndarray of int
        Observed counts; ``-1`` on untracked bins.
    x, z : ndarray
        Background and offspring design rows, intercept first.
    covariates : dict
        Raw covariate values by name.
    """

    subject_id: str
    horizon: float
    tracked: np.ndarray
    counts: np.ndarray
    x: np.ndarray = field(default_factory=lambda: np.ones(1))
    z: np.ndarray = field(default_factory=lambda: np.ones(1))
    covariates: dict = field(default_factory=dict)
    bin_width: float = BIN_WIDTH

    def __post_init__(self):
        self.subject_id = str(self.subject_id)
        self.horizon = float(self.horizon)
        self.tracked = np.asarray(self.tracked, dtype=bool)
        counts = np.asarray(self.counts)
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if not self.horizon > 0 or not math.isfinite(self.horizon):
            raise ValidationError(f"subject {self.subject_id}: horizon must be positive")
        n_bins = math.ceil(self.horizon / self.bin_width - 1e-12)
        if self.tracked.shape != (n_bins,) or counts.shape != (n_bins,):
            raise ValidationError(
                f"subject {self.subject_id}: expected {n_bins} bins, got "
                f"{self.tracked.shape[0]} flags and {counts.shape[0]} counts"
            )
        counts = np.where(self.tracked, counts, -1).astype(np.int64)
        if np.any(counts[self.tracked] < 0):
            raise ValidationError(f"subject {self.subject_id}: negative count")
        self.counts = counts

    @property
    def n_bins(self):
        return self.tracked.size

    def bin_bounds(self, k):
        """Interval ``(left, right]`` of 0-based bin ``k``."""
        return k * self.bin_width, min((k + 1) * self.bin_width, self.horizon)

    @property
    def bins(self):
        """``(index, tracked, count)`` triples with 1-based day index."""
        return [
            (k + 1, bool(f), int(c) if f else None)
            for k, (f, c) in enumerate(zip(self.tracked, self.counts))
        ]

    def missing_intervals(self):
        """Maximal runs of untracked bins as ``(left, right]`` pairs."""
        out = []
        flags = self.tracked
        k = 0
        while k < flags.size:
            if flags[k]:
                k += 1
                continue
            start = k
            while k < flags.size and not flags[k]:
                k += 1
            out.append((start * self.bin_width, min(k * self.bin_width, self.horizon)))
        return out

    @property
    def total_count(self):
        return int(self.counts[self.tracked].sum())

    def equals(self, other):
        return (
            self.subject_id == other.subject_id
            and self.horizon == other.horizon
            and np.array_equal(self.tracked, other.tracked)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
            and self.covariates == other.covariates
        )


@dataclass(frozen=True)
class ModelStructure:
    """Which random effects and covariates enter the model."""

    re_background: bool = True
    re_offspring: bool = True
    parameterization: Parameterization = Parameterization.NON_CENTERED
    background_covariates: tuple = ()
    offspring_covariates: tuple = ()
    covariate_kinds: Mapping[str, CovariateKind] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))
        object.__setattr__(self, "background_covariates", tuple(self.background_covariates))
        object.__setattr__(self, "offspring_covariates", tuple(self.offspring_covariates))
        kinds = {k: CovariateKind(v) for k, v in dict(self.covariate_kinds).items()}
        object.__setattr__(self, "covariate_kinds", kinds)
        for names in (self.background_covariates, self.offspring_covariates):
            if INTERCEPT in names or len(set(names)) != len(names):
                raise ConfigurationError(f"invalid covariate list {names}")

    @property
    def background_names(self):
        return (INTERCEPT,) + self.background_covariates

    @property
    def offspring_names(self):
        return (INTERCEPT,) + self.offspring_covariates

    def kind(self, name):
        if name == INTERCEPT:
            return CovariateKind.BINARY
        return self.covariate_kinds.get(name, CovariateKind.GENERAL)

    def centered(self, process):
        process = Process(process)
        if self.parameterization is not Parameterization.CENTERED:
            return False
        return self.re_background if process is Process.BACKGROUND else self.re_offspring

    def parameter_names(self):
        names = ["alpha", "delta"]
        names += [f"beta[{n}]" for n in self.background_names]
        names += [f"zeta[{n}]" for n in self.offspring_names]
        if self.re_background:
            names.append("phi")
        if self.re_offspring:
            names.append("xi")
        return names


@dataclass
class ModelParams:
    """Global parameters. ``beta`` and ``zeta`` include the intercept first."""

    alpha: float
    delta: float
    beta: np.ndarray
    zeta: np.ndarray
    phi: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float)).copy()
        for name in ("alpha", "delta", "phi", "xi"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive and finite, got {v}")
            setattr(self, name, v)
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.zeta))):
            raise NonFiniteParameterError("non-finite regression coefficient")

    def copy(self):
        return replace(self, beta=self.beta.copy(), zeta=self.zeta.copy())

    def check_structure(self, structure):
        if self.beta.size != len(structure.background_names):
            raise ConfigurationError("beta length does not match background covariates")
        if self.zeta.size != len(structure.offspring_names):
            raise ConfigurationError("zeta length does not match offspring covariates")

    def as_dict(self, structure):
        out = {"alpha": self.alpha, "delta": self.delta}
        for n, b in zip(structure.background_names, self.beta):
            out[f"beta[{n}]"] = float(b)
        for n, b in zip(structure.offspring_names, self.zeta):
            out[f"zeta[{n}]"] = float(b)
        if structure.re_background:
            out["phi"] = self.phi
        if structure.re_offspring:
            out["xi"] = self.xi
        return out


@dataclass(frozen=True)
class Priors:
    """Hyperparameters.

    Gamma pairs are (shape, rate). ``coef_*`` pairs parameterize the prior
    of an exponentiated binary coefficient: Gamma(shape, rate) under the
    non-centered parameterization and Inverse-Gamma(shape, scale) under
    the centered one.
    """

    alpha: tuple = (2.0, 1.0)
    delta: tuple = (2.0, 1.0)
    phi: tuple = (2.0, 0.1)
    xi: tuple = (2.0, 0.1)
    coef_background: tuple = (0.001, 0.001)
    coef_offspring: tuple = (0.001, 0.001)
    sd_background: float = 10.0
    sd_offspring: float = 10.0

    def __post_init__(self):
        for name in ("alpha", "delta", "phi", "xi", "coef_background", "coef_offspring"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or not all(v > 0 and math.isfinite(v) for v in pair):
                raise ConfigurationError(f"prior {name} must be two positive numbers")
            object.__setattr__(self, name, pair)
        for name in ("sd_background", "sd_offspring"):
            if not float(getattr(self, name)) > 0:
                raise ConfigurationError(f"prior {name} must be positive")
        if self.delta[0] <= 1.0:
            raise ConfigurationError(
                "delta prior shape must exceed 1 for a log-concave full conditional"
            )


class Dataset:
    """Ordered collection of subjects sharing a covariate schema."""

    def __init__(self, subjects: Sequence[SubjectData], covariate_names=()):
        self.subjects = list(subjects)
        if not self.subjects:
            raise ValidationError("dataset has no subjects")
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids")
        self.covariate_names = tuple(covariate_names)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    def covariate_column(self, name):
        return np.array([s.covariates[name] for s in self.subjects], dtype=float)

    def infer_kinds(self):
        kinds = {}
        for name in self.covariate_names:
            col = self.covariate_column(name)
            binary = np.all((col == 0) | (col == 1))
            kinds[name] = CovariateKind.BINARY if binary else CovariateKind.GENERAL
        return kinds

    def with_design(self, structure: ModelStructure):
        """Copy whose subjects carry design rows for ``structure``."""
        for name in structure.background_covariates + structure.offspring_covariates:
            if name not in self.covariate_names:
                raise ConfigurationError(f"unknown covariate {name!r}")
        subjects = []
        for s in self.subjects:
            x = [1.0] + [float(s.covariates[n]) for n in structure.background_covariates]
            z = [1.0] + [float(s.covariates[n]) for n in structure.offspring_covariates]
            subjects.append(replace(s, x=np.array(x), z=np.array(z)))
        return Dataset(subjects, self.covariate_names)

    def complete_structure(self, structure: ModelStructure):
        """Fill covariate kinds missing from ``structure`` by inspecting the data."""
        kinds = self.infer_kinds()
        kinds.update(structure.covariate_kinds)
        return replace(structure, covariate_kinds=kinds)

    def equals(self, other):
        return (
            self.covariate_names == other.covariate_names
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.subjects, other.subjects))
        )


@dataclass
class LatentState:
    """Imputed event times, branching structure and random effects.

    Event arrays are flat and partitioned by ``offsets``. ``nu`` and
    ``omega`` are always stored on the mean-one (non-centered) scale.
    """

    times: np.ndarray
    origin: np.ndarray
    parent: np.ndarray
    offsets: np.ndarray
    nu: np.ndarray
    omega: np.ndarray

    @property
    def n_subjects(self):
        return self.offsets.size - 1

    def subject_slice(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def subject_times(self, i):
        return self.times[self.subject_slice(i)]

    def branching_vector(self, i):
        """Branching vector of subject ``i`` in 1-based convention (0 = immigrant)."""
        return self.parent[self.subject_slice(i)] + 1

    def subject_index(self):
        return np.repeat(np.arange(self.n_subjects), np.diff(self.offsets))

    def n_missing_events(self):
        return np.bincount(self.subject_index()[self.origin < 0],
                           minlength=self.n_subjects)

    def copy(self):
        return LatentState(*(a.copy() for a in (
            self.times, self.origin, self.parent, self.offsets, self.nu, self.omega)))


def _safe_exp(v, what):
    with np.errstate(over="ignore"):
        out = np.exp(v)
    if not np.all(np.isfinite(out)):
        raise NonFiniteParameterError(f"{what} overflowed")
    return out


def linear_predictors(subject: SubjectData, params: ModelParams):
    """Return ``(eta, kappa)`` for one subject."""
    if subject.x.size != params.beta.size or subject.z.size != params.zeta.size:
        raise ConfigurationError("covariate length does not match coefficients")
    eta = float(_safe_exp(subject.x @ params.beta, "background predictor"))
    kappa = float(_safe_exp(subject.z @ params.zeta, "offspring predictor"))
    return eta, kappa


def design_predictors(x, z, params):
    """Vectorized ``(eta, kappa)`` for design matrices."""
    return (_safe_exp(x @ params.beta, "background predictor"),
            _safe_exp(z @ params.zeta, "offspring predictor"))


def _sorted_events(events):
    ev = np.asarray(events, dtype=float)
    if ev.size and (np.any(ev <= 0) or not np.all(np.isfinite(ev))):
        raise DomainError("event times must be positive and finite")
    if ev.size > 1 and np.any(np.diff(ev) <= 0):
        raise DomainError("event times must be strictly increasing")
    return ev


def excitation(events, t, delta, direct=False):
    """``sum_{t_j < t} exp(-delta (t - t_j))`` for scalar or array ``t``.

    ``direct=True`` uses the O(n m) double sum; otherwise a decayed
    accumulator is swept once over events and sorted evaluation points.
    """
    ev = np.asarray(events, dtype=float)
    pts = np.atleast_1d(np.asarray(t, dtype=float))
    if direct:
        diff = pts[:, None] - ev[None, :]
        with np.errstate(over="ignore", invalid="ignore"):
            terms = np.where(diff > 0, np.exp(-delta * np.where(diff > 0, diff, 0.0)), 0.0)
        out = terms.sum(axis=1)
    else:
        order = np.argsort(pts, kind="stable")
        out = np.empty_like(pts)
        out[order] = kern.excitation_at(ev, pts[order], float(delta))
    return out if np.ndim(t) else float(out[0])


def conditional_intensity(subject, params, events, t, nu=1.0, omega=1.0, direct=False):
    """Conditional intensity at ``t > 0`` given the subject's event history."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt <= 0):
        raise DomainError("intensity is only defined for t > 0")
    eta, kappa = linear_predictors(subject, params)
    ev = _sorted_events(events)
    base = nu * eta * params.alpha * tt ** (params.alpha - 1.0)
    return base + omega * kappa * excitation(ev, tt, params.delta, direct=direct)


def immigrant_compensator(alpha, nu_eta, t):
    """Integrated background intensity ``nu eta t**alpha`` on ``[0, t]``."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("compensator needs t >= 0")
    return nu_eta * np.asarray(t, dtype=float) ** alpha


def offspring_compensator(omega_kappa, delta, parent_time, t):
    """Integrated offspring intensity of one parent on ``[parent_time, t]``."""
    gap = np.asarray(t, dtype=float) - parent_time
    if np.any(gap < 0):
        raise DomainError("offspring compensator needs t >= parent_time")
    return omega_kappa / delta * -np.expm1(-delta * gap)


def total_compensator(subject, params, events, nu=1.0, omega=1.0, t=None):
    """Integrated conditional intensity on ``[0, t]`` (default ``T``)."""
    eta, kappa = linear_predictors(subject, params)
    ev = _sorted_events(events)
    t = subject.horizon if t is None else float(t)
    ev = ev[ev < t]
    return float(immigrant_compensator(params.alpha, nu * eta, t)
                 + offspring_compensator(omega * kappa, params.delta, ev, t).sum())


def branching_ratio(omega, kappa, delta):
    if not delta > 0:
        raise DomainError("delta must be positive")
    return omega * kappa / delta


def expected_cluster_size(r):
    r = np.asarray(r, dtype=float)
    if np.any(r >= 1):
        raise NonstationaryError("branching ratio must be below 1")
    if np.any(r < 0):
        raise DomainError("branching ratio must be nonnegative")
    out = 1.0 / (1.0 - r)
    return out if out.ndim else float(out)


def loglik_conditional(subject, params, events, nu=1.0, omega=1.0):
    """Log-likelihood of a complete event list in conditional-intensity form."""
    eta, kappa = linear_predictors(subject, params)
    ev = _sorted_events(events)
    if ev.size and ev[-1] > subject.horizon:
        raise DomainError("event after the horizon")
    return float(kern.subject_loglik(ev, subject.horizon, nu * eta, params.alpha,
                                     omega * kappa, params.delta))


def check_branching(y, n):
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise StructureError(f"branching vector must have length {n}")
    j = np.arange(n)
    if np.any(y < 0) or np.any(y > j):
        raise StructureError("branching entries must satisfy 0 <= Y_j <= j - 1")
    return y


def loglik_branching(subject, params, events, y, nu=1.0, omega=1.0):
    """Log density of events and branching vector ``y`` (0 = immigrant, 1-based parents)."""
    eta, kappa = linear_predictors(subject, params)
    ev = _sorted_events(events)
    y = check_branching(y, ev.size)
    alpha, delta = params.alpha, params.delta
    big_t = subject.horizon
    imm = y == 0
    ll = float(np.sum(np.log(nu * eta * alpha) + (alpha - 1.0) * np.log(ev[imm])))
    ll -= nu * eta * big_t**alpha
    kids = ~imm
    parents = ev[y[kids] - 1]
    ll += float(np.sum(np.log(omega * kappa) - delta * (ev[kids] - parents)))
    ll -= float(np.sum(offspring_compensator(omega * kappa, delta, ev, big_t)))
    return ll
