"""Full-conditional samplers for the Gibbs sweep.

Conjugate blocks (random effects and exponentiated binary coefficients)
are drawn directly; the remaining global parameters are drawn by
adaptive rejection sampling from their log-concave full conditionals.

All functions read a :class:`ConditionalState`, which bundles the current
parameters with the sufficient statistics of the branching structure.
Random effects in the state are on the mean-one scale; the centered
variants multiply them by the matching linear predictor when needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .ars import AdaptiveRejectionSampler, ArsTarget
from .errors import ConcavityError, ConfigurationError, MisuseError
from .model import CovariateKind, ModelParams, ModelStructure, Priors, Process


@dataclass
class ConditionalState:
    """Parameters plus branching statistics, one entry per subject.

    ``remaining`` and ``event_subject`` run over every event of every
    subject: the time left to the horizon and the owning subject.
    """

    params: ModelParams
    structure: ModelStructure
    horizon: np.ndarray
    x: np.ndarray
    z: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    n_immigrants: np.ndarray
    log_immigrant_times: np.ndarray
    n_offspring: np.ndarray
    offspring_gaps: np.ndarray
    remaining: np.ndarray
    event_subject: np.ndarray

    @property
    def m(self):
        return self.horizon.size

    def eta(self, beta=None):
        beta = self.params.beta if beta is None else beta
        return np.exp(self.x @ beta)

    def kappa(self, zeta=None):
        zeta = self.params.zeta if zeta is None else zeta
        return np.exp(self.z @ zeta)

    def decay_terms(self, delta=None):
        """Per subject ``sum_y (1 - exp(-delta (T - t_y)))``."""
        delta = self.params.delta if delta is None else delta
        return np.bincount(self.event_subject, weights=-np.expm1(-delta * self.remaining),
                           minlength=self.m)

    def horizon_pow(self, alpha=None):
        alpha = self.params.alpha if alpha is None else alpha
        return self.horizon**alpha


def _gamma(rng, shape, rate, size=None):
    return rng.gamma(shape, 1.0 / np.asarray(rate), size=size)


def _log_gamma(rng, shape, rate, size=None):
    """Log of a Gamma(shape, rate) draw without underflow for small shapes.

    For ``shape < 1`` a draw underflows to zero with non-negligible
    probability, so use ``G(a) = G(a + 1) * U**(1/a)`` on the log scale.
    """
    if shape >= 1.0:
        return np.log(rng.gamma(shape, 1.0 / rate, size=size))
    g = rng.gamma(shape + 1.0, 1.0 / rate, size=size)
    return np.log(g) + np.log(rng.random(size=size)) / shape


# ---------------------------------------------------------------------------
# random effects


def nu_conditional(phi, n_immigrants, eta, horizon_pow, centered=False):
    """Shape and rate of the Gamma full conditional of the background effect.

    Non-centered draws the mean-one ``nu``; centered draws ``nu * eta``.
    """
    shape = phi + np.asarray(n_immigrants, dtype=float)
    if centered:
        rate = phi / np.asarray(eta) + horizon_pow
    else:
        rate = phi + np.asarray(eta) * horizon_pow
    return shape, rate


def omega_conditional(xi, n_offspring, kappa, decay_terms, delta, centered=False):
    """Shape and rate of the Gamma full conditional of the offspring effect."""
    shape = xi + np.asarray(n_offspring, dtype=float)
    if centered:
        rate = xi / np.asarray(kappa) + np.asarray(decay_terms) / delta
    else:
        rate = xi + np.asarray(kappa) / delta * decay_terms
    return shape, rate


def sample_nu(state: ConditionalState, rng, size=None):
    """Draw every subject's background effect, returned on the mean-one scale."""
    centered = state.structure.centered(Process.BACKGROUND)
    eta = state.eta()
    shape, rate = nu_conditional(state.params.phi, state.n_immigrants, eta,
                                 state.horizon_pow(), centered)
    out = _gamma(rng, shape, rate, size=None if size is None else (size, state.m))
    return out / eta if centered else out


def sample_omega(state: ConditionalState, rng, size=None):
    """Draw every subject's offspring effect, returned on the mean-one scale."""
    centered = state.structure.centered(Process.OFFSPRING)
    kappa = state.kappa()
    shape, rate = omega_conditional(state.params.xi, state.n_offspring, kappa,
                                    state.decay_terms(), state.params.delta, centered)
    out = _gamma(rng, shape, rate, size=None if size is None else (size, state.m))
    return out / kappa if centered else out


# ---------------------------------------------------------------------------
# ARS targets for the global parameters


def alpha_target(n_immigrants, sum_log_times, bg_scale, horizon, prior, start=None):
    """Log full conditional of the Weibull shape.

    ``bg_scale`` is the per-subject product of the background effect and
    ``eta``; ``sum_log_times`` sums log immigrant times over all subjects.
    """
    a, b = prior
    c = a + n_immigrants - 1.0
    if n_immigrants == 0 and a <= 1.0:
        raise ConcavityError("alpha prior shape must exceed 1 when no immigrants exist",
                             abscissa=None)
    if c < 0:
        raise ConcavityError("alpha full conditional is not log-concave", abscissa=None)
    bg_scale = np.asarray(bg_scale, dtype=float)
    horizon = np.asarray(horizon, dtype=float)
    log_t = np.log(horizon)

    def h(al):
        return c * math.log(al) - b * al - float(bg_scale @ horizon**al) + al * sum_log_times

    def dh(al):
        return c / al - b - float(bg_scale @ (horizon**al * log_t)) + sum_log_times

    def d2h(al):
        return -c / al**2 - float(bg_scale @ (horizon**al * log_t**2))

    return ArsTarget(h, dh, 0.0, math.inf, log_density_deriv2=d2h, start=start)


def delta_target(offspring_gap_sum, ks_events, remaining, prior, start=None):
    """Log full conditional of the decay rate.

    ``ks_events`` is, for every event, the offspring scale
    ``omega * kappa`` of its subject; ``remaining`` is ``T - t``.
    """
    a, b = prior
    if a <= 1.0:
        raise ConfigurationError("delta prior shape must exceed 1")
    ks = np.asarray(ks_events, dtype=float)
    rem = np.asarray(remaining, dtype=float)

    def h(d):
        surv = -np.expm1(-d * rem)
        return (a - 1.0) * math.log(d) - b * d - d * offspring_gap_sum - float(ks @ surv) / d

    def dh(d):
        e = np.exp(-d * rem)
        surv = -np.expm1(-d * rem)
        return ((a - 1.0) / d - b - offspring_gap_sum
                + float(ks @ (surv / d**2 - rem * e / d)))

    def d2h(d):
        e = np.exp(-d * rem)
        surv = -np.expm1(-d * rem)
        return (-(a - 1.0) / d**2
                + float(ks @ (rem**2 * e / d + 2.0 * rem * e / d**2 - 2.0 * surv / d**3)))

    return ArsTarget(h, dh, 0.0, math.inf, log_density_deriv2=d2h, start=start)


def precision_target(sum_log_effects, sum_effects, m, prior, start=None):
    """Log full conditional of a random-effect precision (``phi`` or ``xi``)."""
    a, b = prior
    s = sum_log_effects - sum_effects

    def h(p):
        return (a - 1.0) * math.log(p) - b * p + m * p * math.log(p) - m * gammaln(p) + p * s

    def dh(p):
        return (a - 1.0) / p - b + m * math.log(p) + m - m * digamma(p) + s

    def d2h(p):
        return -(a - 1.0) / p**2 + m / p - m * polygamma(1, p)

    return ArsTarget(h, dh, 0.0, math.inf, log_density_deriv2=d2h, start=start)


def _draw(target, rng, size):
    return AdaptiveRejectionSampler(target).draw(rng, size)


def sample_alpha(state: ConditionalState, priors: Priors, rng, size=None):
    bg = state.nu * state.eta()
    target = alpha_target(float(state.n_immigrants.sum()), float(state.log_immigrant_times.sum()),
                          bg, state.horizon, priors.alpha, start=state.params.alpha)
    return _draw(target, rng, size)


def sample_delta(state: ConditionalState, priors: Priors, rng, size=None):
    ks = (state.omega * state.kappa())[state.event_subject]
    target = delta_target(float(state.offspring_gaps.sum()), ks, state.remaining,
                          priors.delta, start=state.params.delta)
    return _draw(target, rng, size)


def _precision_draw(effects, prior, start, rng, size):
    m = effects.size
    if m < 2:
        raise ConfigurationError("random-effect precision needs at least two subjects")
    target = precision_target(float(np.log(effects).sum()), float(effects.sum()), m, prior,
                              start=start)
    return _draw(target, rng, size)


def sample_phi(state: ConditionalState, priors: Priors, rng, size=None):
    return _precision_draw(state.nu, priors.phi, state.params.phi, rng, size)


def sample_xi(state: ConditionalState, priors: Priors, rng, size=None):
    return _precision_draw(state.omega, priors.xi, state.params.xi, rng, size)


# ---------------------------------------------------------------------------
# regression coefficients


@dataclass
class CoefficientTerms:
    """Data terms entering a coefficient's full conditional.

    Non-centered: ``h(b) = b * sum(counts * col) - sum(weights * exp(b * col))``.
    Centered: ``h(b) = -b * precision * sum(col) - sum(weights * exp(-b * col))``
    where ``weights`` already include the precision.
    """

    column: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    centered: bool
    precision: float


def coefficient_terms(process, index, state: ConditionalState):
    process = Process(process)
    p = state.params
    if process is Process.BACKGROUND:
        design, coef = state.x, p.beta
        counts = state.n_immigrants.astype(float)
        base = state.nu * state.horizon_pow()
        effect_c = state.nu * state.eta()
        precision = p.phi
    else:
        design, coef = state.z, p.zeta
        counts = state.n_offspring.astype(float)
        base = state.omega * state.decay_terms() / p.delta
        effect_c = state.omega * state.kappa()
        precision = p.xi
    col = design[:, index]
    rest = design @ coef - coef[index] * col
    centered = state.structure.centered(process)
    if centered:
        weights = precision * effect_c * np.exp(-rest)
    else:
        weights = base * np.exp(rest)
    return CoefficientTerms(col, counts, weights, centered, precision)


def _covariate_name(process, index, structure):
    names = (structure.background_names if Process(process) is Process.BACKGROUND
             else structure.offspring_names)
    return names[index]


def coeff_binary_conditional(process, index, state: ConditionalState, priors: Priors):
    """``(family, shape, rate_or_scale)`` for an exponentiated binary coefficient.

    ``family`` is ``"gamma"`` (shape, rate) or ``"invgamma"`` (shape, scale).
    """
    terms = coefficient_terms(process, index, state)
    col = terms.column
    if not np.all((col == 0) | (col == 1)):
        name = _covariate_name(process, index, state.structure)
        raise MisuseError(f"covariate {name!r} is not binary")
    a, b = priors.coef_background if Process(process) is Process.BACKGROUND else priors.coef_offspring
    if terms.centered:
        return "invgamma", a + terms.precision * col.sum(), b + float(col @ terms.weights)
    return "gamma", a + float(col @ terms.counts), b + float(col @ terms.weights)


def sample_coeff_binary(process, index, state: ConditionalState, priors: Priors, rng,
                        size=None):
    """Log of a conjugate draw of the exponentiated coefficient."""
    family, shape, rate = coeff_binary_conditional(process, index, state, priors)
    log_g = _log_gamma(rng, shape, rate, size)
    return log_g if family == "gamma" else -log_g


def coeff_general_target(process, index, state: ConditionalState, priors: Priors, start=None):
    terms = coefficient_terms(process, index, state)
    sd = priors.sd_background if Process(process) is Process.BACKGROUND else priors.sd_offspring
    prec = 1.0 / sd**2
    col, w = terms.column, terms.weights
    if terms.centered:
        lin = -terms.precision * col.sum()
        sign = -1.0
    else:
        lin = float(col @ terms.counts)
        sign = 1.0
    col2 = col * col

    def h(b):
        return -0.5 * prec * b * b + b * lin - float(w @ np.exp(sign * b * col))

    def dh(b):
        return -prec * b + lin - sign * float((w * col) @ np.exp(sign * b * col))

    def d2h(b):
        return -prec - float((w * col2) @ np.exp(sign * b * col))

    return ArsTarget(h, dh, -math.inf, math.inf, log_density_deriv2=d2h, start=start)


def sample_coeff_general(process, index, state: ConditionalState, priors: Priors, rng,
                         size=None):
    coef = state.params.beta if Process(process) is Process.BACKGROUND else state.params.zeta
    target = coeff_general_target(process, index, state, priors, start=float(coef[index]))
    return _draw(target, rng, size)


def sample_coefficient(process, index, state: ConditionalState, priors: Priors, rng):
    """Dispatch on the covariate kind declared in the model structure."""
    name = _covariate_name(process, index, state.structure)
    if state.structure.kind(name) is CovariateKind.BINARY:
        return float(sample_coeff_binary(process, index, state, priors, rng))
    return float(sample_coeff_general(process, index, state, priors, rng))
