"""Convergence diagnostics, posterior summaries, predictive criteria and
posterior predictive replication."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import _kernels as kern
from .errors import InsufficientDrawsError
from .model import Dataset
from .rng import STREAM_PPC, stream

PARETO_K_THRESHOLD = 0.7
PPC_CAP = 0.99


class DegenerateDrawsWarning(UserWarning):
    """Draws carry no variation; the statistic falls back to a convention."""


# ---------------------------------------------------------------------------
# R-hat


def _z_scale(ary):
    ranks = stats.rankdata(ary, method="average").reshape(ary.shape)
    c = 3.0 / 8.0
    return stats.norm.ppf((ranks - c) / (ary.size - 2.0 * c + 1.0))


def _split(ary):
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def _basic_rhat(ary):
    n = ary.shape[1]
    between = n * np.var(ary.mean(axis=1), ddof=1)
    within = np.mean(np.var(ary, axis=1, ddof=1))
    return math.sqrt((between / within + n - 1.0) / n)


def rhat(draws, return_flag=False, method="rank"):
    """Split R-hat of a ``(chains, draws)`` array.

    Parameters
    ----------
    draws : array_like, shape (chains, draws)
    return_flag : bool
        Also return True when the draws are constant and the value is
        the conventional 1.
    method : {"rank", "classic"}
        ``"rank"`` (default) takes the larger of the rank-normalized bulk
        and folded-tail values; ``"classic"`` is the plain split statistic
        on the raw draws.
    """
    ary = np.asarray(draws, dtype=float)
    if ary.ndim != 2 or ary.shape[0] < 2 or ary.shape[1] < 4:
        raise InsufficientDrawsError("R-hat needs at least 2 chains with 4 draws each")
    if np.ptp(ary) == 0:
        warnings.warn("constant draws; R-hat set to 1", DegenerateDrawsWarning)
        return (1.0, True) if return_flag else 1.0
    split = _split(ary)
    if method == "classic":
        value = _basic_rhat(split)
        return (value, False) if return_flag else value
    if method != "rank":
        raise ValueError(f"unknown R-hat method {method!r}")
    bulk = _basic_rhat(_z_scale(split))
    tail = _basic_rhat(_z_scale(np.abs(split - np.median(split))))
    value = max(bulk, tail)
    return (value, False) if return_flag else value


# ---------------------------------------------------------------------------
# intervals and summaries


def hpd_interval(draws, prob=0.95):
    """Shortest interval holding ``ceil(prob * n)`` of the sorted draws."""
    x = np.sort(np.ravel(np.asarray(draws, dtype=float)))
    n = x.size
    if n < 100:
        raise InsufficientDrawsError(f"HPD interval needs at least 100 draws, got {n}")
    k = int(math.ceil(prob * n))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def equal_tailed_interval(draws, prob=0.95):
    lo, hi = np.quantile(np.ravel(draws), [(1 - prob) / 2, (1 + prob) / 2])
    return float(lo), float(hi)


@dataclass
class SummaryRow:
    name: str
    mean: float
    sd: float
    hpd_lower: float
    hpd_upper: float
    rhat: float
    degenerate: bool = False

    def as_dict(self):
        return dict(self.__dict__)


def summarize_draws(name, draws, prob=0.95):
    """One summary row for a ``(chains, draws)`` array."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    lo, hi = hpd_interval(draws, prob)
    if draws.shape[0] >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDrawsWarning)
            r, flag = rhat(draws, return_flag=True)
    else:
        r, flag = float("nan"), False
    flat = draws.ravel()
    return SummaryRow(name, float(flat.mean()), float(flat.std(ddof=1)), lo, hi, r, flag)


def summarize(posterior, prob=0.95, transformed=False):
    """Summary rows for every structural parameter.

    With ``transformed`` the rows describe exponentiated coefficients and
    random-effect variances ``1/phi`` and ``1/xi``, computed per draw.
    """
    rows = []
    for j, name in enumerate(posterior.param_names):
        d = posterior.params[:, :, j]
        label = name
        if transformed:
            if name.startswith(("beta[", "zeta[")):
                d, label = np.exp(d), f"exp({name})"
            elif name in ("phi", "xi"):
                d, label = 1.0 / d, f"1/{name}"
        rows.append(summarize_draws(label, d, prob))
    return rows


def global_branching_ratio(posterior, z=None):
    """Per-draw branching ratio ``exp(zeta @ z) / delta`` for a mean-one effect.

    ``z`` omits the intercept unless it has full length; default all zeros.
    """
    zeta = posterior.zeta()
    z = np.zeros(zeta.shape[-1] - 1) if z is None else np.asarray(z, float)
    if z.size == zeta.shape[-1] - 1:
        z = np.concatenate([[1.0], z])
    return np.exp(zeta @ z) / posterior.param("delta")


# ---------------------------------------------------------------------------
# predictive criteria


def _gpdfit(ary):
    """Empirical-Bayes fit of a generalized Pareto law to sorted exceedances.

    Returns ``(k, sigma)``; ``k`` is shrunk toward 0.5 by a weak prior.
    """
    prior_bs, prior_k = 3, 10
    n = ary.size
    m_est = 30 + int(n**0.5)
    b = 1 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    b /= prior_bs * ary[int(n / 4 + 0.5) - 1]
    b += 1 / ary[-1]
    k = np.log1p(-b[:, None] * ary).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1)
    weights = 1 / np.exp(len_scale - len_scale[:, None]).sum(axis=1)
    keep = weights >= 10 * np.finfo(float).eps
    weights, b = weights[keep], b[keep]
    weights /= weights.sum()
    b_post = np.sum(b * weights)
    k_post = np.log1p(-b_post * ary).mean()
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return float(k_post), float(sigma)


def _gpinv(probs, k, sigma):
    if not sigma > 0:
        return np.full_like(probs, np.nan)
    if k == 0:
        return -sigma * np.log1p(-probs)
    return sigma * np.expm1(-k * np.log1p(-probs)) / k


def psis_smooth(log_ratios):
    """Pareto-smoothed normalized log weights and the tail shape ``k``."""
    lw = np.asarray(log_ratios, dtype=float).copy()
    s = lw.size
    lw -= lw.max()
    n_tail = min(math.ceil(0.2 * s), math.ceil(3 * math.sqrt(s)), s - 1)
    k = np.inf
    if n_tail >= 5:
        order = np.argsort(lw, kind="stable")
        tail_idx = order[-n_tail:]
        cutoff = lw[order[-n_tail - 1]]
        tail = lw[tail_idx]
        if np.ptp(tail) > np.finfo(float).tiny:
            exp_cut = math.exp(cutoff)
            k, sigma = _gpdfit(np.exp(tail) - exp_cut)
            if np.isfinite(k):
                p = np.arange(0.5, n_tail) / n_tail
                smoothed = np.log(_gpinv(p, k, sigma) + exp_cut)
                # tail_idx is in increasing order of the raw weights
                lw[tail_idx] = np.minimum(smoothed, 0.0)
        else:
            k = 0.0
    lw -= logsumexp(lw)
    return lw, k


@dataclass
class FitMetrics:
    dic: float
    p_dic: float
    waic: float
    p_waic: float
    waic_se: float
    loo: float
    p_loo: float
    loo_se: float
    neg_lpml: float
    pointwise_p_waic: np.ndarray
    pointwise_p_loo: np.ndarray
    pareto_k: np.ndarray
    flagged: np.ndarray

    def table(self):
        return {"DIC": self.dic, "WAIC": self.waic, "LOO": self.loo, "-LPML": self.neg_lpml}


def fit_metrics(loglik):
    """Individual-level DIC, WAIC, PSIS-LOO and -LPML.

    Parameters
    ----------
    loglik : array_like, shape (draws, subjects) or (chains, draws, subjects)
        Pointwise log-likelihood per kept draw and subject.

    Notes
    -----
    The DIC plug-in deviance uses the draw-averaged likelihood of each
    subject, so ``p_dic = mean deviance + 2 * lppd``. All criteria are on
    the deviance scale except ``-LPML``.
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 3:
        ll = ll.reshape(-1, ll.shape[-1])
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise InsufficientDrawsError("fit metrics need at least two draws")
    if not np.all(np.isfinite(ll)):
        raise ValueError("pointwise log-likelihood contains non-finite values")
    s, m = ll.shape
    log_s = math.log(s)
    lppd_i = logsumexp(ll, axis=0) - log_s
    p_waic_i = np.var(ll, axis=0, ddof=1)
    waic_i = -2.0 * (lppd_i - p_waic_i)
    mean_dev = float(np.mean(-2.0 * ll.sum(axis=1)))
    dev_hat = float(-2.0 * lppd_i.sum())
    p_dic = mean_dev - dev_hat

    elpd_loo = np.empty(m)
    k_hat = np.empty(m)
    for i in range(m):
        lw, k_hat[i] = psis_smooth(-ll[:, i])
        elpd_loo[i] = logsumexp(lw + ll[:, i])
    loo_i = -2.0 * elpd_loo
    log_cpo = -(logsumexp(-ll, axis=0) - log_s)
    return FitMetrics(
        dic=mean_dev + p_dic,
        p_dic=p_dic,
        waic=float(waic_i.sum()),
        p_waic=float(p_waic_i.sum()),
        waic_se=float(math.sqrt(m * np.var(waic_i))),
        loo=float(loo_i.sum()),
        p_loo=float((lppd_i - elpd_loo).sum()),
        loo_se=float(math.sqrt(m * np.var(loo_i))),
        neg_lpml=float(-log_cpo.sum()),
        pointwise_p_waic=p_waic_i,
        pointwise_p_loo=lppd_i - elpd_loo,
        pareto_k=k_hat,
        flagged=k_hat > PARETO_K_THRESHOLD,
    )


# ---------------------------------------------------------------------------
# posterior predictive replication


@dataclass
class PredictiveReplicates:
    """Replicated reported totals per draw and subject.

    ``cumulative`` maps a subject index to an array ``(n_rep, n_days)``
    of cumulative reported counts when daily series were requested.
    """

    draw_index: np.ndarray  # (n_rep, 2): chain, draw
    totals: np.ndarray  # (n_rep, m)
    capped: np.ndarray  # (n_rep, m) bool
    observed: np.ndarray  # (m,)
    cumulative: dict


def posterior_predictive(posterior, dataset: Dataset, n_rep=200, seed=0, daily_subjects=()):
    """Re-simulate every subject under ``n_rep`` posterior draws.

    Random effects stay at their sampled values; simulated events on
    untracked days are discarded.
    """
    structure = posterior.structure
    ds = dataset.with_design(structure)
    rng = stream(seed, STREAM_PPC)
    c, s = posterior.n_chains, posterior.n_draws
    picks = rng.choice(c * s, size=n_rep, replace=c * s < n_rep)
    m = len(ds)
    x = np.vstack([subj.x for subj in ds])
    z = np.vstack([subj.z for subj in ds])
    beta, zeta = posterior.beta(), posterior.zeta()
    alpha, delta = posterior.param("alpha"), posterior.param("delta")
    totals = np.zeros((n_rep, m), dtype=np.int64)
    capped = np.zeros((n_rep, m), dtype=bool)
    daily = {i: np.zeros((n_rep, ds[i].n_bins), dtype=np.int64) for i in daily_subjects}
    for r, flat in enumerate(picks):
        ci, di = divmod(int(flat), s)
        eta = np.exp(x @ beta[ci, di])
        kappa = np.exp(z @ zeta[ci, di])
        a, d = alpha[ci, di], delta[ci, di]
        bg = posterior.nu[ci, di] * eta
        ks = posterior.omega[ci, di] * kappa
        limit = PPC_CAP * d
        capped[r] = ks >= d
        ks = np.where(capped[r], np.minimum(ks, limit), ks)
        for i, subj in enumerate(ds):
            times, _, _ = kern.forward_simulate(0.0, subj.horizon, bg[i], a, ks[i], d, 0.0, rng,
                                                np.iinfo(np.int64).max)
            idx = np.ceil(times / subj.bin_width).astype(np.int64) - 1
            counts = np.bincount(idx, minlength=subj.n_bins)[:subj.n_bins] * subj.tracked
            totals[r, i] = counts.sum()
            if i in daily:
                daily[i][r] = np.cumsum(counts)
    picks_cd = np.column_stack(np.divmod(picks, s))
    observed = np.array([subj.total_count for subj in ds])
    return PredictiveReplicates(picks_cd, totals, capped, observed, daily)
