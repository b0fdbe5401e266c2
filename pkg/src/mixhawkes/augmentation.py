"""Latent event imputation: exact times inside tracked bins and whole
event sets inside untracked intervals, both by Metropolis-Hastings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .model import Dataset, LatentState

# branching-ratio cap applied to the missing-interval proposal only
IMPUTATION_CAP = 0.99
EVENT_CAP_FACTOR = 10.0
EVENT_CAP_OFFSET = 1000.0

COUNTER_NAMES = (
    "binned_proposed",
    "binned_accepted",
    "binned_degenerate",
    "missing_proposed",
    "missing_accepted",
    "missing_exploded",
    "missing_capped",
)


def new_counters():
    return np.zeros(kern.N_COUNTERS, dtype=np.int64)


def counters_dict(counters):
    return {k: int(v) for k, v in zip(COUNTER_NAMES, counters)}


@dataclass
class PanelArrays:
    """Flat numeric view of a dataset used by the compiled kernels."""

    horizon: np.ndarray
    x: np.ndarray
    z: np.ndarray
    iv_left: np.ndarray
    iv_right: np.ndarray
    iv_offsets: np.ndarray
    width: float

    @classmethod
    def from_dataset(cls, dataset: Dataset):
        left, right, offsets = [], [], [0]
        for s in dataset:
            iv = s.missing_intervals()
            left += [a for a, _ in iv]
            right += [b for _, b in iv]
            offsets.append(offsets[-1] + len(iv))
        widths = {s.bin_width for s in dataset}
        if len(widths) != 1:
            raise ValueError("all subjects must share one bin width")
        return cls(
            horizon=np.array([s.horizon for s in dataset]),
            x=np.vstack([s.x for s in dataset]),
            z=np.vstack([s.z for s in dataset]),
            iv_left=np.array(left, dtype=float),
            iv_right=np.array(right, dtype=float),
            iv_offsets=np.array(offsets, dtype=np.int64),
            width=float(widths.pop()),
        )


def _separate_ties(t):
    for j in range(1, t.size):
        if t[j] <= t[j - 1]:
            t[j] = np.nextafter(t[j - 1], np.inf)
    return t


def init_latent_events(dataset: Dataset, rng) -> LatentState:
    """Uniform times inside tracked bins, nothing in missing intervals."""
    times, origin, offsets = [], [], [0]
    for s in dataset:
        bins = np.nonzero(s.tracked & (s.counts > 0))[0]
        reps = s.counts[bins]
        b = np.repeat(bins, reps)
        lo = b * s.bin_width
        hi = np.minimum((b + 1) * s.bin_width, s.horizon)
        t = hi - rng.random(b.size) * (hi - lo)
        order = np.argsort(t, kind="stable")
        times.append(_separate_ties(t[order]))
        origin.append(b[order].astype(np.int64))
        offsets.append(offsets[-1] + b.size)
    times = np.concatenate(times) if times else np.empty(0)
    m = len(dataset)
    return LatentState(
        times=times.astype(float),
        origin=np.concatenate(origin).astype(np.int64),
        parent=np.full(times.size, -1, dtype=np.int64),
        offsets=np.array(offsets, dtype=np.int64),
        nu=np.ones(m),
        omega=np.ones(m),
    )


def binned_acceptance_ratio(t, t_new, is_immigrant, n_children, horizon, alpha,
                            omega_kappa, delta):
    """Acceptance probability for moving one binned event from ``t`` to ``t_new``."""
    lr = kern.binned_log_ratio(float(t), float(t_new), bool(is_immigrant), int(n_children),
                               float(horizon), float(alpha), float(omega_kappa), float(delta))
    return float(min(1.0, np.exp(lr)))


def impute_binned_events(latent: LatentState, panel: PanelArrays, alpha, ks, delta, rng,
                         counters=None):
    """One Metropolis pass over all binned events, in place; re-sorts subjects."""
    counters = new_counters() if counters is None else counters
    kern.impute_binned(latent.times, latent.origin, latent.parent, latent.offsets,
                       panel.horizon, panel.width, float(alpha), np.asarray(ks, float),
                       float(delta), rng, counters)
    kern.sort_segments(latent.times, latent.origin, latent.parent, latent.offsets)
    return counters


def missing_acceptance_ratio(history, current, proposal, after, left, right, horizon,
                             bg, alpha, omega_kappa, delta, cap=IMPUTATION_CAP):
    """Acceptance probability for swapping ``current`` by ``proposal`` in ``(left, right]``.

    ``history`` holds events up to ``left`` and ``after`` those beyond
    ``right``.
    """
    history = np.asarray(history, float)
    current = np.asarray(current, float)
    after = np.asarray(after, float)
    wt = np.concatenate([history, current, after])
    s_idx, e_idx = history.size, history.size + current.size
    a_left = kern._excitation_before(wt, s_idx, float(left), float(delta))
    kq = min(float(omega_kappa), cap * delta)
    lr = kern.missing_log_ratio(wt, wt.size, s_idx, e_idx, np.asarray(proposal, float), a_left,
                                float(left), float(right), float(horizon), float(bg),
                                float(alpha), float(omega_kappa), kq, float(delta))
    return float(min(1.0, np.exp(lr)))


def impute_missing_intervals(latent: LatentState, panel: PanelArrays, alpha, bg, ks, delta,
                             rng, counters=None, cap=IMPUTATION_CAP,
                             cap_factor=EVENT_CAP_FACTOR, cap_offset=EVENT_CAP_OFFSET):
    """Block replacement of every missing interval; returns the new latent state.

    The branching structure is not resampled here; entries pointing into
    a replaced block become immigrants until the next sweep redraws them.
    """
    counters = new_counters() if counters is None else counters
    if panel.iv_left.size == 0:
        return latent, counters
    t, o, p, off = kern.impute_missing(
        latent.times, latent.origin, latent.parent, latent.offsets, panel.horizon,
        panel.iv_left, panel.iv_right, panel.iv_offsets, np.asarray(bg, float), float(alpha),
        np.asarray(ks, float), float(delta), float(cap), float(cap_factor), float(cap_offset),
        rng, counters)
    return LatentState(t, o, p, off, latent.nu, latent.omega), counters
