"""Compiled inner loops over event arrays.

Events of all subjects live in flat arrays partitioned by ``offsets``
(subject ``i`` owns ``offsets[i]:offsets[i + 1]``). ``parent`` holds the
branching structure with ``-1`` for immigrants and otherwise the local
(within-subject) index of the parent event. ``origin`` is the bin index
(0-based) for binned events and ``-(k + 1)`` for events imputed in the
subject's ``k``-th missing interval.

Per subject the background scale ``bg`` is the product of the random
effect and the exponentiated background predictor, and ``ks`` the
product of the offspring random effect and its exponentiated predictor.
"""
import numpy as np
from numba import njit

# counter slots shared with the augmentation module
BINNED_PROPOSED = 0
BINNED_ACCEPTED = 1
BINNED_DEGENERATE = 2
MISSING_PROPOSED = 3
MISSING_ACCEPTED = 4
MISSING_EXPLODED = 5
MISSING_CAPPED = 6
N_COUNTERS = 7


@njit(cache=True, nogil=True)
def excitation_at(times, points, delta):
    """Sum of ``exp(-delta (p - t))`` over events ``t < p`` for sorted ``points``."""
    out = np.empty(points.size)
    a = 0.0
    prev = 0.0
    j = 0
    n = times.size
    for k in range(points.size):
        p = points[k]
        while j < n and times[j] < p:
            a = a * np.exp(-delta * (times[j] - prev)) + 1.0
            prev = times[j]
            j += 1
        out[k] = a * np.exp(-delta * (p - prev)) if j > 0 else 0.0
    return out


@njit(cache=True, nogil=True)
def subject_loglik(times, horizon, bg, alpha, ks, delta):
    ll = 0.0
    a = 0.0
    comp = 0.0
    for j in range(times.size):
        t = times[j]
        if j > 0:
            a = (a + 1.0) * np.exp(-delta * (t - times[j - 1]))
        ll += np.log(bg * alpha * t ** (alpha - 1.0) + ks * a)
        comp += -np.expm1(-delta * (horizon - t))
    return ll - bg * horizon**alpha - ks / delta * comp


@njit(cache=True, nogil=True)
def pointwise_loglik(times, offsets, horizon, bg, alpha, ks, delta):
    m = offsets.size - 1
    out = np.empty(m)
    for i in range(m):
        seg = times[offsets[i]:offsets[i + 1]]
        out[i] = subject_loglik(seg, horizon[i], bg[i], alpha, ks[i], delta)
    return out


@njit(cache=True, nogil=True)
def sample_parents(times, offsets, bg, alpha, ks, delta, rng):
    n = times.size
    parent = np.empty(n, dtype=np.int64)
    for i in range(offsets.size - 1):
        s = offsets[i]
        a = 0.0
        for j in range(s, offsets[i + 1]):
            t = times[j]
            if j > s:
                a = (a + 1.0) * np.exp(-delta * (t - times[j - 1]))
            imm = bg[i] * alpha * t ** (alpha - 1.0)
            exc = ks[i] * a
            u = rng.random() * (imm + exc)
            if j == s or u < imm or exc <= 0.0:
                parent[j] = -1
                continue
            target = (u - imm) / ks[i]
            acc = 0.0
            k = j - 1
            while True:
                acc += np.exp(-delta * (t - times[k]))
                if acc > target or k == s:
                    break
                k -= 1
            parent[j] = k - s
    return parent


@njit(cache=True, nogil=True)
def branching_stats(times, parent, offsets, horizon):
    """Immigrant counts, immigrant log-time sums, offspring counts and gap sums."""
    m = offsets.size - 1
    n_imm = np.zeros(m, dtype=np.int64)
    log_imm = np.zeros(m)
    n_off = np.zeros(m, dtype=np.int64)
    gap = np.zeros(m)
    for i in range(m):
        s = offsets[i]
        for j in range(s, offsets[i + 1]):
            p = parent[j]
            if p < 0:
                n_imm[i] += 1
                log_imm[i] += np.log(times[j])
            else:
                n_off[i] += 1
                gap[i] += times[j] - times[s + p]
    return n_imm, log_imm, n_off, gap


@njit(cache=True, nogil=True)
def binned_log_ratio(t, t_new, is_immigrant, n_children, horizon, alpha, ks,
                     delta):
    """Log acceptance ratio for moving one binned event from ``t`` to ``t_new``."""
    lr = 0.0
    if is_immigrant:
        lr += (alpha - 1.0) * np.log(t_new / t)
        n_eff = n_children
    else:
        n_eff = n_children - 1
    lr -= delta * (t - t_new) * n_eff
    lr += ks / delta * (np.exp(-delta * (horizon - t_new))
                        - np.exp(-delta * (horizon - t)))
    return lr


@njit(cache=True, nogil=True)
def impute_binned(times, origin, parent, offsets, horizon, width, alpha, ks,
                  delta, rng, counters):
    """One Metropolis pass over every binned event, in place."""
    n = times.size
    n_children = np.zeros(n, dtype=np.int64)
    min_child = np.full(n, np.inf)
    for i in range(offsets.size - 1):
        s = offsets[i]
        for j in range(s, offsets[i + 1]):
            p = parent[j]
            if p >= 0:
                n_children[s + p] += 1
                if times[j] < min_child[s + p]:
                    min_child[s + p] = times[j]
    for i in range(offsets.size - 1):
        s = offsets[i]
        big_t = horizon[i]
        for j in range(s, offsets[i + 1]):
            b = origin[j]
            if b < 0:
                continue
            lo = b * width
            hi = min((b + 1) * width, big_t)
            p = parent[j]
            if p >= 0 and times[s + p] > lo:
                lo = times[s + p]
            if min_child[j] < hi:
                hi = min_child[j]
            if not hi > lo:
                counters[BINNED_DEGENERATE] += 1
                continue
            counters[BINNED_PROPOSED] += 1
            t_new = lo + (hi - lo) * rng.random()
            if not t_new > lo:
                continue
            lr = binned_log_ratio(times[j], t_new, p < 0, n_children[j], big_t,
                                  alpha, ks[i], delta)
            if np.log(rng.random()) < lr:
                times[j] = t_new
                counters[BINNED_ACCEPTED] += 1


@njit(cache=True, nogil=True)
def sort_segments(times, origin, parent, offsets):
    """Restore time order within each subject, remapping parent indices."""
    for i in range(offsets.size - 1):
        s = offsets[i]
        e = offsets[i + 1]
        ordered = True
        for j in range(s + 1, e):
            if times[j] < times[j - 1]:
                ordered = False
                break
        if ordered:
            continue
        perm = np.argsort(times[s:e], kind="mergesort")
        inv = np.empty(perm.size, dtype=np.int64)
        for k in range(perm.size):
            inv[perm[k]] = k
        t = times[s:e].copy()
        o = origin[s:e].copy()
        p = parent[s:e].copy()
        for k in range(perm.size):
            times[s + k] = t[perm[k]]
            origin[s + k] = o[perm[k]]
            q = p[perm[k]]
            parent[s + k] = inv[q] if q >= 0 else -1


@njit(cache=True, nogil=True)
def _grow(arr, size):
    out = np.empty(max(2 * arr.size, size, 16), dtype=arr.dtype)
    out[:arr.size] = arr
    return out


@njit(cache=True, nogil=True)
def forward_simulate(t0, t_end, bg, alpha, ks, delta, lam1, rng, max_events):
    """Exact simulation on ``(t0, t_end]`` by competing clocks.

    ``lam1`` is the offspring intensity just after ``t0`` inherited from
    earlier history. Returns times, labels (0 immigrant, 1 offspring) and
    a flag that is False when ``max_events`` was exceeded.
    """
    times = np.empty(16)
    labels = np.empty(16, dtype=np.int8)
    n = 0
    t = t0
    inv_alpha = 1.0 / alpha
    while True:
        if bg > 0.0:
            s0 = (rng.exponential() / bg + t**alpha) ** inv_alpha - t
        else:
            s0 = np.inf
        s1 = np.inf
        if lam1 > 0.0:
            d1 = 1.0 - delta * rng.exponential() / lam1
            if d1 > 0.0:
                s1 = -np.log(d1) / delta
        s = min(s0, s1)
        if not t + s <= t_end:
            break
        lam1 = lam1 * np.exp(-delta * s) + ks
        t += s
        if n == times.size:
            times = _grow(times, n + 1)
            labels = _grow(labels, n + 1)
        times[n] = t
        labels[n] = 0 if s0 <= s1 else 1
        n += 1
        if n > max_events:
            return times[:n], labels[:n], False
    return times[:n], labels[:n], True


@njit(cache=True, nogil=True)
def _decay_sum(times, start, stop, at, delta):
    acc = 0.0
    for j in range(start, stop):
        acc += np.exp(-delta * (at - times[j]))
    return acc


@njit(cache=True, nogil=True)
def _log_intensity_sum(points, carry, t_from, bg, alpha, scale, delta):
    """Sum of log intensities at ``points`` given excitation ``carry`` at ``t_from``."""
    total = 0.0
    a = carry
    prev = t_from
    for u in points:
        a *= np.exp(-delta * (u - prev))
        total += np.log(bg * alpha * u ** (alpha - 1.0) + scale * a)
        a += 1.0
        prev = u
    return total


@njit(cache=True, nogil=True)
def _survival_sum(points, horizon, delta):
    acc = 0.0
    for u in points:
        acc += -np.expm1(-delta * (horizon - u))
    return acc


@njit(cache=True, nogil=True)
def missing_log_ratio(wt, n, s_idx, e_idx, proposal, a_left, left, right,
                      horizon, bg, alpha, ks, kq, delta):
    """Log acceptance for replacing events ``wt[s_idx:e_idx]`` by ``proposal``.

    ``kq`` is the (possibly capped) offspring scale used by the proposal;
    when it equals ``ks`` the proposal terms cancel exactly.
    """
    current = wt[s_idx:e_idx]
    s_cur = _decay_sum(wt, s_idx, e_idx, right, delta)
    s_new = _decay_sum(proposal, 0, proposal.size, right, delta)
    lr = 0.0
    if ks > 0.0 and e_idx < n and s_new != s_cur:
        exc = a_left * np.exp(-delta * (right - left)) + s_cur
        diff = s_new - s_cur
        prev = right
        for j in range(e_idx, n):
            u = wt[j]
            exc *= np.exp(-delta * (u - prev))
            base = bg * alpha * u ** (alpha - 1.0)
            shifted = exc + diff * np.exp(-delta * (u - right))
            if shifted < 0.0:
                shifted = 0.0
            lr += np.log(base + ks * shifted) - np.log(base + ks * exc)
            exc += 1.0
            prev = u
    d_ct = _survival_sum(proposal, horizon, delta) - _survival_sum(current, horizon, delta)
    d_cr = _survival_sum(proposal, right, delta) - _survival_sum(current, right, delta)
    if kq == ks:
        lr -= ks / delta * (d_ct - d_cr)
    else:
        lr += (_log_intensity_sum(proposal, a_left, left, bg, alpha, ks, delta)
               - _log_intensity_sum(current, a_left, left, bg, alpha, ks, delta))
        lr -= (_log_intensity_sum(proposal, a_left, left, bg, alpha, kq, delta)
               - _log_intensity_sum(current, a_left, left, bg, alpha, kq, delta))
        lr += -ks / delta * d_ct + kq / delta * d_cr
    return lr


@njit(cache=True, nogil=True)
def _excitation_before(wt, stop, at, delta):
    a = 0.0
    prev = 0.0
    for j in range(stop):
        a = a * np.exp(-delta * (wt[j] - prev)) + 1.0
        prev = wt[j]
    if stop == 0:
        return 0.0
    return a * np.exp(-delta * (at - prev))


@njit(cache=True, nogil=True)
def impute_missing(times, origin, parent, offsets, horizon, iv_left, iv_right,
                   iv_offsets, bg, alpha, ks, delta, cap, cap_factor,
                   cap_offset, rng, counters):
    """Block Metropolis-Hastings replacement of every missing interval.

    Returns new ``times, origin, parent, offsets`` arrays.
    """
    m = offsets.size - 1
    out_t = np.empty(times.size + 16)
    out_o = np.empty(times.size + 16, dtype=np.int64)
    out_p = np.empty(times.size + 16, dtype=np.int64)
    new_offsets = np.zeros(m + 1, dtype=np.int64)
    pos = 0
    for i in range(m):
        s = offsets[i]
        n = offsets[i + 1] - s
        wt = np.empty(max(n, 16))
        wo = np.empty(wt.size, dtype=np.int64)
        wp = np.empty(wt.size, dtype=np.int64)
        wt[:n] = times[s:s + n]
        wo[:n] = origin[s:s + n]
        wp[:n] = parent[s:s + n]
        kq = min(ks[i], cap * delta)
        big_t = horizon[i]
        for k in range(iv_offsets[i], iv_offsets[i + 1]):
            left = iv_left[k]
            right = iv_right[k]
            code = -(k - iv_offsets[i] + 1)
            s_idx = np.searchsorted(wt[:n], left, side="right")
            e_idx = np.searchsorted(wt[:n], right, side="right")
            a_left = _excitation_before(wt, s_idx, left, delta)
            lam1 = kq * a_left
            expected = (bg[i] * (right**alpha - left**alpha)
                        + lam1 / delta * -np.expm1(-delta * (right - left)))
            expected /= 1.0 - kq / delta
            max_events = int(cap_factor * expected + cap_offset)
            counters[MISSING_PROPOSED] += 1
            if kq < ks[i]:
                counters[MISSING_CAPPED] += 1
            prop, _, ok = forward_simulate(left, right, bg[i], alpha, kq,
                                           delta, lam1, rng, max_events)
            if not ok:
                counters[MISSING_EXPLODED] += 1
                continue
            lr = missing_log_ratio(wt, n, s_idx, e_idx, prop, a_left, left,
                                   right, big_t, bg[i], alpha, ks[i], kq, delta)
            if not np.log(rng.random()) < lr:
                continue
            counters[MISSING_ACCEPTED] += 1
            n_old = e_idx - s_idx
            shift = prop.size - n_old
            n_new = n + shift
            if n_new > wt.size:
                wt = _grow(wt, n_new)
                wo = _grow(wo, n_new)
                wp = _grow(wp, n_new)
            # move the tail, then write the proposal into the gap
            if shift != 0:
                wt[e_idx + shift:n_new] = wt[e_idx:n].copy()
                wo[e_idx + shift:n_new] = wo[e_idx:n].copy()
                wp[e_idx + shift:n_new] = wp[e_idx:n].copy()
            for q in range(prop.size):
                wt[s_idx + q] = prop[q]
                wo[s_idx + q] = code
                wp[s_idx + q] = -1
            for q in range(s_idx + prop.size, n_new):
                p = wp[q]
                if p >= e_idx:
                    wp[q] = p + shift
                elif p >= s_idx:
                    wp[q] = -1
            n = n_new
        if pos + n > out_t.size:
            out_t = _grow(out_t, pos + n)
            out_o = _grow(out_o, pos + n)
            out_p = _grow(out_p, pos + n)
        out_t[pos:pos + n] = wt[:n]
        out_o[pos:pos + n] = wo[:n]
        out_p[pos:pos + n] = wp[:n]
        pos += n
        new_offsets[i + 1] = pos
    return out_t[:pos].copy(), out_o[:pos].copy(), out_p[:pos].copy(), new_offsets
