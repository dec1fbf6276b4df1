"""Pure numpy implementations of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical output. Accumulations go through ``np.add.at``, which is
unbuffered and applies updates in index order, so per-cell summation order
matches the sequential compiled loops.
"""

import numpy as np


def voxel_accumulate(x, y, t, p, t0, dt, bins, height, width):
    out = np.zeros((bins, height, width), dtype=np.float64)
    n = len(t)
    if n == 0:
        return out
    tstar = (bins - 1) * (t - t0).astype(np.float64) / dt
    lower = np.floor(tstar).astype(np.int64)
    w_lo = 1.0 - (tstar - lower)
    w_hi = 1.0 - ((lower + 1) - tstar)
    pol = p.astype(np.float64)
    # interleave (lower, upper) per event so cell updates keep event order
    b = np.empty(2 * n, dtype=np.int64)
    w = np.empty(2 * n, dtype=np.float64)
    b[0::2] = lower
    b[1::2] = lower + 1
    w[0::2] = w_lo
    w[1::2] = w_hi
    keep = (w > 0.0) & (b >= 0) & (b < bins)
    yy = np.repeat(y.astype(np.int64), 2)
    xx = np.repeat(x.astype(np.int64), 2)
    vals = np.repeat(pol, 2) * w
    np.add.at(out, (b[keep], yy[keep], xx[keep]), vals[keep])
    return out


def cstr_accumulate(x, y, t, p, t0, dt, height, width):
    counts = np.zeros((2, height, width), dtype=np.int64)
    sums = np.zeros((2, height, width), dtype=np.float64)
    if len(t) == 0:
        return counts, sums
    ch = (p < 0).astype(np.int64)
    yy = y.astype(np.int64)
    xx = x.astype(np.int64)
    tn = (t - t0).astype(np.float64) / dt
    np.add.at(counts, (ch, yy, xx), 1)
    np.add.at(sums, (ch, yy, xx), tn)
    return counts, sums


def tore_ages(x, y, t, p, t_query, k, height, width):
    ages = np.full((2 * k, height, width), -1, dtype=np.int64)
    n = len(t)
    if n == 0:
        return ages
    rev = np.arange(n - 1, -1, -1)
    ch = (p[rev] < 0).astype(np.int64)
    pix = y[rev].astype(np.int64) * width + x[rev].astype(np.int64)
    key = ch * (height * width) + pix
    order = np.argsort(key, kind="stable")
    skey = key[order]
    starts = np.flatnonzero(np.r_[True, skey[1:] != skey[:-1]])
    group_len = np.diff(np.r_[starts, n])
    rank = np.arange(n) - np.repeat(starts, group_len)
    sel = rank < k
    src = rev[order[sel]]
    slot = ch[order[sel]] * k + rank[sel]
    ages[slot, y[src].astype(np.int64), x[src].astype(np.int64)] = t_query - t[src]
    return ages


def threshold_events(log_frames, times, threshold):
    n_frames, height, width = log_frames.shape
    ref = log_frames[0].ravel().copy()
    pix_all = np.arange(height * width, dtype=np.int64)
    out_t, out_pix, out_p, out_iv, out_j = [], [], [], [], []
    for k in range(n_frames - 1):
        l0 = log_frames[k].ravel()
        l1 = log_frames[k + 1].ravel()
        t_a = int(times[k])
        span = float(times[k + 1] - times[k])
        j = 0
        while True:
            diff = l1 - ref
            active = np.abs(diff) >= threshold
            if not active.any():
                break
            idx = pix_all[active]
            pol = np.where(diff[active] > 0, 1.0, -1.0)
            ref[active] = ref[active] + pol * threshold
            frac = (ref[active] - l0[idx]) / (l1[idx] - l0[idx])
            ts = t_a + np.floor(frac * span + 0.5).astype(np.int64)
            out_t.append(ts)
            out_pix.append(idx)
            out_p.append(pol.astype(np.int8))
            out_iv.append(np.full(idx.size, k, dtype=np.int64))
            out_j.append(np.full(idx.size, j, dtype=np.int64))
            j += 1
    if not out_t:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), np.zeros(0, dtype=np.int8), z.copy(), z.copy()
    return (np.concatenate(out_t), np.concatenate(out_pix),
            np.concatenate(out_p), np.concatenate(out_iv), np.concatenate(out_j))
