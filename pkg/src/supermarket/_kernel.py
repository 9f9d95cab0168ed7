"""Compiled event loop for the tail-count CTMC.

Each event consumes one row of pre-drawn randomness: an Exp(1) variate for
the holding time and ``d + 1`` uniforms (event type, then the queue draws).
Drawing in fixed-size blocks from a numpy Generator keeps runs reproducible
independent of how the horizon is split between calls.
"""
from __future__ import annotations

import numpy as np
from numba import njit

DONE = 0
NEED_RANDOMS = 1
NEED_CAPACITY = 2
LOG_FULL = 3

ARRIVAL = 1
DEPARTURE = -1


@njit(cache=True)
def queue_length_at(q, k):
    """Length of the queue at rank ``k`` when queues are sorted longest first."""
    # largest i with q[i] > k; q is nonincreasing and q[0] = n > k
    lo, hi = 0, q.shape[0]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if q[mid] > k:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def arrival_level(q, n, u):
    """Tail level incremented by an arrival that samples ``len(u)`` queues."""
    kmax = 0
    for j in range(u.shape[0]):
        k = int(u[j] * n)
        if k >= n:
            k = n - 1
        if k > kmax:
            kmax = k
    return queue_length_at(q, kmax) + 1


@njit(cache=True)
def departure_level(q, u):
    k = int(u * q[1])
    if k >= q[1]:
        k = q[1] - 1
    return queue_length_at(q, k)


@njit(cache=True)
def advance(
    q, n, d, lam, state, t_end,
    expo, unif,
    grid, grid_out,
    area,
    log_t, log_lvl, log_typ,
):
    """Run events until ``t_end`` or until a buffer needs attention.

    ``state`` is a float64 array [t, t_next, row, grid_pos, log_pos, events]
    carried between calls; ``t_next < 0`` means no pending event.
    """
    t = state[0]
    t_next = state[1]
    row = int(state[2])
    gpos = int(state[3])
    lpos = int(state[4])
    events = state[5]
    m = expo.shape[0]
    ngrid = grid.shape[0]
    nlev = grid_out.shape[0]
    cap = q.shape[0]
    keep_log = log_t.shape[0] > 0
    lam_n = lam * n
    status = DONE

    while True:
        if t_next < 0.0:
            if row >= m:
                status = NEED_RANDOMS
                break
            rate = lam_n + q[1]
            if rate <= 0.0:
                t_next = np.inf
            else:
                t_next = t + expo[row] / rate
        stop = t_next > t_end
        t_upto = t_end if stop else t_next
        # right-continuous recording: grid points in [t, t_next) see the current state
        while gpos < ngrid and grid[gpos] <= t_upto and (stop or grid[gpos] < t_next):
            for i in range(nlev):
                grid_out[i, gpos] = q[i] if i < cap else 0
            gpos += 1
        dt = t_upto - t
        if dt > 0.0:
            for i in range(area.shape[0]):
                if i < cap:
                    area[i] += q[i] * dt
        t = t_upto
        if stop:
            status = DONE
            break
        if keep_log and lpos >= log_t.shape[0]:
            status = LOG_FULL
            break
        u = unif[row]
        if u[0] * (lam_n + q[1]) < lam_n:
            lvl = arrival_level(q, n, u[1:d + 1])
            if lvl >= cap:
                status = NEED_CAPACITY
                break
            q[lvl] += 1
            typ = ARRIVAL
        else:
            lvl = departure_level(q, u[1])
            q[lvl] -= 1
            typ = DEPARTURE
        if keep_log:
            log_t[lpos] = t
            log_lvl[lpos] = lvl
            log_typ[lpos] = typ
            lpos += 1
        events += 1.0
        row += 1
        t_next = -1.0

    state[0] = t
    state[1] = t_next
    state[2] = row
    state[3] = gpos
    state[4] = lpos
    state[5] = events
    return status


@njit(cache=True)
def _flush(i, t, q, n, d, lam, eta, last, comp_a, comp_d):
    dt = t - last[i]
    if dt > 0.0:
        comp_a[i] += lam * eta * ((q[i - 1] / n) ** d - (q[i] / n) ** d) * dt
        comp_d[i] += eta * (q[i] - q[i + 1]) / n * dt
    last[i] = t


@njit(cache=True)
def martingale_scan(q0, n, d, lam, eta, times, levels, kinds, grid, horizon, M, N, cA, cD, sup_m, sup_n):
    """One pass over the event log with lazily integrated compensators.

    Between its own jumps each martingale is nonincreasing, so its supremum
    is attained right after a jump or at the left limit of the next one.
    """
    K = M.shape[0]
    q = q0.copy()
    last = np.zeros(K)
    comp_a = np.zeros(K)
    comp_d = np.zeros(K)
    count_a = np.zeros(K)
    count_d = np.zeros(K)
    c = eta / n
    g = 0
    G = grid.shape[0]
    for e in range(times.shape[0]):
        te = times[e]
        while g < G and grid[g] < te:
            for i in range(1, K):
                _flush(i, grid[g], q, n, d, lam, eta, last, comp_a, comp_d)
                cA[i, g] = comp_a[i]
                cD[i, g] = comp_d[i]
                M[i, g] = c * count_a[i] - comp_a[i]
                N[i, g] = c * count_d[i] - comp_d[i]
            g += 1
        lv = levels[e]
        for i in range(max(1, lv - 1), min(K, lv + 2)):
            _flush(i, te, q, n, d, lam, eta, last, comp_a, comp_d)
        if lv < K:
            if kinds[e] == ARRIVAL:
                left = c * count_a[lv] - comp_a[lv]
                count_a[lv] += 1.0
                sup_m[lv] = max(sup_m[lv], abs(left), abs(left + c))
            else:
                left = c * count_d[lv] - comp_d[lv]
                count_d[lv] += 1.0
                sup_n[lv] = max(sup_n[lv], abs(left), abs(left + c))
        q[lv] += kinds[e]
    while g < G:
        for i in range(1, K):
            _flush(i, grid[g], q, n, d, lam, eta, last, comp_a, comp_d)
            cA[i, g] = comp_a[i]
            cD[i, g] = comp_d[i]
            M[i, g] = c * count_a[i] - comp_a[i]
            N[i, g] = c * count_d[i] - comp_d[i]
        g += 1
    for i in range(1, K):
        _flush(i, horizon, q, n, d, lam, eta, last, comp_a, comp_d)
        sup_m[i] = max(sup_m[i], abs(c * count_a[i] - comp_a[i]))
        sup_n[i] = max(sup_n[i], abs(c * count_d[i] - comp_d[i]))
