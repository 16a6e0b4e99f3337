"""Compiled inner loops for model construction.

Both kernels walk the shell table from :func:`morphclass.distance.offset_table`;
shell ``r`` occupies ``odx[ostart[r]:ostart[r + 1]]``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _occupancy(counts):
    nx, ny, L = counts.shape
    occupied = np.zeros((nx, ny), dtype=np.int64)
    for x in range(nx):
        for y in range(ny):
            for l in range(L):
                occupied[x, y] += counts[x, y, l]
    return occupied


@njit(cache=True)
def _absorb_cell(x, y, counts, occupied, k, gamma, last, odx, ody, ostart, T_out):
    """Fill ``T_out`` for cell (x, y); returns (last shell, k reached)."""
    nx, ny, L = counts.shape
    for l in range(L):
        T_out[l] = gamma * counts[x, y, l]
    kaux = 0
    r = 0
    while r <= last:
        for o in range(ostart[r], ostart[r + 1]):
            cx = x + odx[o]
            cy = y + ody[o]
            if cx < 0 or cy < 0 or cx >= nx or cy >= ny:
                continue
            if occupied[cx, cy] == 0:
                continue
            kaux += occupied[cx, cy]
            for l in range(L):
                T_out[l] += counts[cx, cy, l]
        if kaux >= k:
            return r, True
        r += 1
    return last, False


@njit(cache=True, nogil=True)
def mknn_sweep(counts, k, gamma, sigma, odx, ody, ostart):
    """Absorb shells around every cell until ``k`` instances are seen.

    Cells are independent of each other; each writes only its own outputs.
    Returns the class counters, the last absorbed shell and whether ``k``
    was reached.
    """
    nx, ny, L = counts.shape
    occupied = _occupancy(counts)
    T = np.zeros((nx, ny, L), dtype=np.int64)
    radius = np.zeros((nx, ny), dtype=np.int64)
    reached = np.zeros((nx, ny), dtype=np.bool_)
    last = min(sigma, ostart.shape[0] - 2)
    for x in range(nx):
        for y in range(ny):
            r, ok = _absorb_cell(x, y, counts, occupied, k, gamma, last, odx, ody,
                                 ostart, T[x, y])
            radius[x, y] = r
            reached[x, y] = ok
    return T, radius, reached


@njit(cache=True, nogil=True)
def mknn_sweep_at(counts, qx, qy, k, gamma, sigma, odx, ody, ostart):
    """Class counters at the listed cells only (same rule as ``mknn_sweep``)."""
    L = counts.shape[2]
    occupied = _occupancy(counts)
    T = np.zeros((qx.shape[0], L), dtype=np.int64)
    last = min(sigma, ostart.shape[0] - 2)
    for i in range(qx.shape[0]):
        _absorb_cell(qx[i], qy[i], counts, occupied, k, gamma, last, odx, ody,
                     ostart, T[i])
    return T


@njit(cache=True)
def _dt(dx, dy):
    ax = abs(dx)
    ay = abs(dy)
    if ax > ay:
        return ax * (ax + 1) // 2 + ay
    return ay * (ay + 1) // 2 + ax


@njit(cache=True)
def _in_cone(dx, dy, beta):
    """Orientation rule; bits are left=1, bottom=2, right=4, top=8."""
    if dx == 0 and dy == 0:
        return True
    ax = abs(dx)
    ay = abs(dy)
    return ((beta & 1 and dx <= -ay) or (beta & 4 and dx >= ay)
            or (beta & 8 and dy >= ax) or (beta & 2 and dy <= -ax))


@njit(cache=True)
def _instance_cells(counts):
    nx, ny, L = counts.shape
    n = 0
    for x in range(nx):
        for y in range(ny):
            for l in range(L):
                if counts[x, y, l] > 0:
                    n += 1
                    break
    ix = np.empty(n, dtype=np.int64)
    iy = np.empty(n, dtype=np.int64)
    j = 0
    for x in range(nx):
        for y in range(ny):
            for l in range(L):
                if counts[x, y, l] > 0:
                    ix[j] = x
                    iy[j] = y
                    j += 1
                    break
    return ix, iy


@njit(cache=True)
def _safe(T, left, c, tau):
    """True when no later ring can violate: counters only grow."""
    for u in range(T.shape[0]):
        if u != c and tau * T[c] < T[u] + left[u]:
            return False
    return True


@njit(cache=True)
def _seed_radii(counts, ix, iy, seed_x, seed_y, seed_cls, gamma, tau, t_err, last, beta):
    """Claim radius per seed plus the radius at which it was violated (or -1)."""
    nx, ny, L = counts.shape
    S = seed_x.shape[0]
    n_inst = ix.shape[0]
    reach = np.zeros(S, dtype=np.int64)
    for s in range(S):
        for cx in (0, nx - 1):
            for cy in (0, ny - 1):
                reach[s] = max(reach[s], _dt(cx - seed_x[s], cy - seed_y[s]))
    # first violating radius per seed (-1: none within its horizon)
    viol_at = np.full(S, -1, dtype=np.int64)
    d = np.empty(n_inst, dtype=np.int64)
    T = np.zeros(L, dtype=np.int64)
    # dt grows with the Chebyshev norm, so bucketing by norm sorts by dt
    # up to ties inside one norm shell
    M = max(nx, ny)
    start = np.empty(M + 1, dtype=np.int64)
    fill = np.empty(M, dtype=np.int64)
    shell = np.empty(n_inst, dtype=np.int64)
    order = np.empty(n_inst, dtype=np.int64)
    left = np.empty(L, dtype=np.int64)
    ic = np.empty((n_inst, L), dtype=np.int64)
    for e in range(n_inst):
        for l in range(L):
            ic[e, l] = counts[ix[e], iy[e], l]
    for s in range(S):
        c = seed_cls[s]
        horizon = min(reach[s], last)
        start[:] = 0
        left[:] = 0
        for e in range(n_inst):
            dx = ix[e] - seed_x[s]
            dy = iy[e] - seed_y[s]
            dd = _dt(dx, dy)
            if dd <= horizon and _in_cone(dx, dy, beta):
                d[e] = dd
                shell[e] = max(abs(dx), abs(dy))
                start[shell[e] + 1] += 1
                for l in range(L):
                    left[l] += ic[e, l]
            else:
                d[e] = -1
        T[:] = 0
        T[c] = gamma * counts[seed_x[s], seed_y[s], c]
        if _safe(T, left, c, tau):
            continue
        for m in range(M):
            start[m + 1] += start[m]
            fill[m] = start[m]
        for e in range(n_inst):
            if d[e] >= 0:
                order[fill[shell[e]]] = e
                fill[shell[e]] += 1
        for m in range(M):
            lo = start[m]
            hi = start[m + 1]
            for a in range(lo + 1, hi):
                v = order[a]
                b = a - 1
                while b >= lo and d[order[b]] > d[v]:
                    order[b + 1] = order[b]
                    b -= 1
                order[b + 1] = v
            e = lo
            while e < hi:
                r = d[order[e]]
                while e < hi and d[order[e]] == r:
                    for l in range(L):
                        T[l] += ic[order[e], l]
                        left[l] -= ic[order[e], l]
                    e += 1
                for u in range(L):
                    if u != c and tau * T[c] < T[u]:
                        viol_at[s] = r
                        break
                if viol_at[s] >= 0 or _safe(T, left, c, tau):
                    break
            if viol_at[s] >= 0 or _safe(T, left, c, tau):
                break
    # iteration after which each class stops (-1: before the first one)
    stop = np.full(L, last, dtype=np.int64)
    if t_err <= 0:
        stop[:] = -1
    else:
        for c in range(L):
            radii = np.sort(viol_at[(seed_cls == c) & (viol_at >= 0)])
            if radii.shape[0] >= t_err:
                stop[c] = radii[t_err - 1]
    radius = np.full(S, -1, dtype=np.int64)
    for s in range(S):
        c = seed_cls[s]
        if viol_at[s] >= 0 and viol_at[s] <= stop[c]:
            radius[s] = viol_at[s] - 1
        else:
            radius[s] = min(stop[c], reach[s], last)
            viol_at[s] = -1
    return radius, viol_at


@njit(cache=True, nogil=True)
def mdc_radii(counts, seed_x, seed_y, seed_cls, gamma, tau, t_err, last, beta):
    """Final claim radius of every seed under the lockstep ring walk.

    A seed's counters depend only on the instances inside its cone, so its
    first violating radius is found from its instance cells sorted by
    distance.  A class stops after the iteration holding its ``t_err``-th
    violation.  Returns ``(radius, T, violated, err, iterations)``.
    """
    L = counts.shape[2]
    S = seed_x.shape[0]
    ix, iy = _instance_cells(counts)
    radius, viol_at = _seed_radii(counts, ix, iy, seed_x, seed_y, seed_cls,
                                  gamma, tau, t_err, last, beta)
    violated = viol_at >= 0
    err = np.zeros(L, dtype=np.int64)
    iterations = 0
    T = np.zeros((S, L), dtype=np.int64)
    for s in range(S):
        c = seed_cls[s]
        if violated[s]:
            err[c] += 1
            absorbed = viol_at[s]
        else:
            absorbed = radius[s]
        iterations = max(iterations, absorbed + 1)
        # counters as of the last absorbed ring
        T[s, c] = gamma * counts[seed_x[s], seed_y[s], c]
        for e in range(ix.shape[0]):
            dx = ix[e] - seed_x[s]
            dy = iy[e] - seed_y[s]
            if _dt(dx, dy) <= absorbed and _in_cone(dx, dy, beta):
                for l in range(L):
                    T[s, l] += counts[ix[e], iy[e], l]
    return radius, T, violated, err, iterations


@njit(cache=True, nogil=True)
def mdc_labels_at(counts, qx, qy, gamma, tau, t_err, last, beta, q):
    """Labels of the cells ``(qx, qy)`` after training; ``q = 0`` picks the
    complement with the best training accuracy (smallest id on ties)."""
    nx, ny, L = counts.shape
    ix, iy = _instance_cells(counts)
    n_inst = ix.shape[0]
    n = qx.shape[0]
    total = 0
    for x in range(nx):
        for y in range(ny):
            for l in range(L):
                total += counts[x, y, l]
    best = np.zeros(n, dtype=np.int64)
    best_hits = -1
    lo, hi = (q, q) if q > 0 else (1, L)
    for cq in range(lo, hi + 1):
        S = 0
        for c in range(L):
            if c + 1 != cq:
                for x in range(nx):
                    for y in range(ny):
                        if counts[x, y, c] > 0:
                            S += 1
        seed_x = np.empty(S, dtype=np.int64)
        seed_y = np.empty(S, dtype=np.int64)
        seed_cls = np.empty(S, dtype=np.int64)
        j = 0
        for c in range(L):
            if c + 1 == cq:
                continue
            for x in range(nx):
                for y in range(ny):
                    if counts[x, y, c] > 0:
                        seed_x[j] = x
                        seed_y[j] = y
                        seed_cls[j] = c
                        j += 1
        radius, _ = _seed_radii(counts, ix, iy, seed_x, seed_y, seed_cls,
                                gamma, tau, t_err, last, beta)
        own = mdc_owner_at(ix, iy, seed_x, seed_y, seed_cls, radius, beta)
        hits = 0
        for e in range(n_inst):
            lab = own[e] if own[e] > 0 else cq
            hits += counts[ix[e], iy[e], lab - 1]
        if hits > best_hits:
            best_hits = hits
            labels = mdc_owner_at(qx, qy, seed_x, seed_y, seed_cls, radius, beta)
            for k in range(n):
                best[k] = labels[k] if labels[k] > 0 else cq
    return best


@njit(cache=True, nogil=True)
def mdc_owner(nx, ny, seed_x, seed_y, seed_cls, radius, beta):
    """Owner of every cell: the covering seed minimising (distance, seed index)."""
    owner = np.zeros((nx, ny), dtype=np.int64)
    owner_seed = np.full((nx, ny), -1, dtype=np.int64)
    best = np.full((nx, ny), np.iinfo(np.int64).max, dtype=np.int64)
    for s in range(seed_x.shape[0]):
        R = radius[s]
        if R < 0:
            continue
        # every cell with dt <= R has max(|dx|, |dy|) = m with m(m+1)/2 <= R
        m = 0
        while (m + 1) * (m + 2) // 2 <= R:
            m += 1
        sx = seed_x[s]
        sy = seed_y[s]
        for x in range(max(0, sx - m), min(nx, sx + m + 1)):
            for y in range(max(0, sy - m), min(ny, sy + m + 1)):
                dd = _dt(x - sx, y - sy)
                if dd <= R and dd < best[x, y] and _in_cone(x - sx, y - sy, beta):
                    best[x, y] = dd
                    owner[x, y] = seed_cls[s] + 1
                    owner_seed[x, y] = s
    return owner, owner_seed


@njit(cache=True, nogil=True)
def mdc_owner_at(qx, qy, seed_x, seed_y, seed_cls, radius, beta):
    """:func:`mdc_owner` evaluated only at the cells ``(qx, qy)``."""
    n = qx.shape[0]
    owner = np.zeros(n, dtype=np.int64)
    for j in range(n):
        best = np.iinfo(np.int64).max
        for s in range(seed_x.shape[0]):
            R = radius[s]
            if R < 0:
                continue
            dx = qx[j] - seed_x[s]
            dy = qy[j] - seed_y[s]
            dd = _dt(dx, dy)
            if dd <= R and dd < best and _in_cone(dx, dy, beta):
                best = dd
                owner[j] = seed_cls[s] + 1
    return owner
