"""Compiled kernels for the min-cost flow engine.

Graph layout used throughout: residual arcs in CSR form, every original arc
paired with its reverse (``r_rev``).  Potentials follow the convention that
the reduced cost of a residual arc v->w is ``cost + pi[v] - pi[w]``.
"""

import numpy as np
from numba import njit

BIG = np.int64(1) << 62


@njit(cache=True)
def build_residual(n_nodes, tail, head, cap, cost):
    m = tail.size
    deg = np.zeros(n_nodes + 1, np.int64)
    for a in range(m):
        deg[tail[a] + 1] += 1
        deg[head[a] + 1] += 1
    first = np.cumsum(deg)
    pos = first[:-1].copy()
    r_head = np.empty(2 * m, np.int64)
    r_cap = np.empty(2 * m, np.int64)
    r_cost = np.empty(2 * m, np.int64)
    r_rev = np.empty(2 * m, np.int64)
    fwd = np.empty(m, np.int64)
    for a in range(m):
        u = tail[a]
        v = head[a]
        i = pos[u]
        pos[u] += 1
        j = pos[v]
        pos[v] += 1
        r_head[i] = v
        r_cap[i] = cap[a]
        r_cost[i] = cost[a]
        r_rev[i] = j
        r_head[j] = u
        r_cap[j] = 0
        r_cost[j] = -cost[a]
        r_rev[j] = i
        fwd[a] = i
    return first, r_head, r_cap, r_cost, r_rev, fwd


@njit(cache=True)
def _heap_push(hk, hv, size, key, val):
    i = size
    hk[i] = key
    hv[i] = val
    while i > 0:
        par = (i - 1) >> 1
        if hk[par] <= hk[i]:
            break
        hk[par], hk[i] = hk[i], hk[par]
        hv[par], hv[i] = hv[i], hv[par]
        i = par
    return size + 1


@njit(cache=True)
def _heap_pop(hk, hv, size):
    key = hk[0]
    val = hv[0]
    size -= 1
    hk[0] = hk[size]
    hv[0] = hv[size]
    i = 0
    while True:
        lft = 2 * i + 1
        if lft >= size:
            break
        s = lft
        if lft + 1 < size and hk[lft + 1] < hk[lft]:
            s = lft + 1
        if hk[s] >= hk[i]:
            break
        hk[s], hk[i] = hk[i], hk[s]
        hv[s], hv[i] = hv[i], hv[s]
        i = s
    return key, val, size


@njit(cache=True)
def _global_update(first, r_head, r_cap, c, r_rev, excess, price, eps, dist, bucket, nxt, prv, hk, hv):
    # backwards shortest paths from deficit nodes, arc lengths in units of eps.
    # Distances below n live in buckets (Dial); larger ones in a binary heap
    # that is only drained once the buckets are exhausted.  Nodes never
    # reached are capped at the stop distance.
    n = first.size - 1
    nb = bucket.size
    for v in range(n):
        dist[v] = BIG
    for k in range(nb):
        bucket[k] = -1
    active = 0
    for v in range(n):
        if excess[v] < 0:
            dist[v] = 0
            nxt[v] = bucket[0]
            prv[v] = -1
            if bucket[0] >= 0:
                prv[bucket[0]] = v
            bucket[0] = v
        elif excess[v] > 0:
            active += 1
    size = 0
    dstop = 0
    cur = 0
    while active > 0:
        if cur < nb:
            w = bucket[cur]
            if w < 0:
                cur += 1
                continue
            bucket[cur] = nxt[w]
            if nxt[w] >= 0:
                prv[nxt[w]] = -1
            d = cur
        else:
            if size == 0:
                break
            d, w, size = _heap_pop(hk, hv, size)
            if d != dist[w]:
                continue
        dist[w] = -1 - d        # scanned marker
        dstop = d
        if excess[w] > 0:
            active -= 1
        pw = price[w]
        for a in range(first[w], first[w + 1]):
            b = r_rev[a]
            if r_cap[b] > 0:
                v = r_head[a]
                dv = dist[v]
                if dv < 0:
                    continue
                cp = c[b] + price[v] - pw
                step = 0
                if cp >= 0:
                    step = cp // eps + 1
                nd = d + step
                if nd < dv:
                    if dv < nb:
                        # unlink from the old bucket
                        if prv[v] >= 0:
                            nxt[prv[v]] = nxt[v]
                        else:
                            bucket[dv] = nxt[v]
                        if nxt[v] >= 0:
                            prv[nxt[v]] = prv[v]
                    dist[v] = nd
                    if nd < nb:
                        nxt[v] = bucket[nd]
                        prv[v] = -1
                        if bucket[nd] >= 0:
                            prv[bucket[nd]] = v
                        bucket[nd] = v
                    else:
                        size = _heap_push(hk, hv, size, nd, v)
    for v in range(n):
        dv = dist[v]
        if dv < 0:
            dv = -1 - dv
        if dv > dstop:
            dv = dstop
        price[v] -= eps * dv


@njit(cache=True)
def cost_scaling(first, r_head, r_cap, r_cost, r_rev, excess, price, eps0, alpha, gu_freq):
    """Push-relabel cost scaling (costs multiplied by the node count + 1).

    ``price`` is in scaled units and is updated in place; the flow lives in
    ``r_cap``.  Runs refine phases from ``eps0`` down to 1, at which point the
    flow is optimal for the integer costs.  Returns (status, pushes, relabels,
    global updates); status -1 means some excess could not be routed.
    """
    n = first.size - 1
    N = n + 1
    c = r_cost * N
    queue = np.empty(n + 1, np.int64)
    inq = np.zeros(n, np.bool_)
    current = np.empty(n, np.int64)
    dist = np.empty(n, np.int64)
    bucket = np.empty(n + 1, np.int64)
    hk = np.empty(r_head.size + n + 1, np.int64)
    hv = np.empty(r_head.size + n + 1, np.int64)
    nxt = np.empty(n, np.int64)
    prv = np.empty(n, np.int64)
    pushes = 0
    relabels = 0
    updates = 0
    eps = max(np.int64(1), eps0)
    while True:
        for v in range(n):
            pv = price[v]
            for a in range(first[v], first[v + 1]):
                if r_cap[a] > 0:
                    w = r_head[a]
                    if c[a] + pv - price[w] < 0:
                        d = r_cap[a]
                        r_cap[a] = 0
                        r_cap[r_rev[a]] += d
                        excess[v] -= d
                        excess[w] += d
        _global_update(first, r_head, r_cap, c, r_rev, excess, price, eps, dist, bucket, nxt, prv, hk, hv)
        updates += 1
        since = 0
        qh = 0
        qt = 0
        size = n + 1
        for v in range(n):
            current[v] = first[v]
            inq[v] = False
            if excess[v] > 0:
                queue[qt] = v
                qt += 1
                inq[v] = True
        while qh != qt:
            v = queue[qh]
            qh += 1
            if qh == size:
                qh = 0
            inq[v] = False
            while excess[v] > 0:
                a = current[v]
                end = first[v + 1]
                pv = price[v]
                while a < end:
                    if r_cap[a] > 0:
                        w = r_head[a]
                        if c[a] + pv - price[w] < 0:
                            d = min(excess[v], r_cap[a])
                            r_cap[a] -= d
                            r_cap[r_rev[a]] += d
                            excess[v] -= d
                            excess[w] += d
                            pushes += 1
                            if excess[w] > 0 and not inq[w]:
                                queue[qt] = w
                                qt += 1
                                if qt == size:
                                    qt = 0
                                inq[w] = True
                            if excess[v] == 0:
                                break
                    a += 1
                current[v] = a
                if excess[v] > 0:
                    best = -BIG
                    for b in range(first[v], end):
                        if r_cap[b] > 0:
                            t = price[r_head[b]] - c[b]
                            if t > best:
                                best = t
                    if best == -BIG:
                        return -1, pushes, relabels, updates
                    price[v] = best - eps
                    current[v] = first[v]
                    relabels += 1
                    since += 1
            if since > gu_freq * n:
                _global_update(first, r_head, r_cap, c, r_rev, excess, price, eps, dist, bucket, nxt, prv, hk, hv)
                updates += 1
                since = 0
                for u in range(n):
                    current[u] = first[u]
        if eps == 1:
            break
        eps = max(np.int64(1), eps // alpha)
    return 0, pushes, relabels, updates


@njit(cache=True)
def exact_potentials(first, r_head, r_cap, r_cost, free_fwd, price, N):
    """Integer potentials feasible on every residual arc.

    Starts from floor(price / N), where reduced lengths are >= -1, and runs a
    heap-ordered label-correcting pass.  ``free_fwd`` marks arcs whose
    capacity is not a real constraint: they count as residual regardless.
    """
    n = first.size - 1
    base = np.empty(n, np.int64)
    for v in range(n):
        base[v] = price[v] // N
    d = np.zeros(n, np.int64)
    hk = np.empty(r_head.size + n + 1, np.int64)
    hv = np.empty(r_head.size + n + 1, np.int64)
    size = 0
    for v in range(n):
        for a in range(first[v], first[v + 1]):
            if r_cap[a] > 0 or free_fwd[a]:
                w = r_head[a]
                r = r_cost[a] + base[v] - base[w]
                if r < d[w]:
                    d[w] = r
    for v in range(n):
        if d[v] < 0:
            size = _heap_push(hk, hv, size, d[v], v)
    pops = 0
    while size > 0:
        dv, v, size = _heap_pop(hk, hv, size)
        if dv > d[v]:
            continue
        pops += 1
        if pops > 64 * n + 1000000:
            return base + d, -1
        for a in range(first[v], first[v + 1]):
            if r_cap[a] > 0 or free_fwd[a]:
                w = r_head[a]
                nd = dv + r_cost[a] + base[v] - base[w]
                if nd < d[w]:
                    d[w] = nd
                    if size >= hk.size:
                        return base + d, -1
                    size = _heap_push(hk, hv, size, nd, w)
    return base + d, pops


@njit(cache=True)
def _power(r2, p):
    if p == 2.0:
        return r2
    if p == 1.0:
        return np.sqrt(r2)
    return r2 ** (0.5 * p)


@njit(cache=True)
def pair_cost(X, i, Y, j, p, scale):
    r2 = 0.0
    for k in range(X.shape[1]):
        t = X[i, k] - Y[j, k]
        r2 += t * t
    return np.int64(np.rint(_power(r2, p) * scale))


@njit(cache=True)
def arc_costs(X, Y, ai, aj, p, scale):
    out = np.empty(ai.size, np.int64)
    for a in range(ai.size):
        out[a] = pair_cost(X, ai[a], Y, aj[a], p, scale)
    return out


@njit(cache=True)
def make_tiles(Y, b):
    """Bin points into axis-aligned tiles of side b.

    Returns (order, ptr, lo, hi): points order[ptr[t]:ptr[t+1]] lie in tile t,
    whose bounding box is [lo[t], hi[t]].
    """
    m, d = Y.shape
    key = np.zeros(m, np.int64)
    mins = np.empty(d)
    for k in range(d):
        mins[k] = Y[:, k].min()
    for k in range(d):
        cells = np.empty(m, np.int64)
        for j in range(m):
            cells[j] = np.int64((Y[j, k] - mins[k]) // b)
        span = cells.max() + 1
        for j in range(m):
            key[j] = key[j] * span + cells[j]
    order = np.argsort(key, kind='mergesort')
    nt = 1
    for q in range(1, m):
        if key[order[q]] != key[order[q - 1]]:
            nt += 1
    ptr = np.empty(nt + 1, np.int64)
    ptr[0] = 0
    t = 0
    for q in range(1, m):
        if key[order[q]] != key[order[q - 1]]:
            t += 1
            ptr[t] = q
    ptr[nt] = m
    lo = np.empty((nt, d))
    hi = np.empty((nt, d))
    for t in range(nt):
        for k in range(d):
            lo[t, k] = np.inf
            hi[t, k] = -np.inf
        for q in range(ptr[t], ptr[t + 1]):
            j = order[q]
            for k in range(d):
                lo[t, k] = min(lo[t, k], Y[j, k])
                hi[t, k] = max(hi[t, k], Y[j, k])
    return order, ptr, lo, hi


@njit(cache=True)
def _tile_dist2(X, i, lo, hi, t):
    r2 = 0.0
    for k in range(X.shape[1]):
        x = X[i, k]
        g = max(lo[t, k] - x, 0.0, x - hi[t, k])
        r2 += g * g
    return r2


@njit(cache=True)
def _scan_tiles(X, i, Y, w, shift, p, scale, order, ptr, tiles, cnt_tiles, K, bound, best_j, best_r, cnt, cut, hits, lb):
    for q0 in range(cnt_tiles):
        tt = tiles[q0]
        if lb[tt] >= cut:
            break
        for q in range(ptr[tt], ptr[tt + 1]):
            j = order[q]
            r = pair_cost(X, i, Y, j, p, scale) - w[j] - shift[i]
            if r < cut:
                hits += 1
                if cnt < K:
                    k = cnt
                    cnt += 1
                else:
                    k = K - 1
                while k > 0 and (best_r[i, k - 1] > r or (best_r[i, k - 1] == r and best_j[i, k - 1] > j)):
                    best_r[i, k] = best_r[i, k - 1]
                    best_j[i, k] = best_j[i, k - 1]
                    k -= 1
                best_r[i, k] = r
                best_j[i, k] = j
                if cnt == K:
                    cut = min(bound, best_r[i, K - 1])
    return cnt, cut, hits


@njit(cache=True)
def _box_dist2(lo_a, hi_a, s, lo, hi, t):
    r2 = 0.0
    for k in range(lo.shape[1]):
        g = max(lo[t, k] - hi_a[s, k], 0.0, lo_a[s, k] - hi[t, k])
        r2 += g * g
    return r2


@njit(cache=True)
def scan_topk(X, Y, w, shift, bound, K, p, scale, order, ptr, lo, hi):
    """For every source i, the K smallest r_ij = c_ij - w_j - shift_i below bound.

    Tiles whose lower bound on r cannot beat the current K-th best are
    skipped, so the result is exact.  Sources are processed in blocks so a
    finite ``bound`` prunes whole tile pairs first.  Returns (best_j, best_r,
    hits) where unused slots hold -1 and hits counts the pairs found below
    the running cut (positive iff some pair lies below ``bound``).
    """
    n = X.shape[0]
    nt = ptr.size - 1
    wmax = np.empty(nt, np.int64)
    size = 0
    for tt in range(nt):
        mx = -BIG
        for q in range(ptr[tt], ptr[tt + 1]):
            if w[order[q]] > mx:
                mx = w[order[q]]
        wmax[tt] = mx
        size = max(size, ptr[tt + 1] - ptr[tt])
    k0 = 2 * ((K + size - 1) // size) + 2
    # source blocks with the same geometry as the sink tiles
    side = 0.0
    for tt in range(nt):
        for k in range(lo.shape[1]):
            side = max(side, hi[tt, k] - lo[tt, k])
    s_order, s_ptr, s_lo, s_hi = make_tiles(X, max(side, 1e-9) + 1e-9)
    ns = s_ptr.size - 1
    best_j = -np.ones((n, K), np.int64)
    best_r = np.zeros((n, K), np.int64)
    lb = np.empty(nt, np.int64)
    block = np.empty(nt, np.int64)
    done = np.zeros(nt, np.bool_)
    cand = np.empty(nt, np.int64)
    hits = 0
    for sb in range(ns):
        smax = -BIG
        for q in range(s_ptr[sb], s_ptr[sb + 1]):
            smax = max(smax, shift[s_order[q]])
        nb = 0
        for tt in range(nt):
            val = _power(_box_dist2(s_lo, s_hi, sb, lo, hi, tt), p)
            if np.int64(np.floor(val * scale)) - 1 - wmax[tt] - smax < bound:
                block[nb] = tt
                nb += 1
        if nb == 0:
            continue
        for q in range(s_ptr[sb], s_ptr[sb + 1]):
            i = s_order[q]
            for b in range(nb):
                tt = block[b]
                val = _power(_tile_dist2(X, i, lo, hi, tt), p)
                lb[tt] = np.int64(np.floor(val * scale)) - 1 - wmax[tt] - shift[i]
            cnt = 0
            cut = bound
            # first pass over the tiles with the smallest bounds, then all others
            # that can still beat the cut
            kk = min(nb, k0)
            nc = 0
            if kk < nb:
                tmp = np.empty(nb, np.int64)
                for b in range(nb):
                    tmp[b] = lb[block[b]]
                tau = np.partition(tmp, kk - 1)[kk - 1]
            else:
                tau = BIG
            for b in range(nb):
                tt = block[b]
                done[tt] = False
                if lb[tt] <= tau and lb[tt] < cut and nc < kk:
                    cand[nc] = tt
                    nc += 1
            first = cand[:nc][np.argsort(lb[cand[:nc]])]
            for b in range(nc):
                done[first[b]] = True
            cnt, cut, hits = _scan_tiles(X, i, Y, w, shift, p, scale, order, ptr, first, nc, K, bound,
                                         best_j, best_r, cnt, cut, hits, lb)
            nc = 0
            for b in range(nb):
                tt = block[b]
                if not done[tt] and lb[tt] < cut:
                    cand[nc] = tt
                    nc += 1
            if nc > 0:
                rest = cand[:nc][np.argsort(lb[cand[:nc]])]
                cnt, cut, hits = _scan_tiles(X, i, Y, w, shift, p, scale, order, ptr, rest, nc, K, bound,
                                             best_j, best_r, cnt, cut, hits, lb)
    return best_j, best_r, hits


@njit(cache=True)
def max_violation(X, Y, phi, psi, p, order, ptr, lo, hi):
    """max_ij phi_i + psi_j - |x_i - y_j|^p in floating point (tile-pruned)."""
    n = X.shape[0]
    nt = ptr.size - 1
    pmax = np.empty(nt)
    for tt in range(nt):
        mx = -np.inf
        for q in range(ptr[tt], ptr[tt + 1]):
            if psi[order[q]] > mx:
                mx = psi[order[q]]
        pmax[tt] = mx
    worst = -np.inf
    wi = -1
    wj = -1
    ub = np.empty(nt)
    for i in range(n):
        for tt in range(nt):
            ub[tt] = phi[i] + pmax[tt] - _power(_tile_dist2(X, i, lo, hi, tt), p)
        torder = np.argsort(-ub)
        for q0 in range(nt):
            tt = torder[q0]
            if ub[tt] <= worst:
                break
            for q in range(ptr[tt], ptr[tt + 1]):
                j = order[q]
                r2 = 0.0
                for k in range(X.shape[1]):
                    g = X[i, k] - Y[j, k]
                    r2 += g * g
                val = phi[i] + psi[j] - _power(r2, p)
                if val > worst:
                    worst = val
                    wi = i
                    wj = j
    return worst, wi, wj
