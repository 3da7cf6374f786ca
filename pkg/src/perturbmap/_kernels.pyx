# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: Dinic max-flow and MPLP block coordinate descent.

Both functions mirror :mod:`perturbmap._fallback` step for step; the
pure-Python versions are the reference semantics.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def maxflow(Py_ssize_t n, tails, heads, caps, Py_ssize_t s, Py_ssize_t t, double eps):
    """Maximum s-t flow and the source side of a minimum cut."""
    cdef const cnp.intp_t[::1] tl = np.ascontiguousarray(tails, dtype=np.intp)
    cdef const cnp.intp_t[::1] hd = np.ascontiguousarray(heads, dtype=np.intp)
    cdef const double[::1] cp = np.ascontiguousarray(caps, dtype=np.float64)
    cdef Py_ssize_t m = tl.shape[0]
    cdef Py_ssize_t e, k, u, v, qh, qt, top, kmin
    cdef double f, total = 0.0

    # half-edges: 2a is arc a, 2a+1 its reverse
    cdef cnp.intp_t[::1] to = np.empty(2 * m, dtype=np.intp)
    cdef double[::1] res = np.empty(2 * m, dtype=np.float64)
    cdef cnp.intp_t[::1] start = np.zeros(n + 1, dtype=np.intp)
    cdef cnp.intp_t[::1] adj = np.empty(2 * m, dtype=np.intp)
    cdef cnp.intp_t[::1] fill = np.empty(n, dtype=np.intp)
    for e in range(m):
        to[2 * e] = hd[e]
        res[2 * e] = cp[e]
        to[2 * e + 1] = tl[e]
        res[2 * e + 1] = 0.0
        start[tl[e] + 1] += 1
        start[hd[e] + 1] += 1
    for u in range(n):
        start[u + 1] += start[u]
    for u in range(n):
        fill[u] = start[u]
    for e in range(m):
        adj[fill[tl[e]]] = 2 * e
        fill[tl[e]] += 1
        adj[fill[hd[e]]] = 2 * e + 1
        fill[hd[e]] += 1

    cdef cnp.intp_t[::1] level = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[::1] queue = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[::1] it = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[::1] path = np.empty(n, dtype=np.intp)

    while True:
        for u in range(n):
            level[u] = -1
        level[s] = 0
        queue[0] = s
        qh = 0
        qt = 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for k in range(start[u], start[u + 1]):
                e = adj[k]
                v = to[e]
                if res[e] > eps and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = start[u]
        top = 0
        u = s
        while True:
            if u == t:
                f = res[path[0]]
                for k in range(1, top):
                    if res[path[k]] < f:
                        f = res[path[k]]
                kmin = -1
                for k in range(top):
                    e = path[k]
                    res[e] -= f
                    res[e ^ 1] += f
                    if kmin < 0 and res[e] <= eps:
                        kmin = k
                total += f
                top = kmin
                u = s if top == 0 else to[path[top - 1]]
                continue
            while it[u] < start[u + 1]:
                e = adj[it[u]]
                if res[e] > eps and level[to[e]] == level[u] + 1:
                    break
                it[u] += 1
            if it[u] < start[u + 1]:
                e = adj[it[u]]
                path[top] = e
                top += 1
                u = to[e]
            else:
                level[u] = -1
                if top == 0:
                    break
                top -= 1
                u = to[path[top] ^ 1]
                it[u] += 1

    cdef cnp.uint8_t[::1] side = np.zeros(n, dtype=np.uint8)
    side[s] = 1
    queue[0] = s
    qh = 0
    qt = 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for k in range(start[u], start[u + 1]):
            e = adj[k]
            v = to[e]
            if res[e] > eps and not side[v]:
                side[v] = 1
                queue[qt] = v
                qt += 1
    return total, np.asarray(side).astype(bool)


cdef double _dual(double[:, ::1] bel, const double[:, :, ::1] tab, double[:, :, ::1] msg,
                  const cnp.intp_t[:, ::1] ends, const cnp.intp_t[::1] cards):
    cdef Py_ssize_t n = bel.shape[0], E = tab.shape[0]
    cdef Py_ssize_t i, j, a, b, e
    cdef double total = 0.0, best, v
    for i in range(n):
        best = bel[i, 0]
        for a in range(1, cards[i]):
            if bel[i, a] > best:
                best = bel[i, a]
        total += best
    for e in range(E):
        i = ends[e, 0]
        j = ends[e, 1]
        best = tab[e, 0, 0] - msg[e, 0, 0] - msg[e, 1, 0]
        for a in range(cards[i]):
            for b in range(cards[j]):
                v = tab[e, a, b] - msg[e, 0, a] - msg[e, 1, b]
                if v > best:
                    best = v
        total += best
    return total


def mplp(unary, ends, tables, cards, Py_ssize_t max_iters, double tol):
    """MPLP edge updates on the pairwise LP dual.

    Returns ``(best_labels, best_value, duals, sweeps)`` where ``duals[0]``
    is the dual at zero messages and ``duals[k]`` the dual after sweep k.
    """
    cdef const double[:, ::1] un = np.ascontiguousarray(unary, dtype=np.float64)
    cdef const cnp.intp_t[:, ::1] en = np.ascontiguousarray(ends, dtype=np.intp).reshape(-1, 2)
    cdef const double[:, :, ::1] tab = np.ascontiguousarray(tables, dtype=np.float64)
    cdef const cnp.intp_t[::1] cd = np.ascontiguousarray(cards, dtype=np.intp)
    cdef Py_ssize_t n = un.shape[0], K = un.shape[1], E = en.shape[0]
    cdef Py_ssize_t i, j, a, b, e, sweep
    cdef double v, best, value, best_value, prev, cur

    cdef double[:, :, ::1] msg = np.zeros((E, 2, K))
    cdef double[:, ::1] bel = np.array(un, copy=True)
    cdef double[::1] ai = np.empty(K)
    cdef double[::1] aj = np.empty(K)
    cdef cnp.intp_t[::1] lab = np.zeros(n, dtype=np.intp)
    cdef cnp.intp_t[::1] best_lab = np.zeros(n, dtype=np.intp)

    duals = [_dual(bel, tab, msg, en, cd)]
    prev = duals[0]
    best_value = -np.inf
    sweep = 0
    while sweep < max_iters:
        sweep += 1
        for e in range(E):
            i = en[e, 0]
            j = en[e, 1]
            for a in range(cd[i]):
                ai[a] = bel[i, a] - msg[e, 0, a]
            for b in range(cd[j]):
                aj[b] = bel[j, b] - msg[e, 1, b]
            for a in range(cd[i]):
                best = tab[e, a, 0] + aj[0]
                for b in range(1, cd[j]):
                    v = tab[e, a, b] + aj[b]
                    if v > best:
                        best = v
                msg[e, 0, a] = 0.5 * best - 0.5 * ai[a]
                bel[i, a] = ai[a] + msg[e, 0, a]
            for b in range(cd[j]):
                best = tab[e, 0, b] + ai[0]
                for a in range(1, cd[i]):
                    v = tab[e, a, b] + ai[a]
                    if v > best:
                        best = v
                msg[e, 1, b] = 0.5 * best - 0.5 * aj[b]
                bel[j, b] = aj[b] + msg[e, 1, b]

        for i in range(n):
            lab[i] = 0
            for a in range(1, cd[i]):
                if bel[i, a] > bel[i, lab[i]]:
                    lab[i] = a
        value = 0.0
        for i in range(n):
            value += un[i, lab[i]]
        for e in range(E):
            value += tab[e, lab[en[e, 0]], lab[en[e, 1]]]
        if value > best_value:
            best_value = value
            for i in range(n):
                best_lab[i] = lab[i]

        cur = _dual(bel, tab, msg, en, cd)
        duals.append(cur)
        if prev - cur < tol:
            break
        prev = cur
    return np.asarray(best_lab).copy(), best_value, duals, sweep
