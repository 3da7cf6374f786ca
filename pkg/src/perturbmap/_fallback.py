"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import math
from collections import deque

import numpy as np


def maxflow(n, tails, heads, caps, s, t, eps):
    """Dinic's algorithm; returns ``(flow value, source-side mask)``."""
    tails = [int(v) for v in tails]
    heads = [int(v) for v in heads]
    m = len(tails)
    to = [0] * (2 * m)
    res = [0.0] * (2 * m)
    adj: list[list[int]] = [[] for _ in range(n)]
    for e, (u, v, c) in enumerate(zip(tails, heads, caps)):
        to[2 * e] = v
        res[2 * e] = float(c)
        to[2 * e + 1] = u
        adj[u].append(2 * e)
        adj[v].append(2 * e + 1)

    total = 0.0
    while True:
        level = [-1] * n
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for e in adj[u]:
                v = to[e]
                if res[e] > eps and level[v] < 0:
                    level[v] = level[u] + 1
                    q.append(v)
        if level[t] < 0:
            break
        it = [0] * n
        path: list[int] = []
        u = s
        while True:
            if u == t:
                f = min(res[e] for e in path)
                kmin = -1
                for k, e in enumerate(path):
                    res[e] -= f
                    res[e ^ 1] += f
                    if kmin < 0 and res[e] <= eps:
                        kmin = k
                total += f
                del path[kmin:]
                u = to[path[-1]] if path else s
                continue
            nbrs = adj[u]
            while it[u] < len(nbrs):
                e = nbrs[it[u]]
                if res[e] > eps and level[to[e]] == level[u] + 1:
                    break
                it[u] += 1
            if it[u] < len(nbrs):
                e = nbrs[it[u]]
                path.append(e)
                u = to[e]
            else:
                level[u] = -1
                if not path:
                    break
                u = to[path.pop() ^ 1]
                it[u] += 1

    side = np.zeros(n, dtype=bool)
    side[s] = True
    q = deque([s])
    while q:
        u = q.popleft()
        for e in adj[u]:
            v = to[e]
            if res[e] > eps and not side[v]:
                side[v] = True
                q.append(v)
    return total, side


def _dual(bel, tab, msg, ends, cards):
    total = 0.0
    for i in range(bel.shape[0]):
        total += max(bel[i, : cards[i]])
    for e in range(tab.shape[0]):
        i, j = ends[e]
        ci, cj = cards[i], cards[j]
        v = tab[e, :ci, :cj] - msg[e, 0, :ci, None] - msg[e, 1, None, :cj]
        total += v.max()
    return float(total)


def mplp(unary, ends, tables, cards, max_iters, tol):
    un = np.asarray(unary, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.intp).reshape(-1, 2)
    tab = np.asarray(tables, dtype=np.float64)
    cards = [int(c) for c in cards]
    n, K = un.shape
    E = ends.shape[0]
    msg = np.zeros((E, 2, K))
    bel = un.copy()

    duals = [_dual(bel, tab, msg, ends, cards)]
    prev = duals[0]
    best_value = -math.inf
    best_lab = np.zeros(n, dtype=np.intp)
    sweep = 0
    while sweep < max_iters:
        sweep += 1
        for e in range(E):
            i, j = ends[e]
            ci, cj = cards[i], cards[j]
            ai = bel[i, :ci] - msg[e, 0, :ci]
            aj = bel[j, :cj] - msg[e, 1, :cj]
            t = tab[e, :ci, :cj]
            msg[e, 0, :ci] = 0.5 * (t + aj[None, :]).max(axis=1) - 0.5 * ai
            bel[i, :ci] = ai + msg[e, 0, :ci]
            msg[e, 1, :cj] = 0.5 * (t + ai[:, None]).max(axis=0) - 0.5 * aj
            bel[j, :cj] = aj + msg[e, 1, :cj]

        lab = np.array([int(np.argmax(bel[i, : cards[i]])) for i in range(n)], dtype=np.intp)
        value = 0.0
        for i in range(n):
            value += un[i, lab[i]]
        for e in range(E):
            value += tab[e, lab[ends[e, 0]], lab[ends[e, 1]]]
        if value > best_value:
            best_value = value
            best_lab = lab

        cur = _dual(bel, tab, msg, ends, cards)
        duals.append(cur)
        if prev - cur < tol:
            break
        prev = cur
    return best_lab.copy(), best_value, duals, sweep
