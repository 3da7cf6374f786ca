"""Sum-product and tree-reweighted belief propagation estimates of log Z.

Messages live in log space and are renormalised after every update.
Tree-reweighted BP with all edge weights equal to one is ordinary loopy
BP, so a single message-passing routine serves both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp, xlogy

from .model import PairwiseModel

# Stand-in for FORBIDDEN entries and padding labels in log space.
LOG_SURROGATE = -1e6

DEFAULT_DAMPING = 0.5
DEFAULT_MAX_ITERS = 2000
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class BPResult:
    log_z: float
    converged: bool
    iterations: int
    used_surrogate: bool
    node_beliefs: tuple[np.ndarray, ...] = ()

    def __iter__(self):
        # unpacks as (estimate, converged)
        return iter((self.log_z, self.converged))


def _log_tables(model: PairwiseModel):
    un, ends, tabs = model.arrays
    used = bool(np.isneginf(un).sum() > sum(model.max_card - c for c in model.cards))
    used = used or any(np.isneginf(t).any() for _, _, t in model.edges)
    un = np.where(np.isfinite(un), un, LOG_SURROGATE)
    tabs = np.where(np.isfinite(tabs), tabs, LOG_SURROGATE)
    return un, ends, tabs, used


def _normalize(logv: np.ndarray, axes) -> np.ndarray:
    return logv - logsumexp(logv, axis=axes, keepdims=True)


def reweighted_bp(model: PairwiseModel, rho=None, max_iters: int = DEFAULT_MAX_ITERS,
                  damping: float = DEFAULT_DAMPING, tol: float = DEFAULT_TOL) -> BPResult:
    """Damped synchronous (tree-reweighted) sum-product message passing.

    ``rho`` holds one edge appearance probability per model edge; ``None``
    means all ones (ordinary BP).  The returned estimate is evaluated from
    the final messages whether or not they converged.
    """
    un, ends, tabs, used = _log_tables(model)
    n, K = un.shape
    E = ends.shape[0]
    rho = np.ones(E) if rho is None else np.asarray(rho, dtype=np.float64)
    if rho.shape != (E,) or (rho <= 0).any() or (rho > 1 + 1e-12).any():
        raise ValueError("edge weights must lie in (0, 1], one per edge")

    # directed edge 2k runs i -> j, 2k+1 runs j -> i; tables indexed [source, target]
    src = ends.reshape(-1)
    dst = ends[:, ::-1].reshape(-1)
    rev = np.arange(2 * E) ^ 1
    rho_d = np.repeat(rho, 2)
    tab_d = np.empty((2 * E, K, K))
    tab_d[0::2] = tabs
    tab_d[1::2] = tabs.transpose(0, 2, 1)
    scaled = tab_d / rho_d[:, None, None]

    logm = _normalize(np.where(un[dst] > LOG_SURROGATE, 0.0, LOG_SURROGATE), 1) if E else np.zeros((0, K))

    def pre_beliefs(logm):
        acc = un.copy()
        np.add.at(acc, dst, rho_d[:, None] * logm)
        return acc

    converged = E == 0
    it = 0
    while not converged and it < max_iters:
        it += 1
        A = pre_beliefs(logm)
        inner = A[src] - logm[rev]
        new = _normalize(logsumexp(scaled + inner[:, :, None], axis=1), 1)
        new = _normalize(damping * logm + (1.0 - damping) * new, 1)
        delta = np.abs(np.exp(new) - np.exp(logm)).max()
        logm = new
        converged = delta < tol

    A = pre_beliefs(logm)
    log_b = _normalize(A, 1)
    b = np.exp(log_b)
    log_z = float(np.sum(b * un)) + float(-xlogy(b, b).sum())
    if E:
        i, j = ends[:, 0], ends[:, 1]
        lp = (tabs / rho[:, None, None]
              + (A[i] - logm[1::2])[:, :, None]
              + (A[j] - logm[0::2])[:, None, :])
        lp = _normalize(lp, (1, 2))
        bp = np.exp(lp)
        mutual = (xlogy(bp, bp) - bp * (log_b[i][:, :, None] + log_b[j][:, None, :]))
        mutual = np.where(bp > 0, mutual, 0.0).sum(axis=(1, 2))
        log_z += float(np.sum(bp * tabs)) - float(np.sum(rho * mutual))
    beliefs = tuple(b[k, : model.cards[k]] for k in range(n))
    return BPResult(log_z, bool(converged), it, used, beliefs)


def bp_log_partition(model: PairwiseModel, max_iters: int = DEFAULT_MAX_ITERS,
                     damping: float = DEFAULT_DAMPING, tol: float = DEFAULT_TOL) -> BPResult:
    """Bethe estimate of log Z from loopy sum-product BP."""
    return reweighted_bp(model, None, max_iters, damping, tol)


def trbp_log_partition(model: PairwiseModel, edge_appearance=None, max_iters: int = DEFAULT_MAX_ITERS,
                       damping: float = DEFAULT_DAMPING, tol: float = DEFAULT_TOL) -> BPResult:
    """Tree-reweighted BP; at convergence the estimate upper-bounds log Z.

    ``edge_appearance`` defaults to the uniform spanning-tree probabilities.
    """
    if edge_appearance is None:
        edge_appearance = uniform_spanning_edge_probs(model)
    return reweighted_bp(model, edge_appearance, max_iters, damping, tol)


def uniform_spanning_edge_probs(model: PairwiseModel) -> np.ndarray:
    """``P[e in T]`` for a uniformly random spanning tree ``T``.

    Equal to the effective resistance across ``e`` with unit conductances,
    read off the Laplacian pseudo-inverse.
    """
    n = model.num_vars
    ends = model.arrays[1]
    if ends.shape[0] == 0:
        if n > 1:
            raise ValueError("graph is disconnected")
        return np.zeros(0)
    adj = coo_matrix((np.ones(ends.shape[0]), (ends[:, 0], ends[:, 1])), shape=(n, n))
    if connected_components(adj, directed=False)[0] != 1:
        raise ValueError("graph is disconnected")
    L = np.zeros((n, n))
    i, j = ends[:, 0], ends[:, 1]
    np.add.at(L, (i, j), -1.0)
    np.add.at(L, (j, i), -1.0)
    np.add.at(L, (i, i), 1.0)
    np.add.at(L, (j, j), 1.0)
    Lp = np.linalg.pinv(L, hermitian=True)
    rho = Lp[i, i] + Lp[j, j] - 2.0 * Lp[i, j]
    return np.clip(rho, np.finfo(float).tiny, 1.0)
