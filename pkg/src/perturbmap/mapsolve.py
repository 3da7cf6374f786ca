"""MAP solvers behind one interface.

``brute``
    exhaustive enumeration, any enumerable model.
``graphcut``
    exact min-cut reduction for binary supermodular models.
``mplp``
    block coordinate descent on the pairwise LP dual; returns the best
    decoded labelling and a certified upper bound on the MAP value.

The array-level entry points (``*_arrays``) take padded
``(unary, ends, tables)`` triples so perturbed copies of a model can be
solved without re-validating a :class:`PairwiseModel` per draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import FORBIDDEN, PairwiseModel
from .oracle import DEFAULT_MAX_STATES, exact_map

METHODS = ("brute", "graphcut", "mplp")

# Tiny negative pairwise capacities produced by float rounding are clamped.
CAPACITY_CLAMP = 1e-12


class SolverPreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class MapResult:
    assignment: tuple[int, ...]
    value: float
    solver_id: str
    iterations: int = 0
    dual_bound: float | None = None
    duals: tuple[float, ...] = ()


@dataclass(frozen=True)
class FlowNetwork:
    num_nodes: int
    tails: np.ndarray
    heads: np.ndarray
    caps: np.ndarray
    source: int
    sink: int

    def __post_init__(self):
        tails = np.asarray(self.tails, dtype=np.intp)
        heads = np.asarray(self.heads, dtype=np.intp)
        caps = np.asarray(self.caps, dtype=np.float64)
        if not (tails.shape == heads.shape == caps.shape):
            raise ValueError("arc arrays must have equal length")
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        for v in (self.source, self.sink):
            if not 0 <= v < self.num_nodes:
                raise ValueError(f"terminal {v} out of range")
        if tails.size and (
            tails.min() < 0 or heads.min() < 0
            or max(tails.max(), heads.max()) >= self.num_nodes
        ):
            raise ValueError("arc endpoint out of range")
        if not np.isfinite(caps).all() or (caps < 0).any():
            raise ValueError("capacities must be finite and non-negative")
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "caps", caps)

    def cut_capacity(self, source_side: np.ndarray) -> float:
        crossing = source_side[self.tails] & ~source_side[self.heads]
        return float(self.caps[crossing].sum())


def max_flow(network: FlowNetwork) -> tuple[float, np.ndarray]:
    """Maximum flow value and the source side of a minimum cut (bool mask)."""
    eps = 1e-12 * max(1.0, float(network.caps.max(initial=0.0)))
    value, side = kernels.maxflow(
        network.num_nodes, network.tails, network.heads, network.caps,
        network.source, network.sink, eps,
    )
    return float(value), np.asarray(side, dtype=bool)


def score_arrays(unary: np.ndarray, ends: np.ndarray, tables: np.ndarray, labels) -> float:
    """Score of ``labels`` under padded arrays; same summation order as ``score``."""
    total = 0.0
    for i in range(unary.shape[0]):
        total += unary[i, labels[i]]
    for e in range(ends.shape[0]):
        total += tables[e, labels[ends[e, 0]], labels[ends[e, 1]]]
    return float(total)


# -- graph cuts --------------------------------------------------------------


def check_graphcut(model: PairwiseModel) -> None:
    if not model.is_binary():
        raise SolverPreconditionError("graphcut requires binary variables")
    if not model.is_supermodular(CAPACITY_CLAMP):
        raise SolverPreconditionError(
            "graphcut requires finite supermodular edge tables "
            "(t00 + t11 >= t01 + t10)"
        )
    if any(np.isneginf(t).any() for t in model.unary):
        raise SolverPreconditionError("graphcut requires finite unary tables")


def graphcut_network(unary: np.ndarray, ends: np.ndarray, tables: np.ndarray) -> FlowNetwork:
    """Min-cut network whose source side encodes label 0.

    Energies are negated scores.  Edge energy ``(A, B, C, D)`` over
    ``(00, 01, 10, 11)`` splits as ``A + (C-A) x_i + (D-C) x_j +
    (B+C-A-D)(1-x_i) x_j``; the last coefficient is the arc ``i -> j``.
    """
    n = unary.shape[0]
    s, t = n, n + 1
    energy_u = -unary[:, :2]
    a = energy_u[:, 1] - energy_u[:, 0]
    tails, heads, caps = [], [], []
    if ends.shape[0]:
        en = -tables[:, :2, :2]
        A, B, C, D = en[:, 0, 0], en[:, 0, 1], en[:, 1, 0], en[:, 1, 1]
        a = a.copy()
        np.add.at(a, ends[:, 0], C - A)
        np.add.at(a, ends[:, 1], D - C)
        w = B + C - A - D
        if (w < -CAPACITY_CLAMP).any():
            raise SolverPreconditionError("edge table is not supermodular")
        w = np.maximum(w, 0.0)
        keep = w > 0
        tails.append(ends[keep, 0])
        heads.append(ends[keep, 1])
        caps.append(w[keep])
    idx = np.arange(n)
    pos, neg = a > 0, a < 0
    tails += [np.full(pos.sum(), s), idx[neg]]
    heads += [idx[pos], np.full(neg.sum(), t)]
    caps += [a[pos], -a[neg]]
    return FlowNetwork(
        n + 2, np.concatenate(tails), np.concatenate(heads), np.concatenate(caps), s, t
    )


def graphcut_arrays(unary: np.ndarray, ends: np.ndarray, tables: np.ndarray) -> np.ndarray:
    net = graphcut_network(unary, ends, tables)
    _, side = max_flow(net)
    return np.where(side[: unary.shape[0]], 0, 1).astype(np.intp)


def graphcut_map(model: PairwiseModel) -> MapResult:
    """Exact MAP of a binary supermodular model via max-flow."""
    check_graphcut(model)
    un, ends, tabs = model.arrays
    labels = graphcut_arrays(un, ends, tabs)
    return MapResult(tuple(int(v) for v in labels), score_arrays(un, ends, tabs, labels), "graphcut", 1)


# -- MPLP --------------------------------------------------------------------

DEFAULT_MPLP_ITERS = 1000
DEFAULT_MPLP_TOL = 1e-8


def finite_surrogate(unary: np.ndarray, tables: np.ndarray, cards) -> tuple[np.ndarray, np.ndarray]:
    """Replace FORBIDDEN entries with a value below every feasible score."""
    fin_u = unary[np.isfinite(unary)]
    fin_t = tables[np.isfinite(tables)]
    bound = np.abs(fin_u).sum() + np.abs(fin_t).sum()
    low = -(2.0 * bound + 1e3)
    return np.where(np.isfinite(unary), unary, low), np.where(np.isfinite(tables), tables, low)


def mplp_arrays(unary, ends, tables, cards, max_iters=DEFAULT_MPLP_ITERS, tol=DEFAULT_MPLP_TOL):
    """Run MPLP on padded arrays; returns ``(labels, duals, sweeps)``."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    su, st = finite_surrogate(unary, tables, cards)
    labels, _, duals, sweeps = kernels.mplp(su, ends, st, np.asarray(cards, dtype=np.intp), max_iters, tol)
    return np.asarray(labels, dtype=np.intp), [float(d) for d in duals], int(sweeps)


def mplp_map(model: PairwiseModel, max_iters: int = DEFAULT_MPLP_ITERS, tol: float = DEFAULT_MPLP_TOL) -> MapResult:
    """Best decoded labelling plus the final LP dual value as an upper bound."""
    un, ends, tabs = model.arrays
    labels, duals, sweeps = mplp_arrays(un, ends, tabs, model.cards, max_iters, tol)
    value = score_arrays(un, ends, tabs, labels)
    return MapResult(
        tuple(int(v) for v in labels), value, "mplp", sweeps, min(duals), tuple(duals)
    )


# -- dispatch ----------------------------------------------------------------


def brute_map(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> MapResult:
    labels, value = exact_map(model, max_states)
    return MapResult(labels, value, "brute", 1)


def solve_map(model: PairwiseModel, method: str = "brute", **options) -> MapResult:
    """Dispatch to one of :data:`METHODS`."""
    if method == "brute":
        return brute_map(model, **options)
    if method == "graphcut":
        return graphcut_map(model)
    if method == "mplp":
        return mplp_map(model, **options)
    raise ValueError(f"unknown MAP method {method!r}; expected one of {METHODS}")


def auto_method(model: PairwiseModel, brute_cap: int = 2**12) -> str:
    """graphcut when applicable, brute for tiny models, otherwise mplp."""
    if model.is_supermodular() and not any(np.isneginf(t).any() for t in model.unary):
        return "graphcut"
    if model.num_states <= brute_cap:
        return "brute"
    return "mplp"


__all__ = [
    "FORBIDDEN", "FlowNetwork", "MapResult", "METHODS", "SolverPreconditionError",
    "auto_method", "brute_map", "graphcut_map", "max_flow", "mplp_map", "solve_map",
]
