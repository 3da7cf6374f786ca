"""Efficient log-partition estimates from low-dimensional perturbations.

* :func:`upper_bound_logZ` averages perturbed MAP values where each subset
  ``alpha`` of a covering family carries its own Gumbel table.
* :func:`approx_logZ_inflation` solves one large MAP problem over ``m``
  copies of every variable with per-copy perturbations.
* :func:`lower_bound_logZ` combines perturbed MAP values with the Gumbel
  cumulant generating function over a grid of noise scales.

Draw ``j`` of every estimator reads its noise from ``hash(seed, j)``, laid
out subset by subset, each subset's table row-major over its variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mapsolve import (
    SolverPreconditionError,
    auto_method,
    check_graphcut,
    graphcut_arrays,
    mplp_arrays,
    score_arrays,
)
from .model import FORBIDDEN, PairwiseModel, ising_pair
from .oracle import DEFAULT_MAX_STATES, all_scores, state_labels
from .perturb import EstimateReport
from .rng import EULER_GAMMA, derive_rng, gumbel


# -- perturbation families --------------------------------------------------


@dataclass(frozen=True)
class PerturbationScheme:
    """Which subsets ``alpha`` receive i.i.d. Gumbel tables.

    ``variant`` is ``"full"`` (one subset holding every variable),
    ``"unary"`` (every singleton) or ``"blocks"`` (explicit subsets).
    """

    variant: str
    blocks: tuple[tuple[int, ...], ...] = ()

    @classmethod
    def full(cls) -> "PerturbationScheme":
        return cls("full")

    @classmethod
    def unary(cls) -> "PerturbationScheme":
        return cls("unary")

    @classmethod
    def from_blocks(cls, blocks) -> "PerturbationScheme":
        return cls("blocks", tuple(tuple(int(v) for v in b) for b in blocks))

    def subsets(self, model: PairwiseModel) -> tuple[tuple[int, ...], ...]:
        n = model.num_vars
        if self.variant == "full":
            return (tuple(range(n)),)
        if self.variant == "unary":
            return tuple((i,) for i in range(n))
        if self.variant != "blocks":
            raise ValueError(f"unknown perturbation variant {self.variant!r}")
        for b in self.blocks:
            if not b:
                raise ValueError("perturbation blocks must be non-empty")
            if len(set(b)) != len(b) or min(b) < 0 or max(b) >= n:
                raise ValueError(f"invalid block {b} for {n} variables")
        covered = set().union(*map(set, self.blocks)) if self.blocks else set()
        if covered != set(range(n)):
            raise ValueError("perturbation blocks must cover every variable")
        return self.blocks

    def sizes(self, model: PairwiseModel) -> list[int]:
        return [math.prod(model.cards[v] for v in b) for b in self.subsets(model)]


def draw_noise(seed: int, j: int, size: int) -> np.ndarray:
    return gumbel(derive_rng(seed, j), size)


class PerturbedSolver:
    """Solves ``max_y {phi(y) + scale * sum_alpha gamma_alpha(y_alpha)}``.

    ``solve`` returns ``(value, labels, dual)``; ``dual`` is an upper bound
    on the perturbed maximum for MPLP and equals ``value`` for the exact
    solvers.
    """

    def __init__(self, model: PairwiseModel, scheme: PerturbationScheme, method: str = "auto",
                 max_states: int = DEFAULT_MAX_STATES, mplp_iters: int = 1000, mplp_tol: float = 1e-8):
        self.model = model
        self.scheme = scheme
        self.subsets = scheme.subsets(model)
        sizes = scheme.sizes(model)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        self.noise_size = int(self.offsets[-1])
        if method == "auto":
            method = "brute" if scheme.variant == "full" else auto_method(model)
        self.method = method
        self.mplp_iters, self.mplp_tol = mplp_iters, mplp_tol

        if method not in ("brute", "graphcut", "mplp"):
            raise ValueError(f"unknown MAP method {method!r}")
        if method == "graphcut":
            check_graphcut(model)
        un, ends, tabs = model.arrays
        ends = [tuple(e) for e in ends.tolist()]
        tabs = list(tabs)
        self.unary_slots, self.pair_slots = [], []
        # brute also keeps array slots when every subset is a singleton, so
        # reported values use the same summation order as the other solvers
        self.arrays_exact = all(len(b) == 1 for b in self.subsets)
        for b, off in zip(self.subsets, self.offsets):
            if len(b) == 1:
                self.unary_slots.append((b[0], int(off)))
            elif len(b) == 2 and method == "mplp":
                p, q = sorted(b)
                if (p, q) not in ends:
                    ends.append((p, q))
                    tabs.append(np.zeros((model.max_card, model.max_card)))
                cards = (model.cards[b[0]], model.cards[b[1]])
                self.pair_slots.append((ends.index((p, q)), int(off), b[0] > b[1], cards))
            elif method != "brute":
                raise SolverPreconditionError(
                    f"{method} cannot absorb a perturbation block of size {len(b)}"
                )
        self.unary = np.array(un)
        self.ends = np.array(ends, dtype=np.intp).reshape(-1, 2)
        self.tables = np.array(tabs).reshape(-1, model.max_card, model.max_card)

        if method == "brute":
            if model.num_states > max_states:
                raise SolverPreconditionError("brute solver: state space exceeds cap")
            self.labels = state_labels(model)
            self.base = all_scores(model, max_states)
            cols = []
            for b, off in zip(self.subsets, self.offsets):
                cards = [model.cards[v] for v in b]
                cols.append(np.ravel_multi_index(self.labels[:, list(b)].T, cards) + off)
            self.noise_index = np.stack(cols, axis=1)

    def perturbed_arrays(self, noise: np.ndarray, scale: float = 1.0):
        un = self.unary.copy()
        for v, off in self.unary_slots:
            c = self.model.cards[v]
            un[v, :c] += scale * noise[off:off + c]
        tabs = self.tables
        if self.pair_slots:
            tabs = tabs.copy()
            for e, off, flip, (ca, cb) in self.pair_slots:
                g = noise[off:off + ca * cb].reshape(ca, cb)
                if flip:
                    g = g.T
                tabs[e, : g.shape[0], : g.shape[1]] += scale * g
        return un, self.ends, tabs

    def solve(self, noise: np.ndarray | None, scale: float = 1.0):
        if self.method == "brute":
            if noise is None:
                vals = self.base
            else:
                vals = self.base + scale * noise[self.noise_index].sum(axis=1)
            k = int(np.argmax(vals))
            labels = self.labels[k]
            value = float(vals[k])
            if noise is not None and self.arrays_exact:
                value = score_arrays(*self.perturbed_arrays(noise, scale), labels)
            return value, labels, value
        if noise is None:
            un, ends, tabs = self.unary, self.ends, self.tables
        else:
            un, ends, tabs = self.perturbed_arrays(noise, scale)
        if self.method == "graphcut":
            labels = graphcut_arrays(un, ends, tabs)
            value = score_arrays(un, ends, tabs, labels)
            return value, labels, value
        labels, duals, _ = mplp_arrays(un, ends, tabs, self.model.cards, self.mplp_iters, self.mplp_tol)
        return score_arrays(un, ends, tabs, labels), labels, min(duals)


# -- upper bound ---------------------------------------------------------------

DEFAULT_SAMPLES = 100


def upper_bound_logZ(model: PairwiseModel, scheme: PerturbationScheme | None = None,
                     solver: str = "auto", m: int = DEFAULT_SAMPLES, seed: int = 0,
                     mplp_value: str = "dual", **solver_options) -> EstimateReport:
    """Mean of ``m`` draws of ``max_y {phi(y) + sum_alpha gamma_alpha(y_alpha)}``.

    With an MPLP solver each draw records the certified dual value by
    default (``mplp_value="dual"``), which keeps the sample mean an upper
    bound even when the LP relaxation is not tight.
    """
    scheme = scheme or PerturbationScheme.unary()
    ps = PerturbedSolver(model, scheme, solver, **solver_options)
    draws = []
    for j in range(m):
        value, _, dual = ps.solve(draw_noise(seed, j, ps.noise_size))
        draws.append(dual if (ps.method == "mplp" and mplp_value == "dual") else value)
    return EstimateReport.from_samples(
        draws, seed, "upper_bound", scheme=scheme.variant, solver=ps.method
    )


# -- inflation -------------------------------------------------------------------


@dataclass(frozen=True)
class InflationConfig:
    m: int
    variant: str = "exact_average"
    perturbation_scale: float | None = None
    solver: str = "auto"
    reports: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("inflation needs m >= 1 copies")
        if self.variant not in ("exact_average", "tiled_grid"):
            raise ValueError(f"unknown inflation variant {self.variant!r}")
        if self.variant == "tiled_grid" and math.isqrt(self.m) ** 2 != self.m:
            raise ValueError("tiled_grid needs a square number of copies")
        if self.reports < 1:
            raise ValueError("reports must be >= 1")

    @property
    def scale(self) -> float:
        if self.perturbation_scale is not None:
            return float(self.perturbation_scale)
        return 1.0 / self.m if self.variant == "exact_average" else 1.0


def inflate_exact_average(model: PairwiseModel, m: int):
    """Arrays of the copy model: ``n*m`` variables, copy ``j`` of ``i`` at ``i*m + j``.

    Unary tables are ``theta_i / m``; every original edge becomes the
    complete bipartite set of copy edges with tables ``theta_ij / m**2``.
    """
    un, ends, tabs = model.arrays
    big_un = np.repeat(un / m, m, axis=0)
    jj = np.arange(m)
    ja, jb = np.meshgrid(jj, jj, indexing="ij")
    ja, jb = ja.reshape(-1), jb.reshape(-1)
    big_ends = np.concatenate(
        [np.stack([a * m + ja, b * m + jb], axis=1) for a, b in ends], axis=0
    ).astype(np.intp) if ends.shape[0] else np.zeros((0, 2), dtype=np.intp)
    big_tabs = np.repeat(tabs / (m * m), m * m, axis=0)
    cards = np.repeat(np.asarray(model.cards), m)
    return big_un, big_ends, big_tabs, cards


def seam_strength(model: PairwiseModel, v: int) -> float:
    """Agreement weight for joining two copies of ``v`` across a tile seam."""
    best = 0.0
    for (i, j), k in model.edge_index.items():
        if v in (i, j):
            t = model.edges[k][2]
            best = max(best, abs(t[0, 0] + t[1, 1] - t[0, 1] - t[1, 0]) / 4.0)
    return best


def inflate_tiled_grid(model: PairwiseModel, m: int):
    """Mirror-tiled ``T x T`` copy of a grid model, ``T**2 == m``.

    Odd tiles are reflected so every big-grid edge inside a tile is a copy
    of an original edge and every seam edge joins two copies of the same
    variable.  Returns arrays plus a boolean mask of seam edges.
    """
    if model.grid is None:
        raise ValueError("tiled_grid inflation requires a grid-structured model")
    if not model.is_binary():
        raise ValueError("tiled_grid inflation supports binary models only")
    rows, cols = model.grid
    T = math.isqrt(m)
    R, C = rows * T, cols * T

    def orig(rr, cc):
        a, r = divmod(rr, rows)
        b, c = divmod(cc, cols)
        if a % 2:
            r = rows - 1 - r
        if b % 2:
            c = cols - 1 - c
        return r * cols + c

    un, _, _ = model.arrays
    idx = np.array([orig(rr, cc) for rr in range(R) for cc in range(C)], dtype=np.intp)
    big_un = un[idx].copy()
    ends, tabs, seam = [], [], []
    zero = np.zeros((2, 2))
    for rr in range(R):
        for cc in range(C):
            u = rr * C + cc
            for v, nb in ((u + 1, cc + 1 < C), (u + C, rr + 1 < R)):
                if not nb:
                    continue
                p, q = idx[u], idx[v]
                if p == q:
                    tabs.append(ising_pair(seam_strength(model, p)))
                    seam.append(True)
                else:
                    k = model.edge_index.get((min(p, q), max(p, q)))
                    t = zero if k is None else model.edges[k][2]
                    tabs.append(t if p < q else t.T)
                    seam.append(False)
                ends.append((u, v))
    big_ends = np.array(ends, dtype=np.intp).reshape(-1, 2)
    big_tabs = np.array(tabs).reshape(-1, 2, 2)
    return big_un, big_ends, big_tabs, np.full(R * C, 2), np.array(seam, dtype=bool)


def _inflated_method(model: PairwiseModel, solver: str, num_vars: int, cards) -> str:
    if solver != "auto":
        return solver
    if model.is_supermodular():
        return "graphcut"
    if math.prod(int(c) for c in cards) <= 2**12:
        return "brute"
    return "mplp"


def _solve_arrays(method: str, un, ends, tabs, cards) -> np.ndarray:
    if method == "graphcut":
        return graphcut_arrays(un, ends, tabs)
    if method == "mplp":
        labels, _, _ = mplp_arrays(un, ends, tabs, cards)
        return labels
    if method == "brute":
        from .model import PairwiseModel as _PM
        from .oracle import exact_map

        big = _PM(
            cards,
            [un[i, : cards[i]] for i in range(un.shape[0])],
            [(a, b, tabs[k, : cards[a], : cards[b]]) for k, (a, b) in enumerate(ends)],
            check_domain=False,
        )
        return np.array(exact_map(big)[0], dtype=np.intp)
    raise ValueError(f"unknown MAP method {method!r}")


def approx_logZ_inflation(model: PairwiseModel, config: InflationConfig, seed: int = 0) -> EstimateReport:
    """Single-MAP approximation of log Z over an inflated copy model.

    Each report draw ``r`` perturbs every copy variable with fresh Gumbels
    from ``hash(seed, r)`` scaled by ``config.scale`` and records the MAP
    value (exact_average) or the seam-free MAP objective divided by ``m``
    (tiled_grid).
    """
    m, beta = config.m, config.scale
    if config.variant == "exact_average":
        un, ends, tabs, cards = inflate_exact_average(model, m)
        seam = None
    else:
        un, ends, tabs, cards, seam = inflate_tiled_grid(model, m)
    method = _inflated_method(model, config.solver, un.shape[0], cards)
    if method == "graphcut" and not model.is_supermodular():
        raise SolverPreconditionError("graphcut requires a supermodular model")
    offsets = np.concatenate([[0], np.cumsum(cards)]).astype(np.intp)
    draws = []
    for r in range(config.reports):
        noise = draw_noise(seed, r, int(offsets[-1]))
        pun = un.copy()
        for v in range(un.shape[0]):
            pun[v, : cards[v]] += beta * noise[offsets[v]:offsets[v + 1]]
        labels = _solve_arrays(method, pun, ends, tabs, cards)
        if seam is None:
            draws.append(score_arrays(pun, ends, tabs, labels))
        else:
            keep = ~seam
            value = score_arrays(pun, ends[keep], tabs[keep], labels)
            draws.append(value / m)
    return EstimateReport.from_samples(
        draws, seed, "inflation", variant=config.variant, copies=m,
        perturbation_scale=beta, solver=method,
    )


# -- lower bound ---------------------------------------------------------------


def gumbel_cgf(lam: float, euler_constant: float = EULER_GAMMA) -> float:
    """``log E exp(lam * gamma)`` for zero-mean Gumbel noise, ``0 <= lam < 1``."""
    if lam >= 1.0:
        return math.inf
    if lam < 0:
        raise ValueError("the cumulant is only used for lam >= 0")
    return math.lgamma(1.0 - lam) - lam * euler_constant


def logmeanexp(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    top = x.max()
    if top == FORBIDDEN:
        return FORBIDDEN
    return float(top + math.log(np.mean(np.exp(x - top))))


def jackknife_logmeanexp(x) -> float:
    """Delete-one jackknife standard error of :func:`logmeanexp`."""
    x = np.asarray(x, dtype=np.float64)
    m = x.size
    if m < 2:
        return math.nan
    top = x.max()
    w = np.exp(x - top)
    rest = np.maximum(w.sum() - w, np.finfo(float).tiny)
    loo = top + np.log(rest / (m - 1))
    return float(math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2)))


DEFAULT_LAMBDAS = tuple(round(0.1 * k, 1) for k in range(10))


@dataclass(frozen=True)
class LowerBoundConfig:
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    m: int = 200

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        if not lams or 0.0 not in lams:
            raise ValueError("lambda grid must contain 0")
        if list(lams) != sorted(lams):
            raise ValueError("lambda grid must be sorted")
        if lams[0] < 0 or lams[-1] >= 1.0:
            raise ValueError("lambda grid must lie in [0, 1); the Gumbel cumulant diverges at 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "lambdas", lams)


@dataclass(frozen=True)
class LowerBoundReport:
    """Per-lambda lower bounds; ``bound`` is the best of them."""

    bound: float
    std_error: float
    best_lambda: float
    lambdas: tuple[float, ...]
    values: tuple[float, ...]
    std_errors: tuple[float, ...]
    map_value: float
    m: int
    seed: int
    estimator_id: str = "lower_bound"
    settings: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return self.bound


def lower_bound_logZ(model: PairwiseModel, scheme: PerturbationScheme | None = None,
                     solver: str = "auto", config: LowerBoundConfig | None = None,
                     seed: int = 0, **solver_options) -> LowerBoundReport:
    """``max_lam [logmeanexp_j max_y {phi + lam * sum gamma} - |A| K(lam)]``.

    Draws are shared across the lambda grid (common random numbers).  The
    lam = 0 entry is the unperturbed MAP value, computed once.  MPLP draws
    use the decoded primal value, which can only lower the estimate.
    """
    scheme = scheme or PerturbationScheme.unary()
    config = config or LowerBoundConfig()
    ps = PerturbedSolver(model, scheme, solver, **solver_options)
    n_subsets = len(ps.subsets)
    map_value = ps.solve(None)[0]
    noises = None
    values, ses = [], []
    for lam in config.lambdas:
        if lam == 0.0:
            values.append(map_value)
            ses.append(0.0)
            continue
        if noises is None:
            noises = [draw_noise(seed, j, ps.noise_size) for j in range(config.m)]
        draws = np.array([ps.solve(g, lam)[0] for g in noises])
        values.append(logmeanexp(draws) - n_subsets * gumbel_cgf(lam))
        ses.append(jackknife_logmeanexp(draws))
    k = int(np.argmax(values))
    return LowerBoundReport(
        float(values[k]), float(ses[k]), config.lambdas[k], config.lambdas,
        tuple(float(v) for v in values), tuple(float(s) for s in ses),
        float(map_value), config.m, seed,
        settings={"scheme": scheme.variant, "solver": ps.method},
    )
