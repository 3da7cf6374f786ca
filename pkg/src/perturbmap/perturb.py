"""Gumbel perturbations and the exact, exponential-size estimators.

These routines perturb every joint state (or every branch of the
sequential recursion) independently.  They only scale to tiny models and
serve as statistical ground truth for the efficient estimators in
:mod:`perturbmap.bounds`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import FORBIDDEN, PairwiseModel, score
from .oracle import DEFAULT_MAX_STATES, EmptyDomainError, all_scores
from .rng import EULER_GAMMA, derive_rng, gumbel

GUMBEL_VARIANCE = math.pi**2 / 6


@dataclass(frozen=True)
class GumbelSampler:
    seed: int
    euler_constant: float = EULER_GAMMA

    def cdf(self, t):
        return np.exp(-np.exp(-(np.asarray(t) + self.euler_constant)))


def sample_gumbel(sampler: GumbelSampler, count: int) -> np.ndarray:
    """The first ``count`` draws of the sampler's stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    draws = gumbel(derive_rng(sampler.seed), count)
    if sampler.euler_constant != EULER_GAMMA:
        draws = draws + EULER_GAMMA - sampler.euler_constant
    return draws


@dataclass(frozen=True)
class EstimateReport:
    """Per-draw values of a Monte-Carlo estimator and their summary."""

    samples: np.ndarray
    mean: float
    std_error: float
    m: int
    seed: int
    estimator_id: str
    settings: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, seed: int, estimator_id: str, **settings) -> "EstimateReport":
        samples = np.asarray(samples, dtype=np.float64)
        samples.setflags(write=False)
        m = samples.size
        if m < 1:
            raise ValueError("a report needs at least one sample")
        mean = float(samples.mean())
        se = float(samples.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
        return cls(samples, mean, se, m, seed, estimator_id, settings)


def _check_nonempty(scores: np.ndarray) -> None:
    if scores.max() == FORBIDDEN:
        raise EmptyDomainError("model has an empty domain")


def full_perturbation_draw(scores: np.ndarray, seed: int, j: int) -> np.ndarray:
    """Perturbed scores ``phi(y) + gamma_j(y)`` for draw ``j``.

    One Gumbel per joint state, indexed in enumeration order, including
    forbidden states so the layout does not depend on the domain.
    """
    return scores + gumbel(derive_rng(seed, j), scores.size)


def estimate_logZ_full(
    model: PairwiseModel, m: int, seed: int, max_states: int = DEFAULT_MAX_STATES
) -> EstimateReport:
    """Mean of ``max_y {phi(y) + gamma(y)}``, an unbiased estimate of log Z."""
    scores = all_scores(model, max_states)
    _check_nonempty(scores)
    draws = [full_perturbation_draw(scores, seed, j).max() for j in range(m)]
    return EstimateReport.from_samples(draws, seed, "full")


def gibbs_via_argmax(
    model: PairwiseModel, m: int, seed: int, max_states: int = DEFAULT_MAX_STATES
) -> np.ndarray:
    """Empirical frequencies of ``argmax_y {phi(y) + gamma(y)}`` over ``m`` draws.

    Returned as a dense vector over joint states in enumeration order; it
    uses the same draws as :func:`estimate_logZ_full` at equal seed.
    """
    scores = all_scores(model, max_states)
    _check_nonempty(scores)
    counts = np.zeros(scores.size)
    for j in range(m):
        counts[np.argmax(full_perturbation_draw(scores, seed, j))] += 1
    return counts / m


SEQUENTIAL_MAX_VARS = 6
SEQUENTIAL_MAX_CARD = 3


def estimate_logZ_sequential(model: PairwiseModel, m_per_level: int, seed: int) -> float:
    """Nested expectation-maximisation estimate of log Z.

    At level ``i`` with fixed prefix ``y_1..y_{i-1}`` the inner value for
    each ``y_i`` is estimated recursively once, then
    ``E max_{y_i} {inner(y_i) + gamma_i(y_i)}`` is replaced by the mean over
    ``m_per_level`` fresh Gumbel vectors drawn from ``hash(seed, i, prefix)``.
    """
    n = model.num_vars
    if n > SEQUENTIAL_MAX_VARS or model.max_card > SEQUENTIAL_MAX_CARD:
        raise ValueError(
            f"sequential estimator is limited to n <= {SEQUENTIAL_MAX_VARS} "
            f"and cards <= {SEQUENTIAL_MAX_CARD}"
        )
    if m_per_level < 1:
        raise ValueError("m_per_level must be >= 1")

    def level(prefix: tuple[int, ...]) -> float:
        i = len(prefix)
        if i == n:
            return score(model, prefix)
        inner = np.array([level(prefix + (k,)) for k in range(model.cards[i])])
        if inner.max() == FORBIDDEN:
            return FORBIDDEN
        g = gumbel(derive_rng(seed, i, *prefix), (m_per_level, inner.size))
        return float((inner + g).max(axis=1).mean())

    value = level(())
    if value == FORBIDDEN:
        raise EmptyDomainError("model has an empty domain")
    return value
