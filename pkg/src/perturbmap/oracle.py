"""Exhaustive-enumeration ground truth for small models.

States are visited in row-major order over label vectors with variable 0
varying slowest, i.e. the order of ``np.unravel_index`` on ``model.cards``.
"""
from __future__ import annotations

import math

import numpy as np

from .model import FORBIDDEN, PairwiseModel, score_many

DEFAULT_MAX_STATES = 2**24
CHUNK = 2**16


class StateSpaceTooLarge(ValueError):
    pass


class EmptyDomainError(ValueError):
    pass


def _check_cap(model: PairwiseModel, max_states: int) -> None:
    if model.num_states > max_states:
        raise StateSpaceTooLarge(
            f"{model.num_states} joint states exceed the enumeration cap {max_states}"
        )


def state_labels(model: PairwiseModel, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Label vectors of states ``start..stop`` as an ``(k, n)`` array."""
    stop = model.num_states if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    if model.num_vars == 0:
        return np.zeros((idx.size, 0), dtype=np.intp)
    return np.stack(np.unravel_index(idx, model.cards), axis=1).astype(np.intp)


def iter_scores(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES, chunk: int = CHUNK):
    """Yield ``(start, labels, scores)`` chunks covering every joint state."""
    _check_cap(model, max_states)
    total = model.num_states
    for start in range(0, total, chunk):
        labels = state_labels(model, start, min(start + chunk, total))
        yield start, labels, score_many(model, labels)


def all_scores(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> np.ndarray:
    """phi(y) for every joint state, in enumeration order."""
    return np.concatenate([s for _, _, s in iter_scores(model, max_states)])


def domain_size(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> int:
    return int(sum(np.count_nonzero(s > FORBIDDEN) for _, _, s in iter_scores(model, max_states)))


def exact_log_partition(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> float:
    """log sum_y exp(phi(y)) with a running-max shift."""
    shift = FORBIDDEN
    acc = 0.0
    for _, _, s in iter_scores(model, max_states):
        top = s.max()
        if top == FORBIDDEN:
            continue
        if top > shift:
            acc = acc * math.exp(shift - top) if shift > FORBIDDEN else 0.0
            shift = top
        acc += float(np.exp(s - shift).sum())
    if shift == FORBIDDEN:
        raise EmptyDomainError("model has an empty domain")
    return shift + math.log(acc)


def exact_map(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> tuple[tuple[int, ...], float]:
    """Highest-scoring labelling; ties go to the lexicographically smallest."""
    best_val = FORBIDDEN
    best = None
    for _, labels, s in iter_scores(model, max_states):
        k = int(np.argmax(s))
        if best is None or s[k] > best_val:
            best_val = float(s[k])
            best = labels[k]
    if best_val == FORBIDDEN:
        raise EmptyDomainError("model has an empty domain")
    return tuple(int(v) for v in best), best_val


def exact_map_value(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> float:
    """MAP value, FORBIDDEN for an empty domain (no exception)."""
    return max((float(s.max()) for _, _, s in iter_scores(model, max_states)), default=FORBIDDEN)


def joint_distribution(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> np.ndarray:
    """Gibbs probabilities of every joint state, in enumeration order."""
    s = all_scores(model, max_states)
    top = s.max()
    if top == FORBIDDEN:
        raise EmptyDomainError("model has an empty domain")
    w = np.exp(s - top)
    return w / w.sum()


def exact_marginals(model: PairwiseModel, max_states: int = DEFAULT_MAX_STATES) -> list[np.ndarray]:
    """Per-variable marginals ``p(y_i = k)`` under the Gibbs distribution."""
    log_z = exact_log_partition(model, max_states)
    out = [np.zeros(c) for c in model.cards]
    for _, labels, s in iter_scores(model, max_states):
        p = np.exp(s - log_z)
        for i, c in enumerate(model.cards):
            out[i] += np.bincount(labels[:, i], weights=p, minlength=c)
    # renormalise away the O(1e-16) drift of the streamed log Z
    return [m / m.sum() for m in out]
