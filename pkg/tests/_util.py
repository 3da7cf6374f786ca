"""Random model builders shared by the test modules."""
import itertools

import numpy as np

from perturbmap.model import PairwiseModel, ising_pair, ising_unary


def random_tree(n, seed, card=2, scale=1.0):
    """Random-parent tree over ``n`` variables with Gaussian tables."""
    rng = np.random.default_rng(seed)
    unary = [rng.normal(0, scale, card) for _ in range(n)]
    edges = [(int(rng.integers(0, v)), v, rng.normal(0, scale, (card, card))) for v in range(1, n)]
    return PairwiseModel([card] * n, unary, edges)


def random_chain(n, seed, card=2, scale=1.0):
    rng = np.random.default_rng(seed)
    unary = [rng.normal(0, scale, card) for _ in range(n)]
    edges = [(v, v + 1, rng.normal(0, scale, (card, card))) for v in range(n - 1)]
    return PairwiseModel([card] * n, unary, edges)


def ising(fields, couplings):
    """Binary model from Ising fields and ``{(i, j): w}`` couplings."""
    return PairwiseModel(
        [2] * len(fields),
        [ising_unary(f) for f in fields],
        [(i, j, ising_pair(w)) for (i, j), w in couplings.items()],
    )


def brute_log_z(model):
    """Independent log Z by itertools enumeration (no shared code with the oracle)."""
    vals = []
    for y in itertools.product(*(range(c) for c in model.cards)):
        v = sum(model.unary[i][y[i]] for i in range(model.num_vars))
        v += sum(t[y[i], y[j]] for i, j, t in model.edges)
        vals.append(v)
    vals = np.array(vals)
    m = vals[np.isfinite(vals)].max()
    return m + np.log(np.exp(vals - m).sum())
