"""Conditional random fields trained through perturbed MAP.

The surrogate loss of a labelled pair ``(x, y)`` is

    E_gamma max_yhat {theta . Phi(x, yhat) + sum_alpha gamma_alpha(yhat_alpha)} - theta . Phi(x, y)

Its gradient is the expected feature vector of the perturbed argmax minus
the observed features.  Without perturbations (``scheme=None``) the loss
is the structured-perceptron / margin-free SVM objective.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import PerturbationScheme, PerturbedSolver
from .model import FORBIDDEN, FORMAT_VERSION, PairwiseModel, grid_edges, model_from_text, model_to_text
from .oracle import exact_log_partition, joint_distribution, state_labels
from .rng import derive_rng, gumbel


class TrainingDiverged(RuntimeError):
    pass


# -- feature maps ------------------------------------------------------------


class TableFeatureMap:
    """Linear pairwise features given as explicit per-table feature tensors.

    An input ``x`` is a pair ``(unary_feats, pair_feats)``: ``unary_feats[i]``
    has shape ``(cards[i], d)`` and ``pair_feats[k]`` has shape
    ``(cards[a], cards[b], d)`` for the ``k``-th edge ``(a, b)``.
    """

    def __init__(self, cards: Sequence[int], edges: Sequence[tuple[int, int]], dim: int,
                 allowed=None):
        self.cards = tuple(int(c) for c in cards)
        self.edges = [tuple(e) for e in edges]
        self.dim = int(dim)
        # optional hard constraints: (unary masks, pair masks), False = FORBIDDEN
        self.allowed = allowed

    def features(self, x, y) -> np.ndarray:
        uf, pf = x
        out = np.zeros(self.dim)
        for i, F in enumerate(uf):
            out += F[y[i]]
        for (a, b), F in zip(self.edges, pf):
            out += F[y[a], y[b]]
        return out

    def model(self, theta, x) -> PairwiseModel:
        uf, pf = x
        theta = np.asarray(theta, dtype=np.float64)
        unary = [F @ theta for F in uf]
        pair = [F @ theta for F in pf]
        if self.allowed is not None:
            mu, mp = self.allowed
            unary = [np.where(ok, t, FORBIDDEN) for ok, t in zip(mu, unary)]
            pair = [np.where(ok, t, FORBIDDEN) for ok, t in zip(mp, pair)]
        return PairwiseModel(
            self.cards, unary, [(a, b, t) for (a, b), t in zip(self.edges, pair)],
            check_domain=False,
        )


class DenoiseFeatureMap:
    """Per-pixel observation agreement and per-edge label agreement.

    ``theta[:n]`` weighs ``[y_i == x_i]`` for each pixel ``i``; ``theta[n + k]``
    weighs ``[y_a == y_b]`` for the ``k``-th grid edge ``(a, b)``.
    """

    def __init__(self, rows: int, cols: int):
        self.rows, self.cols = int(rows), int(cols)
        self.num_pixels = self.rows * self.cols
        self.edges = grid_edges(self.rows, self.cols)
        self.ends = np.array(self.edges, dtype=np.intp).reshape(-1, 2)
        self.dim = self.num_pixels + len(self.edges)
        self.cards = (2,) * self.num_pixels

    @property
    def pairwise_slice(self) -> slice:
        return slice(self.num_pixels, self.dim)

    def features(self, x, y) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        y = np.asarray(y).reshape(-1)
        return np.concatenate([
            (y == x).astype(np.float64),
            (y[self.ends[:, 0]] == y[self.ends[:, 1]]).astype(np.float64),
        ])

    def model(self, theta, x) -> PairwiseModel:
        x = np.asarray(x).reshape(-1)
        theta = np.asarray(theta, dtype=np.float64)
        w = theta[: self.num_pixels]
        unary = np.zeros((self.num_pixels, 2))
        unary[np.arange(self.num_pixels), x] = w
        pair = theta[self.num_pixels:]
        return PairwiseModel(
            self.cards,
            list(unary),
            [(a, b, np.diag([v, v])) for (a, b), v in zip(self.edges, pair)],
            grid=(self.rows, self.cols),
            check_domain=False,
        )


@dataclass
class CrfParams:
    theta: np.ndarray
    feature_map: object

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.feature_map.dim,):
            raise ValueError(f"theta must have {self.feature_map.dim} entries")
        if not np.isfinite(self.theta).all():
            raise ValueError("theta must be finite")


# -- surrogate objective ---------------------------------------------------------


def _draws(scheme, m):
    # without perturbations every draw is identical, so one suffices
    return 1 if scheme is None else m


def _solve(params: CrfParams, x, scheme, solver: str, seed: int, ex: int, m: int):
    """Perturbed MAP values and argmaxes for ``m`` draws on example ``ex``."""
    model = params.feature_map.model(params.theta, x)
    ps = PerturbedSolver(model, scheme or PerturbationScheme.unary(), solver)
    out = []
    for j in range(_draws(scheme, m)):
        noise = None if scheme is None else gumbel(derive_rng(seed, ex, j), ps.noise_size)
        value, labels, _ = ps.solve(noise)
        out.append((value, np.asarray(labels)))
    return out


def _observed_score(params: CrfParams, x, y) -> float:
    return float(params.theta @ params.feature_map.features(x, y))


def surrogate_draws(params: CrfParams, data, scheme: PerturbationScheme | None, m: int = 1,
                    seed: int = 0, solver: str = "auto") -> np.ndarray:
    """Per-draw dataset losses; their mean is :func:`surrogate_loss`."""
    total = np.zeros(_draws(scheme, m))
    for ex, (x, y) in enumerate(data):
        total += np.array([v for v, _ in _solve(params, x, scheme, solver, seed, ex, m)])
        total -= _observed_score(params, x, y)
    return total


def surrogate_loss(params: CrfParams, data, scheme: PerturbationScheme | None, m: int = 1,
                   seed: int = 0, solver: str = "auto") -> float:
    """Monte-Carlo surrogate loss with draws keyed to ``(seed, example, draw)``."""
    return float(surrogate_draws(params, data, scheme, m, seed, solver).mean())


@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray
    argmax_frequencies: list
    m: int
    std_error: np.ndarray
    observed: np.ndarray = field(repr=False, default=None)


def surrogate_argmaxes(params: CrfParams, data, scheme, m: int = 1, seed: int = 0, solver: str = "auto"):
    """Per-example lists of perturbed argmax labellings."""
    return [[lab for _, lab in _solve(params, x, scheme, solver, seed, ex, m)] for ex, (x, _) in enumerate(data)]


def surrogate_gradient(params: CrfParams, data, scheme: PerturbationScheme | None, m: int = 1,
                       seed: int = 0, solver: str = "auto") -> GradientEstimate:
    fm = params.feature_map
    k = _draws(scheme, m)
    per_draw = np.zeros((k, fm.dim))
    observed = np.zeros(fm.dim)
    freqs = []
    for ex, (x, y) in enumerate(data):
        draws = _solve(params, x, scheme, solver, seed, ex, m)
        counts = Counter(tuple(int(v) for v in lab) for _, lab in draws)
        freqs.append({lab: c / k for lab, c in sorted(counts.items())})
        for j, (_, lab) in enumerate(draws):
            per_draw[j] += fm.features(x, lab)
        observed += fm.features(x, y)
    # summing over distinct argmaxes keeps a degenerate distribution exact
    grad = gradient_from_frequencies(fm, data, freqs)
    se = per_draw.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.full(fm.dim, math.nan)
    return GradientEstimate(grad, freqs, k, se, observed)


def gradient_from_frequencies(feature_map, data, frequencies) -> np.ndarray:
    grad = np.zeros(feature_map.dim)
    for (x, y), freq in zip(data, frequencies):
        for lab, p in freq.items():
            grad += p * feature_map.features(x, lab)
        grad -= feature_map.features(x, y)
    return grad


# -- exact quantities for small models ---------------------------------------------


def expected_features(params: CrfParams, x) -> np.ndarray:
    """``sum_y p_x(y; theta) Phi(x, y)`` by enumeration."""
    model = params.feature_map.model(params.theta, x)
    p = joint_distribution(model)
    labels = state_labels(model)
    return sum(pk * params.feature_map.features(x, lab) for pk, lab in zip(p, labels) if pk > 0)


def crf_loss(params: CrfParams, data) -> float:
    """Exact negative log-likelihood ``sum (log Z_x - theta . Phi(x, y))``."""
    return sum(
        exact_log_partition(params.feature_map.model(params.theta, x)) - _observed_score(params, x, y)
        for x, y in data
    )


def crf_gradient(params: CrfParams, data) -> np.ndarray:
    return sum(expected_features(params, x) - params.feature_map.features(x, y) for x, y in data)


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    step: float = 0.1
    schedule: str = "inv_sqrt"
    m: int = 1
    seed: int = 0
    solver: str = "auto"
    nonneg_pairwise: bool = True
    mode: str = "perturb"
    grad_tol: float = 0.0
    loss_draws: int = 1

    def __post_init__(self):
        if self.schedule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown step schedule {self.schedule!r}")
        if self.mode not in ("perturb", "exact"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.epochs < 1 or self.m < 1:
            raise ValueError("epochs and m must be >= 1")

    def step_size(self, epoch: int) -> float:
        return self.step if self.schedule == "constant" else self.step / math.sqrt(epoch)


@dataclass
class TrainResult:
    params: CrfParams
    history: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)


def _project(theta, feature_map, config):
    if config.nonneg_pairwise and hasattr(feature_map, "pairwise_slice"):
        sl = feature_map.pairwise_slice
        theta[sl] = np.maximum(theta[sl], 0.0)
    return theta


def train(data, feature_map, scheme: PerturbationScheme | None, config: TrainConfig = TrainConfig(),
          theta0=None) -> TrainResult:
    """Stochastic gradient descent on the surrogate (or exact) CRF loss.

    ``mode="perturb"`` takes one step per example per epoch using ``m``
    perturbed MAP draws; ``mode="exact"`` takes full-batch steps with the
    enumerated moment-matching gradient.  ``history`` holds
    ``(epoch, loss, grad_norm)`` rows; epoch 0 is the starting point.
    """
    data = list(data)
    theta = np.zeros(feature_map.dim) if theta0 is None else np.array(theta0, dtype=np.float64)
    theta = _project(theta, feature_map, config)

    def evaluate(theta, epoch):
        params = CrfParams(theta, feature_map)
        if config.mode == "exact":
            g = crf_gradient(params, data)
            return crf_loss(params, data), g
        key = derive_rng(config.seed, 2, epoch).integers(2**62)
        loss = surrogate_loss(params, data, scheme, config.loss_draws, int(key), config.solver)
        g = surrogate_gradient(params, data, scheme, config.loss_draws, int(key), config.solver).gradient
        return loss, g

    loss0, g0 = evaluate(theta, 0)
    result = TrainResult(CrfParams(theta.copy(), feature_map))
    result.history.append((0, loss0, float(np.linalg.norm(g0))))
    result.trajectory.append(theta.copy())
    limit = 10.0 * max(abs(loss0), 1.0)
    grad = g0
    for epoch in range(1, config.epochs + 1):
        eta = config.step_size(epoch)
        if config.mode == "exact":
            theta = _project(theta - eta * grad, feature_map, config)
        else:
            order = derive_rng(config.seed, 1, epoch).permutation(len(data))
            for k in order:
                params = CrfParams(theta, feature_map)
                seed = int(derive_rng(config.seed, 0, epoch, int(k)).integers(2**62))
                g = surrogate_gradient(params, [data[k]], scheme, config.m, seed, config.solver)
                theta = _project(theta - eta * g.gradient, feature_map, config)
        loss, grad = evaluate(theta, epoch)
        gnorm = float(np.linalg.norm(grad))
        result.history.append((epoch, loss, gnorm))
        result.trajectory.append(theta.copy())
        if not math.isfinite(loss) or loss > limit:
            raise TrainingDiverged(
                f"epoch {epoch}: loss {loss:.6g} exceeds 10x the initial loss {loss0:.6g}"
            )
        if gnorm < config.grad_tol:
            break
    result.params = CrfParams(theta, feature_map)
    return result


# -- denoising task ----------------------------------------------------------------


def silhouette(rows: int, cols: int) -> np.ndarray:
    """Procedural figure: a round head over an elliptical torso with arms."""
    r = (np.arange(rows) + 0.5) / rows
    c = (np.arange(cols) + 0.5) / cols
    R, C = np.meshgrid(r, c, indexing="ij")
    aspect = cols / rows
    head = ((R - 0.22) ** 2 + ((C - 0.5) * aspect) ** 2) < 0.14**2
    torso = ((R - 0.62) / 0.3) ** 2 + ((C - 0.5) / 0.2) ** 2 < 1.0
    arms = (np.abs(R - 0.5) < 0.06) & (np.abs(C - 0.5) < 0.38)
    return (head | torso | arms).astype(np.int8)


@dataclass(frozen=True)
class DenoiseDataset:
    rows: int
    cols: int
    clean: np.ndarray
    train_noisy: tuple
    test_noisy: tuple
    flip_prob: float
    seed: int

    def train_pairs(self):
        y = self.clean.reshape(-1)
        return [(x.reshape(-1), y) for x in self.train_noisy]

    def test_pairs(self):
        y = self.clean.reshape(-1)
        return [(x.reshape(-1), y) for x in self.test_noisy]


def gen_denoise_dataset(rows: int, cols: int, num_train: int, num_test: int,
                        flip_prob: float, seed: int) -> DenoiseDataset:
    """Silhouette images with i.i.d. Bernoulli(flip_prob) pixel flips."""
    if not 0.0 <= flip_prob < 0.5:
        raise ValueError("flip_prob must lie in [0, 0.5)")
    clean = silhouette(rows, cols)
    noisy = []
    for k in range(num_train + num_test):
        flips = derive_rng(seed, k).random((rows, cols)) < flip_prob
        noisy.append((clean ^ flips).astype(np.int8))
    return DenoiseDataset(rows, cols, clean, tuple(noisy[:num_train]), tuple(noisy[num_train:]),
                          float(flip_prob), int(seed))


def decode(params: CrfParams, x, solver: str = "auto") -> np.ndarray:
    model = params.feature_map.model(params.theta, x)
    ps = PerturbedSolver(model, PerturbationScheme.unary(), solver)
    return np.asarray(ps.solve(None)[1])


def pixel_error(params: CrfParams, pairs, solver: str = "auto") -> float:
    """Fraction of mismatched pixels after MAP decoding."""
    wrong = total = 0
    for x, y in pairs:
        yhat = decode(params, x, solver)
        wrong += int(np.count_nonzero(yhat != np.asarray(y).reshape(-1)))
        total += yhat.size
    return wrong / total


# -- serialisation ------------------------------------------------------------------


def params_to_text(params: CrfParams) -> str:
    """``crf v1`` header followed by the tables of the all-ones observation."""
    fm = params.feature_map
    if not isinstance(fm, DenoiseFeatureMap):
        raise TypeError("only denoising parameters serialise to the model format")
    model = fm.model(params.theta, np.ones(fm.num_pixels, dtype=np.intp))
    return f"crf {FORMAT_VERSION} denoise {fm.rows} {fm.cols}\n" + model_to_text(model)


def params_from_text(text: str) -> CrfParams:
    head, _, body = text.partition("\n")
    toks = head.split()
    if len(toks) != 5 or toks[0] != "crf" or toks[2] != "denoise":
        raise ValueError("expected header 'crf v1 denoise <rows> <cols>'")
    if toks[1] != FORMAT_VERSION:
        raise ValueError(f"unsupported crf format version {toks[1]!r}")
    fm = DenoiseFeatureMap(int(toks[3]), int(toks[4]))
    model = model_from_text(body)
    theta = np.concatenate([[t[1] for t in model.unary], [t[0, 0] for _, _, t in model.edges]])
    return CrfParams(theta, fm)


def _grid_text(img) -> list[str]:
    return ["".join(str(int(v)) for v in row) for row in np.asarray(img)]


def dataset_to_text(ds: DenoiseDataset) -> str:
    lines = [f"denoise {FORMAT_VERSION} {ds.rows} {ds.cols} {len(ds.train_noisy)} "
             f"{len(ds.test_noisy)} {ds.flip_prob!r} {ds.seed}", "clean"]
    lines += _grid_text(ds.clean)
    for name, imgs in (("train", ds.train_noisy), ("test", ds.test_noisy)):
        for k, img in enumerate(imgs):
            lines.append(f"{name} {k}")
            lines += _grid_text(img)
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> DenoiseDataset:
    lines = text.splitlines()
    toks = lines[0].split()
    if len(toks) != 8 or toks[0] != "denoise" or toks[1] != FORMAT_VERSION:
        raise ValueError("expected header 'denoise v1 <rows> <cols> <train> <test> <p> <seed>'")
    rows, cols, ntr, nte = (int(t) for t in toks[2:6])
    pos = 1

    def grid():
        nonlocal pos
        pos += 1
        block = lines[pos:pos + rows]
        pos += rows
        if len(block) != rows or any(len(r) != cols or set(r) - {"0", "1"} for r in block):
            raise ValueError(f"malformed image block before line {pos + 1}")
        return np.array([[int(ch) for ch in r] for r in block], dtype=np.int8)

    clean = grid()
    train = tuple(grid() for _ in range(ntr))
    test = tuple(grid() for _ in range(nte))
    return DenoiseDataset(rows, cols, clean, train, test, float(toks[6]), int(toks[7]))
