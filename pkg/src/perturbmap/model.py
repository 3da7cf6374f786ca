"""Discrete pairwise models, spin-glass generation and the text file format.

A model assigns every joint labelling ``y`` the score

    phi(y) = sum_i unary[i][y_i] + sum_(i,j) table_ij[y_i, y_j]

Entries equal to :data:`FORBIDDEN` exclude a labelling from the domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import derive_rng

#: Marker for an excluded entry.  IEEE negative infinity absorbs under
#: addition, so any labelling touching a forbidden entry scores FORBIDDEN.
FORBIDDEN = -math.inf

#: Joint state spaces up to this size are enumerated on construction to
#: verify that the domain is non-empty.
DOMAIN_CHECK_CAP = 2**24

FORMAT_VERSION = "v1"


class ModelError(ValueError):
    """Raised when a model would violate its invariants."""


class ModelParseError(ModelError):
    """Raised for malformed model files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _check_table(values: np.ndarray, what: str) -> None:
    if np.isnan(values).any() or np.isposinf(values).any():
        raise ModelError(f"{what}: only finite values or FORBIDDEN (-inf) are allowed")


class PairwiseModel:
    """Immutable pairwise model over ``num_vars`` discrete variables.

    Edges are stored with ``i < j``; a table given for ``(j, i)`` is
    transposed on construction.  ``grid`` optionally records a
    ``(rows, cols)`` layout with variables numbered row-major.
    """

    def __init__(
        self,
        cards: Sequence[int],
        unary: Sequence[Sequence[float]],
        edges: Iterable[tuple[int, int, object]] = (),
        grid: tuple[int, int] | None = None,
        check_domain: bool = True,
    ):
        cards = tuple(int(c) for c in cards)
        if any(c < 1 for c in cards):
            raise ModelError(f"every cardinality must be >= 1, got {cards}")
        n = len(cards)
        if len(unary) != n:
            raise ModelError(f"expected {n} unary tables, got {len(unary)}")

        unary_tabs = []
        for i, (c, tab) in enumerate(zip(cards, unary)):
            arr = np.array(tab, dtype=np.float64).reshape(-1)
            if arr.shape != (c,):
                raise ModelError(f"unary table {i} has {arr.size} entries, expected {c}")
            _check_table(arr, f"unary table {i}")
            arr.setflags(write=False)
            unary_tabs.append(arr)

        seen = set()
        edge_list = []
        for i, j, tab in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ModelError(f"edge ({i}, {j}) references a missing variable")
            if i == j:
                raise ModelError(f"edge ({i}, {j}) is a self-loop")
            arr = np.array(tab, dtype=np.float64)
            if i > j:
                i, j = j, i
                arr = arr.T if arr.ndim == 2 else arr
            if arr.ndim == 1 and arr.size == cards[i] * cards[j]:
                arr = arr.reshape(cards[i], cards[j])
            if arr.shape != (cards[i], cards[j]):
                raise ModelError(
                    f"edge ({i}, {j}) table has shape {arr.shape}, "
                    f"expected {(cards[i], cards[j])}"
                )
            if (i, j) in seen:
                raise ModelError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            _check_table(arr, f"edge ({i}, {j})")
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            edge_list.append((i, j, arr))

        if grid is not None:
            grid = (int(grid[0]), int(grid[1]))
            if grid[0] * grid[1] != n:
                raise ModelError(f"grid {grid} does not match {n} variables")

        self.num_vars = n
        self.cards = cards
        self.unary = tuple(unary_tabs)
        self.edges = tuple(edge_list)
        self.grid = grid
        self.domain_check = "unchecked"
        if check_domain:
            self._check_domain()

    def _check_domain(self) -> None:
        if not self.has_forbidden:
            self.domain_check = "trivial"
            return
        if self.num_states > DOMAIN_CHECK_CAP:
            self.domain_check = "skipped"
            return
        from .oracle import exact_map_value

        if exact_map_value(self) == FORBIDDEN:
            raise ModelError("every joint labelling is FORBIDDEN (empty domain)")
        self.domain_check = "checked"

    # -- derived structure -------------------------------------------------

    @cached_property
    def num_states(self) -> int:
        return math.prod(self.cards)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def max_card(self) -> int:
        return max(self.cards) if self.cards else 1

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(i, j): k for k, (i, j, _) in enumerate(self.edges)}

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_vars)]
        for i, j, _ in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(v) for v in nbrs)

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded views ``(unary (n, K), endpoints (E, 2), tables (E, K, K))``.

        Padding entries beyond a variable's cardinality are FORBIDDEN.
        """
        K = self.max_card
        un = np.full((self.num_vars, K), FORBIDDEN)
        for i, t in enumerate(self.unary):
            un[i, : t.size] = t
        ends = np.array([(i, j) for i, j, _ in self.edges], dtype=np.intp).reshape(-1, 2)
        tabs = np.full((len(self.edges), K, K), FORBIDDEN)
        for k, (_, _, t) in enumerate(self.edges):
            tabs[k, : t.shape[0], : t.shape[1]] = t
        for a in (un, ends, tabs):
            a.setflags(write=False)
        return un, ends, tabs

    def is_binary(self) -> bool:
        return all(c == 2 for c in self.cards)

    def is_supermodular(self, tol: float = 1e-12) -> bool:
        """True for binary models whose edge tables all favour agreement."""
        if not self.is_binary():
            return False
        for _, _, t in self.edges:
            if not np.isfinite(t).all():
                return False
            if t[0, 0] + t[1, 1] < t[0, 1] + t[1, 0] - tol:
                return False
        return True

    @cached_property
    def has_forbidden(self) -> bool:
        return any(np.isneginf(t).any() for t in self.unary) or any(
            np.isneginf(t).any() for _, _, t in self.edges
        )

    def shifted(self, delta: float, var: int = 0) -> "PairwiseModel":
        """Copy with ``delta`` added to every entry of one unary table."""
        unary = [t.copy() for t in self.unary]
        unary[var] = unary[var] + delta
        return PairwiseModel(self.cards, unary, self.edges, grid=self.grid, check_domain=False)

    def __repr__(self) -> str:
        return (
            f"PairwiseModel(num_vars={self.num_vars}, edges={self.num_edges}, "
            f"max_card={self.max_card}, grid={self.grid})"
        )


def build_model(
    cards: Sequence[int],
    unary_tables: Sequence[Sequence[float]],
    edge_tables: Mapping[tuple[int, int], object] | Iterable[tuple[int, int, object]] = (),
    grid: tuple[int, int] | None = None,
) -> PairwiseModel:
    """Validated model from per-variable and per-edge tables.

    ``edge_tables`` is either a mapping ``{(i, j): table}`` or an iterable
    of ``(i, j, table)`` triples.
    """
    if isinstance(edge_tables, Mapping):
        edges = [(i, j, t) for (i, j), t in edge_tables.items()]
    else:
        edges = list(edge_tables)
    return PairwiseModel(cards, unary_tables, edges, grid=grid)


def _as_labels(model: PairwiseModel, assignment) -> np.ndarray:
    y = np.asarray(assignment, dtype=np.intp).reshape(-1)
    if y.size != model.num_vars:
        raise ModelError(f"assignment has {y.size} labels, model has {model.num_vars} variables")
    cards = np.asarray(model.cards)
    if y.size and ((y < 0).any() or (y >= cards).any()):
        raise ModelError(f"label out of range in assignment {y.tolist()}")
    return y


def score(model: PairwiseModel, assignment) -> float:
    """phi(y); FORBIDDEN if the labelling touches a forbidden entry."""
    y = _as_labels(model, assignment)
    total = 0.0
    for i, t in enumerate(model.unary):
        total += t[y[i]]
    for i, j, t in model.edges:
        total += t[y[i], y[j]]
    return float(total)


def score_many(model: PairwiseModel, labels: np.ndarray) -> np.ndarray:
    """Vectorised :func:`score` over the rows of an ``(k, n)`` label array."""
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros(labels.shape[0])
    for i, t in enumerate(model.unary):
        out += t[labels[:, i]]
    for i, j, t in model.edges:
        out += t[labels[:, i], labels[:, j]]
    return out


# -- spin glasses ----------------------------------------------------------


@dataclass(frozen=True)
class SpinGlassConfig:
    rows: int
    cols: int
    field_strength: float
    coupling_strength: float
    coupling_mode: str = "mixed"
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ModelError("grid dimensions must be >= 1")
        if self.field_strength < 0 or self.coupling_strength < 0:
            raise ModelError("field and coupling strengths must be >= 0")
        if self.coupling_mode not in ("attractive", "mixed"):
            raise ModelError(f"unknown coupling mode {self.coupling_mode!r}")


def grid_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    """Grid edges in row-major order: right neighbour, then down neighbour."""
    out = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                out.append((v, v + 1))
            if r + 1 < rows:
                out.append((v, v + cols))
    return out


def ising_unary(field: float) -> np.ndarray:
    # label 0 is spin -1, label 1 is spin +1
    return np.array([-field, field])


def ising_pair(coupling: float) -> np.ndarray:
    return np.array([[coupling, -coupling], [-coupling, coupling]])


def gen_spin_glass(config: SpinGlassConfig) -> PairwiseModel:
    """Grid Ising model with uniform random fields and couplings.

    Fields are drawn first (variable order), then couplings in
    :func:`grid_edges` order, all from the stream seeded by ``config.seed``.
    """
    rng = derive_rng(config.seed)
    n = config.rows * config.cols
    f, c = config.field_strength, config.coupling_strength
    fields = rng.uniform(-f, f, size=n)
    edges = grid_edges(config.rows, config.cols)
    low = 0.0 if config.coupling_mode == "attractive" else -c
    couplings = rng.uniform(low, c, size=len(edges))
    return PairwiseModel(
        [2] * n,
        [ising_unary(t) for t in fields],
        [(i, j, ising_pair(w)) for (i, j), w in zip(edges, couplings)],
        grid=(config.rows, config.cols),
    )


# -- text format -------------------------------------------------------------


def _fmt(x: float) -> str:
    if x == FORBIDDEN:
        return "-inf"
    return repr(float(x))


def _parse_value(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ModelParseError(f"bad numeric token {tok!r}", line) from None
    if math.isnan(v) or v == math.inf:
        raise ModelParseError(f"value {tok!r} is not allowed", line)
    return v


def model_to_text(model: PairwiseModel) -> str:
    lines = [f"pmodel {FORMAT_VERSION} {model.num_vars}"]
    lines.append("cards " + " ".join(str(c) for c in model.cards))
    if model.grid is not None:
        lines.append(f"grid {model.grid[0]} {model.grid[1]}")
    for i, t in enumerate(model.unary):
        lines.append(f"unary {i} " + " ".join(_fmt(v) for v in t))
    for i, j, t in model.edges:
        lines.append(f"edge {i} {j} " + " ".join(_fmt(v) for v in t.reshape(-1)))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> PairwiseModel:
    rows = [
        (k + 1, ln.split())
        for k, ln in enumerate(text.splitlines())
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not rows:
        raise ModelParseError("empty model file", 1)
    lineno, head = rows[0]
    if len(head) != 3 or head[0] != "pmodel":
        raise ModelParseError("expected header 'pmodel v1 <n>'", lineno)
    if head[1] != FORMAT_VERSION:
        raise ModelParseError(f"unsupported format version {head[1]!r}", lineno)
    try:
        n = int(head[2])
    except ValueError:
        raise ModelParseError(f"bad variable count {head[2]!r}", lineno) from None
    if len(rows) < 2 or rows[1][1][0] != "cards":
        raise ModelParseError("expected 'cards' line", rows[min(1, len(rows) - 1)][0])
    lineno, toks = rows[1]
    try:
        cards = [int(t) for t in toks[1:]]
    except ValueError:
        raise ModelParseError("cardinalities must be integers", lineno) from None
    if len(cards) != n:
        raise ModelParseError(f"expected {n} cardinalities, got {len(cards)}", lineno)
    if any(c < 1 for c in cards):
        raise ModelParseError("cardinalities must be >= 1", lineno)

    grid = None
    unary: list[list[float] | None] = [None] * n
    edges = []
    for lineno, toks in rows[2:]:
        kind = toks[0]
        try:
            if kind == "grid":
                grid = (int(toks[1]), int(toks[2]))
            elif kind == "unary":
                i = int(toks[1])
                if not 0 <= i < n:
                    raise ModelParseError(f"unary index {i} out of range", lineno)
                if unary[i] is not None:
                    raise ModelParseError(f"duplicate unary table {i}", lineno)
                vals = [_parse_value(t, lineno) for t in toks[2:]]
                if len(vals) != cards[i]:
                    raise ModelParseError(
                        f"unary {i} has {len(vals)} values, expected {cards[i]}", lineno
                    )
                unary[i] = vals
            elif kind == "edge":
                i, j = int(toks[1]), int(toks[2])
                if not (0 <= i < n and 0 <= j < n):
                    raise ModelParseError(f"edge ({i}, {j}) out of range", lineno)
                vals = [_parse_value(t, lineno) for t in toks[3:]]
                if len(vals) != cards[i] * cards[j]:
                    raise ModelParseError(
                        f"edge ({i}, {j}) has {len(vals)} values, "
                        f"expected {cards[i] * cards[j]}",
                        lineno,
                    )
                edges.append((i, j, np.array(vals).reshape(cards[i], cards[j])))
            else:
                raise ModelParseError(f"unknown record {kind!r}", lineno)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ModelParseError):
                raise
            raise ModelParseError(f"malformed {kind!r} record", lineno) from None
    missing = [i for i, u in enumerate(unary) if u is None]
    if missing:
        raise ModelParseError(f"missing unary tables for variables {missing}")
    try:
        return PairwiseModel(cards, unary, edges, grid=grid)
    except ModelParseError:
        raise
    except ModelError as exc:
        raise ModelParseError(str(exc)) from None


def save_model(model: PairwiseModel, path) -> Path:
    path = Path(path)
    path.write_text(model_to_text(model), encoding="utf-8")
    return path


def load_model(path) -> PairwiseModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
