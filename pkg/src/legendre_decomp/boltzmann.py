"""Fully visible Boltzmann machines as decompositions of a 2 x ... x 2 tensor.

A binary state ``x`` in {0, 1}^n is the index vector ``x + 1``. Each vertex
``a`` owns the cell with a single 2 at position ``a`` (its bias) and each
edge ``{a, b}`` the cell with 2s at ``a`` and ``b`` (its weight). The
decomposition parameters are then exactly the biases and weights, and the
log-partition of the model is ``log Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .optimizer import DecompositionResult, SolverConfig, decompose
from .poset_basis import Basis
from .tensor_core import NormalizedTensor, SampleSpace, _text_lines, build_sample_space

MAX_VARIABLES = 20


@dataclass(frozen=True)
class BoltzmannGraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a Boltzmann machine needs at least one variable")
        edges = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on vertex {a}")
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise ValueError(f"edge {{{a}, {b}}} out of range 1..{self.n}")
            edges.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(edges))

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def load_graph(source) -> BoltzmannGraph:
    """First line ``n``, then one ``a b`` edge per line (1-based)."""
    n = None
    edges = []
    for lineno, line in enumerate(_text_lines(source), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise ParseError(f"invalid integers {stripped!r}", lineno) from None
        if n is None:
            if len(values) != 1 or values[0] < 1:
                raise ParseError("first line must be the number of variables", lineno)
            n = values[0]
            continue
        if len(values) != 2:
            raise ParseError("an edge line needs exactly two vertices", lineno)
        a, b = values
        if a == b or not (1 <= a <= n and 1 <= b <= n):
            raise ParseError(f"invalid edge {a} {b} for {n} variables", lineno)
        edges.append((a, b))
    if n is None:
        raise ParseError("empty graph file", 1)
    return BoltzmannGraph(n, frozenset(edges))


def binary_space(n: int, max_variables: int = MAX_VARIABLES) -> SampleSpace:
    if n > max_variables:
        raise ValueError(f"{n} variables exceed the exact-enumeration limit {max_variables}")
    return build_sample_space((2,) * n)


def basis_from_graph(g: BoltzmannGraph, space: SampleSpace | None = None) -> Basis:
    """Vertex and edge cells of ``g`` in canonical order."""
    space = space or binary_space(g.n)
    if space.shape != (2,) * g.n:
        raise ValueError("sample space must be the binary grid {1,2}^n")
    rows = []
    for a in range(1, g.n + 1):
        v = [1] * g.n
        v[a - 1] = 2
        rows.append(v)
    for a, b in g.sorted_edges():
        v = [1] * g.n
        v[a - 1] = v[b - 1] = 2
        rows.append(v)
    return Basis(space, rows)


def _cell(n: int, on) -> tuple[int, ...]:
    v = [1] * n
    for a in on:
        v[a - 1] = 2
    return tuple(v)


def empirical_from_samples(samples, max_variables: int = MAX_VARIABLES) -> NormalizedTensor:
    """Empirical distribution of 0/1 sample rows as a normalized tensor."""
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("samples must be a non-empty 2-D array")
    if not np.isin(samples, (0, 1)).all():
        raise ValueError("samples must be binary (0/1)")
    n = samples.shape[1]
    space = binary_space(n, max_variables)
    counts = np.zeros((2,) * n)
    np.add.at(counts, tuple(samples.astype(np.int64).T), 1.0)
    return NormalizedTensor(space, counts.ravel() / len(samples), float(len(samples)))


def load_samples(source) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(_text_lines(source), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            row = [int(t) for t in stripped.split()]
        except ValueError:
            raise ParseError(f"invalid sample row {stripped!r}", lineno) from None
        if any(b not in (0, 1) for b in row) or (rows and len(row) != len(rows[0])):
            raise ParseError("sample rows must be 0/1 vectors of equal length", lineno)
        rows.append(row)
    if not rows:
        raise ParseError("no samples", 1)
    return np.array(rows)


@dataclass
class BoltzmannFit:
    graph: BoltzmannGraph
    biases: np.ndarray
    weights: dict
    log_partition: float
    result: DecompositionResult

    def to_json(self) -> dict:
        return {
            "biases": [float(b) for b in self.biases],
            "weights": [
                {"a": a, "b": b, "value": float(self.weights[a, b])}
                for a, b in self.graph.sorted_edges()
            ],
            "log_partition": self.log_partition,
            "kl": self.result.kl,
            "iterations": self.result.iterations,
        }


def fit_boltzmann(
    empirical: NormalizedTensor, g: BoltzmannGraph, cfg: SolverConfig | None = None
) -> BoltzmannFit:
    """Maximum-likelihood biases and weights of the machine ``g``.

    Excluding cells from the empirical sample space changes the model: the
    excluded states get probability zero.
    """
    if empirical.shape != (2,) * g.n:
        raise ValueError(f"empirical distribution must have shape {(2,) * g.n}")
    basis = basis_from_graph(g, empirical.space)
    result = decompose(empirical, basis, cfg)
    biases = np.array([result.theta[basis.index_of(_cell(g.n, [a]))] for a in range(1, g.n + 1)])
    weights = {
        (a, b): float(result.theta[basis.index_of(_cell(g.n, [a, b]))])
        for a, b in g.sorted_edges()
    }
    return BoltzmannFit(g, biases, weights, result.psi, result)
