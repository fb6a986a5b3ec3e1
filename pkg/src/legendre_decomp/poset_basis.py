"""Componentwise order on index vectors and decomposition bases.

A basis is a set of cells of the sample space (never the least element) that
carry the free parameters of a decomposition. Bases are kept in canonical
lexicographic order so every parameter vector has a fixed layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import numpy as np

from .errors import ParseError
from .tensor_core import NormalizedTensor, SampleSpace, _text_lines


def leq(u, v) -> bool:
    """``u <= v`` in the componentwise partial order."""
    if len(u) != len(v):
        raise ValueError(f"arity mismatch: {tuple(u)} vs {tuple(v)}")
    return all(a <= b for a, b in zip(u, v))


def _as_rows(vectors, ndim: int) -> np.ndarray:
    rows = np.asarray(list(vectors) if not isinstance(vectors, np.ndarray) else vectors)
    if rows.size == 0:
        return np.empty((0, ndim), dtype=np.int64)
    rows = rows.astype(np.int64, copy=False)
    if rows.ndim != 2 or rows.shape[1] != ndim:
        raise ValueError(f"basis vectors must all have arity {ndim}")
    return rows


@dataclass(frozen=True, eq=False)
class Basis:
    """A subset of the sample space without its least element.

    ``members`` holds 1-based index vectors, one per row, deduplicated and in
    lexicographic order.
    """

    space: SampleSpace
    members: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))
    flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        space = self.space
        rows = _as_rows(self.members, space.ndim)
        if len(rows):
            if np.any(rows < 1) or np.any(rows > np.asarray(space.shape)):
                raise ValueError("basis vector out of range for the sample space")
            flat = np.ravel_multi_index(tuple((rows - 1).T), space.shape)
            if np.any(flat == 0):
                raise ValueError("the least element (1,...,1) cannot be a basis member")
            if not np.all(space.mask.flat[flat]):
                bad = rows[~space.mask.flat[flat]][0]
                raise ValueError(f"basis vector {tuple(int(i) for i in bad)} is not in the sample space")
            # row-major flat order is lexicographic order
            flat = np.unique(flat)
            rows = np.stack(np.unravel_index(flat, space.shape), axis=1) + 1
        else:
            flat = np.empty(0, dtype=np.int64)
        rows.flags.writeable = False
        flat.flags.writeable = False
        object.__setattr__(self, "members", rows)
        object.__setattr__(self, "flat", flat)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return (tuple(int(i) for i in row) for row in self.members)

    def __contains__(self, v) -> bool:
        return tuple(v) in set(self)

    def index_of(self, v) -> int:
        v = np.asarray(v, dtype=np.int64)
        hits = np.flatnonzero(np.all(self.members == v, axis=1))
        if not len(hits):
            raise KeyError(f"{tuple(v)} is not a basis member")
        return int(hits[0])

    def as_tuples(self) -> list[tuple[int, ...]]:
        return list(self)

    def union(self, *others: Basis) -> Basis:
        parts = [self.members]
        for other in others:
            if not other.space.same_as(self.space):
                raise ValueError("cannot join bases over different sample spaces")
            parts.append(other.members)
        return Basis(self.space, np.concatenate(parts, axis=0))

    def members0(self) -> tuple[np.ndarray, ...]:
        """0-based coordinate arrays, usable as a numpy fancy index."""
        return tuple((self.members - 1).T)

    @cached_property
    def join_flat(self) -> np.ndarray:
        """Flat grid position of ``max(u, v)`` for every pair of members."""
        m = self.members - 1
        joins = tuple(np.maximum(m[:, None, k], m[None, :, k]) for k in range(m.shape[1]))
        if not len(m):
            return np.empty((0, 0), dtype=np.int64)
        return np.ravel_multi_index(joins, self.space.shape)


@dataclass(frozen=True, eq=False)
class ZetaIncidence:
    """Bit-packed |B| x |Omega| matrix with bit (u, v) set iff u <= v.

    Columns follow the canonical order of the sample space.
    """

    basis: Basis
    bits: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.basis), len(self.basis.space)

    def row(self, k: int) -> np.ndarray:
        return np.unpackbits(self.bits[k], count=self.shape[1]).astype(bool)

    def bit(self, k: int, j: int) -> bool:
        return bool((self.bits[k, j >> 3] >> (7 - (j & 7))) & 1)

    def dense(self) -> np.ndarray:
        if not self.shape[0]:
            return np.zeros(self.shape, dtype=bool)
        return np.unpackbits(self.bits, axis=1, count=self.shape[1]).astype(bool)


def build_incidence(basis: Basis, chunk: int = 64) -> ZetaIncidence:
    """Materialize zeta(u, v) for every basis member u and every v in Omega."""
    omega = basis.space.members
    n_words = (len(omega) + 7) // 8
    bits = np.zeros((len(basis), n_words), dtype=np.uint8)
    for start in range(0, len(basis), chunk):
        rows = basis.members[start:start + chunk]
        block = np.all(omega[None, :, :] >= rows[:, None, :], axis=2)
        bits[start:start + len(rows)] = np.packbits(block, axis=1)
    bits.flags.writeable = False
    return ZetaIncidence(basis, bits)


def down_set(v, basis: Basis) -> set[tuple[int, ...]]:
    """Basis members below ``v``."""
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (basis.space.ndim,):
        raise ValueError("arity mismatch")
    below = np.all(basis.members <= v, axis=1)
    return {tuple(int(i) for i in row) for row in basis.members[below]}


def up_set(v, space: SampleSpace) -> set[tuple[int, ...]]:
    """Cells of the sample space above ``v`` (exclusions respected)."""
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (space.ndim,):
        raise ValueError("arity mismatch")
    above = np.all(space.members >= v, axis=1)
    return {tuple(int(i) for i in row) for row in space.members[above]}


# ------------------------------------------------------------ basis families


def _grid_members(space: SampleSpace, keep: np.ndarray) -> np.ndarray:
    keep = keep & space.mask
    keep.flat[0] = False
    return np.argwhere(keep) + 1


def _axes(shape):
    return np.ix_(*(np.arange(1, d + 1) for d in shape))


def build_basis_b1(space: SampleSpace) -> Basis:
    """Cells with at most one index different from 1: a normalizer per mode."""
    coords = _axes(space.shape)
    keep = np.zeros(space.shape, dtype=bool)
    for k in range(space.ndim):
        others = np.ones(space.shape, dtype=bool)
        for j, c in enumerate(coords):
            if j != k:
                others &= c == 1
        keep |= others
    return Basis(space, _grid_members(space, keep))


def level_indices(size: int, l: int) -> list[int]:
    """``{c * floor(size / l) : c = 1..l}``; may skip ``size`` itself."""
    step = size // l
    return [c * step for c in range(1, l + 1)]


def build_basis_b2(space: SampleSpace, l: int) -> Basis:
    """Row and column normalizers of every slice at ``l`` evenly spaced levels.

    Selects cells with ``i1 == 1`` and ``i2`` in the level set of mode 2, plus
    cells with ``i2 == 1`` and ``i1`` in the level set of mode 1. Remaining
    modes are unconstrained.
    """
    if space.ndim < 2:
        raise ValueError("B2 needs a tensor with at least two modes")
    i1, i2 = space.shape[:2]
    if not 1 <= l <= min(i1, i2):
        raise ValueError(f"l must be in [1, {min(i1, i2)}], got {l}")
    c1 = np.array(level_indices(i1, l))
    c2 = np.array(level_indices(i2, l))
    coords = _axes(space.shape)
    a, b = coords[0], coords[1]
    keep = ((a == 1) & np.isin(b, c2)) | (np.isin(a, c1) & (b == 1))
    keep = np.broadcast_to(keep, space.shape).copy()
    return Basis(space, _grid_members(space, keep))


def _ranked(probs: np.ndarray, flat: np.ndarray) -> np.ndarray:
    # descending probability, ties by lexicographic (flat) position
    order = np.lexsort((flat, -probs))
    return flat[order]


def build_basis_b3(space: SampleSpace, l: int, p: NormalizedTensor) -> Basis:
    """The ``l`` most probable cells of every frontal slice (third mode fixed).

    Ties go to the lexicographically smaller ``(i1, i2)``. The least element
    is never selected; the next-ranked cell takes its place.
    """
    if space.ndim != 3:
        raise ValueError(f"B3 is defined for third-order tensors only, got order {space.ndim}")
    if not p.space.same_as(space):
        raise ValueError("probabilities are defined on a different sample space")
    i1, i2, i3 = space.shape
    if not 1 <= l <= i1 * i2:
        raise ValueError(f"l must be in [1, {i1 * i2}], got {l}")
    dense = p.dense()
    flat_grid = np.arange(dense.size).reshape(space.shape)
    picked = []
    for k in range(i3):
        keep = space.mask[:, :, k].copy()
        if k == 0:
            keep[0, 0] = False
        flat = flat_grid[:, :, k][keep]
        picked.append(_ranked(dense[:, :, k][keep], flat)[:l])
    flat = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return Basis(space, np.stack(np.unravel_index(flat, space.shape), axis=1) + 1)


def build_basis_top(space: SampleSpace, k: int, p: NormalizedTensor) -> Basis:
    """The ``k`` most probable cells of the whole sample space (size fixed by ``k``)."""
    if not p.space.same_as(space):
        raise ValueError("probabilities are defined on a different sample space")
    if not 0 <= k <= len(space) - 1:
        raise ValueError(f"k must be in [0, {len(space) - 1}], got {k}")
    flat = np.flatnonzero(space.mask.ravel())[1:]
    ranked = _ranked(p.probs[1:], flat)[:k]
    return Basis(space, np.stack(np.unravel_index(ranked, space.shape), axis=1) + 1)


def build_basis_full(space: SampleSpace) -> Basis:
    """Every cell except the least element; reproduces any input exactly."""
    return Basis(space, space.members[1:])


def load_basis_file(source, space: SampleSpace) -> Basis:
    """Read one 1-based index vector per line; ``#`` starts a comment."""
    rows = []
    for lineno, line in enumerate(_text_lines(source), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != space.ndim:
            raise ParseError(f"expected {space.ndim} indices, got {len(tokens)}", lineno)
        try:
            v = tuple(int(t) for t in tokens)
        except ValueError:
            raise ParseError(f"invalid index vector {stripped!r}", lineno) from None
        if all(i == 1 for i in v):
            raise ParseError("the least element (1,...,1) cannot be a basis member", lineno)
        if v not in space:
            raise ParseError(f"{v} is not in the sample space", lineno)
        rows.append(v)
    return Basis(space, rows)


def parse_basis_spec(spec: str, space: SampleSpace, p: NormalizedTensor | None = None) -> Basis:
    """Build a basis from a spec string such as ``"b1+b2:3+b3:5"``.

    Terms: ``b1``, ``b2:<l>``, ``b3:<l>``, ``top:<k>``, ``full``, ``empty``
    and ``file:<path>``, joined by ``+`` into a union. ``b3`` and ``top``
    rank cells by ``p``.
    """
    basis = Basis(space, [])
    for term in (t.strip() for t in spec.split("+")):
        if not term:
            raise ValueError(f"empty term in basis spec {spec!r}")
        name, _, arg = term.partition(":")
        name = name.lower()
        if name == "file":
            with open(arg, encoding="utf-8") as fh:
                part = load_basis_file(fh, space)
        elif name in ("b1", "full", "empty"):
            if arg:
                raise ValueError(f"basis term {name!r} takes no argument")
            part = {
                "b1": build_basis_b1,
                "full": build_basis_full,
                "empty": lambda s: Basis(s, []),
            }[name](space)
        elif name in ("b2", "b3", "top"):
            try:
                n = int(arg)
            except ValueError:
                raise ValueError(f"basis term {term!r} needs an integer argument") from None
            if name == "b2":
                part = build_basis_b2(space, n)
            else:
                if p is None:
                    raise ValueError(f"basis term {term!r} needs the input probabilities")
                builder = build_basis_b3 if name == "b3" else build_basis_top
                part = builder(space, n, p)
        else:
            raise ValueError(f"unknown basis term {term!r}")
        basis = basis.union(part)
    return basis

