"""Nonnegative tensors, sample spaces and normalization.

Index vectors are tuples of 1-based integers, matching the text formats.
Internally every grid is a dense ``numpy`` array in row-major order, which
is the same as lexicographic order on index vectors.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import ParseError

DENSE = "dense-text"
SPARSE = "sparse-coo"
FORMATS = (DENSE, SPARSE)


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("shape must have at least one mode")
    if any(d < 1 for d in shape):
        raise ValueError(f"every dimension must be >= 1, got {shape}")
    if math.prod(shape) > np.iinfo(np.int64).max:
        raise ValueError(f"shape {shape} has too many cells")
    return shape


def check_index(v, shape) -> tuple[int, ...]:
    v = tuple(int(i) for i in v)
    if len(v) != len(shape):
        raise ValueError(f"index {v} has arity {len(v)}, expected {len(shape)}")
    for i, d in zip(v, shape):
        if not 1 <= i <= d:
            raise ValueError(f"index {v} out of range for shape {shape}")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RawTensor:
    """A nonnegative tensor stored densely.

    Unspecified entries of a sparse input are zero.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        check_shape(values.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor entries must be finite")
        if np.any(values < 0):
            raise ValueError("tensor entries must be nonnegative")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __getitem__(self, v) -> float:
        return float(self.values[tuple(i - 1 for i in check_index(v, self.shape))])


@dataclass(frozen=True, eq=False)
class SampleSpace:
    """The retained cells Omega of a grid, in lexicographic order.

    ``mask`` marks retained cells; ``members`` lists them as 1-based index
    vectors (one per row) and ``ordinal`` maps each grid cell to its position
    in ``members`` (-1 for excluded cells).
    """

    mask: np.ndarray
    members: np.ndarray = field(init=False, repr=False)
    ordinal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        check_shape(mask.shape)
        if not mask.flat[0]:
            raise ValueError("the least element (1,...,1) must belong to the sample space")
        # argwhere walks the grid in row-major order == lexicographic order
        members = np.argwhere(mask) + 1
        ordinal = np.full(mask.shape, -1, dtype=np.int64)
        ordinal[mask] = np.arange(len(members))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "members", _frozen(members))
        object.__setattr__(self, "ordinal", _frozen(ordinal))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mask.shape

    @property
    def ndim(self) -> int:
        return self.mask.ndim

    @property
    def is_full(self) -> bool:
        return len(self) == self.mask.size

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, v) -> bool:
        v = tuple(v)
        if len(v) != self.ndim or any(not 1 <= i <= d for i, d in zip(v, self.shape)):
            return False
        return bool(self.mask[tuple(i - 1 for i in v)])

    def __iter__(self):
        return (tuple(int(i) for i in row) for row in self.members)

    def index_of(self, v) -> int:
        """Ordinal of ``v`` in the canonical member list."""
        v = check_index(v, self.shape)
        k = int(self.ordinal[tuple(i - 1 for i in v)])
        if k < 0:
            raise KeyError(f"{v} is excluded from the sample space")
        return k

    def same_as(self, other: SampleSpace) -> bool:
        return self is other or (
            self.shape == other.shape and np.array_equal(self.mask, other.mask)
        )

    def scatter(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Place per-member ``values`` on the dense grid."""
        grid = np.full(self.shape, fill, dtype=np.float64)
        grid[self.mask] = values
        return grid


@dataclass(frozen=True, eq=False)
class NormalizedTensor:
    """A probability mass function over a sample space.

    ``probs`` follows the canonical member order of ``space``. The original
    total mass is kept so reconstructions can be mapped back to the input
    scale.
    """

    space: SampleSpace
    probs: np.ndarray
    total_mass: float = 1.0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.shape != (len(self.space),):
            raise ValueError(
                f"expected {len(self.space)} probabilities, got shape {probs.shape}"
            )
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and nonnegative")
        if not self.total_mass > 0:
            raise ValueError("total mass must be positive")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "total_mass", float(self.total_mass))

    @classmethod
    def _trusted(cls, space: SampleSpace, probs: np.ndarray, total_mass: float) -> NormalizedTensor:
        # skips validation; for solver internals that produce valid pmfs
        obj = object.__new__(cls)
        probs.flags.writeable = False
        object.__setattr__(obj, "space", space)
        object.__setattr__(obj, "probs", probs)
        object.__setattr__(obj, "total_mass", float(total_mass))
        return obj

    @property
    def shape(self) -> tuple[int, ...]:
        return self.space.shape

    def dense(self) -> np.ndarray:
        """Probabilities on the full grid, zero outside the sample space."""
        return self.space.scatter(self.probs)

    def __getitem__(self, v) -> float:
        return float(self.probs[self.space.index_of(v)])


def build_sample_space(shape, exclude: Iterable = ()) -> SampleSpace:
    """Full grid of ``shape`` minus the index vectors in ``exclude``."""
    shape = check_shape(shape)
    mask = np.ones(shape, dtype=bool)
    for v in exclude:
        v = check_index(v, shape)
        if all(i == 1 for i in v):
            raise ValueError("cannot exclude the least element (1,...,1)")
        mask[tuple(i - 1 for i in v)] = False
    return SampleSpace(mask)


def nonzero_sample_space(x: RawTensor) -> SampleSpace:
    """Sample space keeping only the nonzero entries of ``x``.

    The least element is always kept, even when ``x`` is zero there.
    """
    mask = x.values > 0
    mask.flat[0] = True
    return SampleSpace(mask)


def normalize(x: RawTensor, space: SampleSpace | None = None) -> NormalizedTensor:
    """Divide the entries of ``x`` on ``space`` by their sum."""
    if space is None:
        space = build_sample_space(x.shape)
    if x.shape != space.shape:
        raise ValueError(f"tensor shape {x.shape} does not match sample space {space.shape}")
    kept = x.values[space.mask]
    total = math.fsum(kept)
    if not total > 0:
        raise ValueError("tensor has zero total mass over the sample space")
    return NormalizedTensor(space, kept / total, total)


def denormalize(q: NormalizedTensor) -> RawTensor:
    """Scale ``q`` back by its total mass; excluded cells become 0."""
    return RawTensor(q.space.scatter(q.probs * q.total_mass))


# ---------------------------------------------------------------- text formats


def _text_lines(source) -> list[str]:
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    return text.splitlines()


def _parse_value(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"invalid number {token!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r}", lineno)
    if value < 0:
        raise ParseError(f"negative value {token}", lineno)
    return value


def _parse_ints(tokens: list[str], lineno: int, what: str) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"invalid {what} {' '.join(tokens)!r}", lineno) from None


def _parse_shape(tokens: list[str], lineno: int) -> tuple[int, ...]:
    dims = _parse_ints(tokens, lineno, "shape")
    try:
        return check_shape(dims)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _load_dense(lines: list[str]) -> RawTensor:
    shape = None
    values: list[float] = []
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if shape is None:
            shape = _parse_shape(tokens, lineno)
            expected = math.prod(shape)
            continue
        if len(values) + len(tokens) > expected:
            raise ParseError(f"more than {expected} values for shape {shape}", lineno)
        values.extend(_parse_value(t, lineno) for t in tokens)
    if shape is None:
        raise ParseError("missing shape header", 1)
    if len(values) != expected:
        raise ParseError(
            f"expected {expected} values for shape {shape}, got {len(values)}", len(lines)
        )
    return RawTensor(np.array(values, dtype=np.float64).reshape(shape))


def _load_sparse(lines: list[str]) -> RawTensor:
    shape = None
    grid = None
    seen: set[tuple[int, ...]] = set()
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if shape is None and body.lower().startswith("shape:"):
                shape = _parse_shape(body[len("shape:"):].split(), lineno)
                grid = np.zeros(shape, dtype=np.float64)
            continue
        if shape is None:
            raise ParseError("missing '# shape:' header before data", lineno)
        tokens = stripped.split()
        if len(tokens) != len(shape) + 1:
            raise ParseError(
                f"expected {len(shape)} indices and a value, got {len(tokens)} fields", lineno
            )
        index = tuple(_parse_ints(tokens[:-1], lineno, "index"))
        if any(not 1 <= i <= d for i, d in zip(index, shape)):
            raise ParseError(f"index {index} out of range for shape {shape}", lineno)
        if index in seen:
            raise ParseError(f"duplicate index {index}", lineno)
        seen.add(index)
        grid[tuple(i - 1 for i in index)] = _parse_value(tokens[-1], lineno)
    if shape is None:
        raise ParseError("missing '# shape:' header", 1)
    return RawTensor(grid)


def load_tensor(source, format: str = DENSE) -> RawTensor:
    """Parse a tensor from a text/byte stream, ``str`` or ``bytes``.

    ``format`` is ``"dense-text"`` or ``"sparse-coo"``. Errors carry the
    offending line number.
    """
    lines = _text_lines(source)
    if format == DENSE:
        return _load_dense(lines)
    if format == SPARSE:
        return _load_sparse(lines)
    raise ValueError(f"unknown tensor format {format!r}; expected one of {FORMATS}")


def read_tensor(path, format: str = DENSE) -> RawTensor:
    with open(path, encoding="utf-8") as fh:
        return load_tensor(fh, format)


def dump_tensor(x: RawTensor, stream: TextIO, format: str = DENSE) -> None:
    """Write ``x`` in one of the text formats.

    Dense output puts one last-axis fiber per line. Values use ``repr`` so a
    round trip is exact.
    """
    values = x.values
    if format == DENSE:
        stream.write(" ".join(str(d) for d in x.shape) + "\n")
        for fiber in values.reshape(-1, x.shape[-1]):
            stream.write(" ".join(repr(float(a)) for a in fiber) + "\n")
    elif format == SPARSE:
        stream.write("# shape: " + " ".join(str(d) for d in x.shape) + "\n")
        for index in np.argwhere(values > 0):
            coords = " ".join(str(int(i) + 1) for i in index)
            stream.write(f"{coords} {float(values[tuple(index)])!r}\n")
    else:
        raise ValueError(f"unknown tensor format {format!r}; expected one of {FORMATS}")


def dumps_tensor(x: RawTensor, format: str = DENSE) -> str:
    buf = io.StringIO()
    dump_tensor(x, buf, format)
    return buf.getvalue()
