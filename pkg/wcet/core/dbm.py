"""
Difference bound matrices over the model clocks plus the elapsed-time clock CLK.

A zone over clocks x_1..x_m is stored as a (m + 2) x (m + 2) integer matrix:
index 0 is the reference clock x_0, indices 1..m are the model clocks and the
last index is CLK. Entry D[i][j] bounds x_i - x_j.

Bounds are packed into int64 so closure runs on numpy arrays:
(v, <) is stored as 2v and (v, <=) as 2v + 1, which keeps the natural bound
order (v, <) < (v, <=) < (v + 1, <). INF is a sentinel far above any bound a
model can produce.
"""

from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from wcet.core.model import AtomicConstraint

CLK = "CLK"

INF = np.iinfo(np.int64).max // 4
LE_ZERO = 1
LT_ZERO = 0


class DbmUsageError(Exception):
    """Raised when a zone operation is called with arguments it does not accept"""

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class UnboundedDelay(Exception):
    """Raised when the elapsed time along a step has no finite upper bound"""

    def __init__(self, clock: str = CLK):
        self.clock = clock
        super().__init__(f"Clock {clock} has no finite upper bound: WCET may be unbounded")


class Relation(str, Enum):
    """Inclusion relation between two zones"""

    EQUAL = "Equal"
    SUBSET = "Subset"
    SUPERSET = "Superset"
    INCOMPARABLE = "Incomparable"


class Bound(BaseModel):
    """One DBM entry: value plus strictness. value None means infinity."""

    value: Optional[int] = Field(None, description="Bound value, None for infinity")
    strict: bool = Field(False, description="True for <, False for <=")

    model_config = {"frozen": True}

    @classmethod
    def le(cls, value: int) -> "Bound":
        return cls(value=value, strict=False)

    @classmethod
    def lt(cls, value: int) -> "Bound":
        return cls(value=value, strict=True)

    @classmethod
    def infinity(cls) -> "Bound":
        return cls(value=None, strict=True)

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    @property
    def raw(self) -> int:
        if self.value is None:
            return int(INF)
        return 2 * self.value + (0 if self.strict else 1)

    @classmethod
    def from_raw(cls, raw: int) -> "Bound":
        raw = int(raw)
        if raw >= INF:
            return cls.infinity()
        return cls(value=raw >> 1, strict=(raw & 1) == 0)

    def __add__(self, other: "Bound") -> "Bound":
        return Bound.from_raw(int(add_raw(np.int64(self.raw), np.int64(other.raw))))

    def __lt__(self, other: "Bound") -> bool:
        return self.raw < other.raw

    def __le__(self, other: "Bound") -> bool:
        return self.raw <= other.raw

    def __str__(self) -> str:
        if self.value is None:
            return "<inf"
        return f"{'<' if self.strict else '<='}{self.value}"


def encode(values: np.ndarray, nonstrict: np.ndarray) -> np.ndarray:
    """Pack value and strictness arrays into raw bounds"""
    return 2 * np.asarray(values, dtype=np.int64) + np.asarray(nonstrict, dtype=np.int64)


def decode(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split raw bounds into (values, nonstrict flags); INF entries decode to garbage and must be masked"""
    raw = np.asarray(raw, dtype=np.int64)
    return raw >> 1, (raw & 1) == 1


def add_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bound addition on raw encodings: values add, the sum is strict if either side is; INF absorbs"""
    total = a + b - ((a | b) & 1)
    return np.where((a >= INF) | (b >= INF), INF, total)


class Dbm:
    """
    Immutable zone. The wrapped matrix is read-only; every operation returns a new Dbm.

    Attributes:
        clocks: Names of the model clocks, in matrix order
        has_clk: Whether the last row/column is CLK (False for projections)
        matrix: Raw bound matrix
    """

    __slots__ = ("clocks", "has_clk", "matrix", "_index")

    def __init__(self, clocks: Sequence[str], matrix: np.ndarray, has_clk: bool = True):
        self.clocks: Tuple[str, ...] = tuple(clocks)
        self.has_clk = has_clk
        dim = len(self.clocks) + 1 + (1 if has_clk else 0)
        matrix = np.array(matrix, dtype=np.int64)
        if matrix.shape != (dim, dim):
            raise DbmUsageError(f"Matrix shape {matrix.shape} does not match {dim} dimensions")
        matrix.setflags(write=False)
        self.matrix = matrix
        self._index: Dict[str, int] = {name: i + 1 for i, name in enumerate(self.clocks)}
        if has_clk:
            self._index[CLK] = dim - 1

    @classmethod
    def zero(cls, clocks: Sequence[str]) -> "Dbm":
        """All clocks and CLK equal to zero"""
        dim = len(clocks) + 2
        return cls(clocks, np.full((dim, dim), LE_ZERO, dtype=np.int64))

    @classmethod
    def universe(cls, clocks: Sequence[str], has_clk: bool = True) -> "Dbm":
        """All non-negative valuations"""
        dim = len(clocks) + 1 + (1 if has_clk else 0)
        matrix = np.full((dim, dim), INF, dtype=np.int64)
        matrix[0, :] = LE_ZERO
        np.fill_diagonal(matrix, LE_ZERO)
        return cls(clocks, matrix, has_clk)

    @classmethod
    def empty(cls, clocks: Sequence[str], has_clk: bool = True) -> "Dbm":
        dim = len(clocks) + 1 + (1 if has_clk else 0)
        return cls(clocks, np.full((dim, dim), LT_ZERO, dtype=np.int64), has_clk)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def clk_index(self) -> int:
        if not self.has_clk:
            raise DbmUsageError("Projected zone has no CLK column")
        return self.dim - 1

    def index_of(self, clock: str) -> int:
        try:
            return self._index[clock]
        except KeyError:
            raise DbmUsageError(f"Unknown clock: {clock}")

    def bound(self, i: int, j: int) -> Bound:
        return Bound.from_raw(self.matrix[i, j])

    def upper(self, clock: str) -> Bound:
        return self.bound(self.index_of(clock), 0)

    def lower(self, clock: str) -> Bound:
        """Lower bound of a clock as the bound on x_0 - x (value is the negated minimum)"""
        return self.bound(0, self.index_of(clock))

    def is_empty(self) -> bool:
        return bool(np.any(np.diagonal(self.matrix) < LE_ZERO))

    def with_matrix(self, matrix: np.ndarray) -> "Dbm":
        return Dbm(self.clocks, matrix, self.has_clk)

    def contains(self, valuation: Mapping[str, float]) -> bool:
        """Membership of a point; clocks missing from the mapping count as 0"""
        point = np.zeros(self.dim)
        for name, index in self._index.items():
            point[index] = valuation.get(name, 0.0)
        values, nonstrict = decode(self.matrix)
        diff = point[:, None] - point[None, :]
        finite = self.matrix < INF
        ok = np.where(nonstrict, diff <= values, diff < values)
        return bool(np.all(ok | ~finite))

    def render(self) -> str:
        """Conjunction text in row-major order, e.g. `0<=x<=5 & x-y<1`"""
        if self.is_empty():
            return "false"
        names = ["0"] + list(self.clocks) + ([CLK] if self.has_clk else [])
        parts: List[str] = []
        for i in range(1, self.dim):
            lower = self.bound(0, i)
            upper = self.bound(i, 0)
            text = f"{-lower.value}{'<' if lower.strict else '<='}{names[i]}"
            if not upper.is_infinite:
                text += f"{'<' if upper.strict else '<='}{upper.value}"
            parts.append(text)
        for i in range(1, self.dim):
            for j in range(1, self.dim):
                if i == j or self.matrix[i, j] >= INF:
                    continue
                entry = self.bound(i, j)
                parts.append(f"{names[i]}-{names[j]}{'<' if entry.strict else '<='}{entry.value}")
        return " & ".join(parts) if parts else "true"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dbm):
            return NotImplemented
        return (self.clocks == other.clocks and self.has_clk == other.has_clk
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self) -> int:
        return hash((self.clocks, self.has_clk, self.matrix.tobytes()))

    def __repr__(self) -> str:
        return f"Dbm({self.render()})"


def close(d: Dbm) -> Dbm:
    """Canonical form by all-pairs shortest paths; an inconsistent zone comes back as the empty zone"""
    matrix = np.array(d.matrix)
    for k in range(d.dim):
        via = add_raw(matrix[:, k:k + 1], matrix[k:k + 1, :])
        np.minimum(matrix, via, out=matrix)
        if matrix[k, k] < LE_ZERO:
            return Dbm.empty(d.clocks, d.has_clk)
    if np.any(np.diagonal(matrix) < LE_ZERO):
        return Dbm.empty(d.clocks, d.has_clk)
    return d.with_matrix(matrix)


def up(d: Dbm) -> Dbm:
    """Let time elapse: drop every upper bound, CLK included"""
    if d.is_empty():
        return d
    matrix = np.array(d.matrix)
    matrix[1:, 0] = INF
    return d.with_matrix(matrix)


def constraint_entries(d: Dbm, constraint: AtomicConstraint) -> List[Tuple[int, int, int]]:
    """Translate an atomic constraint into (row, column, raw bound) entries"""
    left = d.index_of(constraint.left)
    right = 0 if constraint.right is None else d.index_of(constraint.right)
    c = constraint.bound
    if constraint.relation == "<=":
        return [(left, right, 2 * c + 1)]
    if constraint.relation == "<":
        return [(left, right, 2 * c)]
    if constraint.relation == ">=":
        return [(right, left, -2 * c + 1)]
    if constraint.relation == ">":
        return [(right, left, -2 * c)]
    if constraint.relation in ("=", "=="):
        return [(left, right, 2 * c + 1), (right, left, -2 * c + 1)]
    raise DbmUsageError(f"Unsupported relation: {constraint.relation}")


def conjoin(d: Dbm, constraints: Iterable[AtomicConstraint]) -> Dbm:
    """Intersect with every atomic constraint and re-close"""
    if d.is_empty():
        return d
    matrix = np.array(d.matrix)
    changed = False
    for constraint in constraints:
        for i, j, raw in constraint_entries(d, constraint):
            if raw < matrix[i, j]:
                matrix[i, j] = raw
                changed = True
    if not changed:
        return d
    return close(d.with_matrix(matrix))


def reset(d: Dbm, clocks: Iterable[str]) -> Dbm:
    """Set the given clocks to zero; CLK can never be reset"""
    clocks = list(clocks)
    if CLK in clocks:
        raise DbmUsageError("CLK measures absolute elapsed time and cannot be reset")
    indices = [d.index_of(clock) for clock in clocks]
    if not indices or d.is_empty():
        return d
    matrix = np.array(d.matrix)
    for z in indices:
        matrix[z, :] = matrix[0, :]
        matrix[:, z] = matrix[:, 0]
        matrix[z, z] = LE_ZERO
    return d.with_matrix(matrix)


def relation(a: Dbm, b: Dbm) -> Relation:
    """Inclusion relation of a with respect to b, by entrywise comparison of canonical forms"""
    if a.clocks != b.clocks or a.has_clk != b.has_clk:
        raise DbmUsageError(
            f"Cannot compare zones over {a.clocks} (CLK={a.has_clk}) and {b.clocks} (CLK={b.has_clk})")
    a_empty, b_empty = a.is_empty(), b.is_empty()
    if a_empty or b_empty:
        if a_empty and b_empty:
            return Relation.EQUAL
        return Relation.SUBSET if a_empty else Relation.SUPERSET
    below = bool(np.all(a.matrix <= b.matrix))
    above = bool(np.all(a.matrix >= b.matrix))
    if below and above:
        return Relation.EQUAL
    if below:
        return Relation.SUBSET
    if above:
        return Relation.SUPERSET
    return Relation.INCOMPARABLE


def project_active(d: Dbm, active: Iterable[str]) -> Dbm:
    """Restrict to x_0 and the active model clocks; CLK is always dropped"""
    active = set(active)
    unknown = active - set(d.clocks)
    if unknown:
        raise DbmUsageError(f"Unknown clocks in projection: {sorted(unknown)}")
    kept = [clock for clock in d.clocks if clock in active]
    indices = [0] + [d.index_of(clock) for clock in kept]
    return Dbm(kept, d.matrix[np.ix_(indices, indices)], has_clk=False)


def clk_advance(prev: Dbm, next_zone: Dbm) -> float:
    """Maximal time elapsed between two zones, read off the CLK upper bounds"""
    before = prev.matrix[prev.clk_index, 0]
    after = next_zone.matrix[next_zone.clk_index, 0]
    if before >= INF or after >= INF:
        raise UnboundedDelay(CLK)
    return float(abs(int(after >> 1) - int(before >> 1)))


__all__ = [
    'CLK',
    'INF',
    'Bound',
    'Dbm',
    'DbmUsageError',
    'Relation',
    'UnboundedDelay',
    'add_raw',
    'clk_advance',
    'close',
    'conjoin',
    'constraint_entries',
    'decode',
    'encode',
    'project_active',
    'relation',
    'reset',
    'up',
]
