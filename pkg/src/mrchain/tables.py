"""Contingency-table arithmetic.

Cells of a table are enumerated lexicographically with the last variable
varying fastest, which is numpy's C order: a table over variables
``(v1, ..., vd)`` is stored as an array of shape ``(r1, ..., rd)`` and
``values.ravel()`` lists the cells in the global order used by every
matrix in the package. Level ``k`` of a variable (1-based) sits at array
index ``k - 1``; level 1 is the baseline.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from mrchain.errors import DataError

POSITIVITY_THRESHOLD = 1e-300


def subsets(items: Sequence, min_size: int = 0) -> list[tuple]:
    """All subsets of ``items`` as tuples, by size then lexicographically."""
    items = tuple(items)
    return [c for k in range(min_size, len(items) + 1) for c in itertools.combinations(items, k)]


@dataclass(frozen=True)
class CellLattice:
    """The cells ``I`` of a contingency table and its baseline-free part ``I*``."""

    variables: tuple[Hashable, ...]
    levels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "levels", tuple(int(r) for r in self.levels))
        if len(self.variables) != len(self.levels):
            raise DataError("variables and levels differ in length")
        if len(set(self.variables)) != len(self.variables):
            raise DataError(f"duplicate variables in {self.variables}")
        for v, r in zip(self.variables, self.levels):
            if r < 2:
                raise DataError(f"variable {v!r} needs at least 2 levels, got {r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.levels

    @property
    def size(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64))

    @property
    def star_size(self) -> int:
        return int(np.prod([r - 1 for r in self.levels], dtype=np.int64))

    def axis(self, variable: Hashable) -> int:
        try:
            return self.variables.index(variable)
        except ValueError:
            raise DataError(f"unknown variable {variable!r}") from None

    def levels_of(self, variables: Iterable[Hashable]) -> tuple[int, ...]:
        return tuple(self.levels[self.axis(v)] for v in variables)

    def sub(self, variables: Iterable[Hashable]) -> "CellLattice":
        variables = tuple(variables)
        return CellLattice(variables, self.levels_of(variables))

    def cells(self) -> list[tuple[int, ...]]:
        """1-based cell indices in storage order."""
        return list(itertools.product(*(range(1, r + 1) for r in self.levels)))

    def star_cells(self) -> list[tuple[int, ...]]:
        """Cells of ``I*`` (every index at level 2 or above) in storage order."""
        return list(itertools.product(*(range(2, r + 1) for r in self.levels)))


@dataclass(frozen=True)
class ProbabilityTable:
    """A joint table, or a conditional one when ``conditioning`` is non-empty.

    For a conditional table the values sum to one within every cell of
    the conditioning variables.
    """

    lattice: CellLattice
    values: np.ndarray
    conditioning: tuple[Hashable, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(self.lattice.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "conditioning", tuple(self.conditioning))
        if not np.all(np.isfinite(values)) or values.min() <= POSITIVITY_THRESHOLD:
            raise DataError("probability table must be strictly positive")
        cond_axes = tuple(self.lattice.axis(v) for v in self.conditioning)
        resp_axes = tuple(a for a in range(values.ndim) if a not in cond_axes)
        totals = values.sum(axis=resp_axes) if resp_axes else values
        if not np.allclose(totals, 1.0, rtol=0, atol=1e-8):
            raise DataError("probability table is not normalised")

    @property
    def variables(self) -> tuple[Hashable, ...]:
        return self.lattice.variables

    @property
    def is_joint(self) -> bool:
        return not self.conditioning

    def vector(self) -> np.ndarray:
        return self.values.ravel()

    def __getitem__(self, cell: tuple[int, ...]) -> float:
        return float(self.values[tuple(i - 1 for i in cell)])


@dataclass(frozen=True)
class ContingencyTable:
    """Observed counts over a lattice."""

    lattice: CellLattice
    counts: np.ndarray
    labels: Mapping[Hashable, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float).reshape(self.lattice.shape)
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise DataError("counts must be finite and nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def margin(self, variables: Sequence[Hashable]) -> np.ndarray:
        """Counts summed over every variable not in ``variables``, axes in the given order."""
        return _margin_array(self.lattice, self.counts, variables)

    def reorder(self, variables: Sequence[Hashable]) -> "ContingencyTable":
        variables = tuple(variables)
        if set(variables) != set(self.lattice.variables):
            raise DataError("reorder needs a permutation of the table's variables")
        return ContingencyTable(self.lattice.sub(variables), self.margin(variables), self.labels)

    def to_probability(self, smoothing: float = 0.0) -> ProbabilityTable:
        smoothed = self.counts + smoothing
        if smoothed.sum() <= 0:
            raise DataError("empty table")
        return ProbabilityTable(self.lattice, smoothed / smoothed.sum())


def _margin_array(lattice: CellLattice, values: np.ndarray, variables: Sequence[Hashable]) -> np.ndarray:
    axes = [lattice.axis(v) for v in variables]
    if len(set(axes)) != len(axes):
        raise DataError(f"repeated variables in {tuple(variables)}")
    drop = tuple(a for a in range(values.ndim) if a not in axes)
    summed = values.sum(axis=drop) if drop else values
    kept = sorted(axes)
    return np.transpose(summed, [kept.index(a) for a in axes])


def marginalize(p: ProbabilityTable, variables: Sequence[Hashable]) -> ProbabilityTable:
    """Marginal table over ``variables``, in the order given."""
    variables = tuple(variables)
    if not variables:
        raise DataError("cannot marginalize onto an empty variable set")
    if not p.is_joint:
        raise DataError("marginalize expects a joint table")
    return ProbabilityTable(p.lattice.sub(variables), _margin_array(p.lattice, p.values, variables))


def condition(p: ProbabilityTable, a: Sequence[Hashable], b: Sequence[Hashable]) -> ProbabilityTable:
    """The conditional table ``p(i_a | i_b)``, stored over ``b + a`` with ``b`` outermost."""
    a, b = tuple(a), tuple(b)
    if set(a) & set(b):
        raise DataError("response and conditioning sets must be disjoint")
    if not a:
        raise DataError("empty response set")
    joint = _margin_array(p.lattice, p.values, b + a)
    if b:
        den = joint.sum(axis=tuple(range(len(b), len(b) + len(a))), keepdims=True)
        if np.any(den <= 0):
            raise DataError("zero marginal probability in conditioning class")
        joint = joint / den
    return ProbabilityTable(p.lattice.sub(b + a), joint, conditioning=b)


# -- log-linear expansion -------------------------------------------------------


@dataclass(frozen=True)
class LogLinearExpansion:
    """Baseline-coded log-linear terms.

    ``terms[s]`` is an array over ``I*_s`` (shape ``r_v - 1`` per
    variable of ``s``); ``terms[()]`` is the 0-d constant. Terms vanish
    whenever an index is at level 1, so those cells are not stored.
    """

    lattice: CellLattice
    terms: Mapping[tuple, np.ndarray]

    def term(self, variables: Sequence[Hashable]) -> np.ndarray:
        order = sorted(variables, key=self.lattice.axis)
        arr = self.terms[tuple(order)]
        perm = [order.index(v) for v in variables]
        return np.transpose(arr, perm)

    def value(self, variables: Sequence[Hashable], cell: Sequence[int]) -> float:
        """``lambda_s(i_s)`` at a 1-based cell, zero if any index is at level 1."""
        if any(i == 1 for i in cell):
            return 0.0
        return float(self.term(variables)[tuple(i - 2 for i in cell)])


def _baseline_differences(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        rest = np.take(out, range(1, out.shape[ax]), axis=ax) - base
        out = np.concatenate([base, rest], axis=ax)
    return out


def _baseline_sums(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        rest = np.take(out, range(1, out.shape[ax]), axis=ax) + base
        out = np.concatenate([base, rest], axis=ax)
    return out


def loglinear_expand(p: ProbabilityTable) -> LogLinearExpansion:
    """Log-linear expansion of a joint table under baseline coding.

    Differencing ``log p`` against level 1 along every axis gives, at a
    cell whose non-baseline indices are ``s``, the alternating sum
    ``sum_{t <= s} (-1)^{|s - t|} log p(i_t, 1_{s - t})``.
    """
    if not p.is_joint:
        raise DataError("log-linear expansion expects a joint table")
    lam = _baseline_differences(np.log(p.values))
    variables = p.lattice.variables
    terms = {}
    for s in subsets(variables):
        index = tuple(slice(1, None) if v in s else 0 for v in variables)
        terms[s] = np.array(lam[index])
    return LogLinearExpansion(p.lattice, terms)


def loglinear_collapse(e: LogLinearExpansion) -> ProbabilityTable:
    """Inverse of :func:`loglinear_expand`."""
    variables = e.lattice.variables
    lam = np.zeros(e.lattice.shape)
    for s, arr in e.terms.items():
        index = tuple(slice(1, None) if v in s else 0 for v in variables)
        lam[index] = arr
    return ProbabilityTable(e.lattice, np.exp(_baseline_sums(lam)))


# -- subset lattice --------------------------------------------------------------


def _ground(f: Mapping[frozenset, object], ground: Iterable | None) -> tuple:
    if ground is None:
        items = set().union(*f.keys()) if f else set()
    else:
        items = set(ground)
    return tuple(sorted(items, key=repr))


def zeta_transform(f: Mapping[frozenset, object], ground: Iterable | None = None) -> dict:
    """``g(s) = sum_{t <= s} f(t)`` over the subsets of ``ground``; missing entries are 0."""
    items = _ground(f, ground)
    return {
        frozenset(s): sum((f.get(frozenset(t), 0) for t in subsets(s)), start=0)
        for s in subsets(items)
    }


def mobius_invert(g: Mapping[frozenset, object], ground: Iterable | None = None) -> dict:
    """``f(s) = sum_{t <= s} (-1)^{|s - t|} g(t)``, the inverse of :func:`zeta_transform`."""
    items = _ground(g, ground)
    return {
        frozenset(s): sum(
            ((-1) ** (len(s) - len(t)) * g.get(frozenset(t), 0) for t in subsets(s)), start=0
        )
        for s in subsets(items)
    }


# -- CSV ingestion -----------------------------------------------------------------


def read_counts_csv(
    source: str | Path | io.TextIOBase,
    levels: Mapping[str, Sequence[str]] | None = None,
) -> ContingencyTable:
    """Read a counts CSV into a :class:`ContingencyTable`.

    The header names the variables plus an optional ``count`` column;
    without it every row is one record. Integer level codes are used as
    1-based levels. Other labels are numbered in order of first
    appearance unless ``levels`` fixes the order for that variable.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    else:
        raise DataError(f"data file not found: {source}")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty data file", line=1)
    header = [h.strip() for h in rows[0]]
    count_col = header.index("count") if "count" in header else None
    names = [h for i, h in enumerate(header) if i != count_col]
    if not names:
        raise DataError("no variable columns in header", line=1)
    if len(set(names)) != len(names):
        raise DataError("duplicate column names", line=1)

    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        row = [c.strip() for c in row]
        if count_col is None:
            n = 1.0
        else:
            try:
                n = float(row[count_col])
            except ValueError:
                raise DataError(f"bad count {row[count_col]!r}", line=lineno) from None
            if n < 0:
                raise DataError("negative count", line=lineno)
        values = [c for i, c in enumerate(row) if i != count_col]
        records.append((lineno, values, n))

    levels = dict(levels or {})
    codes: list[dict[str, int]] = []
    labels = {}
    for j, name in enumerate(names):
        observed = [rec[1][j] for rec in records]
        if name in levels:
            order = [str(x) for x in levels[name]]
        elif observed and all(_is_positive_int(x) for x in observed):
            top = max(int(x) for x in observed)
            order = [str(k) for k in range(1, max(top, 2) + 1)]
        else:
            order = list(dict.fromkeys(observed))
        codes.append({_level_key(lab): k for k, lab in enumerate(order, start=1)})
        labels[name] = tuple(order)

    shape = tuple(max(len(labels[n]), 2) for n in names)
    counts = np.zeros(shape)
    for lineno, values, n in records:
        index = []
        for j, val in enumerate(values):
            key = _level_key(val)
            if key not in codes[j]:
                raise DataError(f"level {val!r} of {names[j]!r} not in levels manifest", line=lineno)
            index.append(codes[j][key] - 1)
        counts[tuple(index)] += n
    return ContingencyTable(CellLattice(tuple(names), shape), counts, labels)


def _level_key(text: str) -> str:
    return str(int(text)) if _is_positive_int(text) else text


def _is_positive_int(text: str) -> bool:
    try:
        return int(text) >= 1 and float(text) == int(text)
    except ValueError:
        return False
