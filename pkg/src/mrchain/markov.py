"""Independence statements implied by a chain graph, and numerical checks of them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from mrchain.errors import DataError
from mrchain.graph import (
    ChainGraph,
    ComponentOrdering,
    consistent_ordering,
    neighbours,
    non_descendants,
    parent_components,
    parents_of_set,
    predecessors,
    subgraph_connected_components,
)
from mrchain.model import chain_specs, sample_distribution, type_iv_specs
from mrchain.tables import ProbabilityTable, subsets

CI_TOL = 1e-8


@dataclass(frozen=True)
class IndependenceStatement:
    """``B1 _||_ B2 _||_ ... | C`` with blocks ordered by their smallest node."""

    blocks: tuple[tuple[int, ...], ...]
    given: tuple[int, ...] = ()
    source: str = field(default="", compare=False)

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(b)) for b in self.blocks), key=lambda b: (b[0] if b else 0, b)))
        given = tuple(sorted(self.given))
        if len(blocks) < 2 or any(not b for b in blocks):
            raise ValueError("a statement needs at least two non-empty blocks")
        seen = [v for b in blocks for v in b] + list(given)
        if len(seen) != len(set(seen)):
            raise ValueError("blocks and conditioning set must be pairwise disjoint")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "given", given)

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(v for b in self.blocks for v in b) + self.given

    def sort_key(self):
        return (len(self.blocks[0]), self.blocks[0], self.blocks[1:], self.given)

    def render(self, g: ChainGraph | None = None) -> str:
        name = g.name if g is not None else str
        text = " ⊥ ".join(",".join(name(v) for v in b) for b in self.blocks)
        if self.given:
            text += " | " + ",".join(name(v) for v in self.given)
        return text

    def as_dict(self, g: ChainGraph | None = None) -> dict:
        name = g.name if g is not None else (lambda v: v)
        return {
            "blocks": [[name(v) for v in b] for b in self.blocks],
            "given": [name(v) for v in self.given],
            "source": self.source,
        }

    def __str__(self) -> str:
        return self.render()


def _statement(blocks, given, source) -> IndependenceStatement | None:
    blocks = [tuple(b) for b in blocks]
    if sum(1 for b in blocks if b) < 2:
        return None
    return IndependenceStatement(tuple(b for b in blocks if b), tuple(given), source)


def _unique_sorted(statements: Iterable[IndependenceStatement | None]) -> list[IndependenceStatement]:
    out = {}
    for s in statements:
        if s is not None and s not in out:
            out[s] = s
    return sorted(out.values(), key=IndependenceStatement.sort_key)


def mr_independencies(g: ChainGraph, ordering: ComponentOrdering | None = None) -> list[IndependenceStatement]:
    """Statements of the multivariate regression Markov property.

    For every component ``T`` and non-empty ``A`` in ``T``: a connected
    ``A`` gives ``A _||_ pre(T) - pa(A) | pa(A)``; a disconnected one
    gives joint independence of its connected components given
    ``pre(T)``. Statements with an empty independent block are omitted.
    MR1 statements come first, then MR2, each in canonical order.
    """
    ordering = ordering or consistent_ordering(g.dag)
    mr1, mr2 = [], []
    for t in ordering.components:
        pre = predecessors(ordering, t)
        for a in subsets(sorted(t), min_size=1):
            parts = subgraph_connected_components(g, a)
            if len(parts) == 1:
                pa = parents_of_set(g, a)
                mr1.append(_statement([a, sorted(pre - pa)], sorted(pa), "MR1"))
            else:
                mr2.append(_statement(parts, sorted(pre), "MR2"))
    first = _unique_sorted(mr1)
    return first + [s for s in _unique_sorted(mr2) if s not in first]


def type_iv_independencies(g: ChainGraph) -> list[IndependenceStatement]:
    """Statements of the block-recursive property of type IV (IV0, IV1, IV2)."""
    dag = g.dag
    iv0, iv1, iv2 = [], [], []
    for t in dag.components:
        pa_d = parent_components(dag, t)
        nd = non_descendants(dag, t)
        iv0.append(_statement([sorted(t), sorted(nd - pa_d)], sorted(pa_d), "IV0"))
        for a in subsets(sorted(t), min_size=1):
            pa = parents_of_set(g, a)
            iv1.append(_statement([a, sorted(pa_d - pa)], sorted(pa), "IV1"))
            if len(subgraph_connected_components(g, a)) == 1:
                iv2.append(_statement([a, sorted(set(t) - neighbours(g, a))], sorted(pa_d), "IV2"))
    out: list[IndependenceStatement] = []
    for group in (iv0, iv1, iv2):
        out += [s for s in _unique_sorted(group) if s not in out]
    return out


def pairwise_independencies(g: ChainGraph, ordering: ComponentOrdering | None = None) -> list[IndependenceStatement]:
    """``i _||_ k | pre(T)`` within a component, ``i _||_ k | pre(T) - {k}`` for ``k`` in the past."""
    ordering = ordering or consistent_ordering(g.dag)
    out = []
    for t in ordering.components:
        pre = predecessors(ordering, t)
        members = sorted(t)
        for i in members:
            for k in members:
                if i < k and not g.adjacent(i, k):
                    out.append(_statement([(i,), (k,)], sorted(pre), "pairwise"))
            for k in sorted(pre):
                if not g.adjacent(i, k):
                    out.append(_statement([(i,), (k,)], sorted(pre - {k}), "pairwise"))
    return _unique_sorted(out)


# -- numerical checks --------------------------------------------------------------------


def ci_discrepancy(p: ProbabilityTable, s: IndependenceStatement) -> float:
    """``max |p(blocks | given) - prod_j p(block_j | given)|`` over all cells."""
    if not p.is_joint:
        raise DataError("independence checks need a joint table")
    missing = [v for v in s.variables if v not in p.lattice.variables]
    if missing:
        raise DataError(f"statement {s} refers to unknown variables {missing}")
    order = s.given + tuple(v for b in s.blocks for v in b)
    arr = _margin(p, order)
    k = int(np.prod(p.lattice.levels_of(s.given), dtype=np.int64)) if s.given else 1
    sizes = [int(np.prod(p.lattice.levels_of(b), dtype=np.int64)) for b in s.blocks]
    arr = arr.reshape([k] + sizes)
    r = len(sizes)
    cond = arr / arr.sum(axis=tuple(range(1, r + 1)), keepdims=True)
    product = np.ones_like(cond)
    for j in range(r):
        other = tuple(ax for ax in range(1, r + 1) if ax != j + 1)
        product = product * cond.sum(axis=other, keepdims=True)
    return float(np.abs(cond - product).max())


def _margin(p: ProbabilityTable, order: Sequence[int]) -> np.ndarray:
    lattice = p.lattice
    axes = [lattice.axis(v) for v in order]
    drop = tuple(a for a in range(p.values.ndim) if a not in axes)
    summed = p.values.sum(axis=drop) if drop else p.values
    kept = sorted(axes)
    return np.transpose(summed, [kept.index(a) for a in axes])


def check_ci(p: ProbabilityTable, s: IndependenceStatement, tol: float = CI_TOL) -> bool:
    """Brute-force check of a (joint) conditional independence in ``p``."""
    return ci_discrepancy(p, s) <= tol


@dataclass(frozen=True)
class EquivalenceReport:
    draws: int
    mr_to_iv: int
    iv_to_mr: int
    n_iv_statements: int
    n_mr_statements: int
    worst_discrepancy: float
    failures: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.mr_to_iv == self.draws and self.iv_to_mr == self.draws

    def summary(self) -> str:
        return f"{self.mr_to_iv}/{self.draws} MR→IV, {self.iv_to_mr}/{self.draws} IV→MR"

    def as_dict(self) -> dict:
        return {
            "draws": self.draws,
            "mr_to_iv": self.mr_to_iv,
            "iv_to_mr": self.iv_to_mr,
            "iv_statements": self.n_iv_statements,
            "mr_statements": self.n_mr_statements,
            "worst_discrepancy": self.worst_discrepancy,
            "failures": list(self.failures),
        }


def certify_equivalence(
    g: ChainGraph,
    draws: int = 50,
    seed: int = 0,
    levels: Mapping[int, int] | None = None,
    ordering: ComponentOrdering | None = None,
    tol: float = CI_TOL,
) -> EquivalenceReport:
    """Check by sampling that the MR and type-IV models coincide.

    Forward: distributions built from uniform draws of the free
    coefficients of the per-component MR regressions (covariates
    ``pre(T)``) must satisfy every type-IV statement. Reverse:
    distributions built from the parent-component parameterization
    (covariates ``pa_D(T)``) must satisfy every MR statement. Draw ``i``
    uses the generator seeded with ``(seed, i)``.
    """
    ordering = ordering or consistent_ordering(g.dag)
    levels = dict(levels or {v: 2 for v in g.nodes})
    mr_specs = chain_specs(g, levels, ordering)
    iv_specs = type_iv_specs(g, levels)
    iv_statements = type_iv_independencies(g)
    mr_statements = mr_independencies(g, ordering)
    forward = reverse = 0
    worst = 0.0
    failures = []
    for i in range(draws):
        p = sample_distribution(mr_specs, levels, np.random.default_rng([seed, i, 0]))
        gaps = [ci_discrepancy(p, s) for s in iv_statements]
        worst = max([worst] + gaps)
        bad = [s.render(g) for s, gap in zip(iv_statements, gaps) if gap > tol]
        forward += not bad
        failures += [f"draw {i} MR→IV: {b}" for b in bad]

        q = sample_distribution(iv_specs, levels, np.random.default_rng([seed, i, 1]))
        gaps = [ci_discrepancy(q, s) for s in mr_statements]
        worst = max([worst] + gaps)
        bad = [s.render(g) for s, gap in zip(mr_statements, gaps) if gap > tol]
        reverse += not bad
        failures += [f"draw {i} IV→MR: {b}" for b in bad]
    return EquivalenceReport(
        draws, forward, reverse, len(iv_statements), len(mr_statements), worst, tuple(failures[:20])
    )
