"""Multivariate logistic regression models for chain components.

For a component ``T`` with covariates ``pre(T)`` (or ``pa_D(T)``) the
saturated model writes the contrasts of every margin ``A`` of ``T`` as a
complete factorial model in the covariates. Stacking ``eta^(A)`` cell by
cell, each cell holding one entry per covariate class, gives the design
``Z^(A) = I kron D`` where ``D`` is the baseline-coded factorial design
of the covariates; the whole component uses ``Z = I_{J-1} kron D``.

Fitting maximises the product-multinomial log-likelihood subject to
``U' C log(M mu) = 0``, with ``U`` an orthonormal basis of the orthogonal
complement of the reduced design.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from mrchain.errors import ConvergenceError, DataError, ModelError
from mrchain.graph import (
    ChainGraph,
    ComponentOrdering,
    consistent_ordering,
    parent_components,
    parents_of_set,
    predecessors,
    subgraph_connected_components,
)
from mrchain.mlogit import LinkSpec, build_link, invert_link, link_jacobian
from mrchain.tables import CellLattice, ContingencyTable, ProbabilityTable, subsets

FIT_TOL = 1e-8
FIT_MAX_ITER = 100
MAX_HALVINGS = 20


@dataclass(frozen=True, order=True)
class TermKey:
    """One coefficient block ``beta^(A)_b``: response margin ``A`` by covariate set ``b``."""

    margin: tuple[int, ...]
    covariates: tuple[int, ...] = ()

    @property
    def order(self) -> int:
        """Log-linear order of the term, ``|A| + |b|``."""
        return len(self.margin) + len(self.covariates)


def factorial_design(levels: Sequence[int]) -> np.ndarray:
    """Baseline-coded complete factorial design; one row per covariate class."""
    out = np.ones((1, 1))
    for r in levels:
        d = np.zeros((r, r))
        d[:, 0] = 1.0
        d[1:, 1:] = np.eye(r - 1)
        out = np.kron(out, d)
    return out


def _design_columns(covariates: Sequence[int], levels: Sequence[int]) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """``(b, i*_b)`` for every column of :func:`factorial_design`, 1-based levels."""
    cols = []
    for codes in itertools.product(*(range(r) for r in levels)):
        b = tuple(v for v, c in zip(covariates, codes) if c > 0)
        cell = tuple(c + 1 for c in codes if c > 0)
        cols.append((b, cell))
    return cols


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Design bookkeeping for one component's regression model."""

    component: tuple[int, ...]
    covariates: tuple[int, ...]
    levels: Mapping[int, int]
    included: frozenset[TermKey]
    names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "component", tuple(sorted(self.component)))
        object.__setattr__(self, "covariates", tuple(sorted(self.covariates)))
        object.__setattr__(self, "included", frozenset(self.included))
        unknown = self.included - set(self.terms)
        if unknown:
            raise ModelError(f"terms not in the saturated model: {sorted(unknown)}")

    # -- structure --------------------------------------------------------------

    @cached_property
    def link(self) -> LinkSpec:
        return build_link(CellLattice(self.component, [self.levels[v] for v in self.component]))

    @cached_property
    def covariate_levels(self) -> tuple[int, ...]:
        return tuple(self.levels[v] for v in self.covariates)

    @property
    def n_classes(self) -> int:
        return int(np.prod(self.covariate_levels, dtype=np.int64))

    @property
    def n_cells(self) -> int:
        return self.link.lattice.size

    @cached_property
    def design(self) -> np.ndarray:
        return factorial_design(self.covariate_levels)

    @cached_property
    def terms(self) -> tuple[TermKey, ...]:
        """Every term of the saturated model, margins in link order."""
        bs = subsets(self.covariates)
        return tuple(TermKey(a, b) for a in self.link.margins for b in bs)

    @cached_property
    def columns(self) -> list[tuple[TermKey, tuple[int, ...], tuple[int, ...]]]:
        """``(term, i*_A, i*_b)`` for each column of the saturated ``Z``."""
        design_cols = _design_columns(self.covariates, self.covariate_levels)
        return [
            (TermKey(a, b), a_cell, b_cell)
            for a, a_cell in self.link.row_labels
            for b, b_cell in design_cols
        ]

    @cached_property
    def mask(self) -> np.ndarray:
        return np.array([key in self.included for key, _, _ in self.columns], dtype=bool)

    @cached_property
    def Z(self) -> np.ndarray:
        """Saturated design, square and invertible."""
        return np.kron(np.eye(self.link.dim), self.design)

    @cached_property
    def Z_r(self) -> np.ndarray:
        return self.Z[:, self.mask]

    @property
    def n_saturated(self) -> int:
        return self.Z.shape[1]

    @property
    def n_params(self) -> int:
        return int(self.mask.sum())

    @property
    def is_saturated(self) -> bool:
        return self.n_params == self.n_saturated

    def term_dim(self, key: TermKey) -> int:
        return int(np.prod([self.levels[v] - 1 for v in key.margin + key.covariates], dtype=np.int64))

    def with_terms(self, included: Iterable[TermKey]) -> "ModelSpec":
        return replace(self, included=frozenset(included))

    def margin_block(self, margin: Sequence[int]) -> np.ndarray:
        """Rows and columns of ``Z`` belonging to one margin: ``I kron D``."""
        s = self.link.slices[tuple(margin)]
        k = self.design.shape[0]
        return self.Z[s.start * k : s.stop * k, s.start * k : s.stop * k]

    # -- presentation ------------------------------------------------------------

    def _name(self, v: int) -> str:
        return self.names.get(v, str(v))

    def label(self, nodes: Sequence[int]) -> str:
        text = "".join(self._name(v) for v in nodes)
        return "X" + text if all(self._name(v).isdigit() for v in nodes) else text

    def _covariate_term(self, b: Sequence[int], sep: str) -> str:
        return sep.join(self.label((v,)) for v in b)

    def margin_formula(self, margin: Sequence[int]) -> str:
        present = [key.covariates for key in self.terms if key.margin == tuple(margin) and key in self.included]
        if not present:
            return "0"
        if present == [()]:
            return "1"
        have = set(present)
        if all(set(subsets(b)) <= have for b in present):
            maximal = [b for b in present if b and not any(set(b) < set(c) for c in present)]
            return " + ".join(self._covariate_term(b, "*") for b in maximal)
        parts = ["1" if not b else self._covariate_term(b, ".") for b in present]
        text = " + ".join(parts)
        return text if () in have else text + " - 1"

    def formula(self) -> str:
        return "; ".join(f"{self.label(a)}: {self.margin_formula(a)}" for a in self.link.margins)


# -- model construction --------------------------------------------------------------


def saturated_design(
    component: Sequence[int],
    covariates: Sequence[int],
    levels: Mapping[int, int],
    names: Mapping[int, str] | None = None,
) -> ModelSpec:
    component, covariates = tuple(component), tuple(covariates)
    if set(component) & set(covariates):
        raise ModelError("responses and covariates overlap")
    for v in component + covariates:
        if levels.get(v, 0) < 2:
            raise ModelError(f"variable {v} needs at least two levels")
    spec = ModelSpec(component, covariates, dict(levels), frozenset(), dict(names or {}))
    return spec.with_terms(spec.terms)


def graph_allowed_terms(spec: ModelSpec, g: ChainGraph) -> frozenset[TermKey]:
    """Terms the chain graph leaves free.

    ``beta^(A)_b`` survives iff ``A`` is connected and ``b`` is a subset
    of ``pa_G(A)``; every term of a disconnected margin is zero.
    """
    allowed = set()
    for a in spec.link.margins:
        if len(subgraph_connected_components(g, a)) > 1:
            continue
        pa = parents_of_set(g, a)
        if not pa <= set(spec.covariates):
            raise ModelError(
                f"parents {sorted(pa)} of {list(a)} are not all covariates of the component model"
            )
        allowed.update(TermKey(a, b) for b in subsets(sorted(pa)))
    return frozenset(allowed)


def constrain(spec: ModelSpec, g: ChainGraph) -> ModelSpec:
    """Impose the graph's zero restrictions on ``spec`` (on top of any already present)."""
    return spec.with_terms(spec.included & graph_allowed_terms(spec, g))


def truncate_order(spec: ModelSpec, max_order: int, keep: Iterable[TermKey] = ()) -> ModelSpec:
    """Drop terms of log-linear order above ``max_order`` except those listed in ``keep``."""
    keep = set(keep)
    return spec.with_terms(k for k in spec.included if k.order <= max_order or k in keep)


def drop_terms(spec: ModelSpec, keys: Iterable[TermKey]) -> ModelSpec:
    return spec.with_terms(spec.included - set(keys))


def df_count(saturated, reduced=None) -> int:
    """Number of constrained parameters.

    ``df_count(sat, red)`` compares two specs of one component;
    ``df_count(model)`` sums over the components of a :class:`ChainModel`;
    ``df_count(specs)`` sums over a sequence of reduced specs.
    """
    if reduced is not None:
        if saturated.n_saturated != reduced.n_saturated:
            raise ModelError("specs describe different components")
        return saturated.n_params - reduced.n_params
    if isinstance(saturated, ChainModel):
        return sum(fit.df for fit in saturated.fits)
    if isinstance(saturated, ModelSpec):
        return saturated.n_saturated - saturated.n_params
    return sum(s.n_saturated - s.n_params for s in saturated)


# -- fitting ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: ModelSpec
    beta: np.ndarray
    fitted: np.ndarray
    deviance: float
    df: int
    iterations: int
    converged: bool

    @property
    def beta_labels(self) -> list[tuple[TermKey, tuple[int, ...], tuple[int, ...]]]:
        return [c for c, keep in zip(self.spec.columns, self.spec.mask) if keep]

    @property
    def probabilities(self) -> np.ndarray:
        """Fitted conditional distribution, one row per covariate class."""
        return self.fitted / self.fitted.sum(axis=1, keepdims=True)

    @property
    def p_value(self) -> float:
        return float(chi2.sf(self.deviance, self.df)) if self.df > 0 else 1.0

    def coefficient_table(self) -> dict[str, float]:
        spec = self.spec
        out = {}
        for (key, a_cell, b_cell), value in zip(self.beta_labels, self.beta):
            resp = spec.label(key.margin) + _cell_text(a_cell)
            cov = "1" if not key.covariates else ".".join(
                spec.label((v,)) + f"({i})" for v, i in zip(key.covariates, b_cell)
            )
            out[f"{resp}:{cov}"] = float(value)
        return out


def _cell_text(cell: Sequence[int]) -> str:
    return "(" + ",".join(str(i) for i in cell) + ")"


def _eta_stack(spec: ModelSpec, mu: np.ndarray) -> np.ndarray:
    """``eta_T`` in design order (cell outer, class inner) from ``mu`` of shape ``(K, J)``."""
    link = spec.link
    e = np.log(mu @ link.M.T) @ link.C.T
    return e.T.ravel()


def _eta_jacobian(spec: ModelSpec, mu: np.ndarray) -> np.ndarray:
    """Derivative of :func:`_eta_stack` with respect to ``log mu`` (class-major cells)."""
    link = spec.link
    k, j = mu.shape
    blocks = np.stack([link_jacobian(link, mu[c]) * mu[c] for c in range(k)])
    out = np.zeros((link.dim, k, k, j))
    idx = np.arange(k)
    out[:, idx, idx, :] = blocks.transpose(1, 0, 2)
    return out.reshape(link.dim * k, k * j)


def constraint_basis(spec: ModelSpec) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``col(Z_r)``."""
    z_r = spec.Z_r
    q, _ = np.linalg.qr(z_r, mode="complete") if z_r.shape[1] else (np.eye(z_r.shape[0]), None)
    basis = q[:, z_r.shape[1] :]
    # fix signs so the basis does not depend on LAPACK details
    signs = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(basis.shape[1])])
    return basis * np.where(signs == 0, 1.0, signs)


def _check_counts(counts: np.ndarray, spec: ModelSpec) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (spec.n_classes, spec.n_cells):
        counts = counts.reshape(spec.n_classes, spec.n_cells)
    if np.any(counts < 0):
        raise DataError("negative counts")
    if np.any(counts.sum(axis=1) <= 0):
        raise DataError("a covariate class has no observations")
    return counts


def deviance(y: np.ndarray, mu: np.ndarray) -> float:
    y, mu = np.ravel(y), np.ravel(mu)
    pos = y > 0
    return float(2.0 * np.sum(y[pos] * np.log(y[pos] / mu[pos])))


def lagrangian_step(spec: ModelSpec, basis_t: np.ndarray, y: np.ndarray, omega: np.ndarray):
    """One Aitchison-Silvey Newton step; returns ``(h, step, multipliers)``."""
    k, j = spec.n_classes, spec.n_cells
    mu = np.exp(omega)
    h = basis_t @ _eta_stack(spec, mu.reshape(k, j))
    hj = basis_t @ _eta_jacobian(spec, mu.reshape(k, j))
    resid = y - mu
    hd = hj / mu
    lam = np.linalg.solve(hd @ hj.T, -(h + hd @ resid))
    step = (resid + hj.T @ lam) / mu
    return h, step, lam


def fit_component(
    counts: np.ndarray,
    spec: ModelSpec,
    tol: float = FIT_TOL,
    max_iter: int = FIT_MAX_ITER,
) -> FitResult:
    """Constrained product-multinomial MLE for one component.

    ``counts`` has one row per covariate class and one column per
    response cell. Iterates the Lagrangian Newton step from
    ``log(y + 0.5)`` with step halving on ``max(|h|, |step|)`` until that
    quantity falls below ``tol``.
    """
    counts = _check_counts(counts, spec)
    k, j = counts.shape
    y = counts.ravel()
    df = spec.n_saturated - spec.n_params
    if df == 0:
        return FitResult(spec, _beta(spec, counts), counts.copy(), 0.0, 0, 0, True)

    basis_t = constraint_basis(spec).T
    omega = np.log(y + 0.5)

    def merit(om):
        h, step, _ = lagrangian_step(spec, basis_t, y, om)
        return max(np.abs(h).max(), np.abs(step).max()), step

    crit, step = merit(omega)
    iterations, converged = 0, False
    while iterations < max_iter:
        if crit < tol:
            converged = True
            break
        iterations += 1
        size = 1.0
        for _ in range(MAX_HALVINGS):
            trial = omega + size * step
            try:
                crit_new, step_new = merit(trial)
            except (np.linalg.LinAlgError, FloatingPointError):
                crit_new = np.inf
            if np.isfinite(crit_new) and crit_new < crit:
                break
            size /= 2
        if not np.isfinite(crit_new):
            break
        omega, crit, step = trial, crit_new, step_new
    if not converged:
        raise ConvergenceError(
            f"constrained fit did not converge in {max_iter} iterations (criterion {crit:.2e})",
            module="model",
            iterations=iterations,
        )
    mu = np.exp(omega).reshape(k, j)
    # the constraints are invariant to rescaling a class, and the MLE matches class totals
    mu *= (counts.sum(axis=1) / mu.sum(axis=1))[:, None]
    return FitResult(spec, _beta(spec, mu), mu, deviance(counts, mu), df, iterations, True)


def _beta(spec: ModelSpec, mu: np.ndarray) -> np.ndarray:
    if np.any(mu <= 0):
        return np.full(spec.n_params, np.nan)
    eta = _eta_stack(spec, mu)
    return np.linalg.lstsq(spec.Z_r, eta, rcond=None)[0]


# -- sampling from a model --------------------------------------------------------------


def eta_from_beta(spec: ModelSpec, beta: np.ndarray) -> np.ndarray:
    """Per-class contrasts, shape ``(K, J - 1)``, from reduced coefficients."""
    eta = spec.Z_r @ np.asarray(beta, dtype=float)
    return eta.reshape(spec.link.dim, spec.n_classes).T


def conditional_from_beta(spec: ModelSpec, beta: np.ndarray) -> np.ndarray:
    """Conditional response distribution per covariate class, shape ``(K, J)``."""
    eta = eta_from_beta(spec, beta)
    return np.stack([invert_link(spec.link, e)[0] for e in eta])


def sample_conditional(
    spec: ModelSpec,
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 1.0,
    max_tries: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw free coefficients uniformly and map them to conditionals.

    Multivariate logistic parameters are not variation independent, so
    a draw may fall outside the image of the link; such draws are
    redrawn. Returns ``(beta, conditional)``.
    """
    for _ in range(max_tries):
        beta = rng.uniform(low, high, spec.n_params)
        try:
            return beta, conditional_from_beta(spec, beta)
        except ConvergenceError:
            continue
    raise ConvergenceError(f"no feasible draw in {max_tries} tries", module="model")


def product_distribution(
    levels: Mapping[int, int],
    factors: Iterable[tuple[Sequence[int], Sequence[int], np.ndarray]],
) -> ProbabilityTable:
    """Joint table over nodes ``1..d`` as a product of conditionals.

    Each factor is ``(responses, covariates, table)`` with ``table`` of
    shape ``(K, J)`` listing response cells per covariate class.
    """
    nodes = sorted(levels)
    shape = tuple(levels[v] for v in nodes)
    joint = np.ones(shape)
    for responses, covariates, table in factors:
        order = tuple(covariates) + tuple(responses)
        arr = np.asarray(table).reshape(tuple(levels[v] for v in order))
        perm = sorted(range(len(order)), key=lambda i: order[i])
        arr = np.transpose(arr, perm)
        present = sorted(order)
        joint = joint * arr.reshape(tuple(levels[v] if v in present else 1 for v in nodes))
    return ProbabilityTable(CellLattice(tuple(nodes), shape), joint / joint.sum())


# -- chain models ---------------------------------------------------------------------


def component_counts(table: ContingencyTable, spec: ModelSpec) -> np.ndarray:
    arr = table.margin(spec.covariates + spec.component)
    return arr.reshape(spec.n_classes, spec.n_cells)


def align_data(g: ChainGraph, data: ContingencyTable) -> ContingencyTable:
    """Re-key a data table by node id, marginalising away columns not in the graph."""
    missing = [g.name(v) for v in g.nodes if g.name(v) not in data.lattice.variables]
    if missing:
        raise DataError(f"data has no column for nodes {missing}")
    counts = data.margin([g.name(v) for v in g.nodes])
    return ContingencyTable(CellLattice(g.nodes, counts.shape), counts)


def chain_specs(
    g: ChainGraph,
    levels: Mapping[int, int],
    ordering: ComponentOrdering | None = None,
    max_order: int | None = None,
    keep: Iterable[TermKey] = (),
) -> list[ModelSpec]:
    """Graph-constrained spec for each component, in ordering order."""
    ordering = ordering or consistent_ordering(g.dag)
    names = {v: g.name(v) for v in g.nodes}
    specs = []
    for t in ordering.components:
        spec = constrain(saturated_design(sorted(t), sorted(predecessors(ordering, t)), levels, names), g)
        if max_order is not None:
            spec = truncate_order(spec, max_order, keep)
        specs.append(spec)
    return specs


@dataclass(frozen=True, eq=False)
class ChainModel:
    graph: ChainGraph
    ordering: ComponentOrdering
    fits: tuple[FitResult, ...]

    @property
    def specs(self) -> tuple[ModelSpec, ...]:
        return tuple(f.spec for f in self.fits)

    @property
    def deviance(self) -> float:
        return float(sum(f.deviance for f in self.fits))

    @property
    def df(self) -> int:
        return sum(f.df for f in self.fits)

    @property
    def p_value(self) -> float:
        return float(chi2.sf(self.deviance, self.df)) if self.df > 0 else 1.0

    def joint(self) -> ProbabilityTable:
        """Fitted joint distribution, the product of the component conditionals."""
        levels = dict(self.fits[0].spec.levels)
        for f in self.fits:
            levels.update(f.spec.levels)
        return product_distribution(
            levels, [(f.spec.component, f.spec.covariates, f.probabilities) for f in self.fits]
        )


def fit_chain(
    g: ChainGraph,
    data: ContingencyTable,
    ordering: ComponentOrdering | None = None,
    specs: Sequence[ModelSpec] | None = None,
    tol: float = FIT_TOL,
) -> ChainModel:
    """Fit one regression per component and combine.

    ``data`` may be keyed by node names (as read from CSV) or by node id.
    """
    ordering = ordering or consistent_ordering(g.dag)
    if set(data.lattice.variables) != set(g.nodes) or any(isinstance(v, str) for v in data.lattice.variables):
        data = align_data(g, data)
    levels = dict(zip(data.lattice.variables, data.lattice.levels))
    specs = list(specs) if specs is not None else chain_specs(g, levels, ordering)
    fits = tuple(fit_component(component_counts(data, s), s, tol=tol) for s in specs)
    return ChainModel(g, ordering, fits)


def type_iv_specs(g: ChainGraph, levels: Mapping[int, int]) -> list[ModelSpec]:
    """Constrained models for ``p(T | pa_D(T))``, the parent-component parameterization."""
    names = {v: g.name(v) for v in g.nodes}
    dag = g.dag
    return [
        constrain(saturated_design(sorted(t), sorted(parent_components(dag, t)), levels, names), g)
        for t in dag.components
    ]


def sample_distribution(
    specs: Sequence[ModelSpec],
    levels: Mapping[int, int],
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 1.0,
) -> ProbabilityTable:
    """A random joint distribution in the model spanned by ``specs``."""
    factors = []
    for spec in specs:
        _, cond = sample_conditional(spec, rng, low, high)
        factors.append((spec.component, spec.covariates, cond))
    return product_distribution(levels, factors)


# -- backward selection -------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionStep:
    label: str
    deviance: float
    df: int
    statistic: float | None = None
    statistic_df: int | None = None
    p_value: float | None = None
    accepted: bool = True

    def as_dict(self) -> dict:
        return {
            "model": self.label,
            "deviance": round(self.deviance, 10),
            "df": self.df,
            "w": None if self.statistic is None else round(self.statistic, 10),
            "w_df": self.statistic_df,
            "p_value": None if self.p_value is None else round(self.p_value, 10),
            "accepted": self.accepted,
        }


@dataclass(frozen=True, eq=False)
class SelectionTrace:
    steps: tuple[SelectionStep, ...]
    graph: ChainGraph
    ordering: ComponentOrdering
    model: ChainModel
    removed_edges: tuple[str, ...]


def _edge_text(g: ChainGraph, edge: tuple[int, int], directed: bool) -> str:
    return f"{g.name(edge[0])}{' -> ' if directed else ' -- '}{g.name(edge[1])}"


def _removable_edges(g: ChainGraph) -> list[tuple[tuple[int, int], bool]]:
    """Edges whose deletion keeps the chain components unchanged."""
    out = []
    components = g.dag.components
    for e in sorted(g.undirected_edges):
        if g.without_edge(e, directed=False).dag.components == components:
            out.append((e, False))
    out += [(e, True) for e in sorted(g.directed_edges)]
    return out


def backward_select(
    g0: ChainGraph,
    data: ContingencyTable,
    alpha: float = 0.05,
    ordering: ComponentOrdering | None = None,
    tiers: bool = True,
    min_order: int = 2,
    keep: Iterable[TermKey] = (),
    tol: float = FIT_TOL,
) -> SelectionTrace:
    """Hierarchical backward selection.

    Stage one removes interaction tiers, highest log-linear order first,
    while the model stays adequate (goodness-of-fit p-value at least
    ``alpha``); terms in ``keep`` are re-included. Stage two repeatedly
    deletes the edge with the largest edge-exclusion p-value, using the
    deviance difference ``w`` on the difference in parameters, while that
    p-value exceeds ``alpha``. The component ordering of ``g0`` is held
    fixed throughout.
    """
    ordering = ordering or consistent_ordering(g0.dag)
    if set(data.lattice.variables) != set(g0.nodes) or any(isinstance(v, str) for v in data.lattice.variables):
        data = align_data(g0, data)
    levels = dict(zip(data.lattice.variables, data.lattice.levels))
    keep = frozenset(keep)
    cache: dict = {}

    def fit_spec(spec: ModelSpec) -> FitResult:
        key = (spec.component, spec.covariates, spec.included)
        if key not in cache:
            cache[key] = fit_component(component_counts(data, spec), spec, tol=tol)
        return cache[key]

    def fit_graph(g: ChainGraph, max_order: int | None) -> ChainModel:
        specs = chain_specs(g, levels, _reorder(ordering, g), max_order, keep)
        return ChainModel(g, _reorder(ordering, g), tuple(fit_spec(s) for s in specs))

    graph, max_order = g0, None
    current = fit_graph(graph, max_order)
    steps = [SelectionStep("initial model", current.deviance, current.df)]

    if tiers:
        top = max(len(t) + len(predecessors(ordering, t)) for t in ordering.components)
        for order in range(top, min_order, -1):
            candidate = fit_graph(graph, order - 1)
            if candidate.df == current.df:
                continue
            w = candidate.deviance - current.deviance
            wdf = candidate.df - current.df
            adequate = candidate.p_value >= alpha
            steps.append(
                SelectionStep(
                    f"no {order}-factor interactions",
                    candidate.deviance,
                    candidate.df,
                    w,
                    wdf,
                    float(chi2.sf(max(w, 0.0), wdf)),
                    adequate,
                )
            )
            if not adequate:
                break
            current, max_order = candidate, order - 1

    removed = []
    while True:
        best = None
        for edge, directed in _removable_edges(graph):
            smaller = graph.without_edge(edge, directed)
            candidate = fit_graph(smaller, max_order)
            wdf = candidate.df - current.df
            if wdf == 0:
                continue
            w = candidate.deviance - current.deviance
            p = float(chi2.sf(max(w, 0.0), wdf))
            if best is None or p > best[0]:
                best = (p, w, wdf, edge, directed, smaller, candidate)
        if best is None or best[0] <= alpha:
            break
        p, w, wdf, edge, directed, smaller, candidate = best
        text = _edge_text(graph, edge, directed)
        steps.append(SelectionStep(f"delete edge {text}", candidate.deviance, candidate.df, w, wdf, p))
        removed.append(text)
        graph, current = smaller, candidate

    return SelectionTrace(tuple(steps), graph, _reorder(ordering, graph), current, tuple(removed))


def _reorder(ordering: ComponentOrdering, g: ChainGraph) -> ComponentOrdering:
    """The same component order expressed against ``g``'s component DAG."""
    dag = g.dag
    return ComponentOrdering(dag, tuple(dag.index(t) for t in ordering.components))
