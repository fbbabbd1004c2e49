"""Discrete chain graph models of multivariate regression type.

The package is organised by concern:

* :mod:`mrchain.graph` -- chain graphs, chain components and orderings.
* :mod:`mrchain.markov` -- independence statements implied by a graph.
* :mod:`mrchain.tables` -- contingency-table arithmetic.
* :mod:`mrchain.mlogit` -- the multivariate logistic link.
* :mod:`mrchain.model` -- regression models, constrained fitting and selection.
* :mod:`mrchain.cli` -- command line front end.
"""

from mrchain.errors import ConvergenceError, DataError, GraphSpecError, ModelError, MRChainError
from mrchain.graph import ChainGraph, ComponentDag, ComponentOrdering, parse_graph
from mrchain.markov import (
    IndependenceStatement,
    certify_equivalence,
    check_ci,
    mr_independencies,
    pairwise_independencies,
    type_iv_independencies,
)
from mrchain.mlogit import LinkSpec, build_link, eta_from_p, p_from_eta
from mrchain.model import (
    ChainModel,
    FitResult,
    ModelSpec,
    TermKey,
    backward_select,
    constrain,
    df_count,
    fit_chain,
    fit_component,
    saturated_design,
)
from mrchain.tables import CellLattice, ContingencyTable, ProbabilityTable

__all__ = [
    "CellLattice",
    "ChainGraph",
    "ChainModel",
    "ComponentDag",
    "ComponentOrdering",
    "ContingencyTable",
    "ConvergenceError",
    "DataError",
    "FitResult",
    "GraphSpecError",
    "ModelError",
    "IndependenceStatement",
    "LinkSpec",
    "MRChainError",
    "ModelSpec",
    "ProbabilityTable",
    "TermKey",
    "backward_select",
    "build_link",
    "certify_equivalence",
    "check_ci",
    "constrain",
    "df_count",
    "eta_from_p",
    "fit_chain",
    "fit_component",
    "mr_independencies",
    "p_from_eta",
    "pairwise_independencies",
    "parse_graph",
    "saturated_design",
    "type_iv_independencies",
]
