"""Chain graphs, their components and consistent orderings.

Nodes are the integers ``1..d``; ``ChainGraph.names`` keeps the labels
they were read from. Undirected edges are stored once as ``(min, max)``
pairs and rendered with ``--``.
"""

from __future__ import annotations

import itertools
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import networkx as nx

from mrchain.errors import GraphSpecError

LARGE_COMPONENT = 20


@dataclass(frozen=True)
class ChainGraph:
    nodes: tuple[int, ...]
    undirected_edges: frozenset[tuple[int, int]] = frozenset()
    directed_edges: frozenset[tuple[int, int]] = frozenset()
    names: tuple[str, ...] = ()
    # input line of each edge, for error messages only
    edge_lines: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes))
        if nodes != tuple(range(1, len(nodes) + 1)):
            raise GraphSpecError(f"nodes must be 1..d, got {nodes}")
        und = frozenset((min(a, b), max(a, b)) for a, b in self.undirected_edges)
        dirs = frozenset(tuple(e) for e in self.directed_edges)
        names = tuple(self.names) or tuple(str(v) for v in nodes)
        if len(names) != len(nodes):
            raise GraphSpecError("one name per node required")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "undirected_edges", und)
        object.__setattr__(self, "directed_edges", dirs)
        object.__setattr__(self, "names", names)
        validate(self)

    @classmethod
    def from_edges(
        cls,
        undirected: Iterable[tuple[int, int]] = (),
        directed: Iterable[tuple[int, int]] = (),
        n_nodes: int | None = None,
        names: Sequence[str] = (),
    ) -> "ChainGraph":
        undirected, directed = list(undirected), list(directed)
        used = [v for e in undirected + directed for v in e]
        d = n_nodes if n_nodes is not None else max(used, default=0)
        return cls(tuple(range(1, d + 1)), frozenset(undirected), frozenset(directed), tuple(names))

    def name(self, v: int) -> str:
        return self.names[v - 1]

    def label(self, nodes: Iterable[int], sep: str = ",") -> str:
        return sep.join(self.name(v) for v in sorted(nodes))

    def node_of(self, name: str) -> int:
        try:
            return self.names.index(str(name)) + 1
        except ValueError:
            raise GraphSpecError(f"unknown node {name!r}") from None

    def adjacent(self, u: int, v: int) -> bool:
        return (
            (min(u, v), max(u, v)) in self.undirected_edges
            or (u, v) in self.directed_edges
            or (v, u) in self.directed_edges
        )

    def undirected_neighbours(self, v: int) -> set[int]:
        return {b if a == v else a for a, b in self.undirected_edges if v in (a, b)}

    @cached_property
    def dag(self) -> "ComponentDag":
        return chain_components(self)

    def without_edge(self, edge: tuple[int, int], directed: bool) -> "ChainGraph":
        if directed:
            return ChainGraph(self.nodes, self.undirected_edges, self.directed_edges - {edge}, self.names)
        edge = (min(edge), max(edge))
        return ChainGraph(self.nodes, self.undirected_edges - {edge}, self.directed_edges, self.names)

    def edge_lines_text(self) -> list[str]:
        lines = [f"{self.name(a)} -- {self.name(b)}" for a, b in sorted(self.undirected_edges)]
        lines += [f"{self.name(a)} -> {self.name(b)}" for a, b in sorted(self.directed_edges)]
        return lines


@dataclass(frozen=True)
class ComponentDag:
    """Chain components (sorted by smallest node) and the DAG between them."""

    components: tuple[frozenset[int], ...]
    dag_edges: frozenset[tuple[int, int]]

    def index(self, t: Iterable[int]) -> int:
        t = frozenset(t)
        try:
            return self.components.index(t)
        except ValueError:
            raise GraphSpecError(f"{sorted(t)} is not a chain component") from None

    def component_of(self, v: int) -> int:
        for i, t in enumerate(self.components):
            if v in t:
                return i
        raise GraphSpecError(f"unknown node {v}")

    def parents(self, i: int) -> set[int]:
        return {a for a, b in self.dag_edges if b == i}

    def children(self, i: int) -> set[int]:
        return {b for a, b in self.dag_edges if a == i}

    def descendants(self, i: int) -> set[int]:
        seen, stack = set(), [i]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen


@dataclass(frozen=True)
class ComponentOrdering:
    """A strict total order of components, listed from final responses to roots.

    ``order[0]`` is the component with nothing after it in the
    dependence direction; ``pre(T)`` is the union of everything listed
    after ``T``. This matches writing ``T1 < T2 < ...`` with responses first.
    """

    dag: ComponentDag
    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))
        if sorted(self.order) != list(range(len(self.dag.components))):
            raise GraphSpecError("ordering must be a permutation of the components")
        if not is_consistent(self.dag, self.order):
            raise GraphSpecError(f"ordering {self.render()} is not consistent with the graph")

    @property
    def components(self) -> list[frozenset[int]]:
        return [self.dag.components[i] for i in self.order]

    def render(self, graph: ChainGraph | None = None) -> str:
        name = graph.name if graph is not None else str
        return " < ".join("{" + ",".join(name(v) for v in sorted(t)) + "}" for t in self.components)


# -- construction ------------------------------------------------------------------


def validate(g: ChainGraph) -> None:
    """Reject self-loops, doubled pairs and semi-directed cycles."""
    nodes = set(g.nodes)
    for a, b in itertools.chain(g.undirected_edges, g.directed_edges):
        if a not in nodes or b not in nodes:
            raise GraphSpecError(f"edge ({a}, {b}) uses an unknown node")
        if a == b:
            raise GraphSpecError(f"self-loop at {g.name(a)}", line=g.edge_lines.get((a, b)))
    for a, b in g.directed_edges:
        if (min(a, b), max(a, b)) in g.undirected_edges or (b, a) in g.directed_edges:
            raise GraphSpecError(
                f"pair {g.name(a)},{g.name(b)} has more than one edge", line=g.edge_lines.get((a, b))
            )
    cycle = find_semi_directed_cycle(g)
    if cycle is not None:
        tail, head = cycle
        raise GraphSpecError(
            f"semi-directed cycle through {g.name(tail)} -> {g.name(head)}",
            line=g.edge_lines.get((tail, head)),
        )
    for t in _undirected_blocks(g):
        if len(t) > LARGE_COMPONENT:
            warnings.warn(f"chain component of size {len(t)}; subset enumeration will be slow")


def _undirected_blocks(g: ChainGraph) -> list[set[int]]:
    u = nx.Graph()
    u.add_nodes_from(g.nodes)
    u.add_edges_from(g.undirected_edges)
    return [set(c) for c in nx.connected_components(u)]


def find_semi_directed_cycle(g: ChainGraph) -> tuple[int, int] | None:
    """A directed edge lying on a semi-directed cycle, or ``None``.

    Undirected blocks are contracted to single vertices; the graph has a
    semi-directed cycle iff an arrow stays inside a block or the quotient
    digraph has a cycle.
    """
    block = {}
    for i, t in enumerate(_undirected_blocks(g)):
        for v in t:
            block[v] = i
    quotient = nx.DiGraph()
    quotient.add_nodes_from(set(block.values()))
    witness = {}
    for a, b in sorted(g.directed_edges):
        if block[a] == block[b]:
            return (a, b)
        quotient.add_edge(block[a], block[b])
        witness.setdefault((block[a], block[b]), (a, b))
    try:
        cyc = nx.find_cycle(quotient)
    except nx.NetworkXNoCycle:
        return None
    return witness[cyc[0][:2]]


def chain_components(g: ChainGraph) -> ComponentDag:
    comps = sorted((frozenset(t) for t in _undirected_blocks(g)), key=min)
    where = {v: i for i, t in enumerate(comps) for v in t}
    edges = frozenset((where[a], where[b]) for a, b in g.directed_edges)
    return ComponentDag(tuple(comps), edges)


_EDGE = re.compile(r"^(\w+)\s*(--|->|<-)\s*(\w+)$")


def parse_graph(text: str, nodes: Iterable[str] = ()) -> tuple[ChainGraph, ComponentOrdering | None]:
    """Parse the line-based graph format.

    ``a -- b`` is an undirected edge, ``a -> b`` a directed one. ``#``
    starts a comment. ``nodes: a b c`` declares nodes (isolated ones
    included) and ``blocks: a b | c | d e`` pins the component ordering,
    final responses first. Nodes get ids ``1..d`` in order of first
    appearance. Returns the graph and the pinned ordering, if any.
    """
    names: list[str] = [str(n) for n in nodes]
    ids = {n: i + 1 for i, n in enumerate(names)}

    def node(name: str) -> int:
        if name not in ids:
            names.append(name)
            ids[name] = len(names)
        return ids[name]

    undirected, directed, lines = set(), set(), {}
    blocks, blocks_line = None, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if sep and key.strip() in ("nodes", "blocks"):
            if key.strip() == "nodes":
                for tok in rest.split():
                    if not tok.isalnum() and not re.fullmatch(r"\w+", tok):
                        raise GraphSpecError(f"bad node name {tok!r}", line=lineno)
                    node(tok)
            else:
                if blocks is not None:
                    raise GraphSpecError("more than one blocks: line", line=lineno)
                blocks = [part.split() for part in rest.split("|")]
                if any(not b for b in blocks):
                    raise GraphSpecError("empty block in blocks: line", line=lineno)
                blocks_line = lineno
                for b in blocks:
                    for tok in b:
                        node(tok)
            continue
        m = _EDGE.match(line)
        if m is None:
            raise GraphSpecError(f"cannot parse {raw.strip()!r}", line=lineno)
        a, op, b = m.groups()
        u, v = node(a), node(b)
        if op == "<-":
            a, b, u, v, op = b, a, v, u, "->"
        if u == v:
            raise GraphSpecError(f"self-loop at {a}", line=lineno)
        pair = (min(u, v), max(u, v))
        if pair in lines:
            raise GraphSpecError(f"duplicate edge between {a} and {b}", line=lineno)
        lines[pair] = lineno
        if op == "--":
            undirected.add(pair)
        else:
            directed.add((u, v))
            lines[(u, v)] = lineno

    g = ChainGraph(tuple(range(1, len(names) + 1)), frozenset(undirected), frozenset(directed), tuple(names), lines)
    ordering = None
    if blocks is not None:
        dag = g.dag
        try:
            order = [dag.index(ids[n] for n in b) for b in blocks]
        except GraphSpecError as exc:
            raise GraphSpecError(f"blocks: {exc.message}", line=blocks_line) from None
        if sorted(order) != list(range(len(dag.components))):
            raise GraphSpecError("blocks: must list every chain component once", line=blocks_line)
        try:
            ordering = ComponentOrdering(dag, tuple(order))
        except GraphSpecError as exc:
            raise GraphSpecError(exc.message, line=blocks_line) from None
    return g, ordering


# -- set functions ---------------------------------------------------------------


def subgraph_connected_components(g: ChainGraph, a: Iterable[int]) -> list[frozenset[int]]:
    """Connected components of the undirected subgraph induced by ``a``, lowest node first."""
    a = set(a)
    if not a:
        raise GraphSpecError("empty node set")
    dag = g.dag
    if len({dag.component_of(v) for v in a}) != 1:
        raise GraphSpecError(f"{sorted(a)} spans more than one chain component")
    sub = nx.Graph()
    sub.add_nodes_from(a)
    sub.add_edges_from((u, v) for u, v in g.undirected_edges if u in a and v in a)
    return sorted((frozenset(c) for c in nx.connected_components(sub)), key=min)


def is_connected(g: ChainGraph, a: Iterable[int]) -> bool:
    return len(subgraph_connected_components(g, a)) == 1


def parents_of_set(g: ChainGraph, a: Iterable[int]) -> frozenset[int]:
    """``pa_G(A)``: nodes outside ``A`` with an arrow into ``A``."""
    a = set(a)
    return frozenset(w for w, v in g.directed_edges if v in a and w not in a)


def neighbours(g: ChainGraph, a: Iterable[int]) -> frozenset[int]:
    """``Nb_G(A)``: ``A`` together with its undirected neighbours."""
    a = set(a)
    out = set(a)
    for u, v in g.undirected_edges:
        if u in a:
            out.add(v)
        if v in a:
            out.add(u)
    return frozenset(out)


def parent_components(d: ComponentDag, t: Iterable[int]) -> frozenset[int]:
    """``pa_D(T)``: union of the parent components of ``T``."""
    i = d.index(t)
    return frozenset().union(*(d.components[j] for j in d.parents(i)))


def non_descendants(d: ComponentDag, t: Iterable[int]) -> frozenset[int]:
    """``nd_D(T)``: union of components not reachable from ``T`` (``T`` excluded)."""
    i = d.index(t)
    reach = d.descendants(i) | {i}
    return frozenset().union(*(c for j, c in enumerate(d.components) if j not in reach))


def predecessors(ordering: ComponentOrdering, t: Iterable[int]) -> frozenset[int]:
    """``pre(T)``: union of the components after ``T`` in the ordering."""
    i = ordering.dag.index(t)
    pos = ordering.order.index(i)
    return frozenset().union(*(ordering.dag.components[j] for j in ordering.order[pos + 1 :]))


def is_consistent(d: ComponentDag, order: Sequence[int]) -> bool:
    """True when no component is listed before one of its children."""
    pos = {c: k for k, c in enumerate(order)}
    return all(pos[child] < pos[parent] for parent, child in d.dag_edges)


def consistent_ordering(d: ComponentDag) -> ComponentOrdering:
    """Responses-first order; among ready components the smallest minimum node wins."""
    reversed_dag = nx.DiGraph()
    reversed_dag.add_nodes_from(range(len(d.components)))
    reversed_dag.add_edges_from((b, a) for a, b in d.dag_edges)
    order = nx.lexicographical_topological_sort(reversed_dag, key=lambda i: min(d.components[i]))
    return ComponentOrdering(d, tuple(order))


def all_consistent_orderings(d: ComponentDag) -> list[ComponentOrdering]:
    reversed_dag = nx.DiGraph()
    reversed_dag.add_nodes_from(range(len(d.components)))
    reversed_dag.add_edges_from((b, a) for a, b in d.dag_edges)
    return [ComponentOrdering(d, tuple(o)) for o in nx.all_topological_sorts(reversed_dag)]


def render_graph(g: ChainGraph, ordering: ComponentOrdering | None = None) -> str:
    lines = g.edge_lines_text()
    isolated = [v for v in g.nodes if not any(v in e for e in g.undirected_edges | g.directed_edges)]
    if isolated:
        lines.insert(0, "nodes: " + " ".join(g.name(v) for v in g.nodes))
    if ordering is not None:
        lines.append("blocks: " + " | ".join(" ".join(g.name(v) for v in sorted(t)) for t in ordering.components))
    return "\n".join(lines) + "\n"
