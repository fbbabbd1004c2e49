"""Command line front end.

Exit codes: 0 on success, 2 on invalid input, 3 when a solver fails to
converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mrchain.errors import ConvergenceError, GraphSpecError, MRChainError
from mrchain.graph import (
    ChainGraph,
    ComponentOrdering,
    consistent_ordering,
    parent_components,
    parse_graph,
    predecessors,
)
from mrchain.markov import (
    CI_TOL,
    certify_equivalence,
    mr_independencies,
    pairwise_independencies,
    type_iv_independencies,
)
from mrchain.mlogit import build_link, eta_from_p
from mrchain.model import FIT_TOL, TermKey, align_data, backward_select, chain_specs, fit_chain
from mrchain.tables import condition, marginalize, read_counts_csv

DEFAULT_SEED = 20100101


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    graph: Path | None = None
    data: Path | None = None
    blocks: str | None = None
    output: str = "text"
    seed: int = DEFAULT_SEED
    fit_tol: float = FIT_TOL
    ci_tol: float = CI_TOL


class CliError(MRChainError):
    module = "cli"


def _load_graph(cfg: RunConfig) -> tuple[ChainGraph, ComponentOrdering]:
    if cfg.graph is None:
        raise CliError("--graph is required")
    if not cfg.graph.exists():
        raise CliError(f"graph file not found: {cfg.graph}")
    text = cfg.graph.read_text()
    if cfg.blocks:
        text += "\nblocks: " + cfg.blocks + "\n"
    g, ordering = parse_graph(text)
    return g, ordering or consistent_ordering(g.dag)


def _load_data(cfg: RunConfig):
    if cfg.data is None:
        raise CliError("--data is required")
    return read_counts_csv(cfg.data)


def _emit(cfg: RunConfig, payload, text: str) -> str:
    if cfg.output == "json":
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    return text


def _set_text(g: ChainGraph, nodes) -> str:
    return "{" + ",".join(g.name(v) for v in sorted(nodes)) + "}"


def cmd_components(cfg: RunConfig) -> str:
    g, ordering = _load_graph(cfg)
    dag = g.dag
    comps = []
    lines = ["components (in order, responses first):"]
    for t in ordering.components:
        pa_d = parent_components(dag, t)
        pre = predecessors(ordering, t)
        comps.append(
            {
                "component": [g.name(v) for v in sorted(t)],
                "parent_components": [g.name(v) for v in sorted(pa_d)],
                "predecessors": [g.name(v) for v in sorted(pre)],
            }
        )
        lines.append(f"  {_set_text(g, t)}  pa_D={_set_text(g, pa_d)}  pre={_set_text(g, pre)}")
    edges = sorted(
        (_set_text(g, dag.components[a]), _set_text(g, dag.components[b])) for a, b in dag.dag_edges
    )
    lines.append("component DAG:")
    lines += [f"  {a} -> {b}" for a, b in edges] or ["  (no edges)"]
    lines.append("ordering: " + ordering.render(g))
    payload = {"components": comps, "dag_edges": [list(e) for e in edges], "ordering": ordering.render(g)}
    return _emit(cfg, payload, "\n".join(lines) + "\n")


def cmd_independencies(cfg: RunConfig, prop: str = "mr") -> str:
    g, ordering = _load_graph(cfg)
    if prop == "mr":
        statements = mr_independencies(g, ordering)
    elif prop == "iv":
        statements = type_iv_independencies(g)
    elif prop == "pairwise":
        statements = pairwise_independencies(g, ordering)
    else:
        raise CliError(f"unknown property {prop!r}")
    payload = [s.as_dict(g) for s in statements]
    text = "".join(s.render(g) + "\n" for s in statements)
    return _emit(cfg, payload, text)


def _names(arg: str | None) -> list[str]:
    return [x for x in (arg or "").replace(",", " ").split() if x]


def cmd_eta(cfg: RunConfig, responses: str | None = None, given: str | None = None, smoothing: float = 0.0) -> str:
    table = _load_data(cfg)
    variables = list(table.lattice.variables)
    b = _names(given)
    a = _names(responses) or [v for v in variables if v not in b]
    for v in a + b:
        if v not in variables:
            raise CliError(f"unknown variable {v!r}")
    p = table.to_probability(smoothing)
    link = build_link(table.lattice.sub(a))

    def blocks_of(eta):
        return {
            "".join(m): [float(x) for x in np.atleast_1d(eta[s])] for m, s in link.slices.items()
        }

    if not b:
        eta = eta_from_p(link, marginalize(p, a))
        payload = {"responses": a, "given": [], "eta": blocks_of(eta)}
    else:
        cond = condition(p, a, b)
        k = int(np.prod(cond.lattice.levels_of(b)))
        etas = eta_from_p(link, cond.values.reshape(k, -1))
        classes = cond.lattice.sub(b).cells()
        payload = {
            "responses": a,
            "given": b,
            "classes": [
                {"class": dict(zip(b, cell)), "eta": blocks_of(e)} for cell, e in zip(classes, etas)
            ],
        }
    return json.dumps(payload, indent=2) + "\n"


def _fit_payload(model) -> tuple[dict, str]:
    g = model.graph
    comps, lines = [], []
    for fit in model.fits:
        spec = fit.spec
        comps.append(
            {
                "component": [g.name(v) for v in spec.component],
                "covariates": [g.name(v) for v in spec.covariates],
                "formula": spec.formula(),
                "beta": fit.coefficient_table(),
                "deviance": fit.deviance,
                "df": fit.df,
                "iterations": fit.iterations,
            }
        )
        lines.append(f"component {_set_text(g, spec.component)} | {_set_text(g, spec.covariates)}")
        lines.append(f"  formula    {spec.formula()}")
        lines.append(f"  deviance   {fit.deviance:.4f} on {fit.df} d.f. ({fit.iterations} iterations)")
        for label, value in fit.coefficient_table().items():
            lines.append(f"    {label:<28} {value: .4f}")
    lines.append(f"total deviance {model.deviance:.4f} on {model.df} d.f.")
    payload = {"components": comps, "deviance": model.deviance, "df": model.df}
    return payload, "\n".join(lines) + "\n"


def cmd_fit(cfg: RunConfig, max_order: int | None = None) -> str:
    g, ordering = _load_graph(cfg)
    data = _load_data(cfg)
    specs = None
    if max_order is not None:
        aligned = align_data(g, data)
        levels = dict(zip(aligned.lattice.variables, aligned.lattice.levels))
        specs = chain_specs(g, levels, ordering, max_order)
    model = fit_chain(g, data, ordering, specs, cfg.fit_tol)
    payload, text = _fit_payload(model)
    return _emit(cfg, payload, text)


def _parse_keep(g: ChainGraph, items: Sequence[str]) -> list[TermKey]:
    keys = []
    for item in items:
        margin, _, cov = item.partition(":")
        try:
            a = tuple(sorted(g.node_of(x) for x in _names(margin)))
            b = tuple(sorted(g.node_of(x) for x in _names(cov)))
        except GraphSpecError as exc:
            raise CliError(f"--keep {item!r}: {exc.message}") from None
        keys.append(TermKey(a, b))
    return keys


def cmd_select(cfg: RunConfig, alpha: float = 0.05, tiers: bool = True, min_order: int = 2, keep=()) -> str:
    g, ordering = _load_graph(cfg)
    data = _load_data(cfg)
    trace = backward_select(g, data, alpha, ordering, tiers, min_order, _parse_keep(g, keep), cfg.fit_tol)
    rows = [s.as_dict() for s in trace.steps]
    lines = [f"{'model':<36}{'deviance':>12}{'d.f.':>6}{'w':>10}{'w d.f.':>8}{'p-value':>10}"]
    for s in trace.steps:
        w = "" if s.statistic is None else f"{s.statistic:.2f}"
        wdf = "" if s.statistic_df is None else str(s.statistic_df)
        pv = "" if s.p_value is None else f"{s.p_value:.4f}"
        mark = "" if s.accepted else "  (rejected)"
        lines.append(f"{s.label:<36}{s.deviance:>12.2f}{s.df:>6}{w:>10}{wdf:>8}{pv:>10}{mark}")
    lines.append("selected graph:")
    lines += ["  " + e for e in trace.graph.edge_lines_text()]
    payload = {"trace": rows, "removed_edges": list(trace.removed_edges), "graph": trace.graph.edge_lines_text()}
    return _emit(cfg, payload, "\n".join(lines) + "\n")


def _parse_levels(g: ChainGraph, text: str | None) -> dict[int, int]:
    levels = {v: 2 for v in g.nodes}
    for item in _names(text):
        name, _, r = item.partition("=")
        try:
            levels[g.node_of(name)] = int(r)
        except (GraphSpecError, ValueError):
            raise CliError(f"bad --levels entry {item!r}") from None
    return levels


def cmd_certify(cfg: RunConfig, draws: int = 50, levels: str | None = None) -> str:
    g, ordering = _load_graph(cfg)
    report = certify_equivalence(g, draws, cfg.seed, _parse_levels(g, levels), ordering, cfg.ci_tol)
    text = report.summary() + "\n" + "".join(f"  {f}\n" for f in report.failures)
    return _emit(cfg, report.as_dict() | {"summary": report.summary()}, text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", type=Path, help="graph specification file")
    common.add_argument("--data", type=Path, help="counts CSV")
    common.add_argument("--blocks", help='pin the component ordering, e.g. "1 2 | 3 4"')
    common.add_argument("--format", dest="output", choices=("text", "json"), default="text")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--fit-tol", type=float, default=FIT_TOL, help="convergence tolerance of the fit")
    common.add_argument("--ci-tol", type=float, default=CI_TOL, help="tolerance of independence checks")

    parser = argparse.ArgumentParser(prog="mrchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("components", parents=[common], help="chain components and their DAG")
    p = sub.add_parser("independencies", parents=[common], help="list implied independencies")
    p.add_argument("--property", dest="prop", choices=("mr", "iv", "pairwise"), default="mr")
    p = sub.add_parser("eta", parents=[common], help="multivariate logistic contrasts of a table")
    p.add_argument("--responses")
    p.add_argument("--given")
    p.add_argument("--smoothing", type=float, default=0.0)
    p = sub.add_parser("fit", parents=[common], help="fit the chain graph model")
    p.add_argument("--max-order", type=int)
    p = sub.add_parser("select", parents=[common], help="backward model selection")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-tiers", dest="tiers", action="store_false")
    p.add_argument("--min-order", type=int, default=2)
    p.add_argument("--keep", action="append", default=[], help='re-include a term, e.g. "G,C:J"')
    p = sub.add_parser("certify", parents=[common], help="check MR / type IV equivalence by sampling")
    p.add_argument("--draws", type=int, default=50)
    p.add_argument("--levels", help='level counts, e.g. "3=3,4=3" (default binary)')
    return parser


def run(argv: Sequence[str] | None = None) -> tuple[int, str, str]:
    """Run the CLI; returns ``(exit code, stdout, stderr)``."""
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        args.subcommand, args.graph, args.data, args.blocks, args.output, args.seed, args.fit_tol, args.ci_tol
    )
    try:
        if cfg.subcommand == "components":
            out = cmd_components(cfg)
        elif cfg.subcommand == "independencies":
            out = cmd_independencies(cfg, args.prop)
        elif cfg.subcommand == "eta":
            out = cmd_eta(cfg, args.responses, args.given, args.smoothing)
        elif cfg.subcommand == "fit":
            out = cmd_fit(cfg, args.max_order)
        elif cfg.subcommand == "select":
            out = cmd_select(cfg, args.alpha, args.tiers, args.min_order, args.keep)
        else:
            out = cmd_certify(cfg, args.draws, args.levels)
    except ConvergenceError as exc:
        return 3, "", f"error: {exc}\n"
    except MRChainError as exc:
        source = cfg.graph if exc.module in ("graph", "cli") or cfg.data is None else cfg.data
        prefix = f"{source}: " if source is not None and exc.line is not None else ""
        return 2, "", f"error: {prefix}{exc}\n"
    return 0, out, ""


def main(argv: Sequence[str] | None = None) -> int:
    code, out, err = run(argv)
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code


if __name__ == "__main__":
    sys.exit(main())
