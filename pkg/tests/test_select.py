import itertools

import numpy as np
import pytest
from scipy.stats import chi2

from conftest import load_graph
from mrchain.graph import ChainGraph
from mrchain.markov import mr_independencies
from mrchain.model import TermKey, backward_select, fit_chain
from synthetic import survey_counts, survey_graph, model_joint, sample_counts


def complete_graph_like(g: ChainGraph) -> ChainGraph:
    """Same components, every pair inside a component joined, every earlier node pointing in."""
    d = g.dag
    und, dirs = set(), set()
    for t in d.components:
        und.update(itertools.combinations(sorted(t), 2))
    for i, t in enumerate(d.components):
        ancestors = set()
        stack = list(d.parents(i))
        while stack:
            j = stack.pop()
            ancestors |= d.components[j]
            stack.extend(d.parents(j))
        dirs.update((a, b) for a in ancestors for b in t)
    return ChainGraph(g.nodes, frozenset(und), frozenset(dirs), g.names)


def check_bookkeeping(trace):
    steps = trace.steps
    assert steps[0].label == "initial model"
    accepted = [steps[0]]
    for step in steps[1:]:
        prev = accepted[-1]
        assert step.statistic == pytest.approx(step.deviance - prev.deviance, abs=1e-9)
        assert step.statistic_df == step.df - prev.df > 0
        assert step.p_value == pytest.approx(chi2.sf(max(step.statistic, 0.0), step.statistic_df))
        if step.accepted:
            accepted.append(step)
    assert trace.model.df == accepted[-1].df
    assert trace.model.deviance == pytest.approx(accepted[-1].deviance)
    assert trace.model.deviance == sum(f.deviance for f in trace.model.fits)


class TestSurveyShaped:
    def test_trace_df_column(self):
        trace = backward_select(survey_graph(), survey_counts(np.random.default_rng(1)))
        check_bookkeeping(trace)
        assert [s.label for s in trace.steps] == [
            "initial model",
            "no 5-factor interactions",
            "no 4-factor interactions",
            "no 3-factor interactions",
            "delete edge G -- A",
            "delete edge J -> G",
        ]
        assert [s.df for s in trace.steps] == [0, 2, 11, 27, 28, 30]
        assert [s.statistic_df for s in trace.steps[4:]] == [1, 2]
        assert trace.removed_edges == ("G -- A", "J -> G")

    @pytest.mark.parametrize("seed", [0, 2, 3])
    def test_bookkeeping_other_samples(self, seed):
        check_bookkeeping(backward_select(survey_graph(), survey_counts(np.random.default_rng(seed))))

    def test_json_rows(self):
        trace = backward_select(survey_graph(), survey_counts(np.random.default_rng(1)))
        row = trace.steps[-1].as_dict()
        assert list(row) == ["model", "deviance", "df", "w", "w_df", "p_value", "accepted"]
        assert row["w_df"] == 2

    def test_no_tiers(self):
        trace = backward_select(survey_graph(), survey_counts(np.random.default_rng(1)), tiers=False)
        check_bookkeeping(trace)
        assert not any("interactions" in s.label for s in trace.steps)

    def test_keep_reincludes_terms(self):
        data = survey_counts(np.random.default_rng(1))
        keep = [TermKey((1, 2), (5,))]
        trace = backward_select(survey_graph(), data, keep=keep)
        check_bookkeeping(trace)
        assert all(keep[0] in f.spec.included for f in trace.model.fits if f.spec.component == (1, 2, 3))
        assert trace.steps[3].df == 27 - 1


class TestRecovery:
    def test_sparse_generator_recovered(self):
        truth = load_graph("path_on_pair")
        levels = {v: 2 for v in truth.nodes}
        rng = np.random.default_rng(2024)
        p = model_joint(truth, levels, rng, low=0.5, high=1.0)
        data = sample_counts(p, rng, 100_000)
        trace = backward_select(complete_graph_like(truth), data, alpha=0.001, tiers=False)
        check_bookkeeping(trace)
        assert trace.graph == truth
        assert set(mr_independencies(trace.graph)) == set(mr_independencies(truth))

    def test_nothing_removed_at_tiny_alpha(self):
        g = ChainGraph.from_edges([(1, 2)], [(3, 1), (3, 2)])
        rng = np.random.default_rng(8)
        p = model_joint(g, {1: 2, 2: 2, 3: 2}, rng, low=0.5, high=1.0)
        trace = backward_select(g, sample_counts(p, rng, 100_000), alpha=1e-6)
        assert trace.removed_edges == ()
        assert trace.graph == g
        assert all(s.accepted for s in trace.steps[:1])
        assert not any(s.accepted for s in trace.steps[1:])
        assert fit_chain(g, sample_counts(p, rng, 10)).df == trace.model.df == 0
