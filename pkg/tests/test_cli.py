import json
import subprocess
import sys

import numpy as np
import pytest

import mrchain.cli as cli
from conftest import DATA, load_graph
from mrchain.errors import ConvergenceError
from mrchain.model import fit_chain
from synthetic import SURVEY_SATURATED, expected_counts, model_joint, survey_counts, write_counts_csv


def graph_path(name):
    return str(DATA / f"{name}.cg")


def ok(*argv):
    code, out, err = cli.run(list(argv))
    assert code == 0, err
    assert err == ""
    return out


@pytest.fixture
def survey_files(tmp_path):
    graph = tmp_path / "survey.cg"
    graph.write_text(SURVEY_SATURATED)
    data = tmp_path / "survey.csv"
    write_counts_csv(survey_counts(np.random.default_rng(1)), data)
    return str(graph), str(data)


class TestCommands:
    def test_independencies_text(self):
        out = ok("independencies", "--graph", graph_path("path_on_pair"))
        assert out.splitlines() == [
            "1 ⊥ 5 | 4",
            "2 ⊥ 4,5",
            "3 ⊥ 4 | 5",
            "1,2 ⊥ 5 | 4",
            "2,3 ⊥ 4 | 5",
            "1 ⊥ 3 | 4,5",
        ]

    def test_independencies_json_and_properties(self):
        out = json.loads(ok("independencies", "--graph", graph_path("crossed_pairs"), "--format", "json"))
        assert out == [
            {"blocks": [["1"], ["4"]], "given": ["3"], "source": "MR1"},
            {"blocks": [["2"], ["3"]], "given": ["4"], "source": "MR1"},
        ]
        for prop in ("iv", "pairwise"):
            text = ok("independencies", "--graph", graph_path("crossed_pairs"), "--property", prop)
            assert "1 ⊥ 4 | 3" in text

    def test_components(self):
        out = ok("components", "--graph", graph_path("crossed_pairs"))
        assert "{3,4} -> {1,2}" in out
        assert "ordering: {1,2} < {3,4}" in out
        data = json.loads(ok("components", "--graph", graph_path("four_pairs"), "--format", "json"))
        assert len(data["components"]) == 4

    def test_blocks_override(self):
        default = ok("components", "--graph", graph_path("four_pairs"))
        pinned = ok("components", "--graph", graph_path("four_pairs"), "--blocks", "1 2 | 5 6 | 3 4 | 7 8")
        assert default != pinned
        assert "ordering: {1,2} < {5,6} < {3,4} < {7,8}" in pinned

    def test_inconsistent_blocks_rejected(self):
        code, _, err = cli.run(["components", "--graph", graph_path("crossed_pairs"), "--blocks", "3 4 | 1 2"])
        assert code == 2
        assert "[graph]" in err and "(line" in err

    def test_certify(self):
        out = ok("certify", "--graph", graph_path("crossed_pairs"), "--draws", "50", "--seed", "7")
        assert out.splitlines()[0] == "50/50 MR→IV, 50/50 IV→MR"

    def test_certify_levels_json(self):
        out = json.loads(
            ok("certify", "--graph", graph_path("crossed_pairs"), "--draws", "3", "--levels", "3=3", "--format", "json")
        )
        assert out["summary"] == "3/3 MR→IV, 3/3 IV→MR"

    def test_fit_saturated_gives_zero_deviance(self, survey_files):
        graph, data = survey_files
        out = json.loads(ok("fit", "--graph", graph, "--data", data, "--format", "json"))
        assert out["df"] == 0
        assert abs(out["deviance"]) < 1e-8
        text = ok("fit", "--graph", graph, "--data", data)
        assert "total deviance 0.0000 on 0 d.f." in text

    def test_fit_matches_library(self, tmp_path):
        g = load_graph("crossed_pairs")
        rng = np.random.default_rng(4)
        p = model_joint(g, {v: 2 for v in g.nodes}, rng)
        table = expected_counts(p, 1000)
        table = type(table)(table.lattice, np.rint(table.counts))
        path = tmp_path / "d.csv"
        write_counts_csv(table, path)
        out = json.loads(ok("fit", "--graph", graph_path("crossed_pairs"), "--data", str(path), "--format", "json"))
        model = fit_chain(g, table)
        # the logits of 1 and 2 each lose their terms in the other covariate
        assert out["df"] == model.df == 4
        assert out["deviance"] == pytest.approx(model.deviance, abs=1e-10)

    def test_select_text_and_json(self, survey_files):
        graph, data = survey_files
        text = ok("select", "--graph", graph, "--data", data)
        header = text.splitlines()[0].split()
        assert header == ["model", "deviance", "d.f.", "w", "w", "d.f.", "p-value"]
        assert "delete edge G -- A" in text
        out = json.loads(ok("select", "--graph", graph, "--data", data, "--format", "json"))
        assert [row["df"] for row in out["trace"]] == [0, 2, 11, 27, 28, 30]
        assert out["removed_edges"] == ["G -- A", "J -> G"]

    def test_tolerance_overrides(self, survey_files):
        graph, data = survey_files
        argv = ["select", "--graph", graph, "--data", data, "--format", "json", "--no-tiers"]
        loose = json.loads(ok(*argv))
        tight = json.loads(ok(*argv, "--fit-tol", "1e-11"))
        assert [r["df"] for r in loose["trace"]] == [r["df"] for r in tight["trace"]]
        for a, b in zip(loose["trace"], tight["trace"]):
            assert a["deviance"] == pytest.approx(b["deviance"], abs=1e-6)
        base = ["certify", "--graph", graph_path("crossed_pairs"), "--draws", "3"]
        assert ok(*base, "--ci-tol", "1e-6").startswith("3/3 MR→IV, 3/3 IV→MR")
        # far below the precision of the inverse link the check must flag draws
        assert "draw 0" in ok(*base, "--ci-tol", "1e-17")

    def test_select_keep(self, survey_files):
        graph, data = survey_files
        out = json.loads(ok("select", "--graph", graph, "--data", data, "--keep", "G,C:S", "--format", "json"))
        assert out["trace"][3]["df"] == 26

    def test_eta(self, survey_files):
        _, data = survey_files
        out = json.loads(ok("eta", "--data", data, "--responses", "G,C"))
        assert set(out["eta"]) == {"G", "C", "GC"}
        cond = json.loads(ok("eta", "--data", data, "--responses", "G", "--given", "S"))
        assert [c["class"] for c in cond["classes"]] == [{"S": 1}, {"S": 2}]


class TestErrors:
    def test_bad_graph_names_module_and_line(self, tmp_path):
        bad = tmp_path / "bad.cg"
        bad.write_text("# comment\n1 -> 2\n2 -> 1\n")
        code, out, err = cli.run(["components", "--graph", str(bad)])
        assert code == 2 and out == ""
        assert err.startswith(f"error: {bad}: [graph] (line ")

    def test_bad_csv_names_module_and_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("A,B,count\n1,1,3\n1,2,lots\n")
        code, _, err = cli.run(["eta", "--data", str(bad)])
        assert code == 2
        assert "[tables]" in err and "(line 3)" in err and str(bad) in err

    def test_missing_graph(self, tmp_path):
        code, _, err = cli.run(["components", "--graph", str(tmp_path / "none.cg")])
        assert code == 2 and "[cli]" in err

    def test_unknown_keep_variable(self, survey_files):
        graph, data = survey_files
        code, _, err = cli.run(["select", "--graph", graph, "--data", data, "--keep", "Q:S"])
        assert code == 2 and "--keep" in err

    def test_non_convergence_exit_code(self, survey_files, monkeypatch):
        def fail(*args, **kwargs):
            raise ConvergenceError("no convergence after 200 iterations")

        monkeypatch.setattr(cli, "fit_chain", fail)
        graph, data = survey_files
        code, _, err = cli.run(["fit", "--graph", graph, "--data", data])
        assert code == 3
        assert "no convergence" in err


class TestReproducibility:
    def test_byte_identical_runs(self, survey_files):
        graph, data = survey_files
        for argv in (
            ["select", "--graph", graph, "--data", data, "--format", "json"],
            ["certify", "--graph", graph_path("path_on_pair"), "--draws", "5"],
        ):
            assert cli.run(argv) == cli.run(argv)

    def test_seed_changes_draws_only(self):
        a = ok("certify", "--graph", graph_path("crossed_pairs"), "--draws", "4", "--seed", "1", "--format", "json")
        b = ok("certify", "--graph", graph_path("crossed_pairs"), "--draws", "4", "--seed", "2", "--format", "json")
        assert json.loads(a)["summary"] == json.loads(b)["summary"]

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "mrchain", "independencies", "--graph", graph_path("crossed_pairs")],
            capture_output=True,
            text=True,
            check=False,
        )
        assert proc.returncode == 0
        assert proc.stdout.splitlines() == ["1 ⊥ 4 | 3", "2 ⊥ 3 | 4"]
