from pathlib import Path

import numpy as np
import pytest

from mrchain.graph import parse_graph

DATA = Path(__file__).parent / "data"
GRAPHS = ("crossed_pairs", "path_on_pair", "three_blocks", "four_pairs")


def load_graph(name: str):
    g, _ = parse_graph((DATA / f"{name}.cg").read_text())
    return g


@pytest.fixture(params=GRAPHS)
def named_graph(request):
    return request.param, load_graph(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_table(rng, shape, floor=0.02):
    p = rng.dirichlet(np.ones(int(np.prod(shape)))) + floor
    return (p / p.sum()).reshape(shape)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
