import numpy as np
import pytest

from skillnet.graphbuild import SkillGraph

# filled by test_acceptance; printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def graph_from_edges(n, edges, names=None, lengths=None):
    """SkillGraph from ``(i, j, weight)`` triples; lengths default to 1."""
    edges = [(min(i, j), max(i, j), w) for i, j, w in edges]
    edges.sort()
    ei = np.array([e[0] for e in edges], dtype=np.int64)
    ej = np.array([e[1] for e in edges], dtype=np.int64)
    w = np.array([e[2] for e in edges], dtype=np.float64)
    d = np.ones(len(edges)) if lengths is None else np.asarray(lengths, dtype=np.float64)
    names = tuple(names or (f"n{i}" for i in range(n)))
    return SkillGraph(names, ei, ej, w, d)


def random_connected_graph(rng, n, p=0.4, weighted=True):
    """Random spanning tree plus extra edges, so the graph is connected."""
    edges = {}
    order = rng.permutation(n)
    for t in range(1, n):
        a, b = order[t], order[rng.integers(0, t)]
        edges[(min(a, b), max(a, b))] = None
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges[(i, j)] = None
    out = []
    for i, j in sorted(edges):
        w = float(rng.uniform(0.1, 1.0)) if weighted else 1.0
        out.append((int(i), int(j), w))
    return out


@pytest.fixture
def path3():
    return graph_from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)], names=("a", "b", "c"))


@pytest.fixture
def barbell():
    edges = []
    for block in (range(0, 4), range(4, 8)):
        block = list(block)
        edges += [(i, j, 1.0) for k, i in enumerate(block) for j in block[k + 1 :]]
    edges.append((3, 4, 1.0))
    return graph_from_edges(8, edges)
