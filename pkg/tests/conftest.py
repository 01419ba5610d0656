import os
import sys

import numpy as np
import pytest

# Ensure src/ is on sys.path for src-layout imports
ROOT = os.path.dirname(os.path.dirname(__file__))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from netalign.graph import AnchorSet, Graph  # noqa: E402

# 10 nodes, connected, no non-trivial automorphism
TEN_NODE_EDGES = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (0, 2),
    (2, 5),
    (5, 9),
    (1, 6),
]


def edges_graph(n, edges, attributes=None):
    rows = np.array([a for a, _ in edges], dtype=np.int64)
    cols = np.array([b for _, b in edges], dtype=np.int64)
    return Graph.from_edges(n, rows, cols, attributes)


@pytest.fixture
def ten_node_graph():
    return edges_graph(10, TEN_NODE_EDGES)


@pytest.fixture
def path4():
    return edges_graph(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def identity_anchors():
    return AnchorSet.of([(i, i) for i in range(10)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
