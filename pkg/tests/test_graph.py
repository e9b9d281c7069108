import itertools

import pytest
from hypothesis import given, settings, strategies as st

from mfnets.graph import (
    CycleError,
    DanglingEdgeError,
    DuplicateEdgeError,
    Edge,
    GraphSpec,
    UnknownNodeError,
    build_graph,
    is_weakly_connected,
    longest_chain,
    validate,
)

ELEVEN_NODE_EDGES = [(1, 5), (1, 6), (1, 2), (2, 6), (3, 7), (4, 8), (5, 9), (6, 9),
              (7, 10), (8, 10), (9, 11), (10, 11)]


def test_true_three_model_graph():
    idx = validate(build_graph([1, 2, 3], [(1, 2), (2, 3), (1, 3)]))
    assert idx.roots == (1,)
    assert idx.ancestors[3] == {1, 2}
    assert idx.topo_order == (1, 2, 3)


def test_hierarchical_graph():
    idx = validate(build_graph([1, 2, 3], [(1, 2), (2, 3)]))
    assert idx.ancestors[3] == {1, 2}
    assert idx.ancestors[2] == {1}


def test_cycle_rejected():
    with pytest.raises(CycleError) as err:
        validate(build_graph([1, 2], [(1, 2), (2, 1)]))
    assert set(err.value.cycle) == {1, 2}


def test_longer_cycle_named():
    with pytest.raises(CycleError) as err:
        validate(build_graph([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4), (4, 2)]))
    assert set(err.value.cycle) == {2, 3, 4}


def test_structural_errors():
    with pytest.raises(DanglingEdgeError):
        validate(build_graph([1, 2], [(1, 3)]))
    with pytest.raises(DuplicateEdgeError):
        validate(build_graph([1, 2], [(1, 2), (1, 2)]))
    with pytest.raises(UnknownNodeError):
        validate(build_graph([1, 2], [(1, 2)], target=7))
    with pytest.raises(CycleError):
        validate(build_graph([1], [(1, 1)]))


def test_weak_connectivity():
    assert is_weakly_connected(build_graph([1, 2, 3], [(1, 3), (2, 3)]))
    assert not is_weakly_connected(build_graph([1, 2], []))
    assert is_weakly_connected(build_graph(range(1, 12), ELEVEN_NODE_EDGES))


def test_eleven_node_ancestors_of_9():
    idx = validate(build_graph(range(1, 12), ELEVEN_NODE_EDGES))
    assert idx.ancestors[9] == {1, 2, 5, 6}


def test_longest_chain_examples():
    assert longest_chain(build_graph([1, 2, 3], [(1, 2), (2, 3)]), 3) == 3
    assert longest_chain(build_graph([1, 2, 3], [(1, 3), (2, 3)]), 3) == 2
    assert longest_chain(build_graph([1, 2, 3], [(1, 2), (2, 3), (1, 3)]), 3) == 3
    assert longest_chain(build_graph([1, 2, 3], [(1, 2), (2, 3)]), 1) == 1
    with pytest.raises(UnknownNodeError):
        longest_chain(build_graph([1, 2], [(1, 2)]), 5)


@st.composite
def random_dags(draw, max_nodes=8):
    n = draw(st.integers(1, max_nodes))
    perm = draw(st.permutations(list(range(1, n + 1))))
    pairs = [(perm[a], perm[b]) for a, b in itertools.combinations(range(n), 2)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    edges = [p for p, keep in zip(pairs, mask) if keep]
    return build_graph(range(1, n + 1), edges)


def _reachability(graph):
    parents = {k: set() for k in graph.nodes}
    for e in graph.edges:
        parents[e.target].add(e.source)
    anc = {k: set(parents[k]) for k in graph.nodes}
    changed = True
    while changed:
        changed = False
        for k in anc:
            new = set().union(*(parents[j] for j in anc[k])) | anc[k]
            if new != anc[k]:
                anc[k], changed = new, True
    return anc


@settings(max_examples=100, deadline=None)
@given(random_dags())
def test_traversal_invariants(graph):
    idx = validate(graph)
    pos = {k: i for i, k in enumerate(idx.topo_order)}
    for e in graph.edges:
        assert pos[e.source] < pos[e.target]
    assert all(not idx.parents[r] for r in idx.roots)
    oracle = _reachability(graph)
    for k in graph.nodes:
        assert k not in idx.ancestors[k]
        assert idx.ancestors[k] == oracle[k]
        for j in idx.parents[k]:
            assert longest_chain(graph, k, idx) >= longest_chain(graph, j, idx) + 1
    ridx = validate(graph.reversed())
    assert ridx.parents == idx.children
    assert ridx.children == idx.parents


def test_topological_ties_by_id():
    idx = validate(build_graph([5, 3, 1, 4, 2], [(5, 1)]))
    assert idx.topo_order == (2, 3, 4, 5, 1)


def test_edge_lookup_and_relabel():
    g = GraphSpec({1: None, 2: None}, (Edge(1, 2),), 2)
    assert g.edge(1, 2).key == (1, 2)
    r = build_graph([1, 2, 3], [(1, 2), (2, 3)]).relabel({1: 3, 2: 1, 3: 2})
    assert {e.key for e in r.edges} == {(3, 1), (1, 2)}
    assert r.target == 2
