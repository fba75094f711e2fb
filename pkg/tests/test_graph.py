import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egd_gnn.graph import GlobalGraph, GraphError, build_global_graph, neighbors_of

import oracles

seq_sets = st.lists(st.lists(st.integers(1, 15), max_size=10), max_size=8)


def test_worked_example():
    g = build_global_graph([[5, 6, 2, 4, 1, 2]], 6)
    assert set(g.edges()) == {(5, 6), (2, 6), (2, 4), (1, 4), (1, 2)}
    assert neighbors_of(g, 2) == [1, 4, 6]
    assert g.neighbors_of(3) == []


def test_repeated_item_gives_no_edges():
    assert build_global_graph([[3, 3, 3]], 3).edges() == []


def test_out_of_range():
    with pytest.raises(GraphError):
        build_global_graph([[1, 9]], 5)
    with pytest.raises(GraphError):
        build_global_graph([[0, 1]], 5)
    g = build_global_graph([[1, 2]], 2)
    with pytest.raises(GraphError):
        g.neighbors_of(3)


def test_matches_pair_enumeration_on_100_sets():
    rng = random.Random(0)
    for _ in range(100):
        n = rng.randrange(2, 30)
        seqs = [[rng.randrange(1, n + 1) for _ in range(rng.randrange(0, 15))] for _ in range(rng.randrange(1, 10))]
        g = build_global_graph(seqs, n)
        assert set(g.edges()) == oracles.graph_edges_brute(seqs)
        assert g.edge_count == len(oracles.graph_edges_brute(seqs))


@given(seq_sets)
def test_symmetry_and_degree_sum(seqs):
    g = build_global_graph(seqs, 15)
    for a, b in g.edges():
        assert b in g.neighbors_of(a) and a in g.neighbors_of(b)
    assert int(g.degrees().sum()) == 2 * g.edge_count
    src, dst = g.directed_edges()
    assert np.all(np.diff(src) >= 0)


@given(seq_sets, st.randoms(use_true_random=False))
def test_invariant_to_sequence_order_and_reversal(seqs, r):
    g = build_global_graph(seqs, 15)
    shuffled = [list(reversed(s)) for s in seqs]
    r.shuffle(shuffled)
    assert build_global_graph(shuffled, 15).edges() == g.edges()


def test_tsv_round_trip(tmp_path):
    rng = random.Random(3)
    seqs = [[rng.randrange(1, 25) for _ in range(8)] for _ in range(10)]
    g = build_global_graph(seqs, 30)
    g.to_tsv(tmp_path / "graph.tsv")
    assert (tmp_path / "graph.tsv").read_text().startswith(f"#items=30 #edges={g.edge_count}")
    assert GlobalGraph.from_tsv(tmp_path / "graph.tsv") == g


def test_max_degree_caps_and_is_seeded():
    rng = random.Random(4)
    seqs = [[rng.randrange(1, 40) for _ in range(30)] for _ in range(30)]
    a = build_global_graph(seqs, 40, max_degree=3, seed=1)
    b = build_global_graph(seqs, 40, max_degree=3, seed=1)
    assert a == b
    assert a.degrees().max() <= 3
    assert set(a.edges()) <= set(build_global_graph(seqs, 40).edges())
