"""Tests for adjacency graphs, Laplacians, and the block approximation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from spatweedie.graph import (
    build_graph,
    coords_array,
    laplacian,
    quad_form,
    read_block_file,
    read_coord_file,
    read_edge_list,
    sparsity,
)

# A 9-vertex benchmark graph whose degree sequence is (2,2,4,3,5,4,4,1,3)
NINE_EDGES = [
    ("1", "4"), ("1", "5"), ("2", "5"), ("2", "6"), ("3", "4"), ("3", "5"),
    ("3", "6"), ("3", "7"), ("4", "7"), ("5", "7"), ("5", "9"), ("6", "7"),
    ("6", "9"), ("8", "9"),
]
NINE_LABELS = [str(i) for i in range(1, 10)]


@pytest.fixture
def nine_graph():
    return build_graph(NINE_EDGES, NINE_LABELS)


def edge_sum(g, alpha):
    """Independent oracle: half the doubly-counted sum of squared differences."""
    total = 0.0
    for i, j in g.edges:
        total += (alpha[i] - alpha[j]) ** 2
    return total


def random_graph(rng, n, edge_prob):
    labels = [f"v{i:03d}" for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.append((labels[i], labels[j]))
    return build_graph(edges, labels)


class TestBuildGraph:
    def test_benchmark_degrees(self, nine_graph):
        assert list(nine_graph.degrees()) == [2, 2, 4, 3, 5, 4, 4, 1, 3]

    def test_isolated_vertices(self):
        g = build_graph([], ["a", "b", "c"])
        assert list(g.degrees()) == [0, 0, 0]
        assert g.n_vertices == 3

    def test_duplicate_and_reversed_edges_collapse(self):
        g = build_graph([("1", "4"), ("4", "1"), ("1", "4")], NINE_LABELS)
        assert g.n_edges == 1

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            build_graph([("1", "1")], NINE_LABELS)

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="not in label universe"):
            build_graph([("1", "99")], NINE_LABELS)

    def test_vertex_order_is_sorted_labels(self):
        g = build_graph([], ["zz", "aa", "mm"])
        assert g.labels == ("aa", "mm", "zz")


class TestLaplacian:
    def test_exact_entries(self, nine_graph):
        w = laplacian(nine_graph).matrix.toarray()
        assert_allclose(np.diag(w), [2, 2, 4, 3, 5, 4, 4, 1, 3])
        for i, j in nine_graph.edges:
            assert w[i, j] == -1.0 and w[j, i] == -1.0
        off = w - np.diag(np.diag(w))
        assert np.count_nonzero(off) == 2 * nine_graph.n_edges

    def test_row_sums_zero(self, nine_graph):
        w = laplacian(nine_graph).matrix
        assert_allclose(np.asarray(w.sum(axis=1)).ravel(), 0.0, atol=1e-14)

    def test_single_block_equals_exact(self, nine_graph):
        g = build_graph(NINE_EDGES, NINE_LABELS, block_of={l: "all" for l in NINE_LABELS})
        exact = laplacian(g, approximate=False).matrix.toarray()
        approx = laplacian(g, approximate=True).matrix.toarray()
        assert np.array_equal(exact, approx)

    def test_two_block_edge_removal(self):
        blocks = {l: ("west" if l in "12345" else "east") for l in NINE_LABELS}
        g = build_graph(NINE_EDGES, NINE_LABELS, block_of=blocks)
        w = laplacian(g, approximate=True).matrix.toarray()
        # cross-block pairs are zeroed
        for i, j in [(1, 5), (2, 5), (2, 6), (3, 6), (4, 6), (4, 8)]:
            assert w[i, j] == 0.0
        # vertex "5" (index 4) loses its two cross edges: degree 5 -> 3
        assert w[4, 4] == 3.0
        # block-wise row sums still vanish
        assert_allclose(np.asarray(w.sum(axis=1)).ravel(), 0.0, atol=1e-14)

    def test_approximate_requires_blocks(self, nine_graph):
        with pytest.raises(ValueError, match="block"):
            laplacian(nine_graph, approximate=True)


class TestQuadForm:
    def test_constant_vector_in_null_space(self, nine_graph):
        w = laplacian(nine_graph)
        assert quad_form(w, np.ones(9)) == pytest.approx(0.0, abs=1e-12)

    def test_single_indicator_gives_degree(self, nine_graph):
        w = laplacian(nine_graph)
        e8 = np.zeros(9)
        e8[7] = 1.0  # vertex "8" has degree 1
        assert quad_form(w, e8) == pytest.approx(1.0)

    def test_pair_indicator(self, nine_graph):
        w = laplacian(nine_graph)
        ind = np.zeros(9)
        ind[7] = ind[8] = 1.0  # vertices "8" and "9"
        assert quad_form(w, ind) == pytest.approx(2.0)

    def test_dimension_mismatch(self, nine_graph):
        with pytest.raises(ValueError):
            quad_form(laplacian(nine_graph), np.ones(5))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_edge_sum_and_psd(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n=int(rng.integers(2, 25)), edge_prob=0.3)
        alpha = rng.normal(size=g.n_vertices) * 10.0
        w = laplacian(g)
        qf = quad_form(w, alpha)
        assert_allclose(qf, edge_sum(g, alpha), rtol=1e-12, atol=1e-12)
        assert qf >= -1e-12 * (1.0 + alpha @ alpha)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_approximate_psd_and_blockwise_row_sums(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 25))
        labels = [f"v{i:03d}" for i in range(n)]
        block_of = {lab: f"b{rng.integers(0, 3)}" for lab in labels}
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.3:
                    edges.append((labels[i], labels[j]))
        g = build_graph(edges, labels, block_of=block_of)
        wa = laplacian(g, approximate=True)
        alpha = rng.normal(size=n) * 5.0
        assert quad_form(wa, alpha) >= -1e-12 * (1.0 + alpha @ alpha)
        assert_allclose(np.asarray(wa.matrix.sum(axis=1)).ravel(), 0.0, atol=1e-13)


class TestSparsity:
    def test_benchmark(self, nine_graph):
        assert sparsity(nine_graph) == pytest.approx(1.0 - 28.0 / 81.0)

    def test_complete_triangle(self):
        g = build_graph([("a", "b"), ("a", "c"), ("b", "c")], ["a", "b", "c"])
        assert sparsity(g) == pytest.approx(1.0 / 3.0)

    def test_empty(self):
        assert sparsity(build_graph([], ["a"])) == pytest.approx(1.0)


class TestFiles:
    def test_edge_round_trip(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("# comment\n1,4\n1,5\n\n8,9\n", encoding="utf-8")
        assert read_edge_list(path) == [("1", "4"), ("1", "5"), ("8", "9")]

    def test_malformed_edge_line(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("1,4\nnonsense\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":2:"):
            read_edge_list(path)

    def test_block_file(self, tmp_path):
        path = tmp_path / "blocks.txt"
        path.write_text("1,CT\n2,MA\n", encoding="utf-8")
        assert read_block_file(path) == {"1": "CT", "2": "MA"}

    def test_coord_file(self, tmp_path):
        path = tmp_path / "coords.txt"
        path.write_text("a,-72.5,41.6\nb,-71.0,42.0\n", encoding="utf-8")
        coords = read_coord_file(path)
        g = build_graph([], ["a", "b"])
        arr = coords_array(g, coords)
        assert_allclose(arr, [[-72.5, 41.6], [-71.0, 42.0]])

    def test_coord_file_bad_number(self, tmp_path):
        path = tmp_path / "coords.txt"
        path.write_text("a,x,41.6\n", encoding="utf-8")
        with pytest.raises(ValueError, match="non-numeric"):
            read_coord_file(path)
