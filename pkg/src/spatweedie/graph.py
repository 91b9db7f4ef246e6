"""Areal adjacency graphs, Laplacians, and the block-diagonal approximation.

A graph is a set of labelled vertices (areal units such as zipcodes) with
undirected first-order adjacency edges. The Laplacian is degree minus
adjacency; its quadratic form sums squared differences over edges, which
is what the smoothing penalty regularizes. When vertices carry a block
assignment (state membership), the approximate Laplacian deletes every
cross-block edge and recomputes degrees within blocks, yielding a true
block-diagonal Laplacian whose blocks can be solved independently.

Graphs and Laplacian views are immutable after construction and safe to
share across threads. Vertex order is fixed at ingestion by sorting the
external labels, so downstream matrices and result files are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected areal adjacency graph with optional block partition."""

    labels: tuple
    edges: tuple  # canonical (i, j) index pairs with i < j, deduplicated
    block_of: tuple | None = None  # per-vertex block label, or None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def n_vertices(self):
        return len(self.labels)

    @property
    def n_edges(self):
        return len(self.edges)

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"unknown location label {label!r}") from None

    def degrees(self):
        deg = np.zeros(self.n_vertices, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def block_codes(self):
        """Blocks as contiguous integer codes plus the sorted block labels."""
        if self.block_of is None:
            raise ValueError("graph has no block assignment")
        names = sorted(set(self.block_of))
        code = {b: k for k, b in enumerate(names)}
        return np.array([code[b] for b in self.block_of]), names


@dataclass(frozen=True)
class LaplacianView:
    """Sparse symmetric Laplacian, exact or block-approximate."""

    matrix: sp.csr_matrix
    approximate: bool
    blocks: tuple | None = None  # index arrays, one per block, when approximate

    @property
    def n(self):
        return self.matrix.shape[0]


def build_graph(edge_list, labels, block_of=None):
    """Build a deduplicated undirected graph over a fixed label universe.

    ``edge_list`` holds label pairs; both endpoints must appear in
    ``labels``. Isolated vertices are permitted and retained. Self loops
    and labels outside the universe are rejected.
    """
    labs = tuple(sorted(set(labels)))
    if len(labs) == 0:
        raise ValueError("label universe is empty")
    index = {lab: i for i, lab in enumerate(labs)}
    edges = set()
    for a, b in edge_list:
        if a == b:
            raise ValueError(f"self-loop at label {a!r}")
        try:
            i, j = index[a], index[b]
        except KeyError as exc:
            raise ValueError(f"edge endpoint {exc.args[0]!r} not in label universe") from None
        edges.add((min(i, j), max(i, j)))
    blocks = None
    if block_of is not None:
        missing = [lab for lab in labs if lab not in block_of]
        if missing:
            raise ValueError(f"missing block assignment for labels {missing[:5]}")
        blocks = tuple(block_of[lab] for lab in labs)
    return SpatialGraph(labels=labs, edges=tuple(sorted(edges)), block_of=blocks)


def laplacian(g, approximate=False):
    """Degree-minus-adjacency matrix, optionally block-approximated.

    In approximate mode every cross-block edge is removed first and the
    degrees are recomputed within blocks, so the result is the exact
    Laplacian of the edge-deleted graph: block-diagonal, positive
    semi-definite, with each block's ones vector in its null space.
    """
    n = g.n_vertices
    if approximate:
        codes, _ = g.block_codes()
        edges = [(i, j) for i, j in g.edges if codes[i] == codes[j]]
        blocks = tuple(
            np.flatnonzero(codes == k) for k in range(codes.max() + 1 if n else 0)
        )
    else:
        edges = list(g.edges)
        blocks = None
    deg = np.zeros(n)
    rows, cols, vals = [], [], []
    for i, j in edges:
        deg[i] += 1.0
        deg[j] += 1.0
        rows += [i, j]
        cols += [j, i]
        vals += [-1.0, -1.0]
    rows += list(range(n))
    cols += list(range(n))
    vals += list(deg)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return LaplacianView(matrix=mat, approximate=approximate, blocks=blocks)


def quad_form(w, alpha):
    """alpha' W alpha, equal to half the sum of squared edge differences."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (w.n,):
        raise ValueError(f"effect vector has length {alpha.shape}, expected ({w.n},)")
    return float(alpha @ (w.matrix @ alpha))


def sparsity(g):
    """Fraction of zero entries of the adjacency matrix: 1 - 2|E|/L**2."""
    n = g.n_vertices
    if n < 1:
        raise ValueError("graph must have at least one vertex")
    return 1.0 - 2.0 * g.n_edges / n**2


def read_edge_list(path):
    """Read 'label1,label2' edge lines; '#' comments and blanks ignored."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [x.strip() for x in line.split(",")]
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"{path}:{ln}: expected 'label1,label2', got {line!r}")
            edges.append((parts[0], parts[1]))
    return edges


def read_block_file(path):
    """Read 'label,block_id' lines into a dict."""
    blocks = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [x.strip() for x in line.split(",")]
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"{path}:{ln}: expected 'label,block_id', got {line!r}")
            blocks[parts[0]] = parts[1]
    return blocks


def read_coord_file(path):
    """Read 'label,lon,lat' lines into a dict of (lon, lat) pairs."""
    coords = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [x.strip() for x in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 'label,lon,lat', got {line!r}")
            try:
                coords[parts[0]] = (float(parts[1]), float(parts[2]))
            except ValueError:
                raise ValueError(f"{path}:{ln}: non-numeric coordinate in {line!r}") from None
    return coords


def coords_array(g, coords):
    """Per-vertex (lon, lat) array in graph vertex order."""
    missing = [lab for lab in g.labels if lab not in coords]
    if missing:
        raise ValueError(f"missing coordinates for labels {missing[:5]}")
    return np.array([coords[lab] for lab in g.labels], dtype=float)
