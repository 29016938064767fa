"""Sparse graph representation and normalization coefficients.

Graphs are undirected: every constructor symmetrizes, deduplicates, and
validates the CSR arrays, so a stored edge (i, j) always has its mirror
(j, i). Instances are immutable after construction; derived weighted
variants (symmetric normalization, neighbor means, self-loop insertion)
are cached on the instance.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, DimensionError, ValidationError


class CsrGraph:
    """Compressed-sparse-row adjacency, optionally edge-weighted."""

    __slots__ = ("n", "row_offsets", "col_indices", "edge_weights", "_row_ids", "_derived")

    def __init__(self, n: int, row_offsets, col_indices, edge_weights=None, _validate: bool = True):
        self.n = int(n)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.edge_weights = None if edge_weights is None else np.ascontiguousarray(edge_weights, dtype=np.float64)
        self._row_ids: np.ndarray | None = None
        self._derived: dict[str, "CsrGraph"] = {}
        if _validate:
            self._validate()
        for arr in (self.row_offsets, self.col_indices):
            arr.setflags(write=False)
        if self.edge_weights is not None:
            self.edge_weights.setflags(write=False)

    def _validate(self) -> None:
        off, cols = self.row_offsets, self.col_indices
        if off.shape != (self.n + 1,):
            raise ValidationError(f"row_offsets must have length n+1={self.n + 1}, got {off.shape}")
        if off[0] != 0 or off[-1] != len(cols):
            raise ValidationError("row_offsets must start at 0 and end at nnz")
        if (np.diff(off) < 0).any():
            raise ValidationError("row_offsets must be nondecreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n):
            raise ValidationError(f"column index out of range [0, {self.n})")
        rows = self.row_ids()
        if len(cols) > 1:
            same_row = rows[1:] == rows[:-1]
            bad = same_row & (np.diff(cols) <= 0)
            if bad.any():
                raise ValidationError(
                    f"row {int(rows[1:][bad][0])} has unsorted or duplicate column indices"
                )
        if self.edge_weights is not None and self.edge_weights.shape != cols.shape:
            raise ValidationError(
                f"edge_weights length {self.edge_weights.shape} does not match nnz {cols.shape}"
            )
        # Structural symmetry: the (col, row)-sorted entry list must equal
        # the (row, col)-sorted one.
        perm = np.lexsort((rows, cols))
        if not (np.array_equal(cols[perm], rows) and np.array_equal(rows[perm], cols)):
            raise ValidationError("adjacency structure is not symmetric")

    @property
    def nnz(self) -> int:
        return len(self.col_indices)

    def row_ids(self) -> np.ndarray:
        """Row index of each stored entry (the expansion of row_offsets)."""
        if self._row_ids is None:
            ids = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_offsets))
            ids.setflags(write=False)
            self._row_ids = ids
        return self._row_ids

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def to_dense(self) -> np.ndarray:
        """Materialize the (weighted) adjacency. Test oracle; small graphs only."""
        dense = np.zeros((self.n, self.n))
        w = self.edge_weights if self.edge_weights is not None else np.ones(self.nnz)
        dense[self.row_ids(), self.col_indices] = w
        return dense

    def structure_equal(self, other: "CsrGraph") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def undirected_edges(self) -> np.ndarray:
        """Each undirected edge once as (i, j) with i < j; self-loops excluded."""
        rows = self.row_ids()
        keep = rows < self.col_indices
        return np.column_stack([rows[keep], self.col_indices[keep]])

    def __repr__(self) -> str:
        w = ", weighted" if self.edge_weights is not None else ""
        return f"CsrGraph(n={self.n}, nnz={self.nnz}{w})"


def from_edge_list(n: int, edges) -> CsrGraph:
    """Build a symmetrized, deduplicated, self-loop-free CSR graph.

    Self-loops in the input are dropped; propagators that need them add
    them explicitly.
    """
    if n <= 0:
        raise ValidationError(f"node count must be positive, got {n}")
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        bad = (pairs < 0) | (pairs >= n)
        if bad.any():
            i, j = pairs[bad.any(axis=1)][0]
            raise ValidationError(f"edge ({i}, {j}) out of range for n={n}")
        both = np.vstack([pairs, pairs[:, ::-1]])
        both = both[both[:, 0] != both[:, 1]]
        both = np.unique(both, axis=0)  # sorts by (row, col)
    else:
        both = pairs
    counts = np.bincount(both[:, 0], minlength=n) if len(both) else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CsrGraph(n, offsets, both[:, 1] if len(both) else np.empty(0, dtype=np.int64))


def with_self_loops(g: CsrGraph) -> CsrGraph:
    """The same structure with a (i, i) entry inserted in every row."""
    cached = g._derived.get("loops")
    if cached is not None:
        return cached
    rows, cols = [], []
    for i in range(g.n):
        row = g.neighbors(i)
        merged = np.insert(row, np.searchsorted(row, i), i)
        cols.append(merged)
        rows.append(len(merged))
    offsets = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(rows, out=offsets[1:])
    out = CsrGraph(g.n, offsets, np.concatenate(cols) if cols else np.empty(0, dtype=np.int64), _validate=False)
    g._derived["loops"] = out
    return out


def sym_norm_weights(g: CsrGraph, add_self_loops: bool = True) -> CsrGraph:
    """Attach w_ij = 1/sqrt(d_i * d_j), degrees counted after optional
    self-loop insertion (the symmetric GCN normalization)."""
    key = f"symnorm:{add_self_loops}"
    cached = g._derived.get(key)
    if cached is not None:
        return cached
    base = with_self_loops(g) if add_self_loops else g
    deg = base.degrees().astype(np.float64)
    if (deg == 0).any():
        node = int(np.flatnonzero(deg == 0)[0])
        raise DegenerateInputError(
            f"node {node} has zero degree; symmetric normalization needs self-loops or a connected node"
        )
    inv_sqrt = 1.0 / np.sqrt(deg)
    weights = inv_sqrt[base.row_ids()] * inv_sqrt[base.col_indices]
    out = CsrGraph(base.n, base.row_offsets, base.col_indices, weights, _validate=False)
    g._derived[key] = out
    return out


def mean_norm_weights(g: CsrGraph) -> CsrGraph:
    """Attach w_ij = 1/d_i (neighbor averaging). Zero-degree rows keep no
    entries, so their aggregated value is the zero vector."""
    cached = g._derived.get("meannorm")
    if cached is not None:
        return cached
    deg = g.degrees().astype(np.float64)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    weights = inv[g.row_ids()]
    out = CsrGraph(g.n, g.row_offsets, g.col_indices, weights, _validate=False)
    g._derived["meannorm"] = out
    return out


def edge_homophily(g: CsrGraph, labels: np.ndarray) -> float:
    """Fraction of undirected edges whose endpoints share a label."""
    labels = np.asarray(labels)
    if labels.shape != (g.n,):
        raise DimensionError(f"labels shape {labels.shape} does not match node count {g.n}")
    edges = g.undirected_edges()
    if len(edges) == 0:
        raise DegenerateInputError("edge_homophily is undefined on an edgeless graph")
    return float((labels[edges[:, 0]] == labels[edges[:, 1]]).mean())
