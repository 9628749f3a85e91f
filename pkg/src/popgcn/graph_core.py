"""Weighted graphs, normalized Laplacians and Chebyshev filtering.

Graphs are undirected with strictly positive weights and no self-loops.  Each
edge is stored once as ``(i, j, w)`` with ``i < j``; the symmetric adjacency is
rebuilt on demand as a scipy CSR matrix.  Nothing here ever forms an
eigendecomposition: filters are evaluated through the three-term Chebyshev
recurrence using sparse-times-dense products only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, InvalidInputError, ReportIOError, ShapeMismatchError

#: Analytic upper bound on the spectrum of the normalized Laplacian.
DEFAULT_LAMBDA_MAX = 2.0


def _readonly(a):
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected graph over ``num_nodes`` nodes in canonical edge-list form.

    ``rows[e] < cols[e]`` for every edge ``e`` and the list is sorted
    lexicographically by ``(row, col)``.  Use :meth:`from_edges` to build one
    from arbitrary ``(i, j, w)`` triples.
    """

    num_nodes: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 0:
            raise InvalidInputError(f"num_nodes must be non-negative, got {n}")
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (rows.size == cols.size == weights.size):
            raise ShapeMismatchError("rows, cols and weights must have equal length")
        if rows.size:
            if rows.min() < 0 or cols.max() >= n:
                raise InvalidInputError("edge endpoint outside [0, num_nodes)")
            if np.any(rows == cols):
                raise InvalidInputError("self-loops are not allowed")
            if np.any(rows > cols):
                raise InvalidInputError("edges must be stored with i < j")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise InvalidInputError("edge weights must be finite and strictly positive")
            key = rows * max(n, 1) + cols
            if np.any(np.diff(key) <= 0):
                order = np.argsort(key, kind="stable")
                if np.any(np.diff(key[order]) == 0):
                    raise InvalidInputError("duplicate edge")
                raise InvalidInputError("edges must be sorted by (i, j)")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "cols", _readonly(cols))
        object.__setattr__(self, "weights", _readonly(weights))

    @classmethod
    def from_edges(cls, num_nodes, edges):
        """Build a graph from ``(i, j, w)`` triples in any orientation.

        Self-loops, non-positive weights and repeated unordered pairs raise
        :class:`InvalidInputError`; nothing is merged silently.
        """
        edges = list(edges)
        if not edges:
            return cls.empty(num_nodes)
        i = np.array([e[0] for e in edges], dtype=np.int64)
        j = np.array([e[1] for e in edges], dtype=np.int64)
        w = np.array([e[2] for e in edges], dtype=np.float64)
        return cls.from_arrays(num_nodes, i, j, w)

    @classmethod
    def from_arrays(cls, num_nodes, i, j, w):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], np.asarray(w, dtype=np.float64)[order]
        if lo.size > 1:
            dup = (np.diff(lo) == 0) & (np.diff(hi) == 0)
            if np.any(dup):
                k = int(np.flatnonzero(dup)[0])
                raise InvalidInputError(f"duplicate edge ({lo[k]}, {hi[k]})")
        return cls(num_nodes, lo, hi, w)

    @classmethod
    def empty(cls, num_nodes):
        z = np.zeros(0)
        return cls(num_nodes, z.astype(np.int64), z.astype(np.int64), z)

    @classmethod
    def from_dense(cls, adjacency):
        """Build from a dense symmetric adjacency; the diagonal must be zero."""
        a = np.asarray(adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatchError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise InvalidInputError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise InvalidInputError("self-loops are not allowed")
        i, j = np.nonzero(np.triu(a, 1))
        return cls(a.shape[0], i, j, a[i, j])

    @property
    def num_edges(self):
        return int(self.rows.size)

    def edges(self):
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.weights)]

    def edge_set(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def adjacency(self):
        """Symmetric adjacency as a CSR matrix."""
        n = self.num_nodes
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        w = np.concatenate([self.weights, self.weights])
        return sp.csr_matrix((w, (r, c)), shape=(n, n))

    def to_dense(self):
        return self.adjacency().toarray()

    def degrees(self):
        d = np.zeros(self.num_nodes)
        np.add.at(d, self.rows, self.weights)
        np.add.at(d, self.cols, self.weights)
        return d

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def __repr__(self):
        return f"WeightedGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass(frozen=True, eq=False)
class ScaledLaplacian:
    """``(2 / lambda_max) * L - I`` as a CSR matrix."""

    num_nodes: int
    matrix: sp.csr_matrix
    lambda_max: float


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Per-subject feature vectors with row and column labels."""

    values: np.ndarray
    columns: tuple = ()
    row_ids: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatchError("feature matrix must be two-dimensional")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("feature matrix contains non-finite entries")
        cols = tuple(self.columns) or tuple(f"f{d}" for d in range(v.shape[1]))
        rows = tuple(self.row_ids) or tuple(str(r) for r in range(v.shape[0]))
        if len(cols) != v.shape[1] or len(rows) != v.shape[0]:
            raise ShapeMismatchError("label count does not match matrix shape")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "row_ids", rows)

    @property
    def shape(self):
        return self.values.shape

    def select_columns(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(self.values[:, idx], tuple(self.columns[k] for k in idx), self.row_ids)


def as_array(x):
    """Return the raw ndarray behind a FeatureMatrix, or ``x`` as float array."""
    if isinstance(x, FeatureMatrix):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _as_operator(lt):
    if isinstance(lt, ScaledLaplacian):
        return lt.matrix
    if sp.issparse(lt):
        return sp.csr_matrix(lt)
    raise InvalidInputError("expected a ScaledLaplacian or a scipy sparse matrix")


def normalized_laplacian(g):
    """Symmetric normalized Laplacian ``I - D^-1/2 A D^-1/2`` of ``g`` (CSR).

    Isolated nodes keep a unit diagonal entry and nothing else.
    """
    n = g.num_nodes
    deg = g.degrees()
    # one value per unordered pair keeps the result bit-exactly symmetric
    off = -g.weights / np.sqrt(deg[g.rows] * deg[g.cols])
    diag = np.arange(n)
    r = np.concatenate([g.rows, g.cols, diag])
    c = np.concatenate([g.cols, g.rows, diag])
    v = np.concatenate([off, off, np.ones(n)])
    lap = sp.csr_matrix((v, (r, c)), shape=(n, n))
    lap.sort_indices()
    return lap


def scale_laplacian(lap, lambda_max=DEFAULT_LAMBDA_MAX):
    lambda_max = float(lambda_max)
    if not lambda_max > 0:
        raise InvalidInputError(f"lambda_max must be positive, got {lambda_max}")
    lap = sp.csr_matrix(lap)
    n = lap.shape[0]
    lt = sp.csr_matrix((2.0 / lambda_max) * lap - sp.identity(n, format="csr"))
    lt.sort_indices()
    return ScaledLaplacian(n, lt, lambda_max)


def graph_operator(g, lambda_max=DEFAULT_LAMBDA_MAX):
    """Shortcut: scaled normalized Laplacian of ``g``.

    Pass ``lambda_max=None`` to estimate the bound by power iteration instead
    of using the analytic value 2.
    """
    lap = normalized_laplacian(g)
    if lambda_max is None:
        lambda_max = estimate_lambda_max(lap)
        if lambda_max <= 0:
            lambda_max = DEFAULT_LAMBDA_MAX
    return scale_laplacian(lap, lambda_max)


def estimate_lambda_max(lap, iters=1000, tol=1e-9):
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration.

    Starts from the normalized all-ones vector (``e_0`` when that vector is in
    the kernel) and stops once successive Rayleigh quotients agree to ``tol``.
    Returns the last Rayleigh quotient if ``iters`` is exhausted.
    """
    lap = sp.csr_matrix(lap)
    n = lap.shape[0]
    if n == 0:
        return 0.0
    v = np.ones(n) / np.sqrt(n)
    w = lap @ v
    if not np.any(w):
        v = np.zeros(n)
        v[0] = 1.0
        w = lap @ v
    rq = float(v @ w)
    for _ in range(iters):
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        w = lap @ v
        new = float(v @ w)
        if abs(new - rq) < tol:
            return new
        rq = new
    return rq


def chebyshev_apply(lt, x, order):
    """Return ``[T_0(L) X, ..., T_K(L) X]`` for ``K = order``.

    Only sparse-times-dense products are used.  ``x`` may be 1-D or 2-D.
    """
    op = _as_operator(lt)
    x = as_array(x)
    order = int(order)
    if order < 0:
        raise InvalidInputError("Chebyshev order must be non-negative")
    if x.shape[0] != op.shape[0]:
        raise ShapeMismatchError(f"operator has {op.shape[0]} nodes but input has {x.shape[0]} rows")
    out = [x]
    if order >= 1:
        out.append(op @ x)
    for _ in range(2, order + 1):
        out.append(2.0 * (op @ out[-1]) - out[-2])
    return out


def chebyshev_sum(lt, blocks):
    """``sum_k T_k(L) Y_k`` for a sequence of equally shaped blocks ``Y_k``.

    Clenshaw's recurrence; costs ``len(blocks) - 1`` sparse products.
    """
    op = _as_operator(lt)
    blocks = list(blocks)
    if not blocks:
        raise InvalidInputError("need at least one coefficient block")
    if blocks[0].shape[0] != op.shape[0]:
        raise ShapeMismatchError(f"operator has {op.shape[0]} nodes but blocks have {blocks[0].shape[0]} rows")
    if len(blocks) == 1:
        return blocks[0].copy()
    b1 = np.zeros_like(blocks[0])
    b2 = np.zeros_like(blocks[0])
    for y in reversed(blocks[1:]):
        b1, b2 = y + 2.0 * (op @ b1) - b2, b1
    return blocks[0] + op @ b1 - b2


def _check_permutation(perm, n):
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer):
        raise InvalidInputError(f"permutation must be an integer array of length {n}")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidInputError("not a permutation of the node indices")
    return perm.astype(np.int64)


def permute_graph(g, perm):
    """Relabel node ``i`` as ``perm[i]``."""
    perm = _check_permutation(perm, g.num_nodes)
    return WeightedGraph.from_arrays(g.num_nodes, perm[g.rows], perm[g.cols], g.weights)


def permute_rows(x, perm):
    """Row ``i`` of ``x`` moves to row ``perm[i]``, matching :func:`permute_graph`."""
    x = as_array(x)
    perm = _check_permutation(perm, x.shape[0])
    out = np.empty_like(x)
    out[perm] = x
    return out


GRAPH_CSV_HEADER = ("i", "j", "weight")


def write_graph_csv(g, path):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRAPH_CSV_HEADER)
            for i, j, wt in g.edges():
                w.writerow((i, j, repr(wt)))
    except OSError as exc:
        raise ReportIOError(f"cannot write graph to {path}: {exc}", path=path) from exc


def read_graph_csv(path, num_nodes=None):
    """Read an ``i,j,weight`` edge file.

    The format does not record trailing isolated nodes, so pass ``num_nodes``
    when it is known; otherwise it is taken as ``max index + 1``.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != GRAPH_CSV_HEADER:
                raise FormatError(f"{path}: expected header i,j,weight")
            edges = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    i, j, w = int(row[0]), int(row[1]), float(row[2])
                except (ValueError, IndexError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from exc
                if i >= j:
                    raise FormatError(f"{path}:{lineno}: expected i < j")
                edges.append((i, j, w))
    except OSError as exc:
        raise ReportIOError(f"cannot read graph from {path}: {exc}", path=path) from exc
    if num_nodes is None:
        num_nodes = 1 + max((j for _, j, _ in edges), default=-1)
    return WeightedGraph.from_edges(num_nodes, edges)
