"""Geometric graphs on point sets: K-nearest-neighbor graphs and minimum spanning trees.

Graphs are stored in compressed sparse row form (``indptr``, ``indices``):
the out-neighbors of node ``i`` are ``indices[indptr[i]:indptr[i + 1]]``.

K-NN ties are broken uniformly at random. Points that coincide are grouped,
so heavily duplicated inputs (a categorical X, say) cost one neighbor search
per distinct point rather than per row. Random choices for a group of
coincident points, or for a single point with an equidistant tie set, use a
generator keyed by ``(seed, stream key, lowest row index involved)``; the
result therefore does not depend on the order in which nodes are processed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .data import Dataset, MetricSpec
from .errors import ConfigError, TooFewPoints
from .rng import stream

# below this many candidates x rows, random subsets come from sorting random keys
_DENSE_SAMPLING_LIMIT = 2_000_000


@dataclass(frozen=True)
class GraphSpec:
    """Which geometric graph to build.

    Parameters
    ----------
    kind : {"knn", "mst"}
    k : int
        Number of neighbors for ``knn``.
    directed : bool
        Directed K-NN keeps exactly ``k`` out-neighbors per node; undirected
        symmetrizes and drops duplicate edges. MSTs are always undirected.
    seed : int
        Seed for random tie-breaking.
    """

    kind: str = "knn"
    k: int = 1
    directed: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("knn", "mst"):
            raise ConfigError(f"unknown graph kind {self.kind!r}")
        if self.kind == "knn" and int(self.k) < 1:
            raise ConfigError("K must be at least 1")

    def describe(self) -> dict:
        if self.kind == "mst":
            return {"kind": "mst", "seed": self.seed}
        return {"kind": "knn", "k": self.k, "directed": self.directed, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class GeometricGraph:
    """Adjacency structure with per-node out-neighbor lists."""

    indptr: np.ndarray
    indices: np.ndarray
    directed: bool
    kind: str = "knn"
    ties: int = 0
    total_weight: float | None = field(default=None)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Source and target arrays of every stored (directed) edge."""
        src = np.repeat(np.arange(self.n), self.degrees)
        return src, self.indices

    def undirected_edges(self) -> set[tuple[int, int]]:
        src, dst = self.edge_arrays()
        return {(int(min(a, b)), int(max(a, b))) for a, b in zip(src, dst)}

    def to_text(self) -> str:
        """One line per node: ``index degree neighbor...``."""
        lines = []
        for i in range(self.n):
            nb = self.out_neighbors(i)
            lines.append(" ".join(map(str, [i, len(nb), *nb.tolist()])))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, directed: bool = True, kind: str = "knn") -> "GeometricGraph":
        rows = [list(map(int, ln.split())) for ln in text.strip().splitlines()]
        indptr = np.zeros(len(rows) + 1, dtype=np.intp)
        indices = []
        for i, r in enumerate(rows):
            if r[0] != i or r[1] != len(r) - 2:
                raise ValueError(f"bad adjacency line for node {i}")
            indices.extend(r[2:])
            indptr[i + 1] = indptr[i] + r[1]
        return cls(indptr, np.asarray(indices, dtype=np.intp), directed, kind)


# --------------------------------------------------------------------- sampling


def _sample_rows(rng: np.random.Generator, pool_size: int, r: int, exclude: np.ndarray | None, rows: int) -> np.ndarray:
    """Per row, ``r`` distinct positions in ``range(pool_size)`` avoiding ``exclude[row]``."""
    eff = pool_size - (0 if exclude is None else 1)
    if r > eff:
        raise TooFewPoints("tie pool smaller than the number of neighbors requested")
    if r == 0:
        return np.empty((rows, 0), dtype=np.intp)
    if r == eff:
        pos = np.tile(np.arange(eff), (rows, 1))
    elif rows * eff <= _DENSE_SAMPLING_LIMIT or 2 * r > eff:
        keys = rng.random((rows, eff))
        pos = np.argpartition(keys, r - 1, axis=1)[:, :r]
    else:
        pos = rng.integers(0, eff, size=(rows, r))
        while r > 1:
            srt = np.sort(pos, axis=1)
            bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
            if bad.size == 0:
                break
            pos[bad] = rng.integers(0, eff, size=(bad.size, r))
    if exclude is not None:
        pos = pos + (pos >= exclude[:, None])
    return np.sort(pos, axis=1)


# --------------------------------------------------------------------- K-NN


def _knn_coords(points: np.ndarray, k: int, rng_for: Callable[[int], np.random.Generator]) -> tuple[np.ndarray, int]:
    n = len(points)
    uniq, inv, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if len(uniq) == n:
        return _knn_distinct(points, k, rng_for)
    return _knn_grouped(uniq, inv, counts, k, rng_for)


def _knn_distinct(points: np.ndarray, k: int, rng_for) -> tuple[np.ndarray, int]:
    n = len(points)
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 2)
    if not np.array_equal(idx[:, 0], np.arange(n)):
        # distances underflowed to zero between distinct rows; treat every row as its own group
        return _knn_grouped(points, np.arange(n), np.ones(n, dtype=int), k, rng_for)
    nbr = idx[:, 1:k + 1].copy()
    tied = np.flatnonzero(dist[:, k] == dist[:, k + 1])
    for i in tied:
        level = dist[i, k]
        kq = min(n, 2 * (k + 2))
        while True:
            dd, ii = tree.query(points[i], k=kq)
            if dd[-1] > level or kq == n:
                break
            kq = min(n, 2 * kq)
        keep = ii != i
        dd, ii = dd[keep], ii[keep]
        strict = ii[dd < level]
        pool = np.sort(ii[dd == level])
        r = k - len(strict)
        pick = pool[_sample_rows(rng_for(int(i)), len(pool), r, None, 1)[0]]
        nbr[i] = np.concatenate([strict, pick])
    return nbr, len(tied)


def _knn_grouped(uniq, inv, counts, k, rng_for) -> tuple[np.ndarray, int]:
    n = len(inv)
    m = len(uniq)
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])
    tree = cKDTree(uniq) if m > 1 else None
    nbr = np.empty((n, k), dtype=np.intp)
    ties = 0

    def members(u):
        return order[starts[u]:starts[u + 1]]

    for u in range(m):
        g = members(u)
        c = len(g)
        if c - 1 >= k:
            if c - 1 == k:
                others = np.tile(g, (c, 1))[~np.eye(c, dtype=bool)].reshape(c, c - 1)
                nbr[g] = others
            else:
                pos = _sample_rows(rng_for(int(g[0])), c, k, np.arange(c), c)
                nbr[g] = g[pos]
                ties += c
            continue
        need = k - (c - 1)
        kq = min(m, need + 2)
        while True:
            dd, ii = tree.query(uniq[u], k=kq)
            dd, ii = np.atleast_1d(dd), np.atleast_1d(ii)
            keep = ii != u
            dd, ii = dd[keep], ii[keep]
            cum = np.cumsum(counts[ii])
            hit = np.flatnonzero(cum >= need)
            if hit.size:
                level = dd[hit[0]]
                if kq == m or dd[-1] > level:
                    break
            elif kq == m:
                raise TooFewPoints("not enough points for the requested K")
            kq = min(m, 2 * kq)
        strict_members = np.concatenate([members(v) for v in ii[dd < level]] or [np.empty(0, np.intp)])
        pool = np.sort(np.concatenate([members(v) for v in ii[dd == level]]))
        r = need - len(strict_members)
        if c > 1:
            own = np.tile(g, (c, 1))[~np.eye(c, dtype=bool)].reshape(c, c - 1)
        else:
            own = np.empty((1, 0), dtype=np.intp)
        if r < len(pool):
            picks = pool[_sample_rows(rng_for(int(min(g[0], pool[0]))), len(pool), r, None, c)]
            ties += c
        else:
            picks = np.tile(pool, (c, 1))
        nbr[g] = np.hstack([own, np.tile(strict_members, (c, 1)), picks])
    return nbr, ties


def _knn_matrix(dist: np.ndarray, k: int, rng_for) -> tuple[np.ndarray, int]:
    n = len(dist)
    d = dist.astype(float, copy=True)
    np.fill_diagonal(d, np.inf)
    level = np.partition(d, k - 1, axis=1)[:, k - 1]
    nbr = np.empty((n, k), dtype=np.intp)
    ties = 0
    for i in range(n):
        row = d[i]
        strict = np.flatnonzero(row < level[i])
        pool = np.flatnonzero(row == level[i])
        r = k - len(strict)
        if r < len(pool):
            pick = pool[_sample_rows(rng_for(i), len(pool), r, None, 1)[0]]
            ties += 1
        else:
            pick = pool
        nbr[i] = np.concatenate([strict, pick])
    return nbr, ties


def _csr_from_lists(nbr: np.ndarray, directed: bool) -> tuple[np.ndarray, np.ndarray]:
    n, k = nbr.shape
    if directed:
        srt = np.sort(nbr, axis=1)
        return np.arange(0, n * k + 1, k, dtype=np.intp), srt.ravel().astype(np.intp)
    rows = np.repeat(np.arange(n), k)
    a = sparse.csr_matrix((np.ones(n * k), (rows, nbr.ravel())), shape=(n, n))
    a = (a + a.T).tocsr()
    a.sort_indices()
    return a.indptr.astype(np.intp), a.indices.astype(np.intp)


def knn_from_points(points: np.ndarray, k: int, directed: bool = True, seed: int = 0, stream_key=()) -> GeometricGraph:
    """K-NN graph of the rows of ``points`` under the Euclidean distance."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    k = int(k)
    if n < k + 1:
        raise TooFewPoints(f"K={k} needs at least {k + 1} points, got {n}")
    keys = tuple(stream_key) if isinstance(stream_key, (tuple, list)) else (stream_key,)
    rng_for = lambda node: stream(seed, "knn", *keys, node)  # noqa: E731
    if k == n - 1:
        nbr = np.tile(np.arange(n), (n, 1))[~np.eye(n, dtype=bool)].reshape(n, n - 1)
        ties = 0
    else:
        nbr, ties = _knn_coords(points, k, rng_for)
    indptr, indices = _csr_from_lists(nbr, directed)
    return GeometricGraph(indptr, indices, directed, "knn", ties)


def build_knn(spec: GraphSpec, ds: Dataset, cols: Sequence, metric: MetricSpec | None = None, stream_key=()) -> GeometricGraph:
    """K-nearest-neighbor graph on the rows of ``ds`` restricted to ``cols``.

    Each node gets the ``K`` points at the ``K`` smallest distances (itself
    excluded); among equidistant candidates the choice is uniform and
    reproducible given ``spec.seed`` and ``stream_key``.

    Raises
    ------
    TooFewPoints
        ``n < K + 1``.
    """
    if spec.kind != "knn":
        raise ConfigError("build_knn needs a knn GraphSpec")
    metric = metric or MetricSpec()
    emb = metric.embed(ds, cols)
    if emb is not None:
        return knn_from_points(emb, spec.k, spec.directed, spec.seed, stream_key)
    n, k = ds.n, int(spec.k)
    if n < k + 1:
        raise TooFewPoints(f"K={k} needs at least {k + 1} points, got {n}")
    keys = tuple(stream_key) if isinstance(stream_key, (tuple, list)) else (stream_key,)
    nbr, ties = _knn_matrix(metric.pairwise(ds, cols), k, lambda node: stream(spec.seed, "knn", *keys, node))
    indptr, indices = _csr_from_lists(nbr, spec.directed)
    return GeometricGraph(indptr, indices, spec.directed, "knn", ties)


# --------------------------------------------------------------------- MST


def _prim(n: int, dist_row: Callable[[int], np.ndarray]) -> tuple[list[tuple[int, int]], float]:
    """Prim's algorithm on the complete graph with (weight, low, high) edge order."""
    ar = np.arange(n)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_w = dist_row(0).astype(float, copy=True)
    best_lo = np.zeros(n, dtype=np.intp)
    best_hi = ar.copy()
    edges = []
    total = 0.0
    for _ in range(n - 1):
        w = np.where(in_tree, np.inf, best_w)
        cand = np.flatnonzero(~in_tree & (w == w.min()))
        if cand.size > 1:
            lo = best_lo[cand]
            cand = cand[lo == lo.min()]
            hi = best_hi[cand]
            cand = cand[hi == hi.min()]
        v = int(cand[0])
        edges.append((int(best_lo[v]), int(best_hi[v])))
        total += float(best_w[v])
        in_tree[v] = True
        d = dist_row(v)
        lo = np.minimum(ar, v)
        hi = np.maximum(ar, v)
        better = ~in_tree & (
            (d < best_w) | ((d == best_w) & ((lo < best_lo) | ((lo == best_lo) & (hi < best_hi))))
        )
        best_w[better] = d[better]
        best_lo[better] = lo[better]
        best_hi[better] = hi[better]
    return edges, total


def mst_from_rows(n: int, dist_row: Callable[[int], np.ndarray]) -> GeometricGraph:
    if n < 2:
        raise TooFewPoints("an MST needs at least two points")
    edges, total = _prim(n, dist_row)
    e = np.asarray(edges, dtype=np.intp)
    a = sparse.csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
    a.sort_indices()
    return GeometricGraph(a.indptr.astype(np.intp), a.indices.astype(np.intp), False, "mst", 0, total)


def build_mst(ds: Dataset, cols: Sequence, metric: MetricSpec | None = None, seed: int = 0) -> GeometricGraph:
    """Minimum spanning tree of the complete distance graph, as an undirected graph.

    Equal-weight choices follow the total order (weight, lower index, higher
    index), so the result is unique and ``seed`` has no effect; it is
    accepted for interface symmetry with :func:`build_knn`.
    """
    metric = metric or MetricSpec()
    emb = metric.embed(ds, cols)
    if emb is not None:
        return mst_from_rows(ds.n, lambda v: np.sqrt(((emb - emb[v]) ** 2).sum(axis=1)))
    dist = metric.pairwise(ds, cols)
    return mst_from_rows(ds.n, lambda v: dist[v])


def build_graph(spec: GraphSpec, ds: Dataset, cols: Sequence, metric: MetricSpec | None = None, stream_key=()) -> GeometricGraph:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "mst":
        return build_mst(ds, cols, metric, spec.seed)
    return build_knn(spec, ds, cols, metric, stream_key)
