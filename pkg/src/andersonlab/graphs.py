"""Graphs with polynomial volume growth: lattice boxes, Sierpinski gaskets and simplices.

Vertices are dense integer ids in construction order.  Fractal coordinates are
exact integers in the affine basis spanned by the corner vectors of the unit
simplex, so the gasket point ``i*a2 + j*a3`` is stored as ``(i, j)`` and the
reflection across the y-axis is the integer map ``(i, j) -> (-i - j, j)``.

Every builder records ``open_boundary``: the vertices whose degree is cut by the
finite generation level.  Experiments use it to keep balls away from the
artificial edge of the construction.
"""
from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .fitting import FitError, FitResult, fit_exponent

__all__ = [
    "DEFAULT_VERTEX_BUDGET",
    "GraphSizeError",
    "MarginError",
    "FamilyTag",
    "Graph",
    "Ball",
    "Cover",
    "BoundaryEdges",
    "build_path_or_lattice",
    "build_sierpinski_gasket",
    "build_sierpinski_simplex",
    "gasket_vertex_count",
    "simplex_vertex_count",
    "ball",
    "boundary_edges",
    "ahlfors_fit",
    "covering_net",
    "cover_count_bounds",
    "distance_to_open_boundary",
    "admissible_centers",
    "write_edgelist",
    "read_edgelist",
]

DEFAULT_VERTEX_BUDGET = 2_000_000


class GraphSizeError(ValueError):
    """Requested construction exceeds the vertex budget."""


class MarginError(ValueError):
    """A ball or window reaches the artificial boundary of a finite construction."""


@dataclass(frozen=True)
class FamilyTag:
    kind: str
    params: tuple[tuple[str, int], ...] = ()

    def __str__(self) -> str:
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in self.params)

    def get(self, key: str, default: int | None = None) -> int | None:
        return dict(self.params).get(key, default)

    @classmethod
    def parse(cls, text: str) -> "FamilyTag":
        kind, _, rest = text.partition(":")
        params = []
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            params.append((k, int(v)))
        return cls(kind, tuple(params))


def _freeze(a: np.ndarray | None) -> np.ndarray | None:
    if a is not None:
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable simple undirected graph in CSR form (sorted neighbor lists)."""

    indptr: np.ndarray
    indices: np.ndarray
    family: FamilyTag
    coords: np.ndarray | None = None
    open_boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cells: np.ndarray | None = None
    marks: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.indptr, self.indices, self.coords, self.open_boundary, self.cells):
            _freeze(a)
        for a in self.marks.values():
            _freeze(a)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def neighbors(self, x: int) -> np.ndarray:
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with u < v, sorted lexicographically."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def distances_from(self, sources: int | Sequence[int]) -> np.ndarray:
        """Graph distances (BFS); one row per source, ``inf`` if unreachable."""
        return csgraph.shortest_path(self.adjacency(), unweighted=True, directed=False,
                                     indices=sources)

    def validate(self) -> None:
        n = self.n
        for x in range(n):
            nb = self.neighbors(x)
            if np.any(nb == x):
                raise ValueError(f"self-loop at {x}")
            if np.any(np.diff(nb) <= 0):
                raise ValueError(f"neighbors of {x} not strictly sorted")
        adj = self.adjacency()
        if (adj != adj.T).nnz:
            raise ValueError("adjacency is not symmetric")
        if n and csgraph.connected_components(adj, directed=False)[0] != 1:
            raise ValueError("graph is not connected")


def _from_edges(n: int, edges: np.ndarray, **kwargs) -> Graph:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    u = np.concatenate([edges[:, 0], edges[:, 1]])
    v = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    indptr = adj.indptr.astype(np.int64)
    indices = adj.indices.astype(np.int64)
    return Graph(indptr=indptr, indices=indices, **kwargs)


# --- builders -----------------------------------------------------------------

def build_path_or_lattice(d: int, extent: int, budget: int = DEFAULT_VERTEX_BUDGET) -> Graph:
    """Nearest-neighbour box ``{0..extent-1}^d``; vertex id is the row-major index."""
    if d < 1 or extent < 1:
        raise ValueError("need d >= 1 and extent >= 1")
    if extent ** d > budget:
        raise GraphSizeError(f"{extent}^{d} vertices exceeds budget {budget}")
    shape = (extent,) * d
    ids = np.arange(extent ** d).reshape(shape)
    edges = []
    for axis in range(d):
        lo = np.take(ids, np.arange(extent - 1), axis=axis).ravel()
        hi = np.take(ids, np.arange(1, extent), axis=axis).ravel()
        edges.append(np.column_stack([lo, hi]))
    coords = np.indices(shape).reshape(d, -1).T.astype(np.int64)
    on_face = np.any((coords == 0) | (coords == extent - 1), axis=1)
    return _from_edges(
        extent ** d,
        np.concatenate(edges) if edges else np.zeros((0, 2)),
        family=FamilyTag("PathOrLattice", (("d", d), ("extent", extent))),
        coords=coords,
        open_boundary=np.flatnonzero(on_face),
    )


def simplex_vertex_count(d: int, level: int) -> int:
    count = d + 1
    for _ in range(level):
        count = (d + 1) * count - (d + 1) * d // 2
    return count


def gasket_vertex_count(level: int, sided: int = 1) -> int:
    one = (3 ** (level + 1) + 3) // 2
    return one if sided == 1 else 2 * one - 1


def _simplex_cells(d: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    corners = np.vstack([np.zeros(d, dtype=np.int64), np.eye(d, dtype=np.int64)])
    base = np.zeros((1, d), dtype=np.int64)
    for k in range(level):
        base = np.vstack([base + (1 << k) * c for c in corners])
    pts = (base[:, None, :] + corners[None, :, :]).reshape(-1, d)
    uniq, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    cells = rank[inverse.ravel()].reshape(-1, d + 1)
    return uniq[order], cells


def _cell_edges(cells: np.ndarray) -> np.ndarray:
    k = cells.shape[1]
    pairs = [cells[:, [a, b]] for a in range(k) for b in range(a + 1, k)]
    e = np.sort(np.concatenate(pairs), axis=1)
    return np.unique(e, axis=0)


def _find(coords: np.ndarray, targets: np.ndarray) -> np.ndarray:
    lookup = {tuple(c): i for i, c in enumerate(coords.tolist())}
    return np.array([lookup[tuple(t)] for t in targets.tolist()], dtype=np.int64)


def build_sierpinski_simplex(d: int, level: int, budget: int = DEFAULT_VERTEX_BUDGET) -> Graph:
    """Level-``level`` Sierpinski simplex graph in dimension ``d`` (one-sided).

    Built by the midpoint recursion ``T_{n+1} = U_k (T_n + 2^n e_k)`` over the
    ``d + 1`` corners; each unit cell is a complete graph on ``d + 1`` vertices.
    The corners ``2^level e_k`` (k >= 1) continue into the next generation and are
    therefore open boundary.
    """
    if d < 2 or level < 0:
        raise ValueError("need d >= 2 and level >= 0")
    if simplex_vertex_count(d, level) > budget:
        raise GraphSizeError(f"simplex d={d} level={level} exceeds budget {budget}")
    coords, cells = _simplex_cells(d, level)
    outer = (1 << level) * np.eye(d, dtype=np.int64)
    open_b = _find(coords, outer)
    return _from_edges(
        len(coords), _cell_edges(cells),
        family=FamilyTag("SierpinskiSimplex", (("d", d), ("level", level))),
        coords=coords, open_boundary=np.sort(open_b), cells=cells,
        marks={"corners": np.concatenate([[0], open_b])},
    )


def build_sierpinski_gasket(level: int, sided: int = 2,
                            budget: int = DEFAULT_VERTEX_BUDGET) -> Graph:
    """Sierpinski gasket graph at generation ``level``.

    ``sided=1`` is the triangle ``V_n`` alone; ``sided=2`` adds its reflection
    across the y-axis glued at the origin, which is the finite piece of the
    infinite gasket graph.  The one-sided triangle is marked as ``"semiball"``
    (ids ``0..|V_n|-1`` in both variants) and the origin has id 0.
    """
    if level < 0 or sided not in (1, 2):
        raise ValueError("need level >= 0 and sided in {1, 2}")
    if gasket_vertex_count(level, sided) > budget:
        raise GraphSizeError(f"gasket level={level} exceeds budget {budget}")
    coords, cells = _simplex_cells(2, level)
    side = 1 << level
    tag = FamilyTag("SierpinskiGasket", (("level", level), ("sided", sided)))
    semiball = np.arange(len(coords))
    if sided == 1:
        # all three corners connect onward in the infinite gasket (the origin to its mirror)
        open_b = _find(coords, np.array([[0, 0], [side, 0], [0, side]]))
        return _from_edges(len(coords), _cell_edges(cells), family=tag, coords=coords,
                           open_boundary=np.sort(open_b), cells=cells,
                           marks={"semiball": semiball, "origin": np.array([0])})
    mirrored = np.column_stack([-coords[:, 0] - coords[:, 1], coords[:, 1]])
    # only the origin lies on the axis
    new = np.flatnonzero(np.any(mirrored != 0, axis=1))
    remap = np.zeros(len(coords), dtype=np.int64)
    remap[new] = len(coords) + np.arange(len(new))
    all_coords = np.vstack([coords, mirrored[new]])
    all_cells = np.vstack([cells, remap[cells]])
    open_b = _find(all_coords, np.array([[side, 0], [0, side], [-side, 0], [-side, side]]))
    return _from_edges(len(all_coords), _cell_edges(all_cells), family=tag,
                       coords=all_coords, open_boundary=np.sort(open_b), cells=all_cells,
                       marks={"semiball": semiball, "origin": np.array([0])})


def cartesian(g: Graph) -> np.ndarray:
    """Float embedding of fractal coordinates (lattice coordinates pass through)."""
    if g.coords is None:
        raise ValueError("graph has no coordinates")
    if g.family.kind == "SierpinskiGasket":
        i, j = g.coords[:, 0], g.coords[:, 1]
        return np.column_stack([i + 0.5 * j, (math.sqrt(3) / 2) * j])
    return g.coords.astype(float)


# --- balls and boundaries -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Ball:
    center: int
    radius: float
    members: np.ndarray
    distances: np.ndarray  # distance from center, aligned with members

    def __post_init__(self):
        _freeze(self.members)
        _freeze(self.distances)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def int_radius(self) -> int:
        return int(math.floor(self.radius))

    @property
    def index_map(self) -> dict[int, int]:
        return {int(v): i for i, v in enumerate(self.members)}

    def __contains__(self, v: int) -> bool:
        i = np.searchsorted(self.members, v)
        return bool(i < len(self.members) and self.members[i] == v)


def _bfs(g: Graph, x: int, depth: int) -> dict[int, int]:
    dist = {x: 0}
    queue = deque([x])
    indptr, indices = g.indptr, g.indices
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du == depth:
            continue
        for w in indices[indptr[u]:indptr[u + 1]].tolist():
            if w not in dist:
                dist[w] = du + 1
                queue.append(w)
    return dist


def ball(g: Graph, x: int, r: float) -> Ball:
    """Metric ball ``B(x, r) = {y : d(x, y) <= floor(r)}``."""
    if not 0 <= x < g.n:
        raise IndexError(f"vertex {x} not in graph")
    if r < 0:
        raise ValueError("radius must be nonnegative")
    dist = _bfs(g, int(x), int(math.floor(r)))
    members = np.array(sorted(dist), dtype=np.int64)
    return Ball(int(x), float(r), members, np.array([dist[v] for v in members.tolist()]))


@dataclass(frozen=True, eq=False)
class BoundaryEdges:
    """Boundary of a vertex set.

    ``edges`` holds one row per unordered boundary pair, oriented as
    ``(inside, outside)``; ``pairs()`` returns both orientations.
    """

    subset: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    edges: np.ndarray

    def pairs(self) -> np.ndarray:
        return np.vstack([self.edges, self.edges[:, ::-1]])


def _as_vertex_set(g: Graph | None, X) -> np.ndarray:
    if isinstance(X, Ball):
        return X.members
    arr = np.unique(np.asarray(list(X) if not isinstance(X, np.ndarray) else X, dtype=np.int64))
    if arr.size and (arr[0] < 0 or (g is not None and arr[-1] >= g.n)):
        raise IndexError("vertex outside graph")
    return arr


def boundary_edges(g: Graph, X) -> BoundaryEdges:
    X = _as_vertex_set(g, X)
    if X.size == 0 or X.size == g.n:
        raise ValueError("boundary undefined for the empty or full vertex set")
    inside = np.zeros(g.n, dtype=bool)
    inside[X] = True
    rows = np.repeat(np.arange(g.n), g.degrees)
    cut = inside[rows] & ~inside[g.indices]
    edges = np.column_stack([rows[cut], g.indices[cut]])
    return BoundaryEdges(X, np.unique(edges[:, 0]), np.unique(edges[:, 1]), edges)


def distance_to_open_boundary(g: Graph, x: int) -> float:
    if g.open_boundary.size == 0:
        return math.inf
    return float(g.distances_from(int(x))[g.open_boundary].min())


def _diameter_estimate(g: Graph) -> float:
    d0 = g.distances_from(0)
    far = int(np.argmax(d0))
    return float(g.distances_from(far).max())


def admissible_centers(g: Graph, radius: float, count: int, seed: int = 0,
                       margin: float | None = None) -> np.ndarray:
    """Random centers whose ``radius``-balls stay ``margin`` away from the open boundary."""
    margin = radius if margin is None else margin
    if g.open_boundary.size:
        dist = g.distances_from(g.open_boundary).min(axis=0)
        ok = np.flatnonzero(dist >= margin)
    else:
        ok = np.arange(g.n) if radius <= _diameter_estimate(g) / 4 else np.zeros(0, int)
    if ok.size == 0:
        raise MarginError(f"no vertex admits radius {radius} with margin {margin}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(ok, size=min(count, ok.size), replace=False))


def ahlfors_fit(g: Graph, centers: Iterable[int], radii: Sequence[float]) -> FitResult:
    """Pooled log-log fit of ``|B(x, r)|`` against ``r``.

    Returns the fitted exponent with ``extra["c1"]``/``extra["c2"]`` the extreme
    ratios ``|B| / r^alpha`` over the sampled balls.
    """
    radii = sorted({int(math.floor(r)) for r in radii if r >= 1})
    if len(radii) < 3:
        raise FitError("need at least 3 distinct radii >= 1")
    centers = [int(c) for c in centers]
    dist = np.atleast_2d(g.distances_from(centers))
    rmax = radii[-1]
    if g.open_boundary.size:
        clear = dist[:, g.open_boundary].min(axis=1)
        bad = [c for c, m in zip(centers, clear) if m < rmax]
        if bad:
            raise MarginError(f"balls of radius {rmax} at {bad[:5]} reach the open boundary")
    elif rmax > _diameter_estimate(g) / 4:
        raise MarginError(f"radius {rmax} exceeds a quarter of the diameter")
    rows = []
    for row in dist:
        counts = np.searchsorted(np.sort(row[np.isfinite(row)]), radii, side="right")
        rows.extend(zip(radii, counts.tolist()))
    fit = fit_exponent(rows, "power")
    alpha = fit.estimate
    ratio = np.array([b / r ** alpha for r, b in rows])
    fit.extra.update(c1=float(ratio.min()), c2=float(ratio.max()), centers=len(centers))
    return fit


# --- covers -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Cover:
    host: Ball
    sub_radius: float
    centers: np.ndarray
    balls: tuple[Ball, ...]
    overlap_max: int
    overlap_union: int
    union: np.ndarray

    @property
    def count(self) -> int:
        return len(self.centers)


def covering_net(g: Graph, host: Ball, r: float) -> Cover:
    """Greedy net over ``host`` in BFS order from its center.

    A candidate becomes a center when it is farther than ``floor(r)`` from every
    chosen center.  The result covers the host with ``B(x_i, r)`` and the
    half-radius balls are pairwise disjoint.
    """
    if not 1 <= r <= max(host.radius, 1):
        raise ValueError("need 1 <= r <= R")
    k = int(math.floor(r))
    order = np.lexsort((host.members, host.distances))
    covered: set[int] = set()
    centers = []
    for v in host.members[order].tolist():
        if v in covered:
            continue
        centers.append(v)
        covered.update(_bfs(g, v, k))
    balls = tuple(ball(g, c, r) for c in centers)
    counts = np.zeros(g.n, dtype=np.int64)
    for b in balls:
        counts[b.members] += 1
    union = np.flatnonzero(counts)
    return Cover(host, float(r), np.array(centers, dtype=np.int64), balls,
                 int(counts[host.members].max()), int(counts[union].max()), union)


def cover_count_bounds(g: Graph, cover: Cover, alpha: float) -> tuple[float, float, dict]:
    """Volume-comparison bounds on ``|I|`` from the balls the cover actually uses.

    ``c1``/``c2`` are taken over the host ball, the cover balls, their half-radius
    balls and ``B(x, R + r/2)``, so the returned interval must contain the count.
    """
    R = cover.host.int_radius
    r = int(math.floor(cover.sub_radius))
    h = r // 2
    samples = [(R, cover.host.size)]
    samples += [(r, b.size) for b in cover.balls]
    outer = ball(g, cover.host.center, R + h)
    samples.append((R + h, outer.size))
    if h >= 1:
        samples += [(h, ball(g, int(c), h).size) for c in cover.centers]
    ratios = np.array([v / rad ** alpha for rad, v in samples if rad >= 1])
    c1, c2 = float(ratios.min()), float(ratios.max())
    lower = (c1 / c2) * (R / r) ** alpha
    upper = (c2 / c1) * ((R + h) / h) ** alpha if h >= 1 else math.inf
    return lower, upper, {"c1": c1, "c2": c2}


# --- edge-list format -----------------------------------------------------------

def write_edgelist(g: Graph, target) -> None:
    """Header ``n m family_tag``, then ``u v`` per edge (u < v), then optional blocks
    ``coords k`` (n rows of k integers) and ``open t`` (t vertex ids)."""
    lines = [f"{g.n} {g.num_edges} {g.family}"]
    lines += [f"{u} {v}" for u, v in g.edges().tolist()]
    if g.coords is not None:
        lines.append(f"coords {g.coords.shape[1]}")
        lines += [" ".join(map(str, c)) for c in g.coords.tolist()]
    if g.open_boundary.size:
        lines.append(f"open {g.open_boundary.size}")
        lines.append(" ".join(map(str, g.open_boundary.tolist())))
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    else:
        target.write(text)


def read_edgelist(source) -> Graph:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    it = iter(io.StringIO(text).read().splitlines())
    n, m, tag = next(it).split()
    n, m = int(n), int(m)
    edges = np.array([list(map(int, next(it).split())) for _ in range(m)],
                     dtype=np.int64).reshape(-1, 2)
    coords = None
    open_b = np.zeros(0, dtype=np.int64)
    for line in it:
        if line.startswith("coords"):
            k = int(line.split()[1])
            coords = np.array([list(map(int, next(it).split())) for _ in range(n)],
                              dtype=np.int64).reshape(n, k)
        elif line.startswith("open"):
            t = int(line.split()[1])
            open_b = np.array(next(it).split()[:t], dtype=np.int64)
    return _from_edges(n, edges, family=FamilyTag.parse(tag), coords=coords,
                       open_boundary=open_b)
