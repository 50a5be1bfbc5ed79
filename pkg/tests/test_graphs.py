from __future__ import annotations

import io
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from andersonlab.fitting import FitError
from andersonlab.graphs import (FamilyTag, GraphSizeError, MarginError, admissible_centers,
                                ahlfors_fit, ball, boundary_edges, build_path_or_lattice,
                                build_sierpinski_gasket, build_sierpinski_simplex, cartesian,
                                cover_count_bounds, covering_net, distance_to_open_boundary,
                                gasket_vertex_count, read_edgelist, simplex_vertex_count,
                                write_edgelist)


def pascal_gasket(n: int):
    """Unit triangles of V_n from Lucas' theorem: lower-left corners (a, b), a & b == 0."""
    side = 1 << n
    cells = [(a, b) for a in range(side) for b in range(side - a) if a & b == 0]
    verts = set()
    edges = set()
    for a, b in cells:
        tri = [(a, b), (a + 1, b), (a, b + 1)]
        verts.update(tri)
        for p in range(3):
            for q in range(p + 1, 3):
                edges.add(frozenset((tri[p], tri[q])))
    return cells, verts, edges


def bfs(g, x):
    dist = {x: 0}
    q = deque([x])
    while q:
        u = q.popleft()
        for v in g.neighbors(u):
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


@pytest.mark.parametrize("n", range(6))
def test_one_sided_gasket_matches_pascal_enumeration(n):
    cells, verts, edges = pascal_gasket(n)
    g = build_sierpinski_gasket(n, sided=1)
    assert g.n == len(verts) == gasket_vertex_count(n, 1) == (3 ** (n + 1) + 3) // 2
    assert {tuple(c) for c in g.coords.tolist()} == verts
    assert g.num_edges == len(edges) == 3 ** (n + 1)
    assert len(g.cells) == len(cells) == 3 ** n


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_two_sided_gasket_glues_at_origin(n):
    g = build_sierpinski_gasket(n)
    one = gasket_vertex_count(n, 1)
    assert g.n == 2 * one - 1
    assert len(g.cells) == 2 * 3 ** n
    assert tuple(g.coords[0]) == (0, 0)
    # the prefix is the one-sided triangle
    assert np.array_equal(g.marks["semiball"], np.arange(one))
    deg = g.degrees
    # only the four outer corners have degree 2
    assert sorted(np.flatnonzero(deg == 2).tolist()) == sorted(g.open_boundary.tolist())
    assert set(deg.tolist()) == {2, 4}
    g.validate()


def test_level3_gasket_has_2x27_unit_triangles_and_M4():
    g = build_sierpinski_gasket(3)
    assert len(g.cells) == 54
    assert g.max_degree == 4


def test_simplex_counts():
    assert build_sierpinski_simplex(3, 1).n == 10 == simplex_vertex_count(3, 1)
    for d in (2, 3, 4):
        for lvl in range(4):
            g = build_sierpinski_simplex(d, lvl)
            assert g.n == simplex_vertex_count(d, lvl)
            assert len(g.cells) == (d + 1) ** lvl
            assert g.num_edges == (d + 1) ** lvl * d * (d + 1) // 2
    # d = 2 is the one-sided gasket
    assert build_sierpinski_simplex(2, 4).n == gasket_vertex_count(4, 1)


def test_lattice_edges_and_boundary():
    g = build_path_or_lattice(1, 5)
    assert g.n == 5 and g.num_edges == 4
    assert g.open_boundary.tolist() == [0, 4]
    g2 = build_path_or_lattice(2, 4)
    assert g2.num_edges == 2 * 4 * 3
    assert sorted(set(g2.degrees.tolist())) == [2, 3, 4]


def test_budget_guard():
    with pytest.raises(GraphSizeError):
        build_sierpinski_gasket(12, budget=1000)
    with pytest.raises(GraphSizeError):
        build_path_or_lattice(3, 200, budget=10_000)


def test_family_tag_roundtrip():
    tag = FamilyTag("SierpinskiGasket", (("level", 3), ("sided", 2)))
    assert FamilyTag.parse(str(tag)) == tag
    assert tag.get("level") == 3


def test_distances_match_python_bfs():
    g = build_sierpinski_gasket(3)
    for x in (0, 5, 40):
        d = g.distances_from(x)
        ref = bfs(g, x)
        assert all(d[v] == ref[v] for v in range(g.n))


def test_gasket_corner_distance_is_side_length():
    for n in range(1, 5):
        g = build_sierpinski_gasket(n)
        assert distance_to_open_boundary(g, 0) == 2 ** n


def test_cartesian_embedding_is_equilateral():
    g = build_sierpinski_gasket(2)
    xy = cartesian(g)
    lengths = [np.linalg.norm(xy[u] - xy[v]) for u, v in g.edges()]
    assert np.allclose(lengths, 1.0)


@settings(max_examples=30, deadline=None)
@given(x=st.integers(0, 400), r=st.floats(0, 6))
def test_ball_is_distance_sublevel_set(x, r):
    g = build_sierpinski_gasket(4)
    x = x % g.n
    b = ball(g, x, r)
    d = g.distances_from(x)
    assert set(b.members.tolist()) == set(np.flatnonzero(d <= math.floor(r)).tolist())
    assert x in b


@settings(max_examples=30, deadline=None)
@given(x=st.integers(0, 400), r=st.integers(0, 5))
def test_boundary_edges_cross_the_set(x, r):
    g = build_sierpinski_gasket(4)
    b = ball(g, x % g.n, r)
    be = boundary_edges(g, b.members)
    inside = set(b.members.tolist())
    for u, v in be.edges:
        assert u in inside and v not in inside
    expected = sum(1 for u in inside for v in g.neighbors(u) if int(v) not in inside)
    assert len(be.edges) == expected


def test_boundary_edges_reject_full_and_empty():
    g = build_path_or_lattice(1, 4)
    with pytest.raises(ValueError):
        boundary_edges(g, [])
    with pytest.raises(ValueError):
        boundary_edges(g, range(4))


@settings(max_examples=25, deadline=None)
@given(R=st.integers(2, 10), r=st.integers(1, 10), x=st.integers(0, 10 ** 6))
def test_covering_net_properties(R, r, x):
    r = min(r, R)
    g = build_sierpinski_gasket(5)
    host = ball(g, x % g.n, R)
    cover = covering_net(g, host, r)
    covered = set().union(*(set(b.members.tolist()) for b in cover.balls))
    assert set(host.members.tolist()) <= covered
    # half-radius balls around the centers are pairwise disjoint
    h = max(r // 2, 0)
    halves = [set(ball(g, int(c), h).members.tolist()) for c in cover.centers]
    assert sum(map(len, halves)) == len(set().union(*halves))
    lo, hi, _ = cover_count_bounds(g, cover, math.log(3) / math.log(2))
    assert lo <= cover.count <= hi


def test_cover_with_r_equal_R_is_single_ball():
    g = build_sierpinski_gasket(4)
    cover = covering_net(g, ball(g, 0, 6), 6)
    assert cover.count == 1


def test_ahlfors_fit_on_small_graphs():
    g = build_path_or_lattice(1, 401)
    fit = ahlfors_fit(g, [200], range(4, 65))
    assert abs(fit.estimate - 1.0) < 0.05
    assert fit.extra["c1"] <= fit.extra["c2"]
    with pytest.raises(MarginError):
        ahlfors_fit(g, [10], range(4, 65))
    with pytest.raises(FitError):
        ahlfors_fit(g, [200], [1, 1.5, 2.2])


def test_admissible_centers_respect_margin():
    g = build_sierpinski_gasket(6)
    cs = admissible_centers(g, 8, 10, seed=1, margin=16)
    assert len(cs) == 10
    assert all(distance_to_open_boundary(g, c) >= 16 for c in cs)
    with pytest.raises(MarginError):
        admissible_centers(g, 8, 3, margin=1000)


@pytest.mark.parametrize("builder", [lambda: build_sierpinski_gasket(3),
                                     lambda: build_path_or_lattice(2, 5),
                                     lambda: build_sierpinski_simplex(3, 2)])
def test_edgelist_roundtrip(builder):
    g = builder()
    buf = io.StringIO()
    write_edgelist(g, buf)
    h = read_edgelist(io.StringIO(buf.getvalue()))
    assert h.n == g.n and np.array_equal(h.edges(), g.edges())
    assert str(h.family) == str(g.family)
    assert np.array_equal(h.open_boundary, g.open_boundary)
    assert np.array_equal(h.coords, g.coords)


def test_small_lattices():
    grid = build_path_or_lattice(2, 3)
    assert (grid.n, grid.num_edges) == (9, 12)
    dot = build_path_or_lattice(1, 1)
    assert (dot.n, dot.num_edges) == (1, 0)
    path = build_path_or_lattice(1, 5)
    assert path.max_degree == 2


def disjoint_bits_cells(d: int, n: int):
    """Unit-cell base points of the level-n simplex: coordinates with pairwise disjoint bits."""
    side = 1 << n
    out = [()]
    for _ in range(d):
        out = [c + (a,) for c in out for a in range(side)]
    cells = []
    for c in out:
        if sum(c) >= side:
            continue
        acc, ok = 0, True
        for a in c:
            ok &= (acc & a) == 0
            acc |= a
        if ok:
            cells.append(c)
    return cells


@pytest.mark.parametrize("d, n", [(3, 1), (3, 2), (3, 3), (4, 2)])
def test_simplex_matches_disjoint_bits_oracle(d, n):
    cells = disjoint_bits_cells(d, n)
    corners = [tuple(int(i == k) for i in range(d)) for k in range(-1, d)]
    verts = {tuple(a + e for a, e in zip(c, k)) for c in cells for k in corners}
    g = build_sierpinski_simplex(d, n)
    assert {tuple(c) for c in g.coords.tolist()} == verts
    assert len(cells) == (d + 1) ** n
    # each cell is a complete graph on its d + 1 corners
    for cell in g.cells:
        for p in range(d + 1):
            nbrs = set(g.neighbors(int(cell[p])).tolist())
            assert {int(c) for c in cell if c != cell[p]} <= nbrs


def floyd_warshall(g):
    INF = 10 ** 9
    D = np.full((g.n, g.n), INF, dtype=np.int64)
    np.fill_diagonal(D, 0)
    for u, v in g.edges():
        D[u, v] = D[v, u] = 1
    for k in range(g.n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D


def test_ball_matches_all_pairs_oracle():
    g = build_sierpinski_gasket(4, sided=1)
    D = floyd_warshall(g)
    apex = int(g.open_boundary[-1])
    for x in (apex, 0, 17):
        for r in (0, 1, 3, 6):
            assert ball(g, x, r).members.tolist() == np.flatnonzero(D[x] <= r).tolist()
    path = build_path_or_lattice(1, 9)
    assert ball(path, 4, 2).size == 5


def test_boundary_examples():
    path = build_path_or_lattice(1, 4)
    be = boundary_edges(path, [0, 1])
    assert be.edges.tolist() == [[1, 2]]
    assert sorted(map(tuple, be.pairs().tolist())) == [(1, 2), (2, 1)]
    grid = build_path_or_lattice(2, 5)
    be = boundary_edges(grid, [12])
    assert be.inner.tolist() == [12] and be.outer.size == 4
    g = build_sierpinski_gasket(3, sided=1)
    apex = int(g.open_boundary[-1])
    X = set(ball(g, apex, 4).members.tolist())
    scan = sorted((u, v) if u in X else (v, u) for u, v in g.edges().tolist()
                  if (u in X) != (v in X))
    assert sorted(map(tuple, boundary_edges(g, sorted(X)).edges.tolist())) == scan


def test_lattice_cover_and_gasket_overlap():
    path = build_path_or_lattice(1, 41)
    host = ball(path, 20, 8)
    cover = covering_net(path, host, 2)
    assert set(host.members.tolist()) <= set(np.concatenate([b.members for b in cover.balls]).tolist())
    g = build_sierpinski_gasket(7)
    cover = covering_net(g, ball(g, 0, 32), 4)
    assert 1 <= cover.overlap_union <= 9
