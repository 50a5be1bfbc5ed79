"""Instance-wise inequality and identity suites.

Every suite draws independent random instances (ball, potential, energies or
trial data) from seeds ``(master_seed, suite, instance)`` and records one row
per checked statement.  A row is ``ok``, ``violation`` or ``skipped`` (the
statement's hypothesis does not hold on that instance).  These are theorems,
so any violation is a defect and makes the run fail.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

from ..graphs import ball, boundary_edges, covering_net
from ..operators import BC, assemble, block_decompose, sample_potential, subset_operator, \
    truncate_potential
from ..spectral import correlator, count_below
from .common import family_constants
from .ensemble import ConfigError, EnsembleSpec, ordered_map
from .report import Table

__all__ = ["SUITES", "simulate", "summarize", "validate", "suite_names"]

TOL = 1e-10
BLOCK = 50


def _rng(spec: EnsembleSpec, suite: str, i: int) -> np.random.Generator:
    return np.random.default_rng([int(spec.master_seed), 2 ** 32 - 2, zlib.crc32(suite.encode()), i])


def _seed(spec: EnsembleSpec, suite: str, i: int) -> tuple[int, int]:
    # potential streams for suites live far from the realization indices 0..N-1
    return int(spec.master_seed), (zlib.crc32(suite.encode()) << 24) + i


def _random_ball(g, rng, spec, key="radius_range", default=(2, 5)):
    lo, hi = spec.param(key, list(default))
    return ball(g, int(rng.integers(g.n)), int(rng.integers(lo, hi + 1)))


def _row(case, status, lhs=math.nan, rhs=math.nan, note=""):
    return case, status, float(lhs), float(rhs), note


def _leq(case, lhs, rhs, tol=TOL):
    """``lhs <= rhs`` up to a relative tolerance."""
    ok = lhs <= rhs + tol * (1 + abs(lhs) + abs(rhs))
    return _row(case, "ok" if ok else "violation", lhs, rhs)


# --- suites --------------------------------------------------------------------------

def temple(spec, g, i):
    """Temple's bound with the constant trial vector and the truncated potential."""
    rng = _rng(spec, "temple", i)
    r = spec.param("temple_radius", 8)
    _, beta = family_constants(spec)
    b = ball(g, int(rng.integers(g.n)), r)
    if b.size < 2:
        return [_row("temple", "skipped", note="single vertex")]
    op = subset_operator(g, b, BC.NEUMANN)
    lap = op.free.toarray()
    E1_free = float(np.linalg.eigvalsh(lap)[1])
    c0 = E1_free * r ** beta            # the gap bound holds with equality on this ball
    pot = truncate_potential(sample_potential(spec.dist, b, _seed(spec, "temple", i)),
                             c0, r, beta)
    vt = pot.on(op.members)
    H = lap + np.diag(vt)
    w = np.linalg.eigvalsh(H)
    E0, E1 = float(w[0]), float(w[1])
    rows = []
    trials = {"temple": np.ones(b.size),
              "temple_random_trial": np.ones(b.size) + 0.02 * rng.standard_normal(b.size)}
    for case, psi in trials.items():
        psi = psi / np.linalg.norm(psi)
        Hpsi = H @ psi
        m = float(psi @ Hpsi)
        if E1 - E0 <= 1e-12 * (1 + abs(E1)):
            rows.append(_row(case, "skipped", note="degenerate ground state"))
        elif not m < E1:
            rows.append(_row(case, "skipped", note="<psi,H psi> >= E1"))
        else:
            rows.append(_leq(case, m - (float(Hpsi @ Hpsi) - m * m) / (E1 - m), E0))
    # the consequence needs <psi, H psi> <= (c0/3) r^-beta < E1, true by truncation
    rows.append(_leq("temple_consequence", float(vt.sum()) / (2 * b.size), E0))
    return rows


def combes_thomas(spec, g, i):
    rng = _rng(spec, "combes_thomas", i)
    b = _random_ball(g, rng, spec)
    H = assemble(g, b, BC.DIRICHLET, sample_potential(spec.dist, b, _seed(spec, "combes_thomas", i)))
    A = H.dense()
    w = np.linalg.eigvalsh(A)
    M = g.max_degree
    if rng.random() < 0.5:
        z = complex(w[0] - rng.uniform(0, 2 * M))          # real, below the spectrum
    else:
        z = complex(rng.uniform(w[0] - 1, w[-1] + 1), rng.uniform(-M, M))
    mu = float(np.min(np.abs(w - z)))
    if not 0 < mu <= 2 * M:
        return [_row("combes_thomas", "skipped", mu, 2 * M, "mu outside (0, 2M]")]
    G = np.linalg.inv(A - z * np.eye(H.dim))
    d = g.distances_from(H.members)[:, H.members]
    bound = (2 / mu) * np.exp(-(math.log(2) / (2 * M)) * mu * d)
    ratio = np.abs(G) / bound
    k = np.unravel_index(np.argmax(ratio), ratio.shape)
    return [_leq("combes_thomas", float(abs(G[k])), float(bound[k]), tol=1e-12)]


def resolvent_identities(spec, g, i):
    """First- and second-order geometric resolvent identities inside a window."""
    rng = _rng(spec, "resolvent", i)
    lo, hi = spec.param("radius_range", [2, 5])
    R = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(g.n))
    margin = 2
    W = ball(g, x, R + 1 + margin + 1)
    pot = sample_potential(spec.dist, W, _seed(spec, "resolvent", i))
    B, B1 = ball(g, x, R), ball(g, x, R + 1)
    if B1.size == W.size:
        return [_row("gr_decomp", "skipped", note="window exhausts the graph")]
    dec = block_decompose(g, B, pot, W, margin=margin)
    dec1 = block_decompose(g, B1, pot, W, margin=margin)
    rows = []
    res = dec.residual()
    # T is -1 exactly on the boundary pairs of B, in both orientations
    pairs = np.searchsorted(dec.window, boundary_edges(g, B.members).pairs())
    Tcoo = dec.T.tocoo()
    exact = res.nnz == 0 and np.all(Tcoo.data == -1.0) and \
        set(zip(Tcoo.row.tolist(), Tcoo.col.tolist())) == set(map(tuple, pairs.tolist()))
    rows.append(_row("block_residual", "ok" if exact else "violation", res.nnz, 0))
    z = complex(rng.uniform(-0.5, 8.0), rng.choice([-1, 1]) * rng.uniform(0.05, 1.0))
    n = len(dec.window)
    I = np.eye(n)
    G = np.linalg.inv(dec.H_window.toarray() - z * I)
    GR = np.linalg.inv(dec.direct_sum().toarray() - z * I)
    GR1 = np.linalg.inv(dec1.direct_sum().toarray() - z * I)
    T, T1 = dec.T.toarray(), dec1.T.toarray()
    scale = max(1.0, float(np.abs(G).max()))
    err1 = float(np.abs(G - (GR - GR @ T @ G)).max()) / scale
    err2 = float(np.abs(G - (GR - GR @ T @ GR1 + GR @ T @ G @ T1 @ GR1)).max()) / scale
    tol = spec.param("resolvent_tol", 1e-9)
    rows.append(_row("gr_decomp", "ok" if err1 <= tol else "violation", err1, tol))
    rows.append(_row("resolv_2", "ok" if err2 <= tol else "violation", err2, tol))
    return rows


def _random_subset(g, rng, spec):
    b = _random_ball(g, rng, spec)
    keep = rng.random(b.size) < 0.7
    keep[0] = True
    return b.members[keep]


def gauss_green(spec, g, i):
    rng = _rng(spec, "gauss_green", i)
    X = _random_subset(g, rng, spec)
    L = subset_operator(g, X, BC.NEUMANN).free
    f = rng.standard_normal(X.size)
    lhs = float(f @ (L @ f))
    e = g.edges()
    inside = np.zeros(g.n, bool)
    inside[X] = True
    e = e[inside[e[:, 0]] & inside[e[:, 1]]]
    loc = np.searchsorted(X, e)
    # half the sum over ordered neighbour pairs equals the sum over edges
    rhs = float(np.sum((f[loc[:, 1]] - f[loc[:, 0]]) ** 2))
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs else abs(lhs)
    return [_row("gauss_green", "ok" if rel <= 1e-12 else "violation", rel, 1e-12)]


def ordering(spec, g, i):
    rng = _rng(spec, "ordering", i)
    X = _random_subset(g, rng, spec) if rng.random() < 0.5 else _random_ball(g, rng, spec).members
    pot = sample_potential(spec.dist, X, _seed(spec, "ordering", i))
    ops = {bc: subset_operator(g, X, bc) for bc in BC}
    E0 = {bc: float(np.linalg.eigvalsh(op.with_potential(pot.on(X)).dense())[0])
          for bc, op in ops.items()}
    diff = ops[BC.DIRICHLET].free - ops[BC.NEUMANN].free
    expected = ops[BC.DIRICHLET].full_degree - ops[BC.NEUMANN].inner_degree
    exact = abs(diff - np.diag(expected)).max() == 0 if X.size else True
    return [_leq("order_neumann_dirichlet", E0[BC.NEUMANN], E0[BC.DIRICHLET]),
            _leq("order_dirichlet_modified", E0[BC.DIRICHLET], E0[BC.MODIFIED_DIRICHLET]),
            _row("dirichlet_equals_neumann_plus_outer_degree", "ok" if exact else "violation")]


def _count(A: np.ndarray, E: float) -> int:
    return int(np.sum(np.linalg.eigvalsh(A) <= E))


def superadditivity(spec, g, i):
    """Counting superadditivity over a random disjoint partition with modified Dirichlet parts."""
    rng = _rng(spec, "superadditivity", i)
    b = _random_ball(g, rng, spec, default=(3, 6))
    pot = sample_potential(spec.dist, b, _seed(spec, "superadditivity", i))
    k = int(rng.integers(2, min(6, b.size) + 1))
    seeds = rng.choice(b.members, size=k, replace=False)
    label = np.argmin(np.atleast_2d(g.distances_from(seeds))[:, b.members], axis=0)
    H = assemble(g, b, BC.DIRICHLET, pot).dense()
    parts = [assemble(g, b.members[label == j], BC.MODIFIED_DIRICHLET, pot).dense()
             for j in range(k)]
    rows = []
    for E in rng.uniform(0, 3, size=5):
        rows.append(_leq("superadditivity", sum(_count(P, E) for P in parts), _count(H, E), 0))
    return rows


def neumann_cover(spec, g, i):
    """``N(E; H^{B_R}) <= sum_i N(C1 E; H^{B_i,N})`` with the measured overlap C1."""
    rng = _rng(spec, "neumann_cover", i)
    lo, hi = spec.param("cover_radius_range", [4, 8])
    R = int(rng.integers(lo, hi + 1))
    r = int(rng.integers(2, R // 2 + 1))
    host = ball(g, int(rng.integers(g.n)), R)
    cover = covering_net(g, host, r)
    pot = sample_potential(spec.dist, cover.union, _seed(spec, "neumann_cover", i))
    C1 = cover.overlap_union
    H = assemble(g, host, BC.DIRICHLET, pot).dense()
    parts = [np.linalg.eigvalsh(assemble(g, bi, BC.NEUMANN, pot).dense()) for bi in cover.balls]
    wH = np.linalg.eigvalsh(H)
    rows = []
    for E in rng.uniform(0, 1.5, size=5):
        nH = int(np.sum(wH <= E))
        rows.append(_leq("neumann_cover", nH, sum(int(np.sum(w <= C1 * E)) for w in parts), 0))
        literal = sum(int(np.sum(w <= E / C1)) for w in parts)
        rows.append(_row("neumann_cover_literal", "ok" if nH <= literal else "info", nH, literal,
                         "informational: E/C1 scaling"))
    return rows


def inertia(spec, g, i):
    """Inertia counts (sparse and dense factorization paths) against dense eigencounts."""
    rng = _rng(spec, "inertia", i)
    b = _random_ball(g, rng, spec, key="inertia_radius_range", default=(3, 10))
    H = assemble(g, b, BC(rng.choice([bc.value for bc in BC])),
                 sample_potential(spec.dist, b, _seed(spec, "inertia", i)))
    w = np.linalg.eigvalsh(H.dense())
    rows = []
    for E in rng.uniform(H.lower_bound() - 0.5, H.norm_bound() + 0.5, size=20):
        dense = int(np.sum(w <= E))
        for method in ("sparse", "dense", "auto"):
            c = count_below(H, float(E), method=method)
            case = f"inertia_{method}"
            rows.append(_row(case, "ok" if c == dense else "violation", c, dense))
    return rows


def neumann_kernel(spec, g, i):
    """Random connected subsets: the constant vector spans the Neumann kernel."""
    rng = _rng(spec, "neumann_kernel", i)
    size = int(rng.integers(2, spec.param("kernel_max_size", 60) + 1))
    start = int(rng.integers(g.n))
    chosen, frontier = {start}, list(g.neighbors(start))
    while len(chosen) < size and frontier:
        v = int(frontier.pop(int(rng.integers(len(frontier)))))
        if v not in chosen:
            chosen.add(v)
            frontier.extend(int(u) for u in g.neighbors(v) if u not in chosen)
    X = np.array(sorted(chosen))
    L = subset_operator(g, X, BC.NEUMANN).free
    w = np.linalg.eigvalsh(L.toarray()) if X.size > 1 else np.zeros(1)
    null = float(np.abs(L @ np.ones(X.size)).max())
    rows = [_row("neumann_kernel_E0", "ok" if abs(w[0]) <= 1e-10 else "violation", abs(w[0]), 1e-10),
            _row("neumann_constant_vector", "ok" if null == 0 else "violation", null, 0)]
    if X.size > 1:
        # connected: the kernel is one-dimensional
        rows.append(_row("neumann_simple_kernel", "ok" if w[1] > 1e-10 else "violation", w[1], 0))
    return rows


def correlator_majorant(spec, g, i):
    rng = _rng(spec, "correlator", i)
    b = _random_ball(g, rng, spec)
    H = assemble(g, b, BC.DIRICHLET, sample_potential(spec.dist, b, _seed(spec, "correlator", i)))
    w = np.linalg.eigvalsh(H.dense())
    a, top = sorted(rng.choice(np.r_[w, w[-1] + 1.0], size=2, replace=False))
    kern = correlator(H, (float(a) - 1e-9, float(top) + 1e-9))
    times = np.r_[0.0, rng.exponential(20.0, size=6)]
    worst = -math.inf
    for _ in range(10):
        x, y = (int(v) for v in rng.choice(H.members, size=2))
        worst = max(worst, float(np.max(np.abs(kern.amplitude(x, y, times)))) - kern.q(x, y))
    return [_row("correlator_majorant", "ok" if worst <= 1e-10 else "violation", worst, 1e-10)]


SUITES = {
    "temple": (temple, 500),
    "combes_thomas": (combes_thomas, 500),
    "resolvent_identities": (resolvent_identities, 500),
    "gauss_green": (gauss_green, 500),
    "ordering": (ordering, 500),
    "superadditivity": (superadditivity, 500),
    "neumann_cover": (neumann_cover, 500),
    "inertia": (inertia, 50),
    "neumann_kernel": (neumann_kernel, 100),
    "correlator_majorant": (correlator_majorant, 500),
}

INFORMATIONAL = {"neumann_cover_literal"}


def suite_names(spec: EnsembleSpec) -> list[str]:
    fixed = {"temple": ["temple"], "combes_thomas": ["combes_thomas"]}
    return fixed.get(spec.experiment) or list(spec.param("suites", list(SUITES)))


def _count_for(spec: EnsembleSpec, name: str) -> int:
    per = spec.param("instances")
    if isinstance(per, dict):
        return int(per.get(name, SUITES[name][1]))
    return int(per) if per is not None else SUITES[name][1]


def validate(spec: EnsembleSpec) -> None:
    unknown = set(suite_names(spec)) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown suites {sorted(unknown)}; known: {sorted(SUITES)}")
    for name in suite_names(spec):
        if _count_for(spec, name) < 1:
            raise ConfigError("each suite needs at least one instance")


def _block(ctx: dict, item):
    spec = ctx["spec"]
    name, lo, hi = item
    g = spec.graph.build()
    fn = SUITES[name][0]
    out = []
    for i in range(lo, hi):
        out.extend((name, i) + row for row in fn(spec, g, i))
    return out


def simulate(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    items = []
    for name in suite_names(spec):
        n = _count_for(spec, name)
        items += [(name, lo, min(lo + BLOCK, n)) for lo in range(0, n, BLOCK)]
    t = Table("instances", ("suite", "instance", "case", "status", "lhs", "rhs", "note"), {
        "suite": "suite name", "instance": "instance index (seeded per suite)",
        "case": "checked statement", "status": "ok | violation | skipped | info",
        "lhs": "left side (or error measure)", "rhs": "right side (or tolerance)",
        "note": "skip reason or remark"})
    for rows in ordered_map(_block, items, {"spec": spec}, parallel):
        t.extend(rows)
    return {"instances": t}


def summarize(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    checks, info, suites = {}, {}, {}
    for rec in tables["instances"].records():
        s = suites.setdefault(rec["suite"], set())
        s.add(rec["instance"])
        target = info if rec["case"] in INFORMATIONAL else checks
        c = target.setdefault(rec["case"], {"instances": 0, "violations": 0, "skipped": 0})
        if rec["status"] == "skipped":
            c["skipped"] += 1
        else:
            c["instances"] += 1
            c["violations"] += rec["status"] in ("violation", "info")
    return {"suites": {k: len(v) for k, v in sorted(suites.items())},
            "checks": dict(sorted(checks.items())), "informational": info,
            "all_zero_violations": all(c["violations"] == 0 for c in checks.values())}
