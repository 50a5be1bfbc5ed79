"""Lower tail of the ground-state energy on balls: ``P(E0(H^{B_R}) <= R^{-delta})``."""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from ..graphs import ball
from ..operators import BC, sample_potential, subset_operator
from ..spectral import eig_smallest
from .common import family_constants, pick_centers, safe_fit
from .ensemble import ConfigError, EnsembleSpec, ordered_map, realization_seed, wilson
from .report import Table

__all__ = ["simulate", "summarize", "validate", "ground_state_energy"]

BLOCK = 50


def validate(spec: EnsembleSpec) -> None:
    delta = spec.param("delta", 0.5)
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if "R" not in spec.grids:
        raise ConfigError("ground-state tail needs an R grid")
    if any(R < 1 for R in spec.grid("R")):
        raise ConfigError("radii must be >= 1")


def _setup(spec: EnsembleSpec):
    g = spec.graph.build()
    radii = sorted(spec.grid("R"))
    center = pick_centers(spec, g, radii[-1], "tail-centers")[0]
    balls = [ball(g, center, R) for R in radii]
    ops = [subset_operator(g, b, BC.DIRICHLET) for b in balls]
    return g, radii, balls, ops


def ground_state_energy(op, values: np.ndarray) -> float:
    """E0 of ``op`` with potential ``values``; tridiagonal fast path for paths."""
    H = op.with_potential(values)
    if op.members.size > 1 and np.all(np.diff(op.members) == 1) and \
            H.matrix.nnz <= 3 * op.members.size and _tridiagonal(H.matrix):
        d = H.matrix.diagonal()
        e = H.matrix.diagonal(1)
        return float(sla.eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0])
    return float(eig_smallest(H, 1).eigenvalues[0])


def _tridiagonal(M) -> bool:
    coo = M.tocoo()
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


def _block(ctx: dict, block: int):
    spec = ctx["spec"]
    g, radii, balls, ops = _setup(spec)
    dist = spec.dist
    delta = spec.param("delta", 0.5)
    rows = []
    lo, hi = block * BLOCK, min((block + 1) * BLOCK, spec.realizations)
    for i in range(lo, hi):
        pot = sample_potential(dist, balls[-1], realization_seed(spec, i))
        for R, b, op in zip(radii, balls, ops):
            e0 = ground_state_energy(op, pot.on(op.members))
            rows.append((i, R, b.size, e0, int(e0 <= R ** (-delta))))
    return rows


def simulate(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    blocks = range(math.ceil(spec.realizations / BLOCK))
    t = Table("samples", ("realization", "R", "size", "E0", "hit"), {
        "realization": "realization index i (potential seed (master_seed, i))",
        "R": "ball radius", "size": "|B_R|",
        "E0": "ground-state energy of the Dirichlet restriction to B_R",
        "hit": "1 if E0 <= R^(-delta)"})
    for rows in ordered_map(_block, blocks, {"spec": spec}, parallel):
        t.extend(rows)
    return {"samples": t}


def summarize(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    delta = spec.param("delta", 0.5)
    alpha, beta = family_constants(spec)
    recs = tables["samples"].records()
    radii = sorted({r["R"] for r in recs})
    per_R = []
    for R in radii:
        hits = [r["hit"] for r in recs if r["R"] == R]
        k, n = int(sum(hits)), len(hits)
        lo, hi = wilson(k, n)
        per_R.append({"R": R, "threshold": R ** (-delta), "hits": k, "n": n,
                      "p_hat": k / n, "wilson_low": lo, "wilson_high": hi,
                      "below_resolution": k == 0,
                      "power_decay_bound": R ** (-(3 * alpha + 1))})
    p = [x["p_hat"] for x in per_R]
    strictly_decreasing = all(a > b for a, b in zip(p, p[1:]))
    disjoint = all(y["wilson_high"] < x["wilson_low"]
                   for x, y in zip(per_R, per_R[1:]))
    rows = [(x["R"], x["p_hat"], x["n"]) for x in per_R if 0 < x["p_hat"] < 1]
    fit = safe_fit(rows, "stretched")
    eta = fit.get("estimate")
    return {
        "delta": delta,
        "per_R": per_R,
        "fits": {"stretched": fit},
        "eta_hat": eta,
        "predicted_exponent": delta * alpha / beta,
        "alpha": alpha, "beta": beta,
        "all_below_resolution": all(x["below_resolution"] for x in per_R),
        "criteria": {
            "strictly_decreasing": strictly_decreasing,
            "wilson_disjoint": disjoint,
            "eta_positive": eta is not None and eta > 0,
        },
        "checks": {},
    }
