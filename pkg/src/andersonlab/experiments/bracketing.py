"""Link-by-link measurement of the Lifshitz upper-bound chain.

(i)   covering counts of ``B(x, R)`` by ``r``-balls against ``(R/r)^alpha``;
(ii)  ``E0(H^{B_r,N}) >= E0(H~) >= mean(V~)/2`` instance-wise, hence the
      ordering of the three tail probabilities at any threshold;
(iii) the empirical lower tail of ``mean(r^beta V~)`` against Hoeffding's bound,
      and the mean ``mu_r`` against ``(c0/4) p1``.
"""
from __future__ import annotations

import math

import numpy as np

from ..graphs import ball, cover_count_bounds, covering_net
from ..operators import BC, sample_potential, subset_operator, truncate_potential
from .common import family_constants, pick_centers
from .ensemble import ConfigError, EnsembleSpec, ordered_map, realization_seed, wilson
from .report import Table

__all__ = ["simulate", "summarize", "validate", "hoeffding_tail"]

BLOCK = 50
TOL = 1e-10


def hoeffding_tail(means: np.ndarray, K: int, mean: float, eps: float, b: float) -> dict:
    """Empirical ``P(Y_bar <= mean - eps)`` from sample means of ``K`` i.i.d. ``[0, b]`` draws.

    Returns the estimate, its Wilson interval and ``exp(-2 K eps^2 / b^2)``.
    """
    means = np.asarray(means, float)
    n = means.size
    hits = int(np.sum(means <= mean - eps))
    lo, hi = wilson(hits, n)
    bound = math.exp(-2 * K * eps ** 2 / b ** 2)
    return {"K": K, "eps": eps, "b": b, "hits": hits, "n": n, "p_hat": hits / n,
            "wilson_low": lo, "wilson_high": hi, "bound": bound,
            "consistent": lo <= bound}


def validate(spec: EnsembleSpec) -> None:
    if spec.graph.family not in ("gasket", "lattice"):
        raise ConfigError("the bracketing chain runs on the gasket or a lattice")
    if "r" not in spec.grids:
        raise ConfigError("bracketing chain needs an r grid")
    if any(r < 1 for r in spec.grid("r")):
        raise ConfigError("radii must be >= 1")


def _c0(spec: EnsembleSpec, g, center) -> tuple[float, dict]:
    """``c0 = min_r r^beta E1(-Lap^{B_r,N})`` over the grid, unless given."""
    _, beta = family_constants(spec)
    e1 = {}
    for r in sorted(spec.grid("r")):
        op = subset_operator(g, ball(g, center, r), BC.NEUMANN)
        w = np.linalg.eigvalsh(op.free.toarray())
        e1[r] = float(w[1]) if w.size > 1 else math.nan
    c0 = spec.param("c0")
    if c0 is None:
        c0 = min(r ** beta * e for r, e in e1.items() if math.isfinite(e))
    return float(c0), e1


def _setup(spec: EnsembleSpec):
    g = spec.graph.build()
    radii = sorted(spec.grid("r"))
    big = max(radii + list(spec.grids.get("R", [])))
    center = pick_centers(spec, g, big, "bracketing-centers")[0]
    return g, center, radii


def _block(ctx: dict, block: int):
    spec, c0 = ctx["spec"], ctx["c0"]
    g, center, radii = _setup(spec)
    _, beta = family_constants(spec)
    balls = {r: ball(g, center, r) for r in radii}
    ops = {r: subset_operator(g, b, BC.NEUMANN) for r, b in balls.items()}
    lo, hi = block * BLOCK, min((block + 1) * BLOCK, spec.realizations)
    rows = []
    for i in range(lo, hi):
        pot = sample_potential(spec.dist, balls[radii[-1]], realization_seed(spec, i))
        for r in radii:
            b, op = balls[r], ops[r]
            v = pot.on(op.members)
            vt = truncate_potential(pot, c0, r, beta).on(op.members)
            e_n = float(np.linalg.eigvalsh(op.with_potential(v).dense())[0])
            e_t = float(np.linalg.eigvalsh(op.with_potential(vt).dense())[0])
            rows.append((i, r, b.size, e_n, e_t, float(vt.sum()) / (2 * b.size),
                         float(r ** beta * vt.mean()), float(r ** beta * v.mean())))
    return rows


def simulate(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    g, center, radii = _setup(spec)
    alpha, _ = family_constants(spec)
    c0, e1 = _c0(spec, g, center)
    cov = Table("covering", ("R", "r", "count", "lower", "upper", "overlap"), {
        "R": "host radius", "r": "cover radius",
        "count": "greedy net size |I|", "lower": "volume lower bound on |I|",
        "upper": "volume upper bound on |I|", "overlap": "max multiplicity C1 on the union"})
    for R in sorted(spec.grids.get("R", [])):
        host = ball(g, center, R)
        for r in radii:
            if r > R:
                continue
            cover = covering_net(g, host, r)
            lower, upper, _ = cover_count_bounds(g, cover, alpha)
            cov.append(R, r, cover.count, lower, upper, cover.overlap_union)
    gaps = Table("gaps", ("r", "E1_neumann"), {
        "r": "ball radius", "E1_neumann": "first nonzero eigenvalue of the free Neumann ball"})
    gaps.extend((r, e1[r]) for r in radii)
    chain = Table("chain", ("realization", "r", "size", "E0_neumann", "E0_truncated",
                            "half_mean_truncated", "mean_scaled_truncated", "mean_scaled"), {
        "realization": "realization index", "r": "ball radius", "size": "|B_r|",
        "E0_neumann": "E0(-Lap^{B_r,N} + V)",
        "E0_truncated": "E0(-Lap^{B_r,N} + V~), V~ = min(V, (c0/3) r^-beta)",
        "half_mean_truncated": "sum V~ / (2 |B_r|)",
        "mean_scaled_truncated": "mean of r^beta V~ over B_r",
        "mean_scaled": "mean of r^beta V over B_r"})
    for rows in ordered_map(_block, range(math.ceil(spec.realizations / BLOCK)),
                            {"spec": spec, "c0": c0}, parallel):
        chain.extend(rows)
    return {"covering": cov, "gaps": gaps, "chain": chain}


def summarize(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    alpha, beta = family_constants(spec)
    gaps = {r["r"]: r["E1_neumann"] for r in tables["gaps"].records()}
    c0 = spec.param("c0")
    if c0 is None:
        c0 = min(r ** beta * e for r, e in gaps.items() if math.isfinite(e))
    dist = spec.dist
    p1 = dist.p1
    checks = {}
    cov = tables["covering"].records()
    checks["covering_count_bounds"] = {
        "instances": len(cov), "skipped": 0,
        "violations": sum(not (c["lower"] <= c["count"] <= c["upper"]) for c in cov)}
    covering = [{**c, "ratio_to_scale": c["count"] / (c["R"] / c["r"]) ** alpha} for c in cov]
    recs = tables["chain"].records()
    sge = sum(r["E0_truncated"] > r["E0_neumann"] + TOL * (1 + abs(r["E0_neumann"])) for r in recs)
    tmp = sum(r["half_mean_truncated"] > r["E0_truncated"] + TOL * (1 + abs(r["E0_truncated"]))
              for r in recs)
    checks["truncation_lowers_ground_state"] = {"instances": len(recs), "violations": sge,
                                                "skipped": 0}
    checks["temple_application"] = {"instances": len(recs), "violations": tmp, "skipped": 0}
    per_r, hoeffding, prob_viol, prob_n = [], [], 0, 0
    eps = spec.param("hoeffding_eps", c0 * p1 / 12)
    b = c0 / 3
    for r in sorted(gaps):
        rows = [x for x in recs if x["r"] == r]
        n = len(rows)
        size = rows[0]["size"]
        cap = (c0 / 3) * r ** (-beta)
        mu_exact = r ** beta * dist.mean_truncated(cap)
        y = np.array([x["mean_scaled_truncated"] for x in rows])
        gamma = c0 * p1 / 12 * r ** (-beta)
        pN = sum(x["E0_neumann"] <= gamma for x in rows) / n
        pT = sum(x["E0_truncated"] <= gamma for x in rows) / n
        pM = sum(x["half_mean_truncated"] <= gamma for x in rows) / n
        prob_n += 1
        prob_viol += not (pN <= pT <= pM)
        hoeffding.append({"r": r, **hoeffding_tail(y, size, mu_exact, eps, b)})
        per_r.append({"r": r, "size": size, "E1_neumann": gaps[r], "cap": cap, "gamma": gamma,
                      "P_E0_neumann": pN, "P_E0_truncated": pT, "P_half_mean": pM,
                      "mu_exact": mu_exact, "mu_hat": float(y.mean()),
                      "mu_lower": c0 * p1 / 4})
    checks["probability_chain"] = {"instances": prob_n, "violations": prob_viol, "skipped": 0}
    # smallest grid radius from which mu_hat stays above (c0/4) p1
    threshold = None
    for x in reversed(per_r):
        if x["mu_hat"] >= x["mu_lower"]:
            threshold = x["r"]
        else:
            break
    return {
        "c0": c0, "p1": p1, "alpha": alpha, "beta": beta,
        "covering": covering, "per_r": per_r, "hoeffding": hoeffding,
        "mu_threshold_r": threshold,
        "criteria": {"hoeffding_consistent": all(h["consistent"] for h in hoeffding),
                     "mu_lower_bound_reached": threshold is not None},
        "checks": checks,
    }
