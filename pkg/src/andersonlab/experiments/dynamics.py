"""Eigenfunction correlator ``Q_I(x, y)`` on a low energy window, binned by distance."""
from __future__ import annotations

import math

import numpy as np

from ..graphs import ball
from ..operators import BC, sample_potential, subset_operator
from ..spectral import DENSE_THRESHOLD, correlator, eig_smallest
from .common import pick_centers, safe_fit
from .ensemble import ConfigError, EnsembleSpec, bootstrap_quantile, ordered_map, \
    realization_seed
from .report import Table

__all__ = ["simulate", "summarize", "validate"]

BLOCK = 10
DEFAULT_TIMES = [0.0, 1.0, 10.0, 100.0, 1000.0]


def validate(spec: EnsembleSpec) -> None:
    if spec.param("R") is None:
        raise ConfigError("dynamical localization needs a ball radius R")
    q = spec.param("quantile", 0.01)
    if not 0 < q <= 1:
        raise ConfigError("quantile must lie in (0, 1]")


def _setup(spec: EnsembleSpec):
    g = spec.graph.build()
    R = spec.param("R")
    center = pick_centers(spec, g, R, "dyn-centers")[0]
    b = ball(g, center, R)
    if b.size > DENSE_THRESHOLD:
        raise ConfigError(f"window of {b.size} vertices exceeds the dense threshold "
                          f"{DENSE_THRESHOLD}; use a smaller R")
    op = subset_operator(g, b, BC.DIRICHLET)
    return g, center, b, op


def _hamiltonian(spec, op, b, i):
    if spec.param("free", False):
        return op.with_potential(None)
    pot = sample_potential(spec.dist, b, realization_seed(spec, i))
    return op.with_potential(pot.on(op.members))


def _ground_block(ctx: dict, block: int):
    spec = ctx["spec"]
    _, _, b, op = _setup(spec)
    lo, hi = block * BLOCK, min((block + 1) * BLOCK, spec.realizations)
    return [(i, float(eig_smallest(_hamiltonian(spec, op, b, i), 1).eigenvalues[0]))
            for i in range(lo, hi)]


def _corr_block(ctx: dict, block: int):
    spec, top = ctx["spec"], ctx["top"]
    g, center, b, op = _setup(spec)
    D = g.distances_from(b.members)[:, b.members].astype(np.int64)
    nd = int(D.max()) + 1
    pairs = np.bincount(D.ravel(), minlength=nd)
    c = op.members.searchsorted(center)
    dc = D[c].astype(float)
    qexp = spec.param("q", 2.0)
    times = np.asarray(spec.grids.get("times", DEFAULT_TIMES), float)
    lo, hi = block * BLOCK, min((block + 1) * BLOCK, spec.realizations)
    corr, moments = [], []
    for i in range(lo, hi):
        H = _hamiltonian(spec, op, b, i)
        # H >= 0, so the window [0, top] is the same as (-inf, top]
        kern = correlator(H, (-math.inf, top))
        v = kern.eigenvectors
        psi = np.abs(v)
        Q = psi @ psi.T
        sums = np.bincount(D.ravel(), weights=Q.ravel(), minlength=nd)
        corr.extend((i, d, int(pairs[d]), float(sums[d]), v.shape[1]) for d in range(nd))
        amp = (np.exp(-1j * np.outer(times, kern.eigenvalues)) * v[c]) @ v.T
        bound = float(np.sum(dc ** qexp * Q[c] ** 2))
        for t, a in zip(times, amp):
            moments.append((i, float(t), float(np.sum(dc ** qexp * np.abs(a) ** 2)), bound))
    return corr, moments


def simulate(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    blocks = range(math.ceil(spec.realizations / BLOCK))
    ground = Table("ground", ("realization", "E0"), {
        "realization": "realization index", "E0": "ground-state energy on the window"})
    for rows in ordered_map(_ground_block, blocks, {"spec": spec}, parallel):
        ground.extend(rows)
    top = _window_top(spec, ground)
    corr = Table("correlator", ("realization", "d", "pairs", "sum_Q", "states"), {
        "realization": "realization index", "d": "graph distance",
        "pairs": "ordered pairs (x, y) in the window at distance d",
        "sum_Q": "sum of Q_I(x, y) over those pairs", "states": "eigenvalues in I"})
    mom = Table("moments", ("realization", "t", "moment", "bound"), {
        "realization": "realization index", "t": "time",
        "moment": "sum_y d(x,y)^q |<y|P_I exp(-itH)|x>|^2 for the window center x",
        "bound": "sum_y d(x,y)^q Q_I(x,y)^2 (time-uniform majorant)"})
    for c, m in ordered_map(_corr_block, blocks, {"spec": spec, "top": top}, parallel):
        corr.extend(c)
        mom.extend(m)
    return {"ground": ground, "correlator": corr, "moments": mom}


def _window_top(spec: EnsembleSpec, ground: Table) -> float:
    if spec.param("window_top") is not None:
        return float(spec.param("window_top"))
    E0 = np.sort(ground.column("E0"))
    q = spec.param("quantile", 0.01)
    return float(np.quantile(E0, q, method="inverted_cdf"))


def summarize(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    top = _window_top(spec, tables["ground"])
    recs = tables["correlator"].records()
    reals = sorted({r["realization"] for r in recs})
    nd = max(r["d"] for r in recs) + 1
    idx = {x: j for j, x in enumerate(reals)}
    mat = np.zeros((len(reals), nd))
    pairs = np.zeros(nd)
    states = {}
    for r in recs:
        mat[idx[r["realization"]], r["d"]] = r["sum_Q"] / r["pairs"]
        pairs[r["d"]] = r["pairs"]
        states[r["realization"]] = r["states"]
    mean = mat.mean(axis=0)
    with_states = sum(1 for v in states.values() if v > 0)
    out = {"window": [0.0, top], "realizations_with_spectrum": with_states,
           "no_spectrum_in_window": with_states == 0, "checks": {}}
    prof = [{"d": d, "mean_Q": float(mean[d]), "pairs": int(pairs[d])} for d in range(nd)]
    out["profile"] = prof
    rows = [(d, mean[d], int(pairs[d])) for d in range(nd) if mean[d] > 0]
    exp_fit = safe_fit(rows, "exponential")
    pow_fit = safe_fit([r for r in rows if r[0] > 0], "power")
    out["fits"] = {"exponential": exp_fit, "power": pow_fit}
    mu, sd = exp_fit.get("estimate"), exp_fit.get("stderr")
    q025 = math.nan
    if mu is not None and len(mat) > 1:
        dgrid = np.arange(nd, dtype=float)

        def rate(m):
            prof_m = m.mean(axis=0)
            ok = prof_m > 0
            if ok.sum() < 3:
                return math.nan
            b = np.polyfit(dgrid[ok], np.log(prof_m[ok]), 1)[0]
            return -b
        q025 = bootstrap_quantile(mat, rate, 0.025, reps=int(spec.param("bootstrap", 200)),
                                  seed=int(spec.master_seed) % (2 ** 31))
    out["bootstrap_q025"] = q025
    positive = mu is not None and mu - 1.96 * sd > 0 and q025 > 0
    exp_r2 = exp_fit.get("r2") or 0.0
    pow_r2 = pow_fit.get("r2") or 0.0
    out["decay_class"] = "exponential" if positive and exp_r2 >= 0.9 and exp_r2 > pow_r2 \
        else "non-exponential"
    out["criteria"] = {"rate_positive_95": positive}
    moms = tables["moments"].records()
    viol = sum(1 for r in moms if r["moment"] > r["bound"] + 1e-10 * (1 + r["bound"]))
    out["checks"]["correlator_majorant"] = {"instances": len(moms), "violations": viol,
                                            "skipped": 0}
    times = sorted({r["t"] for r in moms})
    out["moments"] = [{"t": t, "mean_moment": float(np.mean([r["moment"] for r in moms
                                                             if r["t"] == t]))}
                      for t in times]
    return out
