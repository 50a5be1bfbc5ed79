"""Fractional moments of the Green's function: decay, a-priori bound, decoupling."""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from ..fitting import FitError, fit_exponent
from ..graphs import ball, boundary_edges
from ..operators import BC, PotentialDistribution, sample_potential, subset_operator
from ..spectral import ResonanceError, resolvent
from .common import pick_centers, safe_fit
from .ensemble import (ConfigError, EnsembleSpec, GraphSpec, bootstrap_quantile,
                       ordered_map, realization_seed)
from .report import Table

__all__ = ["apriori_constant", "single_site_moment", "simulate_decay", "summarize_decay",
           "validate_decay", "simulate_apriori", "summarize_apriori", "validate_apriori",
           "DEFAULT_EPS"]

DEFAULT_EPS = [1e-1, 1e-2, 1e-3, 1e-4]
BLOCK = 25


def apriori_constant(dist: PotentialDistribution, s: float) -> float:
    """``(tau / (tau - s)) (4 kappa_tau)^{s/tau} / ||V||_inf^s``."""
    if not dist.holder_regular:
        raise ConfigError(f"{dist.kind} is not Hölder continuous")
    tau, kappa = dist.tau, dist.kappa_tau
    if not 0 < s < tau:
        raise ConfigError(f"need 0 < s < tau = {tau}")
    return (tau / (tau - s)) * (4 * kappa) ** (s / tau) / dist.support_max ** s


def single_site_moment(dist: PotentialDistribution, z: complex, s: float) -> float:
    """``E |v - z|^{-s}`` for one site with no neighbours, by quadrature."""
    if dist.kind in ("bernoulli", "point_mass_mixture"):
        atoms = [0.0, dist.support_max] if dist.kind == "bernoulli" else list(dist.param("atoms"))
        weights = [dist.p0, dist.p1] if dist.kind == "bernoulli" else list(dist.param("weights"))
        return float(sum(w * abs(a - z) ** (-s) for a, w in zip(atoms, weights)))
    b = dist.support_max
    # density from the CDF derivative is analytic for both continuous kinds
    if dist.kind == "uniform":
        dens = lambda v: 1.0 / b
    else:
        rate = dist.param("rate")
        dens = lambda v: rate * math.exp(-rate * v) / -math.expm1(-rate * b)
    val, _ = integrate.quad(lambda v: dens(v) * abs(v - z) ** (-s), 0.0, b,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def _default_s(dist: PotentialDistribution) -> float:
    return min(0.2, dist.tau / 2 - 0.05)


def _solve_column(H, y: int, z: complex) -> tuple[np.ndarray, float]:
    """``G(., y; z)``; dense for tiny operators, sparse LU otherwise."""
    if H.dim <= 64:
        A = H.dense().astype(complex) - z * np.eye(H.dim)
        if z.imag == 0:
            w = np.linalg.eigvalsh(H.dense())
            if np.min(np.abs(w - z.real)) < 1e-12:
                raise ResonanceError(f"E={z.real!r} on the spectrum")
        rhs = np.zeros(H.dim, complex)
        rhs[H.local(y)] = 1.0
        u = np.linalg.solve(A, rhs)
        return u, float(np.linalg.norm(A @ u - rhs))
    return resolvent(H, z).column(y)


# --- decay ------------------------------------------------------------------------------

def validate_decay(spec: EnsembleSpec) -> None:
    dist = spec.dist
    if not dist.holder_regular:
        raise ConfigError(f"fractional-moment decay needs a Hölder-continuous law; "
                          f"{dist.kind} is not")
    s = spec.param("s", _default_s(dist))
    if not 0 < s < dist.tau / 2:
        raise ConfigError(f"s={s} must lie in (0, tau/2) = (0, {dist.tau / 2})")
    if spec.param("R") is None:
        raise ConfigError("fm decay needs a ball radius R")


def _decay_setup(spec: EnsembleSpec):
    g = spec.graph.build()
    R = spec.param("R")
    center = pick_centers(spec, g, R, "fm-centers")[0]
    b = ball(g, center, R)
    op = subset_operator(g, b, BC.DIRICHLET)
    return g, center, b, op


def _energies(spec: EnsembleSpec) -> list[float]:
    out = [float(spec.param("E", 0.01))]
    if spec.param("E_contrast") is not None:
        out.append(float(spec.param("E_contrast")))
    return out


def _eps_grid(spec: EnsembleSpec) -> list[float]:
    main = float(spec.param("eps", 1e-3))
    grid = [float(e) for e in spec.grids.get("eps", DEFAULT_EPS)]
    return sorted(set(grid) | {main}, reverse=True)


def _decay_block(ctx: dict, block: int):
    spec = ctx["spec"]
    g, center, b, op = _decay_setup(spec)
    s = spec.param("s", _default_s(spec.dist))
    w = spec.param("bin_width", 4)
    bins = b.distances // w
    nb = int(bins.max()) + 1
    counts = np.bincount(bins, minlength=nb)
    dsum = np.bincount(bins, weights=b.distances, minlength=nb)
    d_mean = dsum / counts
    rows, fails = [], []
    lo, hi = block * BLOCK, min((block + 1) * BLOCK, spec.realizations)
    for i in range(lo, hi):
        pot = sample_potential(spec.dist, b, realization_seed(spec, i))
        H = op.with_potential(pot.on(op.members))
        for E in _energies(spec):
            for eps in _eps_grid(spec):
                try:
                    col, res = _solve_column(H, center, complex(E, eps))
                except ResonanceError:
                    fails.append((i, E, eps))
                    continue
                vals = np.abs(col) ** s
                sums = np.bincount(bins, weights=vals, minlength=nb)
                for k in range(nb):
                    rows.append((i, E, eps, k, float(d_mean[k]), int(counts[k]),
                                 float(sums[k] / counts[k]), res))
    return rows, fails


def simulate_decay(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    t = Table("bins", ("realization", "E", "eps", "bin", "d_mean", "pairs", "mean_Gs",
                       "solve_residual"), {
        "realization": "realization index", "E": "real part of z", "eps": "imaginary part of z",
        "bin": "distance bin k (d in [k*w, (k+1)*w))", "d_mean": "mean distance in the bin",
        "pairs": "number of y in the bin", "mean_Gs": "mean over the bin of |G(x,y;z)|^s",
        "solve_residual": "||(H - z)u - delta_x|| of the column solve"})
    f = Table("resonances", ("realization", "E", "eps"), {
        "realization": "realization index", "E": "energy", "eps": "imaginary part"})
    blocks = range(math.ceil(spec.realizations / BLOCK))
    for rows, fails in ordered_map(_decay_block, blocks, {"spec": spec}, parallel):
        t.extend(rows)
        f.extend(fails)
    return {"bins": t, "resonances": f}


def _rate(matrix: np.ndarray, d_mean: np.ndarray) -> float:
    m = matrix.mean(axis=0)
    try:
        return fit_exponent(list(zip(d_mean, m)), "exponential").estimate
    except FitError:
        return math.nan


def decay_profile(tables: dict[str, Table], E: float, eps: float):
    recs = [r for r in tables["bins"].records() if r["E"] == E and r["eps"] == eps]
    reals = sorted({r["realization"] for r in recs})
    nb = max(r["bin"] for r in recs) + 1
    idx = {x: j for j, x in enumerate(reals)}
    mat = np.full((len(reals), nb), np.nan)
    d_mean = np.zeros(nb)
    for r in recs:
        mat[idx[r["realization"]], r["bin"]] = r["mean_Gs"]
        d_mean[r["bin"]] = r["d_mean"]
    return mat, d_mean


def summarize_decay(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    dist = spec.dist
    s = spec.param("s", _default_s(dist))
    eps_main = float(spec.param("eps", 1e-3))
    out = {"s": s, "eps": eps_main, "columns": {}, "stability": [], "checks": {}}
    residuals = tables["bins"].column("solve_residual") if tables["bins"].rows else np.zeros(0)
    for E in _energies(spec):
        col = {}
        for eps in _eps_grid(spec):
            mat, d_mean = decay_profile(tables, E, eps)
            mean = mat.mean(axis=0)
            se = mat.std(axis=0, ddof=1) / math.sqrt(len(mat)) if len(mat) > 1 else \
                np.zeros_like(mean)
            fit = safe_fit([(d, m, len(mat)) for d, m in zip(d_mean, mean)], "exponential")
            entry = {"eps": eps, "mu_hat": fit.get("estimate"), "fit": fit,
                     "profile": [{"d_mean": float(d), "M_hat": float(m), "se": float(e)}
                                 for d, m, e in zip(d_mean, mean, se)]}
            if eps == eps_main:
                seed = int(spec.master_seed) % (2 ** 31)
                q = bootstrap_quantile(mat, lambda m: _rate(m, d_mean), 0.025,
                                       reps=int(spec.param("bootstrap", 400)), seed=seed)
                mu, sd = fit.get("estimate"), fit.get("stderr")
                entry["bootstrap_q025"] = q
                entry["ols_lower95"] = None if mu is None else mu - 1.96 * sd
                entry["mu_positive_95"] = mu is not None and mu - 1.96 * sd > 0 and q > 0
                steps = [(mean[k + 1] - mean[k]) <= 2 * math.hypot(se[k], se[k + 1])
                         for k in range(len(mean) - 1)]
                entry["nonincreasing_within_errors"] = all(steps)
                col.update(entry)
            out["stability"].append({"E": E, "eps": eps, "mu_hat": fit.get("estimate")})
        out["columns"][str(E)] = col
    cols = list(out["columns"].values())
    crit = {"mu_positive_95": cols[0].get("mu_positive_95", False),
            "nonincreasing_within_errors": cols[0].get("nonincreasing_within_errors", False)}
    if len(cols) > 1:
        crit["contrast_rate_smaller"] = (cols[1].get("mu_hat") is not None and
                                         cols[0].get("mu_hat") is not None and
                                         cols[1]["mu_hat"] < cols[0]["mu_hat"])
    # d(x, y) = 0 is the first bin's first element only when bin_width = 1
    if dist.holder_regular and s < dist.tau:
        C = apriori_constant(dist, s)
        prof = cols[0]["profile"]
        out["apriori_constant"] = C
        crit["bin0_below_apriori"] = prof[0]["M_hat"] <= C
    out["criteria"] = crit
    out["max_solve_residual"] = float(residuals.max()) if residuals.size else 0.0
    out["resonances_excluded"] = len(tables["resonances"].rows)
    return out


# --- a-priori bound and decoupling ---------------------------------------------------------

def _default_settings() -> list[dict]:
    return [
        {"name": "single_vertex", "graph": {"family": "lattice", "d": 1, "extent": 1},
         "center": 0, "radius": 0, "E": -1.0},
        {"name": "path", "graph": {"family": "lattice", "d": 1, "extent": 61},
         "center": 30, "radius": 10, "E": 0.5},
        {"name": "gasket", "graph": {"family": "gasket", "level": 5},
         "center": 0, "radius": 8, "E": 0.01},
    ]


def validate_apriori(spec: EnsembleSpec) -> None:
    dist = spec.dist
    if not dist.holder_regular:
        raise ConfigError("a-priori bound needs a Hölder-continuous law")
    s = spec.param("s", 0.5)
    if not 0 < s < dist.tau:
        raise ConfigError(f"a-priori exponent s={s} must lie in (0, tau)")
    sd = spec.param("s_decoupling", _default_s(dist))
    if not 0 < sd < dist.tau / 2:
        raise ConfigError(f"decoupling exponent s={sd} must lie in (0, tau/2)")
    for setting in spec.param("settings") or []:
        need = {"name", "graph", "center", "radius", "E"}
        if not isinstance(setting, dict) or set(setting) != need:
            raise ConfigError(f"each a-priori setting needs exactly the keys {sorted(need)}")
        GraphSpec.from_dict(setting["graph"])


def _apriori_block(ctx: dict, item):
    spec, k, block = ctx["spec"], item[0], item[1]
    setting = ctx["settings"][k]
    s = spec.param("s", 0.5)
    g = GraphSpec.from_dict(setting["graph"]).build()
    b = ball(g, setting["center"], setting["radius"])
    op = subset_operator(g, b, BC.DIRICHLET)
    far = int(b.members[np.argmax(b.distances)])
    bs = spec.param("block_size", 1000)
    lo, hi = block * bs, min((block + 1) * bs, spec.realizations)
    eps_grid = [float(e) for e in spec.grids.get("eps", [0.0] + DEFAULT_EPS)]
    acc = {eps: np.zeros(4) for eps in eps_grid}
    skipped = {eps: 0 for eps in eps_grid}
    for i in range(lo, hi):
        pot = sample_potential(spec.dist, b, realization_seed(spec, i))
        H = op.with_potential(pot.on(op.members))
        for eps in eps_grid:
            try:
                col, _ = _solve_column(H, setting["center"], complex(setting["E"], eps))
            except ResonanceError:
                skipped[eps] += 1
                continue
            dval = abs(col[H.local(setting["center"])]) ** s
            oval = abs(col[H.local(far)]) ** s
            acc[eps] += (dval, dval * dval, oval, oval * oval)
    return [(setting["name"], block, eps, hi - lo - skipped[eps], *acc[eps].tolist(),
             skipped[eps]) for eps in eps_grid]


def _decoupling_block(ctx: dict, block: int):
    spec = ctx["spec"]
    dc = ctx["decoupling"]
    s = spec.param("s_decoupling", _default_s(spec.dist))
    g = GraphSpec.from_dict(dc["graph"]).build()
    x0 = dc["center"]
    lam = ball(g, x0, dc["window_radius"])
    W = ball(g, x0, dc["inner_radius"])
    be = boundary_edges(g, W)
    # u = v on the outer boundary of W, v' its neighbour inside W, y = x0
    v_in, v_out = (int(a) for a in be.edges[0])
    comp = np.setdiff1d(lam.members, W.members)
    op_lam = subset_operator(g, lam, BC.DIRICHLET)
    op_out = subset_operator(g, comp, BC.DIRICHLET)
    op_in = subset_operator(g, W, BC.DIRICHLET)
    bs = spec.param("block_size", 1000)
    n_dec = dc.get("realizations", spec.realizations)
    lo, hi = block * bs, min((block + 1) * bs, n_dec)
    rows = []
    for eps in [float(e) for e in spec.grids.get("eps", DEFAULT_EPS) if e > 0]:
        acc = np.zeros(8)
        for i in range(lo, hi):
            pot = sample_potential(spec.dist, lam, realization_seed(spec, i))
            z = complex(dc["E"], eps)
            H_lam = op_lam.with_potential(pot.on(op_lam.members))
            H_out = op_out.with_potential(pot.on(op_out.members))
            H_in = op_in.with_potential(pot.on(op_in.members))
            g1 = abs(_solve_column(H_out, v_out, z)[0][H_out.local(v_out)]) ** s
            g2 = abs(_solve_column(H_lam, x0, z)[0][H_lam.local(v_in)]) ** s
            g3 = abs(_solve_column(H_in, x0, z)[0][H_in.local(v_in)]) ** s
            acc += (g1 * g2, g2, g1, g3, g1 * g3, (g1 * g2) ** 2, g2 * g2, (g1 * g3) ** 2)
        rows.append((block, eps, hi - lo, *acc.tolist()))
    return rows


def simulate_apriori(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    settings = spec.param("settings") or _default_settings()
    bs = spec.param("block_size", 1000)
    nblocks = math.ceil(spec.realizations / bs)
    items = [(k, blk) for k in range(len(settings)) for blk in range(nblocks)]
    t = Table("apriori", ("setting", "block", "eps", "n", "sum_diag", "sum_diag_sq",
                          "sum_far", "sum_far_sq", "skipped"), {
        "setting": "graph/energy setting name", "block": "realization block",
        "eps": "imaginary part of z", "n": "solved realizations in the block",
        "sum_diag": "sum of |G(x,x;z)|^s", "sum_diag_sq": "sum of |G(x,x;z)|^(2s)",
        "sum_far": "sum of |G(x,y;z)|^s for the farthest y in the ball",
        "sum_far_sq": "sum of |G(x,y;z)|^(2s)", "skipped": "resonant realizations"})
    ctx = {"spec": spec, "settings": settings}
    for rows in ordered_map(_apriori_block, items, ctx, parallel):
        t.extend(rows)
    tables = {"apriori": t}
    dc = spec.param("decoupling", {"graph": {"family": "gasket", "level": 5}, "center": 0,
                                   "window_radius": 16, "inner_radius": 8, "E": 0.01,
                                   "realizations": min(spec.realizations, 1000)})
    if dc:
        n_dec = dc.get("realizations", spec.realizations)
        d = Table("decoupling", ("block", "eps", "n", "sum_g1g2", "sum_g2", "sum_g1", "sum_g3",
                                 "sum_g1g3", "sum_g1g2_sq", "sum_g2_sq", "sum_g1g3_sq"), {
            "block": "realization block", "eps": "imaginary part of z",
            "n": "realizations in the block",
            "sum_g1g2": "sum |G^{W^c}(u,v)|^s |G(v',y)|^s", "sum_g2": "sum |G(v',y)|^s",
            "sum_g1": "sum |G^{W^c}(u,v)|^s", "sum_g3": "sum |G^W(v',y)|^s (independent factor)",
            "sum_g1g3": "sum of the product of the two disjoint-support factors",
            "sum_g1g2_sq": "sum of squared products", "sum_g2_sq": "sum |G(v',y)|^(2s)",
            "sum_g1g3_sq": "sum of squared disjoint-support products"})
        blocks = range(math.ceil(n_dec / bs))
        for rows in ordered_map(_decoupling_block, blocks, {"spec": spec, "decoupling": dc},
                                parallel):
            d.extend(rows)
        tables["decoupling"] = d
    return tables


def summarize_apriori(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    dist = spec.dist
    s = spec.param("s", 0.5)
    C = apriori_constant(dist, s)
    settings = {x["name"]: x for x in (spec.param("settings") or _default_settings())}
    agg = {}
    for r in tables["apriori"].records():
        a = agg.setdefault((r["setting"], r["eps"]), np.zeros(6))
        a += (r["n"], r["sum_diag"], r["sum_diag_sq"], r["sum_far"], r["sum_far_sq"],
              r["skipped"])
    rows = []
    for (name, eps), (n, s1, s2, f1, f2, sk) in sorted(agg.items()):
        mean, far = s1 / n, f1 / n
        se = math.sqrt(max(s2 / n - mean ** 2, 0) / max(n - 1, 1))
        se_far = math.sqrt(max(f2 / n - far ** 2, 0) / max(n - 1, 1))
        rows.append({"setting": name, "eps": eps, "n": int(n), "mean_diag": mean,
                     "se_diag": se, "mean_far": far, "se_far": se_far, "skipped": int(sk),
                     "below_constant": mean <= C and far <= C})
    out = {"s": s, "apriori_constant": C, "per_setting": rows, "checks": {}}
    quad = {}
    for name, st in settings.items():
        if st["radius"] == 0 and GraphSpec.from_dict(st["graph"]).build().n == 1:
            exact = single_site_moment(dist, complex(st["E"], 0.0), s)
            for r in rows:
                if r["setting"] == name and r["eps"] == 0.0:
                    quad[name] = {"exact": exact, "mean": r["mean_diag"], "se": r["se_diag"],
                                  "z_score": (r["mean_diag"] - exact) / r["se_diag"]
                                  if r["se_diag"] > 0 else math.inf}
    out["quadrature"] = quad
    crit = {"all_below_constant": all(r["below_constant"] for r in rows)}
    if quad:
        crit["quadrature_within_3se"] = all(abs(q["z_score"]) <= 3 for q in quad.values())
    if "decoupling" in tables:
        dagg = {}
        for r in tables["decoupling"].records():
            a = dagg.setdefault(r["eps"], np.zeros(9))
            a += (r["n"], r["sum_g1g2"], r["sum_g2"], r["sum_g1"], r["sum_g3"], r["sum_g1g3"],
                  r["sum_g1g2_sq"], r["sum_g2_sq"], r["sum_g1g3_sq"])
        drows = []
        for eps, (n, p12, s2, s1, s3, p13, q12, q2, q13) in sorted(dagg.items(), reverse=True):
            ratio = p12 / s2
            prod_mean = p13 / n
            indep = (s1 / n) * (s3 / n)
            se_prod = math.sqrt(max(q13 / n - prod_mean ** 2, 0) / max(n - 1, 1))
            drows.append({"eps": eps, "n": int(n), "C_hat": ratio,
                          "independence_product": prod_mean, "product_of_means": indep,
                          "independence_z": (prod_mean - indep) / se_prod if se_prod > 0
                          else 0.0})
        ratios = [r["C_hat"] for r in drows]
        out["decoupling"] = drows
        crit["decoupling_finite"] = all(math.isfinite(x) for x in ratios)
        out["decoupling_stability_ratio"] = max(ratios) / min(ratios)
        # "stable across eps": spread of C_hat within a declared factor
        crit["decoupling_stable"] = bool(out["decoupling_stability_ratio"] <= spec.param(
            "stability_factor", 1.5))
        crit["independence_within_4se"] = all(abs(r["independence_z"]) <= 4 for r in drows)
    out["criteria"] = crit
    return out
