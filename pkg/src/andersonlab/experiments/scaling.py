"""Volume growth and low-lying eigenvalue scaling of the free Laplacian on balls."""
from __future__ import annotations

import math

import numpy as np

from ..fitting import fit_exponent
from ..graphs import ball, build_sierpinski_gasket, gasket_vertex_count
from ..operators import BC, assemble
from ..spectral import eig_smallest
from .common import pick_centers, safe_fit
from .ensemble import ConfigError, EnsembleSpec
from .report import Table

__all__ = ["simulate_volume", "summarize_volume", "validate_volume",
           "simulate_scaling", "summarize_scaling", "validate_scaling"]


# --- volume growth -----------------------------------------------------------------

def validate_volume(spec: EnsembleSpec) -> None:
    radii = spec.grids.get("radii", [])
    if len({int(math.floor(r)) for r in radii if r >= 1}) < 3:
        raise ConfigError("volume growth needs at least 3 distinct radii >= 1")


def simulate_volume(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    g = spec.graph.build()
    radii = sorted(int(r) for r in spec.grid("radii"))
    centers = pick_centers(spec, g, radii[-1], "volume-centers")
    dist = np.atleast_2d(g.distances_from(centers))
    t = Table("volumes", ("center", "radius", "size"), {
        "center": "ball center (vertex id)", "radius": "integer radius r",
        "size": "|B(center, r)|"})
    for c, row in zip(centers, dist):
        srt = np.sort(row[np.isfinite(row)])
        for r in radii:
            t.append(c, r, int(np.searchsorted(srt, r, side="right")))
    return {"volumes": t}


def summarize_volume(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    rows = [(r["radius"], r["size"], 1) for r in tables["volumes"].records()]
    fit = fit_exponent(rows, "power")
    ratio = [b / r ** fit.estimate for r, b, _ in rows]
    fit.extra.update(c1=min(ratio), c2=max(ratio))
    return {"fits": {"alpha": fit.to_dict()},
            "alpha_hat": fit.estimate,
            "alpha_exact": spec.graph.volume_exponent,
            "checks": {}}


# --- Neumann / Dirichlet eigenvalue scaling ----------------------------------------

def _bc(spec: EnsembleSpec) -> BC:
    return BC.NEUMANN if spec.experiment == "neumann_scaling" else BC.DIRICHLET


def validate_scaling(spec: EnsembleSpec) -> None:
    radii = spec.grids.get("radii", [])
    levels = spec.grids.get("levels", [])
    if len(radii) < 3 and len(levels) < 3:
        raise ConfigError("eigenvalue scaling needs a radius or level grid with >= 3 points")
    if levels and spec.graph.family != "gasket":
        raise ConfigError("triangle levels apply to the gasket only")


def _eigenvalue(H, bc: BC) -> float:
    k = 2 if bc is BC.NEUMANN else 1
    return float(eig_smallest(H, k).eigenvalues[k - 1])


def simulate_scaling(spec: EnsembleSpec, parallel: int = 1) -> dict[str, Table]:
    bc = _bc(spec)
    name = "E1 (first nonzero Neumann eigenvalue)" if bc is BC.NEUMANN else \
        "E0 (Dirichlet ground state)"
    tables = {}
    radii = sorted(spec.grids.get("radii", []))
    balls = Table("balls", ("center", "radius", "size", "eigenvalue"), {
        "center": "ball center (vertex id)", "radius": "ball radius r",
        "size": "|B(center, r)|", "eigenvalue": f"{name} of the free operator on the ball"})
    excluded = Table("excluded", ("radius", "size", "reason"), {
        "radius": "ball radius", "size": "ball size", "reason": "why the row was dropped"})
    if radii:
        g = spec.graph.build()
        centers = pick_centers(spec, g, radii[-1], "scaling-centers")
        for c in centers:
            for r in radii:
                b = ball(g, c, r)
                if bc is BC.NEUMANN and b.size < 2:
                    excluded.append(r, b.size, "single-vertex subset has no E1")
                    continue
                balls.append(c, r, b.size, _eigenvalue(assemble(g, b, bc), bc))
        tables["balls"] = balls
    levels = sorted(int(n) for n in spec.grids.get("levels", []))
    if levels:
        tri = Table("triangles", ("level", "side", "size", "eigenvalue"), {
            "level": "generation n of the one-sided triangle V_n",
            "side": "side length 2^n", "size": "|V_n|",
            "eigenvalue": f"{name} on V_n inside the two-sided gasket"})
        for n in levels:
            # V_n is the id prefix of the two-sided level-(n+1) graph, so every
            # vertex of V_n carries its infinite-graph degree there
            host = build_sierpinski_gasket(n + 1, 2)
            members = np.arange(gasket_vertex_count(n, 1))
            tri.append(n, 2 ** n, len(members), _eigenvalue(assemble(host, members, bc), bc))
        tables["triangles"] = tri
    tables["excluded"] = excluded
    return tables


def _scaling_fit(rows, bc: BC) -> dict:
    out = safe_fit(rows, "power")
    if out.get("estimate") is None:
        return out
    beta = -out["estimate"]
    xs = [r[0] for r in rows]
    scaled = [x ** beta * e for x, e, _ in rows]
    out["beta"] = beta
    out["beta_stderr"] = out["stderr"]
    if bc is BC.NEUMANN:
        out["c0"] = min(scaled)
    else:
        out["c0_prime"] = max(scaled)
    smallest = min(xs)
    trimmed = [r for r in rows if r[0] != smallest]
    sens = safe_fit(trimmed, "power")
    out["sensitivity_drop_smallest"] = None if sens.get("estimate") is None else -sens["estimate"]
    return out


def summarize_scaling(spec: EnsembleSpec, tables: dict[str, Table]) -> dict:
    bc = _bc(spec)
    fits = {}
    if "balls" in tables and tables["balls"].rows:
        rows = [(r["radius"], r["eigenvalue"], 1) for r in tables["balls"].records()]
        fits["balls"] = _scaling_fit(rows, bc)
    if "triangles" in tables:
        recs = tables["triangles"].records()
        fits["triangles"] = _scaling_fit([(r["side"], r["eigenvalue"], 1) for r in recs], bc)
        vol = safe_fit([(r["size"], r["eigenvalue"], 1) for r in recs], "power")
        # exponent of the eigenvalue against volume rather than radius
        fits["triangles_volume"] = vol
    summary = {"bc": bc.value, "fits": fits, "checks": {},
               "excluded_rows": len(tables["excluded"].rows)}
    for key in ("triangles", "balls"):
        if key in fits and fits[key].get("beta") is not None:
            summary["beta_hat"] = fits[key]["beta"]
            summary["beta_source"] = key
            break
    return summary
