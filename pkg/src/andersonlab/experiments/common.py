"""Helpers shared by the experiment modules."""
from __future__ import annotations

import math

import numpy as np

from ..fitting import FitError, fit_exponent
from ..graphs import Graph, admissible_centers, distance_to_open_boundary
from .ensemble import ConfigError, EnsembleSpec, aux_rng

__all__ = ["default_center", "pick_centers", "check_margin", "safe_fit", "GASKET_BETA",
           "family_constants"]

# walk dimension of the gasket; the Neumann gap on V_n scales as 5^{-n} at radius 2^n
GASKET_BETA = math.log(5) / math.log(2)


def family_constants(spec: EnsembleSpec) -> tuple[float, float]:
    """(alpha, beta) used for scaling predictions unless overridden in params."""
    fam = spec.graph.family
    if fam == "lattice":
        alpha, beta = float(spec.graph.d), 2.0
    elif fam == "gasket":
        alpha, beta = math.log(3) / math.log(2), GASKET_BETA
    else:
        d = spec.graph.d
        alpha, beta = math.log(d + 1) / math.log(2), math.log(d + 3) / math.log(2)
    return float(spec.param("alpha", alpha)), float(spec.param("beta", beta))


def default_center(g: Graph) -> int:
    """Origin of the gasket, middle of a lattice box, vertex 0 otherwise."""
    if g.family.kind == "PathOrLattice":
        d, extent = g.family.get("d"), g.family.get("extent")
        mid = extent // 2
        return int(np.ravel_multi_index((mid,) * d, (extent,) * d))
    return 0


def check_margin(g: Graph, center: int, radius: float, margin: float | None) -> float:
    """Distance from ``B(center, radius)`` to the open boundary; raise if below margin."""
    margin = radius if margin is None else margin
    clearance = distance_to_open_boundary(g, center) - math.floor(radius)
    if clearance < margin:
        raise ConfigError(f"ball B({center}, {radius}) lies within {clearance} of the open "
                          f"boundary; margin {margin} required (use a higher level)")
    return clearance


def pick_centers(spec: EnsembleSpec, g: Graph, radius: float, tag: str) -> list[int]:
    """Centers from ``params["centers"]``: an explicit list, a count, or the default center."""
    chosen = spec.param("centers")
    margin = spec.param("margin")
    if chosen is None or chosen == "default":
        centers = [default_center(g)]
    elif isinstance(chosen, int):
        seed = int(aux_rng(spec, tag).integers(2 ** 31))
        m = radius if margin is None else margin
        centers = admissible_centers(g, radius, chosen, seed=seed, margin=m + math.floor(radius))
        centers = [int(c) for c in centers]
    else:
        centers = [int(c) for c in chosen]
    for c in centers:
        if not 0 <= c < g.n:
            raise ConfigError(f"center {c} outside graph")
        check_margin(g, c, radius, margin)
    return centers


def safe_fit(rows, model: str) -> dict:
    """Fit as a dict, or an explanatory record when too few rows are usable."""
    try:
        return fit_exponent(rows, model).to_dict()
    except FitError as exc:
        return {"model": model, "estimate": None, "error": str(exc),
                "rows": [list(r) for r in rows]}
