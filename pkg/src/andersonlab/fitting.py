"""Least-squares exponent fits in log coordinates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = ["FitError", "FitResult", "MODELS", "fit_exponent", "linear_fit"]


class FitError(ValueError):
    """Too few usable rows for a regression."""


# model -> (x transform, y transform, sign applied to the slope)
MODELS = {
    # log y = a + p log x  ->  estimate p
    "power": (np.log, np.log, 1.0),
    # log y = a - mu x  ->  estimate mu
    "exponential": (lambda x: x, np.log, -1.0),
    # log(-log p) = a + eta log x  ->  estimate eta
    "stretched": (np.log, lambda y: np.log(-np.log(y)), 1.0),
    "linear": (lambda x: x, lambda y: y, 1.0),
}


@dataclass
class FitResult:
    model: str
    estimate: float
    stderr: float
    intercept: float
    intercept_stderr: float
    r2: float
    rows: list[tuple[float, float, int]]
    n_used: int
    n_excluded: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def prefactor(self) -> float:
        """``exp(intercept)`` for the log-y models."""
        return math.exp(self.intercept) if self.model != "linear" else self.intercept

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.estimate - z * self.stderr, self.estimate + z * self.stderr

    def to_dict(self) -> dict:
        return {
            "model": self.model, "estimate": self.estimate, "stderr": self.stderr,
            "intercept": self.intercept, "intercept_stderr": self.intercept_stderr,
            "r2": self.r2, "n_used": self.n_used, "n_excluded": self.n_excluded,
            "rows": [list(r) for r in self.rows], "extra": self.extra,
        }


def linear_fit(x: np.ndarray, y: np.ndarray, w: np.ndarray | None = None):
    """Ordinary (or weighted) least squares ``y = a + b x``.

    Returns ``(b, se_b, a, se_a, r2)``.  A weight vector acts as row
    multiplicities.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones_like(x) if w is None else np.asarray(w, float)
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise FitError("x values are all equal")
    b = (w * (x - xm) * (y - ym)).sum() / sxx
    a = ym - b * xm
    resid = y - (a + b * x)
    sse = (w * resid ** 2).sum()
    syy = (w * (y - ym) ** 2).sum()
    r2 = 1.0 if syy == 0 else min(1.0, max(0.0, 1.0 - sse / syy))
    dof = W - 2
    s2 = sse / dof if dof > 0 else 0.0
    se_b = math.sqrt(s2 / sxx)
    se_a = math.sqrt(s2 * (1.0 / W + xm ** 2 / sxx))
    return float(b), se_b, float(a), se_a, float(r2)


def fit_exponent(rows: Iterable[Sequence[float]], model: str = "power",
                 weighted: bool = False) -> FitResult:
    """Fit ``rows`` of ``(x, y)`` or ``(x, y, count)`` under ``model``.

    Rows whose transformed coordinates are not finite (nonpositive values under
    a log, ``p >= 1`` under the stretched model) are excluded and counted.
    ``count`` is kept with the raw data; it becomes a regression weight only
    when ``weighted`` is set.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(MODELS)}")
    norm = []
    for r in rows:
        r = tuple(r)
        norm.append((float(r[0]), float(r[1]), int(r[2]) if len(r) > 2 else 1))
    if not norm:
        raise FitError("no rows")
    fx, fy, sign = MODELS[model]
    arr = np.array([(x, y) for x, y, _ in norm])
    with np.errstate(divide="ignore", invalid="ignore"):
        X = fx(arr[:, 0])
        Y = fy(arr[:, 1])
    ok = np.isfinite(X) & np.isfinite(Y)
    n_used = int(ok.sum())
    if n_used < 3:
        raise FitError(f"only {n_used} usable rows of {len(norm)}")
    if len(np.unique(X[ok])) < 2:
        raise FitError("x values are all equal")
    w = np.array([c for *_, c in norm], float)[ok] if weighted else None
    b, se_b, a, se_a, r2 = linear_fit(X[ok], Y[ok], w)
    return FitResult(model, sign * b, se_b, a, se_a, r2, norm, n_used,
                     len(norm) - n_used)
