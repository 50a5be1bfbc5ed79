"""Ensemble specifications, seed derivation, ordered parallel evaluation and statistics."""
from __future__ import annotations

import hashlib
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import binomtest

from ..graphs import (Graph, build_path_or_lattice, build_sierpinski_gasket,
                      build_sierpinski_simplex)
from ..operators import PotentialDistribution

__all__ = [
    "ConfigError",
    "GraphSpec",
    "EnsembleSpec",
    "SEED_RULE",
    "realization_seed",
    "aux_rng",
    "canonical_json",
    "config_hash",
    "ordered_map",
    "wilson",
    "bootstrap_quantile",
]

SEED_RULE = ("realization i draws its potential from numpy default_rng([master_seed, i]); "
             "vertex v takes the v-th uniform of that stream (counter-based, "
             "independent of enumeration order); auxiliary sampling (centers, pairs, "
             "partitions) uses default_rng([master_seed, 2**32 - 1, crc32(tag)])")


class ConfigError(ValueError):
    """A configuration violates an experiment precondition."""


@dataclass(frozen=True)
class GraphSpec:
    family: str                 # "lattice" | "gasket" | "simplex"
    level: int | None = None
    d: int | None = None
    extent: int | None = None
    sided: int = 2

    @classmethod
    def from_dict(cls, cfg: dict) -> "GraphSpec":
        cfg = dict(cfg)
        unknown = set(cfg) - {"family", "level", "d", "extent", "sided"}
        if unknown:
            raise ConfigError(f"unknown graph keys {sorted(unknown)}")
        if cfg.get("family") not in ("lattice", "gasket", "simplex"):
            raise ConfigError(f"graph family must be lattice, gasket or simplex, got "
                              f"{cfg.get('family')!r}")
        spec = cls(**cfg)
        need = {"lattice": ("d", "extent"), "gasket": ("level",), "simplex": ("d", "level")}
        missing = [k for k in need[spec.family] if getattr(spec, k) is None]
        if missing:
            raise ConfigError(f"{spec.family} graph needs {missing}")
        return spec

    def to_dict(self) -> dict:
        out = {"family": self.family}
        for k in ("level", "d", "extent"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        if self.family == "gasket":
            out["sided"] = self.sided
        return out

    def build(self) -> Graph:
        return _build_cached(self)

    @property
    def volume_exponent(self) -> float:
        """Exact volume dimension of the family."""
        if self.family == "lattice":
            return float(self.d)
        if self.family == "gasket":
            return math.log(3) / math.log(2)
        return math.log(self.d + 1) / math.log(2)


@lru_cache(maxsize=8)
def _build_cached(spec: GraphSpec) -> Graph:
    if spec.family == "lattice":
        return build_path_or_lattice(spec.d, spec.extent)
    if spec.family == "gasket":
        return build_sierpinski_gasket(spec.level, spec.sided)
    return build_sierpinski_simplex(spec.d, spec.level)


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything that determines an experiment's output."""

    experiment: str
    graph: GraphSpec
    distribution: dict
    realizations: int
    master_seed: int
    grids: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        for k, v in self.grids.items():
            if not isinstance(v, (list, tuple)) or len(v) == 0:
                raise ConfigError(f"grid {k!r} must be a nonempty list")

    @classmethod
    def from_dict(cls, cfg: dict) -> "EnsembleSpec":
        known = {"experiment", "graph", "distribution", "realizations", "master_seed",
                 "grids", "params"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        missing = [k for k in ("experiment", "graph", "distribution", "realizations",
                               "master_seed") if k not in cfg]
        if missing:
            raise ConfigError(f"config misses {missing}")
        if not isinstance(cfg["realizations"], int) or isinstance(cfg["realizations"], bool):
            raise ConfigError("realizations must be an integer")
        if not isinstance(cfg["master_seed"], int) or cfg["master_seed"] < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        try:
            PotentialDistribution.from_config(cfg["distribution"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad distribution: {exc}") from exc
        return cls(str(cfg["experiment"]), GraphSpec.from_dict(cfg["graph"]),
                   dict(cfg["distribution"]), cfg["realizations"], cfg["master_seed"],
                   dict(cfg.get("grids", {})), dict(cfg.get("params", {})))

    @property
    def dist(self) -> PotentialDistribution:
        return PotentialDistribution.from_config(self.distribution)

    def grid(self, name: str) -> list:
        return list(self.grids[name])

    def param(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "graph": self.graph.to_dict(),
            "distribution": dict(self.distribution),
            "realizations": self.realizations,
            "master_seed": self.master_seed,
            "grids": {k: list(v) for k, v in self.grids.items()},
            "params": dict(self.params),
        }

    def replace(self, **changes) -> "EnsembleSpec":
        d = {**self.__dict__, **changes}
        return EnsembleSpec(**d)


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, integral floats written as ints."""
    def norm(x):
        if isinstance(x, dict):
            return {str(k): norm(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [norm(v) for v in x]
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, (float, np.floating)):
            x = float(x)
            return int(x) if x.is_integer() and abs(x) < 2 ** 53 else x
        return x
    return json.dumps(norm(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def realization_seed(spec: EnsembleSpec, index: int) -> tuple[int, int]:
    return (int(spec.master_seed), int(index))


def aux_rng(spec: EnsembleSpec, tag: str) -> np.random.Generator:
    return np.random.default_rng([int(spec.master_seed), 2 ** 32 - 1, zlib.crc32(tag.encode())])


# --- ordered parallel map -------------------------------------------------------------

_CONTEXT: dict = {}


def _init_worker(context: dict) -> None:
    _CONTEXT.clear()
    _CONTEXT.update(context)


def _call(args):
    fn, item = args
    return fn(_CONTEXT, item)


def ordered_map(fn: Callable[[dict, Any], Any], items: Sequence, context: dict,
                parallel: int = 1, chunksize: int | None = None) -> list:
    """``[fn(context, item) for item in items]``, optionally over worker processes.

    Results come back in ``items`` order whatever the completion order, so the
    parallel degree cannot change the output.  ``fn`` must be a module-level
    function; ``context`` is shipped once per worker.
    """
    items = list(items)
    if parallel <= 1 or len(items) <= 1:
        return [fn(context, item) for item in items]
    workers = min(parallel, len(items))
    chunksize = chunksize or max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(context,)) as pool:
        return list(pool.map(_call, [(fn, it) for it in items], chunksize=chunksize))


# --- statistics ------------------------------------------------------------------------------

def wilson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def bootstrap_quantile(samples: np.ndarray, statistic: Callable[[np.ndarray], float],
                       q: float, reps: int = 400, seed: int = 0) -> float:
    """Quantile of ``statistic`` over resamples of the rows of ``samples``.

    Resamples whose statistic is not finite are dropped.
    """
    rng = np.random.default_rng(seed)
    n = len(samples)
    vals = []
    for _ in range(reps):
        v = statistic(samples[rng.integers(0, n, n)])
        if np.isfinite(v):
            vals.append(v)
    return float(np.quantile(vals, q)) if vals else math.nan
