"""Random potentials and restricted Hamiltonians ``-Delta + V`` on vertex subsets.

The three boundary variants differ only on the diagonal.  For a subset ``A``
with ``deg_A(x)`` the number of neighbours inside ``A``:

============================  ========================================
``BC.NEUMANN``                ``deg_A(x) + V(x)``
``BC.DIRICHLET``              ``deg(x) + V(x)``
``BC.MODIFIED_DIRICHLET``     ``deg(x) + (deg(x) - deg_A(x)) + V(x)``
============================  ========================================

Off-diagonal entries are ``-1`` on edges with both endpoints in ``A``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graphs import Ball, Graph, MarginError, _as_vertex_set, _bfs

__all__ = [
    "BC",
    "PotentialDistribution",
    "PotentialField",
    "SubsetOperator",
    "Hamiltonian",
    "BlockDecomposition",
    "sample_potential",
    "subset_operator",
    "assemble",
    "truncate_potential",
    "block_decompose",
    "save_potential",
    "load_potential",
]


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    MODIFIED_DIRICHLET = "modified_dirichlet"


# --- single-site laws -----------------------------------------------------------

@dataclass(frozen=True)
class PotentialDistribution:
    """Single-site law supported in ``[0, support_max]`` with ``inf supp = 0``.

    ``kappa_tau`` is the Hölder constant in ``P([a, a+t]) <= kappa_tau * t**tau``
    (the maximal density for the absolutely continuous laws, ``None`` when the
    law is not Hölder continuous).  ``lower_tail = (C, kappa)`` records
    ``P([0, t]) >= C * t**kappa`` on ``[0, support_max]``, the small-value
    condition behind the IDS lower bound.
    """

    kind: str
    params: tuple[tuple[str, float], ...]
    tau: float | None
    kappa_tau: float | None
    p0: float
    support_max: float
    lower_tail: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0 <= self.p0 < 1:
            raise ValueError(f"mass at zero must satisfy 0 <= p0 < 1, got {self.p0}")
        if not self.support_max > 0:
            raise ValueError("support_max must be positive")

    support_min = 0.0

    @property
    def holder_regular(self) -> bool:
        return self.tau is not None

    @property
    def p1(self) -> float:
        return 1.0 - self.p0

    def param(self, key: str) -> float:
        return dict(self.params)[key]

    # constructors
    @classmethod
    def uniform(cls, b: float = 1.0) -> "PotentialDistribution":
        b = float(b)
        if b <= 0:
            raise ValueError("uniform width must be positive")
        return cls("uniform", (("b", b),), 1.0, 1.0 / b, 0.0, b, (1.0 / b, 1.0))

    @classmethod
    def bernoulli(cls, p0: float = 0.5, b: float = 1.0) -> "PotentialDistribution":
        if b <= 0:
            raise ValueError("Bernoulli value must be positive")
        # P([0, t]) = p0 for t < b
        return cls("bernoulli", (("p0", float(p0)), ("b", float(b))), None, None,
                   float(p0), float(b), (float(p0), 0.0))

    @classmethod
    def truncated_exp(cls, rate: float = 1.0, cap: float = 1.0) -> "PotentialDistribution":
        if rate <= 0 or cap <= 0:
            raise ValueError("rate and cap must be positive")
        peak = rate / -math.expm1(-rate * cap)
        # the density is smallest at the cap
        return cls("truncated_exp", (("rate", float(rate)), ("cap", float(cap))), 1.0, peak,
                   0.0, float(cap), (peak * math.exp(-rate * cap), 1.0))

    @classmethod
    def point_mass_mixture(cls, atoms: Sequence[float],
                           weights: Sequence[float]) -> "PotentialDistribution":
        atoms = np.asarray(atoms, float)
        weights = np.asarray(weights, float)
        if atoms.shape != weights.shape or atoms.size == 0:
            raise ValueError("atoms and weights must be equal-length and nonempty")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("weights must be a probability vector")
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        order = np.argsort(atoms)
        atoms, weights = atoms[order], weights[order]
        if atoms[0] != 0 or np.any(atoms < 0):
            raise ValueError("atoms must be nonnegative with smallest atom 0")
        return cls("point_mass_mixture",
                   (("atoms", tuple(atoms.tolist())), ("weights", tuple(weights.tolist()))),
                   None, None, float(weights[0]), float(atoms[-1]), (float(weights[0]), 0.0))

    @classmethod
    def from_config(cls, cfg: dict) -> "PotentialDistribution":
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        makers = {"uniform": cls.uniform, "bernoulli": cls.bernoulli,
                  "truncated_exp": cls.truncated_exp,
                  "point_mass_mixture": cls.point_mass_mixture}
        if kind not in makers:
            raise ValueError(f"unknown distribution kind {kind!r}")
        return makers[kind](**cfg)

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params:
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    # sampling and moments
    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms in [0, 1)."""
        if self.kind == "uniform":
            return self.support_max * u
        if self.kind == "bernoulli":
            return np.where(u < self.p0, 0.0, self.support_max)
        if self.kind == "truncated_exp":
            rate = self.param("rate")
            return -np.log1p(u * np.expm1(-rate * self.support_max)) / rate
        atoms = np.asarray(self.param("atoms"))
        cum = np.cumsum(self.param("weights"))
        cum[-1] = 1.0
        return atoms[np.searchsorted(cum, u, side="right")]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.from_uniform(rng.random(size))

    def cdf(self, t: float) -> float:
        """``P(V <= t)``."""
        if t < 0:
            return 0.0
        b = self.support_max
        if self.kind == "uniform":
            return min(t / b, 1.0)
        if self.kind == "bernoulli":
            return 1.0 if t >= b else self.p0
        if self.kind == "truncated_exp":
            rate = self.param("rate")
            return min(-math.expm1(-rate * t) / -math.expm1(-rate * b), 1.0)
        atoms = np.asarray(self.param("atoms"))
        return float(np.asarray(self.param("weights"))[atoms <= t].sum())

    def mean_truncated(self, cap: float = math.inf) -> float:
        """``E[min(V, cap)] = int_0^cap P(V > t) dt``."""
        b = self.support_max
        c = min(cap, b)
        if self.kind == "uniform":
            return c - c * c / (2 * b)
        if self.kind == "bernoulli":
            return self.p1 * c
        if self.kind == "truncated_exp":
            rate = self.param("rate")
            z = -math.expm1(-rate * b)
            # int_0^c (e^{-rate t} - e^{-rate b}) / z dt
            return (-math.expm1(-rate * c) / rate - c * math.exp(-rate * b)) / z
        atoms = np.asarray(self.param("atoms"))
        return float(np.dot(self.param("weights"), np.minimum(atoms, c)))

    @property
    def mean(self) -> float:
        return self.mean_truncated()


# --- realizations ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialField:
    """Potential values on a sorted vertex set, with the seed that produced them."""

    domain: np.ndarray
    values: np.ndarray
    seed_record: tuple[int, int] | None = None

    def __post_init__(self):
        if self.domain.shape != self.values.shape:
            raise ValueError("domain and values differ in length")
        if np.any(self.values < 0):
            raise ValueError("potential values must be nonnegative")
        if np.any(np.diff(self.domain) <= 0):
            raise ValueError("domain must be strictly increasing")
        self.domain.setflags(write=False)
        self.values.setflags(write=False)

    def on(self, vertices: np.ndarray) -> np.ndarray:
        """Values at ``vertices`` (must lie in the domain)."""
        vertices = np.asarray(vertices, dtype=np.int64)
        idx = np.searchsorted(self.domain, vertices)
        bad = (idx >= len(self.domain)) | (self.domain[np.minimum(idx, len(self.domain) - 1)]
                                           != vertices)
        if np.any(bad):
            raise ValueError(f"potential domain misses vertices {vertices[bad][:5].tolist()}")
        return self.values[idx]


def _uniform_stream(seed_record: tuple[int, int], length: int) -> np.ndarray:
    # PCG64 doubles are drawn one output each, so the stream is prefix-stable:
    # the value at vertex v depends on (master, index, v) only.
    master, index = seed_record
    return np.random.default_rng([int(master), int(index)]).random(length)


def sample_potential(dist: PotentialDistribution, domain, seed_record: tuple[int, int]
                     ) -> PotentialField:
    """Draw i.i.d. values on ``domain``, keyed by global vertex id."""
    domain = _as_vertex_set(None, domain) if not isinstance(domain, Ball) else domain.members
    if domain.size == 0:
        return PotentialField(domain, np.zeros(0), tuple(seed_record))
    u = _uniform_stream(seed_record, int(domain[-1]) + 1)[domain]
    return PotentialField(domain.copy(), dist.from_uniform(u), tuple(seed_record))


def truncate_potential(pot: PotentialField, c0: float, r: float, beta: float) -> PotentialField:
    """Pointwise ``min(V, (c0 / 3) r^{-beta})``."""
    if c0 <= 0 or r < 1 or beta < 2:
        raise ValueError("need c0 > 0, r >= 1 and beta >= 2")
    cap = (c0 / 3.0) * r ** (-beta)
    return PotentialField(pot.domain, np.minimum(pot.values, cap), pot.seed_record)


def save_potential(pot: PotentialField, path, dist: PotentialDistribution | None = None) -> None:
    lines = []
    if pot.seed_record is not None:
        lines.append(f"# seed_record master={pot.seed_record[0]} index={pot.seed_record[1]}")
    if dist is not None:
        lines.append("# distribution " + " ".join(f"{k}={v}" for k, v in dist.to_config().items()))
    lines.append("vertex,value")
    lines += [f"{v},{x!r}" for v, x in zip(pot.domain.tolist(), pot.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_potential(path) -> PotentialField:
    seed = None
    verts, vals = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# seed_record"):
            kv = dict(item.split("=") for item in line.split()[2:])
            seed = (int(kv["master"]), int(kv["index"]))
        elif line.startswith("#") or line.startswith("vertex") or not line:
            continue
        else:
            v, x = line.split(",")
            verts.append(int(v))
            vals.append(float(x))
    return PotentialField(np.array(verts, dtype=np.int64), np.array(vals), seed)


# --- operators --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Hamiltonian:
    members: np.ndarray
    bc: BC
    matrix: sp.csr_matrix
    potential: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.members)

    @property
    def index_map(self) -> dict[int, int]:
        return {int(v): i for i, v in enumerate(self.members)}

    def local(self, v: int) -> int:
        i = int(np.searchsorted(self.members, v))
        if i >= self.dim or self.members[i] != v:
            raise KeyError(f"vertex {v} not in subset")
        return i

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def norm_bound(self) -> float:
        """Gershgorin (max absolute row sum) bound on ``||H||``."""
        return float(abs(self.matrix).sum(axis=1).max()) if self.dim else 0.0

    def lower_bound(self) -> float:
        """Gershgorin lower bound on the spectrum."""
        if not self.dim:
            return 0.0
        d = self.matrix.diagonal()
        off = np.asarray(abs(self.matrix).sum(axis=1)).ravel() - np.abs(d)
        return float((d - off).min())


@dataclass(frozen=True, eq=False)
class SubsetOperator:
    """Free part of a restricted operator, reused across potential realizations."""

    members: np.ndarray
    bc: BC
    free: sp.csr_matrix
    inner_degree: np.ndarray
    full_degree: np.ndarray

    def with_potential(self, values: np.ndarray | None) -> Hamiltonian:
        if values is None:
            return Hamiltonian(self.members, self.bc, self.free, None)
        values = np.asarray(values, float)
        if values.shape != self.members.shape:
            raise ValueError("potential length does not match the subset")
        m = (self.free + sp.diags(values, format="csr")).tocsr()
        return Hamiltonian(self.members, self.bc, m, values)


def _adjacency(g: Graph) -> sp.csr_matrix:
    cached = g.__dict__.get("_adj_cache")
    if cached is None:
        cached = g.adjacency()
        object.__setattr__(g, "_adj_cache", cached)
    return cached


def subset_operator(g: Graph, subset, bc: BC | str) -> SubsetOperator:
    bc = BC(bc)
    members = _as_vertex_set(g, subset)
    if members.size == 0:
        raise ValueError("empty subset")
    A = _adjacency(g)[members][:, members].tocsr()
    inner = np.asarray(A.sum(axis=1)).ravel().astype(np.int64)
    full = g.degrees[members]
    if bc is BC.NEUMANN:
        diag = inner
    elif bc is BC.DIRICHLET:
        diag = full
    else:
        diag = full + (full - inner)
    free = (sp.diags(diag.astype(float), format="csr") - A).tocsr()
    free.sort_indices()
    return SubsetOperator(members, bc, free, inner, full)


def _potential_values(pot, members: np.ndarray) -> np.ndarray | None:
    if pot is None:
        return None
    if isinstance(pot, PotentialField):
        return pot.on(members)
    arr = np.asarray(pot, float)
    if arr.ndim != 1 or (members.size and arr.size <= members[-1]):
        raise ValueError("global potential array is shorter than the largest vertex id")
    return arr[members]


def assemble(g: Graph, subset, bc: BC | str, potential=None) -> Hamiltonian:
    """Restricted operator on ``subset``.

    ``potential`` may be a :class:`PotentialField` whose domain covers the
    subset, or an array indexed by global vertex id.
    """
    op = subset_operator(g, subset, bc)
    return op.with_potential(_potential_values(potential, op.members))


# --- block decomposition ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """``H_W = H^B (+) H^{W \\ B} + T`` in the window's local indexing."""

    window: np.ndarray
    inner: np.ndarray          # local indices of B inside the window
    outer: np.ndarray          # local indices of W \ B
    H_window: sp.csr_matrix
    H_inner: sp.csr_matrix
    H_outer: sp.csr_matrix
    T: sp.csr_matrix
    margin: int

    def direct_sum(self) -> sp.csr_matrix:
        n = len(self.window)
        P_in = sp.csr_matrix((np.ones(len(self.inner)), (self.inner, np.arange(len(self.inner)))),
                             shape=(n, len(self.inner)))
        P_out = sp.csr_matrix((np.ones(len(self.outer)), (self.outer, np.arange(len(self.outer)))),
                              shape=(n, len(self.outer)))
        return (P_in @ self.H_inner @ P_in.T + P_out @ self.H_outer @ P_out.T).tocsr()

    def residual(self) -> sp.csr_matrix:
        R = (self.H_window - self.direct_sum() - self.T).tocsr()
        R.eliminate_zeros()
        return R


def block_decompose(g: Graph, B, potential, window, margin: int = 1) -> BlockDecomposition:
    """Split the Dirichlet restriction to ``window`` along the boundary of ``B``.

    Every vertex within ``margin`` of ``B`` must lie in the window.
    """
    if margin < 1:
        raise ValueError("margin must be at least 1")
    Bset = _as_vertex_set(g, B)
    W = _as_vertex_set(g, window)
    in_W = np.zeros(g.n, dtype=bool)
    in_W[W] = True
    if not in_W[Bset].all():
        raise MarginError("ball is not contained in the window")
    reach: set[int] = set()
    for b in Bset.tolist():
        if b not in reach:
            reach.update(_bfs(g, b, margin))
    reach_arr = np.fromiter(reach, dtype=np.int64)
    if not in_W[reach_arr].all():
        raise MarginError(f"ball comes within {margin} of the window boundary")
    HW = assemble(g, W, BC.DIRICHLET, potential)
    in_B = np.isin(W, Bset)
    inner = np.flatnonzero(in_B)
    outer = np.flatnonzero(~in_B)
    M = HW.matrix
    H_in = M[inner][:, inner].tocsr()
    H_out = M[outer][:, outer].tocsr()
    coo = M.tocoo()
    cut = in_B[coo.row] != in_B[coo.col]
    T = sp.csr_matrix((coo.data[cut], (coo.row[cut], coo.col[cut])), shape=M.shape)
    return BlockDecomposition(W, inner, outer, M, H_in, H_out, T, margin)
