"""Eigenvalues, inertia counts, Green's functions and eigenfunction correlators.

Every function accepts a :class:`~andersonlab.operators.Hamiltonian` (vertex ids
are then global graph ids) or a bare symmetric matrix (ids are row indices).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import Hamiltonian

__all__ = [
    "DENSE_THRESHOLD",
    "PIVOT_TOL",
    "ConvergenceError",
    "FactorizationError",
    "ResonanceError",
    "SpectralResult",
    "GreenSample",
    "CorrelatorKernel",
    "Resolvent",
    "eig_smallest",
    "count_below",
    "count_below_tridiagonal",
    "resolvent",
    "green",
    "correlator",
    "fractional_moment_sample",
]

DENSE_THRESHOLD = 2000
PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-8


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


class FactorizationError(RuntimeError):
    """Singular pivot persisted after the energy perturbation."""


class ResonanceError(ValueError):
    """Real energy too close to the spectrum for a Green's function."""


def _unpack(H) -> tuple[sp.csr_matrix, np.ndarray]:
    if isinstance(H, Hamiltonian):
        return H.matrix, H.members
    M = sp.csr_matrix(H)
    return M, np.arange(M.shape[0])


def _local(members: np.ndarray, v: int) -> int:
    i = int(np.searchsorted(members, v))
    if i >= len(members) or members[i] != v:
        raise KeyError(f"vertex {v} not in operator domain")
    return i


def _norm_bound(M: sp.csr_matrix) -> float:
    return float(abs(M).sum(axis=1).max()) if M.shape[0] else 0.0


# --- eigenvalues -------------------------------------------------------------------

@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    method: str
    residual_norms: np.ndarray

    @property
    def E0(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def E1(self) -> float:
        return float(self.eigenvalues[1])


def eig_smallest(H, k: int = 1, vectors: bool = False, dense_threshold: int = DENSE_THRESHOLD,
                 tol: float = 1e-10, seed: int = 0) -> SpectralResult:
    """The ``k`` smallest eigenpairs.

    Dense ``eigh`` up to ``dense_threshold``; above it, shift-invert Lanczos
    (``eigsh``) with the shift just below the Gershgorin lower bound, so the
    shifted matrix is positive definite.  Residuals ``||Hv - lambda v||`` are
    checked against ``1e-8 ||H||`` either way.
    """
    M, _ = _unpack(H)
    n = M.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= dim={n}")
    scale = max(_norm_bound(M), 1.0)
    if n <= dense_threshold:
        w, v = sla.eigh(M.toarray(), subset_by_index=[0, k - 1])
        method = "dense"
    else:
        d = M.diagonal()
        off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(d)
        sigma = float((d - off).min()) - 1e-3 * scale
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            w, v = spla.eigsh(M.tocsc(), k=k, sigma=sigma, which="LM", v0=v0, tol=tol,
                              maxiter=max(1000, 20 * n))
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("eigsh did not converge", {
                "dim": n, "k": k, "sigma": sigma, "tol": tol,
                "converged": len(exc.eigenvalues)}) from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        method = "iterative"
    res = np.linalg.norm(M @ v - v * w, axis=0)
    if np.any(res > RESIDUAL_TOL * scale):
        raise ConvergenceError("eigenpair residual above tolerance", {
            "dim": n, "k": k, "method": method, "max_residual": float(res.max()),
            "bound": RESIDUAL_TOL * scale})
    return SpectralResult(np.asarray(w, float), v if vectors else None, method, res)


# --- inertia counting ------------------------------------------------------------------

def count_below_tridiagonal(diag: np.ndarray, energies: np.ndarray,
                            off: np.ndarray | float = -1.0) -> np.ndarray:
    """Sturm counts ``#{lambda <= E}`` for a batch of symmetric tridiagonal matrices.

    ``diag`` has shape ``(..., n)``; ``off`` is the off-diagonal (scalar or
    shape ``(..., n - 1)``).  Returns counts of shape ``diag.shape[:-1] + (len(E),)``.
    The pivot recurrence ``d_i = a_i - E - b_{i-1}^2 / d_{i-1}`` is the diagonal
    of the LDL^T factorization; its negatives count eigenvalues below ``E``.
    """
    diag = np.asarray(diag, float)
    E = np.atleast_1d(np.asarray(energies, float))
    n = diag.shape[-1]
    b2 = np.broadcast_to(np.asarray(off, float) ** 2, diag.shape[:-1] + (max(n - 1, 0),))

    def _sweep(shift):
        a = diag[..., None]
        count = np.zeros(diag.shape[:-1] + (len(E),), dtype=np.int64)
        small = np.zeros(count.shape, dtype=bool)
        d = a[..., 0, :] - shift
        for i in range(n):
            if i:
                d = a[..., i, :] - shift - b2[..., i - 1, None] / d
            small |= np.abs(d) < PIVOT_TOL
            count += d < 0
        return count, small

    # an exactly zero pivot gives inf/-inf downstream; such rows are redone shifted
    with np.errstate(divide="ignore", invalid="ignore"):
        count, small = _sweep(E)
        if small.any():
            count2, small2 = _sweep(E + PIVOT_TOL)
    if small.any():
        if (small & small2).any():
            raise FactorizationError("singular pivot in Sturm recurrence after perturbation")
        count = np.where(small, count2, count)
    return count


def _is_tridiagonal(M: sp.csr_matrix) -> bool:
    coo = M.tocoo()
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


def _inertia_dense(A: np.ndarray) -> tuple[int, float]:
    """Negative count and smallest |pivot block eigenvalue| from Bunch-Kaufman."""
    _, D, _ = sla.ldl(A, lower=True, hermitian=True)
    neg, smallest = 0, math.inf
    i, n = 0, A.shape[0]
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(D[i:i + 2, i:i + 2])
            i += 2
        else:
            ev = np.array([D[i, i]])
            i += 1
        neg += int((ev < 0).sum())
        smallest = min(smallest, float(np.abs(ev).min()))
    return neg, smallest


def _inertia_sparse(A: sp.csc_matrix) -> tuple[int, float] | None:
    """Inertia from a symmetric-mode SuperLU factorization, or ``None`` if it pivoted."""
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError:
        # exactly singular at the chosen ordering
        return 0, 0.0
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    u = lu.U.diagonal()
    return int((u < 0).sum()), float(np.abs(u).min())


def _inertia(M: sp.csr_matrix, E: float, dense_limit: int, method: str) -> tuple[int, float]:
    n = M.shape[0]
    A = (M - E * sp.identity(n, format="csr")).tocsc()
    if method == "sparse" or (method == "auto" and n > 64):
        out = _inertia_sparse(A)
        if out is not None:
            return out
    if n > dense_limit:
        raise FactorizationError(f"symmetric sparse factorization pivoted at dim {n}")
    return _inertia_dense(A.toarray())


def count_below(H, E: float, dense_limit: int = 8000, method: str = "auto") -> int:
    """``#{lambda <= E}`` by Sylvester's law of inertia for ``H - E``.

    ``method`` is ``"auto"`` (Sturm sequence for tridiagonal matrices, sparse
    LDL^T above 64 rows, dense Bunch-Kaufman otherwise), ``"sparse"`` or
    ``"dense"``.  A sparse factorization that needs off-diagonal pivoting falls
    back to the dense one when ``dim <= dense_limit``.
    """
    if method not in ("auto", "sparse", "dense"):
        raise ValueError(f"unknown method {method!r}")
    M, _ = _unpack(H)
    n = M.shape[0]
    if n == 0:
        return 0
    if E == math.inf:
        return n
    if E == -math.inf:
        return 0
    if method == "auto" and _is_tridiagonal(M):
        a = M.diagonal()
        b = M.diagonal(1) if n > 1 else np.zeros(0)
        return int(count_below_tridiagonal(a, [E], b)[0])
    scale = max(_norm_bound(M), 1.0)
    neg, smallest = _inertia(M, E, dense_limit, method)
    if smallest < PIVOT_TOL * scale:
        neg, smallest = _inertia(M, E + PIVOT_TOL, dense_limit, method)
        if smallest < PIVOT_TOL * scale:
            raise FactorizationError(f"singular pivot at E={E!r} after perturbation")
    return neg


# --- Green's functions -----------------------------------------------------------------

@dataclass(frozen=True)
class GreenSample:
    x: int
    y: int
    z: complex
    value: complex
    solve_residual: float


class Resolvent:
    """Factorized ``(H - z)^{-1}``; columns are solved on demand."""

    def __init__(self, H, z: complex, method: str = "direct"):
        M, members = _unpack(H)
        self.members = members
        self.z = complex(z)
        self.matrix = M
        n = M.shape[0]
        if self.z.imag == 0:
            E = self.z.real
            if count_below(H, E - PIVOT_TOL) != count_below(H, E + PIVOT_TOL):
                raise ResonanceError(f"E={E!r} lies within {PIVOT_TOL} of the spectrum")
        self.shifted = (M.astype(complex) - self.z * sp.identity(n, format="csr")).tocsc()
        self.method = method
        self._lu = spla.splu(self.shifted) if method == "direct" else None

    def column(self, y: int) -> tuple[np.ndarray, float]:
        """``G(., y; z)`` over the domain and the solve residual."""
        j = _local(self.members, y)
        rhs = np.zeros(self.shifted.shape[0], dtype=complex)
        rhs[j] = 1.0
        if self._lu is not None:
            u = self._lu.solve(rhs)
        else:
            u, info = spla.gmres(self.shifted, rhs, rtol=1e-13, atol=0.0, restart=200,
                                 maxiter=2000)
            if info != 0:
                self._lu = spla.splu(self.shifted)
                u = self._lu.solve(rhs)
        residual = float(np.linalg.norm(self.shifted @ u - rhs))
        return u, residual

    def __call__(self, x: int, y: int) -> GreenSample:
        col, res = self.column(y)
        return GreenSample(x, y, self.z, complex(col[_local(self.members, x)]), res)

    def dense(self) -> np.ndarray:
        """Full inverse (small windows only)."""
        return self._lu.solve(np.eye(self.shifted.shape[0], dtype=complex)) \
            if self._lu is not None else np.linalg.inv(self.shifted.toarray())


def resolvent(H, z: complex, method: str = "direct") -> Resolvent:
    return Resolvent(H, z, method)


def green(H, x: int, y: int, z: complex) -> GreenSample:
    """``G(x, y; z) = <x|(H - z)^{-1}|y>``."""
    return Resolvent(H, z)(x, y)


def fractional_moment_sample(H, x: int, y: int, z: complex, s: float) -> float:
    if not 0 < s < 1:
        raise ValueError("fractional moment exponent must lie in (0, 1)")
    return abs(green(H, x, y, z).value) ** s


# --- eigenfunction correlator -----------------------------------------------------------

@dataclass
class CorrelatorKernel:
    window: tuple[float, float]
    members: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray   # columns for eigenvalues inside the window

    @property
    def empty(self) -> bool:
        return self.eigenvalues.size == 0

    def q_row(self, x: int) -> np.ndarray:
        """``Q_I(x, .)`` over the whole domain."""
        i = _local(self.members, x)
        return np.abs(self.eigenvectors) @ np.abs(self.eigenvectors[i])

    def q(self, x: int, y: int) -> float:
        i, j = _local(self.members, x), _local(self.members, y)
        return float(np.abs(self.eigenvectors[i]) @ np.abs(self.eigenvectors[j]))

    def amplitude(self, x: int, y: int, times) -> np.ndarray:
        """``<delta_x, P_I exp(-itH) delta_y>`` on a time grid."""
        i, j = _local(self.members, x), _local(self.members, y)
        t = np.asarray(times, float)
        w = self.eigenvectors[i] * self.eigenvectors[j]
        return np.exp(-1j * np.outer(t, self.eigenvalues)) @ w


def correlator(H, window: tuple[float, float], dense_threshold: int = DENSE_THRESHOLD
               ) -> CorrelatorKernel:
    M, members = _unpack(H)
    if M.shape[0] > dense_threshold:
        raise ValueError(f"dim {M.shape[0]} exceeds dense threshold {dense_threshold}; "
                         "use a smaller window")
    a, b = window
    w, v = np.linalg.eigh(M.toarray())
    keep = (w >= a) & (w <= b)
    return CorrelatorKernel((float(a), float(b)), members, w[keep], v[:, keep])
