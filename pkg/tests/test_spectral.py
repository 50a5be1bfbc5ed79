from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from andersonlab.graphs import ball, build_path_or_lattice, build_sierpinski_gasket
from andersonlab.operators import BC, PotentialDistribution, assemble, sample_potential
from andersonlab.spectral import (ResonanceError, correlator, count_below,
                                  count_below_tridiagonal, eig_smallest,
                                  fractional_moment_sample, green, resolvent)


def path_operator(n, bc, potential=None):
    g = build_path_or_lattice(1, n + 2)
    return assemble(g, range(1, n + 1), bc, potential)


@pytest.mark.parametrize("n", [3, 10, 50])
def test_path_spectra_closed_forms(n):
    k = np.arange(n)
    dirichlet = np.sort(2 - 2 * np.cos((k + 1) * np.pi / (n + 1)))
    neumann = np.sort(2 - 2 * np.cos(k * np.pi / n))
    wd = eig_smallest(path_operator(n, BC.DIRICHLET), k=n).eigenvalues
    wn = eig_smallest(path_operator(n, BC.NEUMANN), k=n).eigenvalues
    assert np.allclose(wd, dirichlet, atol=1e-8)
    assert np.allclose(wn, neumann, atol=1e-8)
    assert abs(wn[0]) < 1e-10


def test_iterative_path_matches_dense():
    g = build_sierpinski_gasket(6)
    H = assemble(g, ball(g, 0, 20), BC.NEUMANN,
                 sample_potential(PotentialDistribution.uniform(), range(g.n), (0, 1)))
    a = eig_smallest(H, k=3, dense_threshold=10 ** 6)
    b = eig_smallest(H, k=3, dense_threshold=10)
    assert (a.method, b.method) == ("dense", "iterative")
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)


def test_edge_counts():
    g = build_path_or_lattice(1, 2)
    H = assemble(g, [0, 1], BC.NEUMANN)
    assert count_below(H, 1.0) == 1
    assert count_below(H, -0.5) == 0
    assert count_below(H, H.norm_bound()) == 2
    assert count_below(H, math.inf) == 2


@pytest.mark.parametrize("method", ["auto", "sparse", "dense"])
def test_count_below_matches_eigvalsh(method):
    rng = np.random.default_rng(3)
    A = sp.random(50, 50, density=0.1, random_state=4)
    M = ((A + A.T) + sp.diags(rng.uniform(-2, 2, 50))).tocsr()
    w = np.linalg.eigvalsh(M.toarray())
    for E in rng.uniform(w[0] - 1, w[-1] + 1, 20):
        assert count_below(M, E, method=method) == int(np.sum(w <= E))


def test_count_below_on_a_large_gasket_ball():
    g = build_sierpinski_gasket(6)
    H = assemble(g, ball(g, 0, 24), BC.DIRICHLET,
                 sample_potential(PotentialDistribution.uniform(), range(g.n), (2, 2)))
    w = np.linalg.eigvalsh(H.dense())
    for E in (0.05, 0.5, 2.0, 5.0):
        assert count_below(H, E) == int(np.sum(w <= E))


def test_count_below_rejects_unknown_method():
    with pytest.raises(ValueError):
        count_below(np.eye(2), 0.5, method="qr")


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 10 ** 6))
def test_sturm_batch_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    diag = rng.uniform(0, 4, (3, n))
    E = rng.uniform(-1, 5, 7)
    counts = count_below_tridiagonal(diag, E)
    for b in range(3):
        T = np.diag(diag[b]) - np.eye(n, k=1) - np.eye(n, k=-1)
        w = np.linalg.eigvalsh(T)
        assert counts[b].tolist() == [int(np.sum(w <= e)) for e in E]


def test_single_vertex_green():
    for v, z in [(0.3, -1.0), (2.0, 1j), (0.0, 0.5 + 0.1j)]:
        H = sp.csr_matrix([[v]])
        assert np.isclose(green(H, 0, 0, z).value, 1 / (v - z), rtol=1e-14)


def test_edge_green_matches_2x2_inverse():
    H = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    z = 1j
    # (H - z)^{-1} for [[a, b], [b, a]] has off-diagonal -b / (a^2 - b^2)
    a, b = 1 - z, -1.0
    expected = -b / (a * a - b * b)
    assert np.isclose(green(H, 0, 1, z).value, expected, rtol=1e-14)
    assert np.isclose(fractional_moment_sample(H, 0, 1, z, 0.5), abs(expected) ** 0.5)
    # small s pushes |G|^s towards 1
    assert abs(fractional_moment_sample(H, 0, 1, z, 1e-9) - 1) < 1e-8


def test_green_symmetries():
    g = build_sierpinski_gasket(3)
    H = assemble(g, ball(g, 5, 3), BC.DIRICHLET,
                 sample_potential(PotentialDistribution.uniform(), range(g.n), (0, 0)))
    z = 0.4 + 0.2j
    G = resolvent(H, z).dense()
    Gc = resolvent(H, np.conj(z)).dense()
    assert np.allclose(G, G.T, atol=1e-12)
    assert np.allclose(Gc, np.conj(G), atol=1e-12)
    ref = np.linalg.inv(H.dense() - z * np.eye(H.dim))
    assert np.allclose(G, ref, atol=1e-12)
    x, y = int(H.members[0]), int(H.members[-1])
    assert np.isclose(green(H, x, y, z).value, ref[0, -1])
    # iterative route agrees with the direct one
    col, _ = resolvent(H, z, method="gmres").column(y)
    assert np.allclose(col, ref[:, -1], atol=1e-10)


def test_resonant_real_energy_is_rejected():
    H = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(ResonanceError):
        green(H, 0, 1, 2.0)


def test_fractional_moment_exponent_is_checked():
    with pytest.raises(ValueError):
        fractional_moment_sample(np.eye(1), 0, 0, 1j, 1.0)


def _random_instance(seed, n=30):
    g = build_sierpinski_gasket(4)
    H = assemble(g, ball(g, seed % g.n, 4), BC.DIRICHLET,
                 sample_potential(PotentialDistribution.uniform(), range(g.n), (seed, 0)))
    return H


def test_correlator_completeness_and_empty_window():
    H = _random_instance(7)
    full = correlator(H, (-math.inf, math.inf))
    for x in H.members[:5]:
        assert abs(full.q(int(x), int(x)) - 1.0) < 1e-12
    empty = correlator(H, (-10.0, -5.0))
    assert empty.empty
    assert np.all(empty.q_row(int(H.members[0])) == 0)
    # squares of a full row are bounded by the dimension
    assert np.sum(full.q_row(int(H.members[0])) ** 2) <= H.dim


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), lo=st.floats(0, 4), width=st.floats(0.1, 4))
def test_correlator_majorizes_evolution(seed, lo, width):
    H = _random_instance(seed)
    kern = correlator(H, (lo, lo + width))
    w, v = np.linalg.eigh(H.dense())
    keep = (w >= lo) & (w <= lo + width)
    P = v[:, keep] @ v[:, keep].T
    times = np.array([0.0, 0.7, 3.0, 40.0])
    rng = np.random.default_rng(seed)
    for _ in range(3):
        i, j = rng.integers(0, H.dim, 2)
        x, y = int(H.members[i]), int(H.members[j])
        amp = kern.amplitude(x, y, times)
        # dense evolution oracle
        for t, a in zip(times, amp):
            U = v @ np.diag(np.exp(-1j * t * w)) @ v.T
            assert np.isclose(a, (P @ U)[i, j], atol=1e-10)
        assert np.all(np.abs(amp) <= kern.q(x, y) + 1e-10)
