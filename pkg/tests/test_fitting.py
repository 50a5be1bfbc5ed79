from __future__ import annotations

import numpy as np
import pytest

from andersonlab.fitting import FitError, fit_exponent, linear_fit


def test_exact_power_law():
    fit = fit_exponent([(x, 3 * x ** 2) for x in (1, 2, 4, 8, 16)])
    assert fit.estimate == pytest.approx(2.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-12)


def test_exact_exponential():
    fit = fit_exponent([(d, 5 * np.exp(-0.37 * d)) for d in range(10)], "exponential")
    assert abs(fit.estimate - 0.37) < 1e-12


def test_stretched_model():
    eta = 0.8
    fit = fit_exponent([(r, np.exp(-2 * r ** eta)) for r in (2, 4, 8, 16)], "stretched")
    assert abs(fit.estimate - eta) < 1e-12


def test_noisy_slope_within_three_standard_errors():
    rng = np.random.default_rng(11)
    x = np.linspace(0, 4, 40)
    y = 1.585 * x + rng.normal(0, 0.01, x.size)
    b, se, a, _, _ = linear_fit(x, y)
    assert abs(b - 1.585) < 3 * se
    fit = fit_exponent(zip(np.exp(x), np.exp(y)))
    assert abs(fit.estimate - 1.585) < 3 * fit.stderr


def test_rows_that_break_the_transform_are_excluded():
    fit = fit_exponent([(1, 1.0), (2, 0.0), (4, 4.0), (8, 8.0), (16, -1.0)])
    assert (fit.n_used, fit.n_excluded) == (3, 2)


def test_weights_act_as_multiplicities():
    rows = [(1, 1.0, 1), (2, 4.1, 3), (4, 15.0, 2)]
    dup = [(1, 1.0), (2, 4.1), (2, 4.1), (2, 4.1), (4, 15.0), (4, 15.0)]
    assert fit_exponent(rows, weighted=True).estimate == pytest.approx(fit_exponent(dup).estimate)


def test_too_few_rows():
    with pytest.raises(FitError):
        fit_exponent([(1, 1), (2, 4)])
    with pytest.raises(FitError):
        fit_exponent([])
    with pytest.raises(FitError):
        fit_exponent([(2, 1), (2, 3), (2, 5)])
    with pytest.raises(ValueError):
        fit_exponent([(1, 1)] * 3, model="cubic")
