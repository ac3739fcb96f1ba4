import cmath
import math
from fractions import Fraction

import numpy as np
import pytest

from cylab.cone_geometry import (
    A2_CONE,
    CXA2_WEIGHTS,
    X0,
    X1,
    ZETA,
    DomainError,
    HypersurfaceFamily,
    a2_cover_volume_coeff,
    ambient_R2,
    ambient_rho2,
    f_a2,
    quotient_map_a2,
    r2_a2,
    r2_closed_form,
    r2_increment,
    rescaled_family_coefficients,
    volume_form_coeff,
    weighted_scale,
)
from cylab.complex_diff import Chart, ChartError, build_chart


def test_weights_and_homogeneity():
    assert CXA2_WEIGHTS.vector() == (1, 3, 3, 2)
    assert CXA2_WEIGHTS.degree == 6
    assert CXA2_WEIGHTS.is_homogeneous(X0.terms)
    assert not CXA2_WEIGHTS.is_homogeneous(X1.terms)
    with pytest.raises(DomainError):
        type(CXA2_WEIGHTS)({"z": Fraction(0)}, Fraction(6))


def test_weighted_scale_examples():
    out = weighted_scale(4, [1, 1, 1, 1]).point
    np.testing.assert_array_equal(out, [4, 64, 64, 16])
    p = np.array([0.3 + 1j, -2, 1j, 0.5])
    np.testing.assert_array_equal(weighted_scale(1, p).point, p)
    x = np.array([0, 1, 1, 1], dtype=complex)
    sx = weighted_scale(2, x).point
    assert f_a2(*sx[1:]) / f_a2(*x[1:]) == pytest.approx(64, rel=1e-15)
    with pytest.raises(DomainError):
        weighted_scale(0, p)


def test_weighted_scale_records_branch():
    sp = weighted_scale(-1, [1, 1, 1, 1], CXA2_WEIGHTS)
    assert sp.log_t == pytest.approx(1j * math.pi)


def test_quotient_map_examples():
    np.testing.assert_allclose(quotient_map_a2(1, 0), [0.5, -0.5j, 0], atol=1e-15)
    x = quotient_map_a2(1, 1)
    np.testing.assert_allclose(x, [1, 0, ZETA], atol=1e-15)
    assert abs(f_a2(*x)) < 1e-14
    np.testing.assert_array_equal(quotient_map_a2(0, 0), [0, 0, 0])
    assert abs(ZETA**3 + 1) < 1e-15


def test_r2_examples():
    assert r2_a2(*quotient_map_a2(1, 1)) == pytest.approx(2.0, abs=1e-14)
    assert r2_a2(*quotient_map_a2(1, 0)) == pytest.approx(1.0, abs=1e-14)
    assert r2_a2(0, 0, 0) == 0.0


def test_r2_cover_identity(rng):
    z = 10 * (rng.random((10_000, 2)) * np.exp(2j * np.pi * rng.random((10_000, 2))))
    x = quotient_map_a2(z[:, 0], z[:, 1])
    exact = np.abs(z[:, 0]) ** 2 + np.abs(z[:, 1]) ** 2
    assert np.max(np.abs(r2_a2(*x.T) - exact) / exact) < 1e-9
    assert np.max(np.abs(r2_closed_form(*x.T) - exact) / exact) < 1e-10
    s = np.abs(x[:, 0]) ** 2 + np.abs(x[:, 1]) ** 2
    assert np.all(s * s >= np.abs(x[:, 2]) ** 6 * (1 - 1e-12))


@pytest.mark.parametrize("t", [2, 0.5, cmath.exp(0.7j)])
def test_radial_functions_homogeneous(t, rng):
    p = rng.normal(size=(50, 4)) + 1j * rng.normal(size=(50, 4))
    q = weighted_scale(t, p).point
    for f in (lambda v: r2_a2(*v[:, 1:].T), lambda v: ambient_R2(*v[:, 1:].T), ambient_rho2):
        np.testing.assert_allclose(f(q), abs(t) ** 2 * f(p), rtol=1e-12)


def test_ambient_R2_examples():
    assert ambient_R2(1, 0, 0) == 1.0
    assert ambient_rho2([2, 1, 0, 0]) == pytest.approx(5.0)


def test_R2_over_r2_range(rng):
    z = rng.normal(size=(10_000, 2)) + 1j * rng.normal(size=(10_000, 2))
    x = quotient_map_a2(z[:, 0], z[:, 1])
    ratio = ambient_R2(*x.T) / r2_a2(*x.T)
    assert ratio.min() >= 2 ** (-5 / 6) - 1e-12
    assert ratio.max() <= 2 ** (-1 / 3) + 1e-12
    # extremes at |z1| = |z2| and z2 = 0
    assert ambient_R2(*quotient_map_a2(1, 1)) / 2 == pytest.approx(2 ** (-5 / 6))
    assert ambient_R2(*quotient_map_a2(1, 0)) == pytest.approx(2 ** (-1 / 3))


def test_r2_increment_matches_difference(rng):
    x = rng.normal(size=(20, 3)) + 1j * rng.normal(size=(20, 3))
    dx = 1e-3 * (rng.normal(size=(20, 3)) + 1j * rng.normal(size=(20, 3)))
    direct = r2_a2(*(x + dx).T) - r2_a2(*x.T)
    np.testing.assert_allclose(r2_increment(x, dx), direct, rtol=1e-9)
    tiny = r2_increment(x, 1e-20 * dx)
    assert np.all(np.abs(tiny) > 0)


def test_family_terms_and_offset():
    X = HypersurfaceFamily(a=1.0, b=2.0)
    p = np.array([0.5, 1.0, 1j, 2.0])
    assert X(p) == pytest.approx(0.5 + 4 + 1 - 1 + 8)
    assert X.offset(X1, p) == pytest.approx(4.0)
    assert X0.is_member is False and X1.is_member


def test_volume_form_on_X1_z_chart():
    p = np.array([0.0, 0, 0, 0], dtype=complex)
    ch = build_chart(p, X1)
    assert ch.solved == 0
    assert volume_form_coeff(p, X1, ch) == 1


def test_volume_form_chart_transition():
    # x1-chart coefficient times dz/dx1-Jacobian equals the z-chart coefficient
    p = np.array([-1.0, 1.0, 0, 0], dtype=complex)
    cz = volume_form_coeff(p, X1, Chart(X1, 0, p))
    cx = volume_form_coeff(p, X1, Chart(X1, 1, p))
    g = X1.grad(p)
    # dx1 = (dx1/dz) dz on X1, with dx1/dz = -F_z / F_x1
    assert cx == pytest.approx(cz * (-g[0] / g[1]))


def test_volume_form_degenerate_chart():
    p = np.array([0.0, 0, 0, 0], dtype=complex)
    with pytest.raises(ChartError):
        volume_form_coeff(p, X1, Chart(X1, 1, p, threshold=1e-6))


def test_a2_cover_volume_constant(rng):
    z = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
    c = a2_cover_volume_coeff(z[:, 0], z[:, 1])
    np.testing.assert_allclose(c, 1.5j / ZETA**2, rtol=1e-13)
    x = quotient_map_a2(z[0, 0], z[0, 1])
    ch = build_chart(x, A2_CONE)
    if ch.solved == 2:
        assert volume_form_coeff(x, A2_CONE, ch) == pytest.approx(1 / (3 * x[2] ** 2))


def test_rescaled_family_coefficients():
    X = HypersurfaceFamily(a=1.0, b=1.0)
    a, b = rescaled_family_coefficients(X, 2.0)
    assert a == 2.0**-5 and b == 2.0**-4
