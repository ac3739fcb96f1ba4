import numpy as np
import pytest

from cylab.complex_diff import build_chart, standard_J
from cylab.cone_geometry import X1, HypersurfaceFamily, ambient_metric, volume_form_coeff
from cylab.gluing import CONE_TERMS, decay_fit, default_rays, region_classify
from cylab.projection import (
    ProjectionError,
    complex_structure_error,
    inverse_projection,
    nearest_point,
    optimality_residual,
    projection_jacobian,
    pullback_volume,
    pushed_potential,
)


def Xb(b):
    return HypersurfaceFamily(a=1.0, b=b)


@pytest.fixture
def point_I(rng):
    return default_rays("I", 1, rng)[0].point(X1, 2.0**10)


def sq_length(p, q):
    v = q - p
    return float(np.real(v @ ambient_metric(p) @ np.conj(v)))


def test_identity_target(point_I):
    res = nearest_point(point_I, X1, X1)
    assert res.displacement == 0 and res.iterations == 0
    np.testing.assert_array_equal(res.target, point_I)


def test_projection_lands_and_is_optimal(point_I):
    res = nearest_point(point_I, Xb(1.0), X1)
    assert res.residual <= 1e-10 * (1 + np.linalg.norm(res.target) ** 6)
    assert optimality_residual(res, Xb(1.0)) <= 1e-8
    assert res.iterations <= 30


def test_projection_is_a_local_minimum(point_I, rng):
    X = Xb(1e3)
    res = nearest_point(point_I, X, X1)
    ch = build_chart(res.target, X)
    d0 = sq_length(point_I, res.target)
    scale = np.abs(res.step).max()
    for _ in range(20):
        dw = scale * 1e-2 * (rng.normal(size=3) + 1j * rng.normal(size=3))
        assert sq_length(point_I, ch.embed(dw)) >= d0 * (1 - 1e-9)


def test_displacement_linear_in_b(point_I):
    d1 = nearest_point(point_I, Xb(1e-6), X1).displacement
    d2 = nearest_point(point_I, Xb(2e-6), X1).displacement
    assert d2 / d1 == pytest.approx(2, rel=0.01)


def test_displacement_monotone_in_b(point_I):
    ds = [nearest_point(point_I, Xb(b), X1).displacement for b in (0.0, 0.5, 1.0, 2.0)]
    assert ds[0] == 0 and ds[0] < ds[1] < ds[2] < ds[3]


def test_idempotent(point_I):
    res = nearest_point(point_I, Xb(1.0), X1)
    again = nearest_point(res.target, Xb(1.0), Xb(1.0))
    assert np.abs(again.step).max() < 1e-10


def test_displacement_decays_along_region_I(rng):
    ray = default_rays("I", 1, rng)[0]
    radii = np.geomspace(1.2e3, 2.4e6, 8)
    vals = [nearest_point(ray.point(X1, D), Xb(1.0), X1).displacement for D in radii]
    # offset b D^2 over a gradient of cone-metric size D^5
    assert decay_fit(radii, vals, min_decades=3.0).exponent == pytest.approx(-3, abs=0.05)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_singular_metric_rejected():
    with pytest.raises(ProjectionError):
        nearest_point(np.array([1e4, 0, 0, 0]), Xb(1.0), X1)


def test_complex_structure_error_b0(point_I):
    assert complex_structure_error(point_I, X1, X1, CONE_TERMS) < 1e-9


def test_jb_squares_to_minus_one(rng):
    for kind in ("I", "V"):
        p = default_rays(kind, 1, rng)[0].point(X1, 2e3)
        res = complex_structure_error(p, X1, Xb(1.0), CONE_TERMS, detail=True)
        np.testing.assert_allclose(res.Jb @ res.Jb, -np.eye(6), atol=1e-7)
        assert res.condition < 1e8


def test_projection_differential_nearly_complex_linear(point_I):
    E, ch = projection_jacobian(point_I, X1, Xb(1.0))
    J = standard_J(ch.dim)
    # the frozen-metric projection is not holomorphic, so [J, E] is nonzero but tiny
    assert np.abs(J @ E - E @ J).max() < 1e-6


def test_pullback_volume_identity(point_I):
    vol = pullback_volume(point_I, X1, X1)
    assert abs(vol.ratio_minus_one) < 1e-10
    ch = build_chart(point_I, X1)
    assert vol.coefficient == pytest.approx(complex(volume_form_coeff(point_I, X1, ch)), rel=1e-12)


def test_pullback_volume_decay(rng):
    ray = default_rays("I", 1, rng)[0]
    radii = np.geomspace(1.2e3, 2.4e6, 8)
    vals = [abs(pullback_volume(ray.point(X1, D), X1, Xb(1.0)).ratio_minus_one) for D in radii]
    assert decay_fit(radii, vals, min_decades=3.0).exponent <= -3


@pytest.mark.parametrize("kind,lo,hi", [("I", -4.5, -3.5), ("V", -1.2, -0.3)])
def test_complex_structure_decay(kind, lo, hi, rng):
    ray = default_rays(kind, 1, rng)[0]
    radii = np.geomspace(1.2e3, 2.4e6, 8)
    assert {region_classify(ray.point(X1, D)).value for D in radii} == {kind}
    vals = [complex_structure_error(ray.point(X1, D), X1, Xb(1.0), CONE_TERMS) for D in radii]
    assert lo <= decay_fit(radii, vals, min_decades=3.0).exponent <= hi


def test_inverse_projection_round_trip(point_I):
    res = nearest_point(point_I, Xb(1.0), X1)
    k = build_chart(res.target, Xb(1.0)).solved
    back = inverse_projection(res.target, X1, Xb(1.0), k)
    np.testing.assert_allclose(back, point_I, rtol=1e-12)


def test_pushed_potential(point_I):
    terms, q = pushed_potential(point_I, X1, Xb(1.0), CONE_TERMS)
    vals = sum(f(q[None, :]) for f in terms)
    orig = sum(f(point_I[None, :]) for f in CONE_TERMS)
    assert vals[0] == pytest.approx(orig[0], rel=1e-12)
