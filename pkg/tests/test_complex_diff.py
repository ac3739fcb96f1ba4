import math

import numpy as np
import pytest

from cylab.complex_diff import (
    DEFAULT_FD,
    ChartError,
    EvaluationError,
    FDConfig,
    FlatChart,
    HermitianForm,
    MetricDegeneracyError,
    SingularChartError,
    build_chart,
    curve_length,
    ddbar,
    laplacian,
    ricci_potential,
)
from cylab.cone_geometry import A2_CONE, X0, X1, HypersurfaceFamily, a2_cover_volume_coeff, quotient_map_a2, r2_a2
from cylab.gluing import CONE_GAUGE, CONE_TERMS
from cylab.harmonic_cone import cover_to_ambient, eval_u2, sample_cover


def flat(p):
    return np.sum(np.abs(p) ** 2, axis=-1)


def r2_surface(p):
    return r2_a2(p[..., 0], p[..., 1], p[..., 2])


BASE3 = np.array([0.3 + 0.1j, -0.7j, 1.1])


def test_fdconfig_validation():
    FDConfig(eps=1e-5, richardson=2)
    for eps in (1e-9, 1e-2, 0.5):
        with pytest.raises(ValueError):
            FDConfig(eps=eps)
    with pytest.raises(ValueError):
        FDConfig(richardson=-1)


def test_hermitian_form_symmetrised():
    g = HermitianForm(np.array([[2, 1j], [0, 1]]))
    np.testing.assert_array_equal(g.H, g.H.conj().T)
    assert g.is_positive
    assert not HermitianForm(np.diag([1.0, -1.0])).is_positive


def test_ddbar_flat_identity():
    g = ddbar(flat, FlatChart(BASE3))
    np.testing.assert_allclose(g.H, np.eye(3), atol=1e-10)


def test_ddbar_pluriharmonic_zero():
    g = ddbar(lambda p: np.real(p[..., 0] ** 2), FlatChart(BASE3))
    np.testing.assert_allclose(g.H, 0, atol=1e-9)


def test_ddbar_nonfinite_field():
    with pytest.raises(EvaluationError):
        ddbar(lambda p: np.full(p.shape[:-1], np.nan), FlatChart(BASE3))


def test_ddbar_unitary_equivariance(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    phi = lambda p: np.abs(p[..., 0]) ** 4 + np.abs(p[..., 1] * p[..., 2]) ** 2 + np.real(p[..., 0] * np.conj(p[..., 2]))
    base = BASE3
    g = ddbar(phi, FlatChart(base)).H
    # phi o Q at Q^{-1} base has Hessian Q^T g conj(Q)
    g2 = ddbar(lambda w: phi(w @ Q.T), FlatChart(Q.conj().T @ base)).H
    np.testing.assert_allclose(g2, Q.T @ g @ Q.conj(), atol=1e-8)


def test_richardson_consistency():
    phi = lambda p: np.abs(p[..., 0]) ** 6 + np.abs(p[..., 1]) ** 2 * np.abs(p[..., 2]) ** 4
    cfg = FDConfig(eps=4e-3, richardson=1)
    g1, err = ddbar(phi, FlatChart(BASE3), cfg, error=True)
    g2 = ddbar(phi, FlatChart(BASE3), FDConfig(eps=2e-3, richardson=1))
    assert np.max(np.abs(g1.H - g2.H)) < 10 * np.max(err)


def test_build_chart_examples():
    # z-chart on X_{1,0} at the origin: dF/dz = 1 is the only nonzero partial
    ch = build_chart(np.zeros(4), X1)
    assert ch.solved == 0
    # (-1, 1, 0, 0): |dF/dx1| = 2 beats |dF/dz| = 1
    ch = build_chart(np.array([-1, 1, 0, 0]), X1)
    assert ch.solved == 1


def test_build_chart_singular_and_off_surface():
    with pytest.raises(SingularChartError):
        build_chart(np.zeros(4), X0)
    with pytest.raises(ChartError):
        build_chart(np.array([1.0, 0, 0, 0]), X1)


def test_build_chart_tie_breaks_by_order():
    # on x1^2 + x2^2 + y^3 = 0 at (1, i, 0): |dF/dx1| = |dF/dx2| = 2
    ch = build_chart(np.array([1, 1j, 0]), A2_CONE)
    assert ch.solved == 0


def test_chart_reproduces_surface():
    p = cover_to_ambient(np.array([0.5, 1.2, -0.4 + 0.3j]))
    X = HypersurfaceFamily(a=1.0, b=0.5)
    p = p.copy()
    p[0] = -(p[1] ** 2 + p[2] ** 2 + p[3] ** 3 + 0.5 * p[3])
    ch = build_chart(p, X)
    q = ch.embed(np.array([1e-3, -2e-3j, 5e-4]))
    assert abs(X(q)) <= 1e-11 * (1 + np.linalg.norm(q) ** 6)


def test_a2_pullback_metric_is_flat():
    x = quotient_map_a2(1.0, 1.0)
    ch = build_chart(x, A2_CONE)
    g = ddbar(r2_surface, ch).H
    # pull back by the derivative of (z1, z2) -> free coordinates of x
    J = np.array([[1.5, 1.5], [1.5 / 1j, -1.5 / 1j], [np.exp(1j * math.pi / 3)] * 2])
    Jf = J[list(ch.free)]
    pulled = Jf.T @ g @ Jf.conj()
    np.testing.assert_allclose(np.linalg.eigvalsh(pulled), [1, 1], atol=1e-6)


def test_ricci_potential_flat_anchor():
    assert abs(ricci_potential(flat, FlatChart(BASE3))) < 1e-9


def test_ricci_potential_cone_constants(rng):
    hs = []
    for q in sample_cover(rng, 20):
        x = quotient_map_a2(q[1], q[2])
        hs.append(ricci_potential(r2_surface, build_chart(x, A2_CONE), A2_CONE))
    hs = np.array(hs)
    assert hs.std() < 1e-6
    cover = -2 * math.log(abs(a2_cover_volume_coeff(1.0, 1.0)))
    assert hs.mean() == pytest.approx(cover, abs=1e-6)
    assert cover == pytest.approx(CONE_GAUGE, abs=1e-14)


def test_ricci_potential_product_matches_a2(rng):
    hs = [ricci_potential(CONE_TERMS, build_chart(cover_to_ambient(q), X0), X0) for q in sample_cover(rng, 20)]
    assert np.std(hs) < 1e-6
    assert np.mean(hs) == pytest.approx(CONE_GAUGE, abs=1e-6)


def test_ricci_potential_chart_invariance():
    from cylab.complex_diff import Chart

    p = cover_to_ambient(np.array([0.7, 1.3, 0.5 - 0.2j]))
    grad = np.abs(X0.grad(p))
    a, b = np.argsort(grad)[-2:]
    hs = [ricci_potential(CONE_TERMS, Chart(X0, int(k), p), X0) for k in (a, b)]
    assert abs(hs[0] - hs[1]) < 1e-7


def test_ricci_potential_rejects_degenerate():
    with pytest.raises(MetricDegeneracyError):
        ricci_potential(lambda p: -flat(p), FlatChart(BASE3))


def test_laplacian_flat_examples():
    ch = FlatChart(BASE3)
    g = HermitianForm(np.eye(3))
    assert laplacian(g, lambda p: np.abs(p[..., 0]) ** 2, ch) == pytest.approx(1, abs=1e-10)
    assert abs(laplacian(g, lambda p: np.real(p[..., 0] ** 3), ch)) < 1e-9


def test_laplacian_linearity(rng):
    ch = FlatChart(BASE3)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    g = HermitianForm(A @ A.conj().T + np.eye(3))
    u = lambda p: np.abs(p[..., 0] * p[..., 1]) ** 2
    v = lambda p: np.abs(p[..., 2]) ** 4 + np.real(p[..., 0])
    al, be = 0.7, -2.3
    lhs = laplacian(g, lambda p: al * u(p) + be * v(p), ch)
    rhs = al * laplacian(g, u, ch) + be * laplacian(g, v, ch)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_laplacian_u2_on_product_cone():
    p = cover_to_ambient(np.array([0.4 - 0.3j, 1.1, 0.6j]))
    ch = build_chart(p, X0)
    g = ddbar(CONE_TERMS, ch)
    assert abs(laplacian(g, eval_u2, ch)) < 1e-7


def test_laplacian_rejects_degenerate():
    with pytest.raises(MetricDegeneracyError):
        laplacian(HermitianForm(np.diag([1.0, 0.0, 1.0])), flat, FlatChart(BASE3))


def test_curve_length_straight_segment():
    a, b = np.array([0, 0, 0]), np.array([3, 4j, 0])
    pts = np.linspace(a, b, 7)
    assert curve_length(lambda q: np.eye(3), pts) == pytest.approx(5, rel=1e-14)
    with pytest.raises(ValueError):
        curve_length(lambda q: np.eye(3), pts[:1])


@pytest.mark.parametrize("q", [(1.0, 0.3), (1.0, 0.3j), (1.0, 1.0)])
def test_curve_length_radial_a2(q):
    # weighted scaling by lam is the cover ray q -> lam q, so r runs from 1 to 2
    q = np.asarray(q) / np.linalg.norm(q)
    x = quotient_map_a2(*q)
    lam = np.linspace(1, 2, 41)
    pts = x * np.stack([lam**3, lam**3, lam**2], -1)
    ch = build_chart(pts[20], A2_CONE)
    dw = ch.coords(pts)
    L = curve_length(lambda m: ddbar(r2_surface, ch, dw0=m).H, dw)
    assert L == pytest.approx(1, abs=1e-3)


def test_curve_length_refinement_and_chart_break():
    metric = lambda q: np.diag([1 + abs(q[0]) ** 2, 1.0, 1.0])
    coarse = curve_length(metric, np.linspace([0, 0, 0], [1, 1, 0], 51))
    fine = curve_length(metric, np.linspace([0, 0, 0], [1, 1, 0], 101))
    assert abs(coarse - fine) / fine < 1e-3
    ch = build_chart(np.zeros(4), X1)
    with pytest.raises(ChartError):
        curve_length(metric, np.array([[0, 0, 0], [4 * ch.radius, 0, 0]]), chart=ch)


def test_default_fd_is_valid():
    assert 1e-9 < DEFAULT_FD.eps < 1e-2
