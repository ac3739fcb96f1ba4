"""Gibbons-Hawking model of the A2 ALE fiber.

``g = V dx.dx + V^{-1} (dt + theta)^2`` on ``R^3 x S^1`` with
``V = sum_i 1 / (2 |x - p_i|)`` and ``d theta = *dV``.  Each center
contributes ``theta_i = (1/2) cos(vartheta_i) dphi_i``, the polar angles
being measured about the vertical line through ``p_i``; this gauge is
closed-form for any centers and singular only on those vertical lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gluing import DecayFit, SamplingError, decay_fit

DEFAULT_CENTERS = ((0.0, 0.0, -1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


class CenterProximityError(ValueError):
    """Evaluation point too close to a monopole center or a string."""


@dataclass(frozen=True)
class GHData:
    centers: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_CENTERS))
    extra_potential: Callable | None = None  # added to V; breaks harmonicity (negative controls)
    min_distance: float = 1e-6

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if c.shape[1] != 3:
            raise ValueError("centers must be points of R^3")
        object.__setattr__(self, "centers", c)

    @property
    def n(self) -> int:
        return len(self.centers)

    def coincident(self) -> "GHData":
        """Same number of centers, all at the origin: the flat cone ``C^2 / Z_n``."""
        return GHData(np.zeros_like(self.centers))

    def scaled(self, lam: float) -> "GHData":
        return GHData(lam * self.centers, self.extra_potential, self.min_distance)

    def _diffs(self, x):
        x = np.asarray(x)
        d = x[..., None, :] - self.centers
        r = np.sqrt(np.sum(d * d, axis=-1))  # analytic, so complex steps pass through
        if np.any(r.real <= self.min_distance):
            raise CenterProximityError("point within min_distance of a center")
        return d, r

    def potential(self, x) -> np.ndarray:
        _, r = self._diffs(x)
        V = np.sum(0.5 / r, axis=-1)
        if self.extra_potential is not None:
            V = V + self.extra_potential(np.asarray(x))
        return V

    def connection(self, x) -> np.ndarray:
        """Cartesian components ``(theta_1, theta_2, theta_3)``."""
        d, r = self._diffs(x)
        rho2 = d[..., 0] ** 2 + d[..., 1] ** 2
        if np.any(rho2.real <= self.min_distance**2):
            raise CenterProximityError("point on the Dirac string of a center")
        coef = 0.5 * d[..., 2] / r / rho2
        th = np.zeros(np.shape(x), dtype=coef.dtype)
        th[..., 0] = np.sum(-d[..., 1] * coef, axis=-1)
        th[..., 1] = np.sum(d[..., 0] * coef, axis=-1)
        return th


def gh_potential(x, data: GHData = GHData()) -> np.ndarray:
    return data.potential(x)


def gh_metric(x, t: float = 0.0, data: GHData = GHData()) -> np.ndarray:
    """Metric in coordinates ``(x1, x2, x3, t)``; independent of ``t``."""
    del t
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        x = x.astype(float)
    V = data.potential(x)[..., None, None]
    th = data.connection(x)
    a = np.concatenate([th, np.ones(th.shape[:-1] + (1,))], axis=-1)
    g = a[..., :, None] * a[..., None, :] / V
    g[..., :3, :3] += V * np.eye(3)
    return g


# ----------------------------------------------------------- curvature


def _dmetric(data, x):
    """``dg[c, a, b] = d_c g_ab`` by complex steps, exact to rounding (``d_t = 0``)."""
    out = np.zeros((4, 4, 4))
    for c in range(3):
        e = np.zeros(3, dtype=complex)
        e[c] = 1e-30j
        out[c] = gh_metric(x + e, data=data).imag / 1e-30
    return out


def christoffel(x, data: GHData = GHData()) -> np.ndarray:
    """``Gamma[a, b, c] = Gamma^a_{bc}``."""
    g = gh_metric(x, data=data)
    gi = np.linalg.inv(g)
    dg = _dmetric(data, np.asarray(x, dtype=float))
    # Gamma_{d,bc} = (d_b g_dc + d_c g_db - d_d g_bc) / 2
    low = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    return np.einsum("ad,dbc->abc", gi, low)


def riemann(x, data: GHData = GHData(), h: float = 2e-5) -> np.ndarray:
    """``R[a, b, c, d] = R^a_{bcd}`` with Christoffel derivatives by central differences."""
    x = np.asarray(x, dtype=float)
    G = christoffel(x, data)
    dG = np.zeros((4, 4, 4, 4))  # dG[c, a, b, d] = d_c Gamma^a_{bd}
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        dG[c] = (christoffel(x + e, data) - christoffel(x - e, data)) / (2 * h)
    R = (np.einsum("cabd->abcd", dG) - np.einsum("dabc->abcd", dG)
         + np.einsum("ace,ebd->abcd", G, G) - np.einsum("ade,ebc->abcd", G, G))
    return R


def ricci(x, data: GHData = GHData(), h: float = 2e-5) -> np.ndarray:
    return np.einsum("abad->bd", riemann(x, data, h))


def _norm2(T, g):
    """Full metric norm of a covariant 2-tensor."""
    gi = np.linalg.inv(g)
    return float(np.sqrt(abs(np.einsum("ab,cd,ac,bd->", T, T, gi, gi))))


def riemann_norm(x, data: GHData = GHData(), h: float = 2e-5) -> float:
    R = riemann(x, data, h)
    g = gh_metric(x, data=data)
    gi = np.linalg.inv(g)
    low = np.einsum("ae,ebcd->abcd", g, R)
    val = np.einsum("abcd,efgh,ae,bf,cg,dh->", low, low, gi, gi, gi, gi)
    return float(np.sqrt(abs(val)))


def ricci_residual_gh(samples, data: GHData = GHData(), h: float = 2e-5) -> float:
    """Max ``|Ric|_g`` over ``samples`` (points of ``R^3``)."""
    worst = 0.0
    for x in np.asarray(samples, dtype=float):
        worst = max(worst, _norm2(ricci(x, data, h), gh_metric(x, data=data)))
    return worst


def sample_shell(rng: np.random.Generator, n: int, rmin: float, rmax: float, min_sin: float = 0.3):
    """Points with ``|x|`` in ``[rmin, rmax]``, kept away from the vertical axis."""
    out = []
    while len(out) < n:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        if np.hypot(v[0], v[1]) < min_sin:
            continue
        out.append(v * rng.uniform(rmin, rmax))
    return np.array(out)


def dtheta_residual(samples, data: GHData = GHData()) -> float:
    """Max ``|curl theta - grad V|`` relative to ``|grad V|`` (``d theta = *dV``), by complex steps."""
    worst = 0.0
    h = 1e-30
    for x in np.asarray(samples, dtype=float):
        J = np.zeros((3, 3))  # J[i, j] = d_j theta_i
        gV = np.zeros(3)
        for j in range(3):
            e = np.zeros(3, dtype=complex)
            e[j] = 1j * h
            J[:, j] = data.connection(x + e).imag / h
            gV[j] = data.potential(x + e).imag / h
        curl = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
        worst = max(worst, float(np.linalg.norm(curl - gV) / np.linalg.norm(gV)))
    return worst


# ---------------------------------------------------------- cone decay


def cone_deviation(x, data: GHData = GHData()) -> float:
    """``|g - g_cone|`` measured in ``g_cone``, the coincident-center metric."""
    g = gh_metric(x, data=data)
    g0 = gh_metric(x, data=data.coincident())
    C = np.linalg.cholesky(g0)
    Ci = np.linalg.inv(C)
    return float(np.linalg.norm(Ci @ (g - g0) @ Ci.T, 2))


def cone_radius(r, n: int = 3):
    """Cone distance ``sqrt(2 n r)`` of the point at Euclidean radius ``r`` in ``R^3``."""
    return np.sqrt(2 * n * np.asarray(r, dtype=float))


def cone_decay_fit(radii, data: GHData = GHData(), direction=(0.6, 0.0, 0.8)) -> DecayFit:
    """Log-log slope of :func:`cone_deviation` against the cone distance along a ray.

    ``radii`` are Euclidean radii in ``R^3`` and must lie in ``(5, 500)``.
    """
    r = np.asarray(radii, dtype=float)
    if np.any(r <= 5) or np.any(r >= 500):
        raise SamplingError("radii must lie in (5, 500)")
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    dev = np.array([cone_deviation(ri * u, data) for ri in r])
    return decay_fit(cone_radius(r, data.n), dev, min_points=8, min_decades=0.9)
