"""Glued approximate potential, region decomposition and decay measurements.

The approximate potential on ``X_1`` outside a compact set is

    Phi = |z|^2 + gamma1(R rho^-alpha) r^2
          + gamma2(R rho^-alpha) |z|^{1/3} phi(z^{-1/6} . x),

with the fiber potential ``phi = r^2 + psi`` replaced by the stand-in
``psi(x) = c / (1 + r^2(x))``.  Degree-2 homogeneity of ``r^2`` turns the last
term into ``r^2 + c |z|^{2/3} / (|z|^{1/3} + r^2)``, which needs no branch of
``z^{1/6}``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cone_geometry import (
    DEGREE,
    X1,
    DomainError,
    Hypersurface,
    HypersurfaceFamily,
    ambient_R2,
    r2_a2,
    r2_increment,
)
from .complex_diff import (
    DEFAULT_FD,
    FDConfig,
    MetricDegeneracyError,
    build_chart,
    ddbar,
    real_metric,
    ricci_potential,
)

# log det of the cone metric relative to the residue form; see ricci_potential
CONE_GAUGE = math.log(4.0 / 9.0)


class CoreRegionError(ValueError):
    """Point lies in the compact core ``rho <= P``."""


class SamplingError(ValueError):
    """Sample set too sparse for the requested estimate."""


class ExperimentError(RuntimeError):
    """Too many sample failures in an experiment."""


@dataclass(frozen=True)
class GluingConfig:
    alpha: float = 0.9
    kappa: float = 0.5
    P: float = 1e3
    delta: float = -0.3
    tau: float = -0.1
    c: float = 0.0
    d: int = DEGREE

    def __post_init__(self):
        if not 1.0 / self.d < self.alpha < 1.0:
            raise ValueError("alpha must lie in (1/d, 1)")
        if not -2.0 < self.tau < 0.0:
            raise ValueError("tau must lie in (-2, 0)")
        if not self.delta < 2.0 / self.d:
            raise ValueError("delta must be below 2/d")
        if self.kappa <= 0 or self.c < 0:
            raise ValueError("kappa must be positive and c nonnegative")


class RegionLabel(enum.Enum):
    AwaySingular = "I"
    Intermediate = "II"
    GluingBand = "III"
    InnerCone = "IV"
    NearSingular = "V"
    Core = "core"


# ---------------------------------------------------------------- cutoffs


def _bump_tail(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def cutoff_gamma1(s):
    """Smooth nondecreasing step: 0 for ``s <= 1``, 1 for ``s >= 2``."""
    a = _bump_tail(np.asarray(s, dtype=float) - 1.0)
    b = _bump_tail(2.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def cutoff_gamma2(s):
    return 1.0 - cutoff_gamma1(s)


def gamma1_max_derivative(n: int = 20001) -> float:
    s = np.linspace(1.0, 2.0, n)
    return float(np.max(np.gradient(cutoff_gamma1(s), s)))


def psi_model(r2hat, c: float):
    """Fiber stand-in ``c / (1 + rhat^2)``."""
    return c / (1.0 + np.asarray(r2hat, dtype=float))


# ------------------------------------------------------------- potentials


def _parts(p):
    p = np.asarray(p, dtype=complex)
    z, x1, x2, y = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    R = np.sqrt(ambient_R2(x1, x2, y))
    rho = np.sqrt(np.abs(z) ** 2 + R * R)
    return z, x1, x2, y, R, rho


def glued_potential(p, cfg: GluingConfig = GluingConfig(), check: bool = True):
    """Vectorised glued potential; see the module docstring."""
    z, x1, x2, y, R, rho = _parts(p)
    if check and np.any(rho <= cfg.P):
        raise CoreRegionError("rho <= P")
    T = r2_a2(x1, x2, y)
    out = np.abs(z) ** 2 + T
    if cfg.c != 0:
        g2 = cutoff_gamma2(R * rho ** (-cfg.alpha))
        a = np.abs(z) ** (1.0 / 3.0)
        out = out + g2 * cfg.c * a * a / (a + T)
    return out


def approx_potential(p, cfg: GluingConfig = GluingConfig()) -> float:
    """Glued potential at a single point (raises in the core ``rho <= P``)."""
    return float(glued_potential(p, cfg))


def cone_potential(p):
    p = np.asarray(p, dtype=complex)
    return np.abs(p[..., 0]) ** 2 + r2_a2(p[..., 1], p[..., 2], p[..., 3])


def abs_z2(p):
    return np.abs(np.asarray(p, dtype=complex)[..., 0]) ** 2


def r2_term(p):
    p = np.asarray(p, dtype=complex)
    return r2_a2(p[..., 1], p[..., 2], p[..., 3])


# |z|^2 dominates rho^2 near the singular rays; differentiating the terms
# separately keeps its rounding error out of the fiber directions
CONE_TERMS = (abs_z2, r2_term)


def glued_terms(cfg: GluingConfig = GluingConfig()):
    """The glued potential split as ``(|z|^2, r^2, gamma2 * psi term)`` for ``ddbar``."""
    if cfg.c == 0:
        return CONE_TERMS

    def psi_term(p):
        z, x1, x2, y, R, rho = _parts(p)
        g2 = cutoff_gamma2(R * rho ** (-cfg.alpha))
        a = np.abs(z) ** (1.0 / 3.0)
        return g2 * cfg.c * a * a / (a + r2_a2(x1, x2, y))

    return (abs_z2, r2_term, psi_term)


def potential_increment(p, dp, cfg: GluingConfig = GluingConfig()):
    """``Phi(p + dp) - Phi(p)`` without cancellation where the cutoff is locally constant.

    Raises :class:`DomainError` if either point lies in the gluing band, where
    no cancellation-free form is available.
    """
    p = np.asarray(p, dtype=complex)
    dp = np.asarray(dp, dtype=complex)
    p, dp = np.broadcast_arrays(p, dp)
    z, dz = p[..., 0], dp[..., 0]
    d_abs2 = 2 * np.real(np.conj(z) * dz) + np.abs(dz) ** 2
    dT = r2_increment(p[..., 1:], dp[..., 1:])
    out = d_abs2 + dT
    if cfg.c == 0:
        return out
    g2a = cutoff_gamma2(_parts(p)[4] * _parts(p)[5] ** (-cfg.alpha))
    g2b = cutoff_gamma2(_parts(p + dp)[4] * _parts(p + dp)[5] ** (-cfg.alpha))
    if np.any((g2a != g2b) | ((g2a != 0) & (g2a != 1))):
        raise DomainError("increment requested inside the gluing band")
    on = g2a == 1
    if not np.any(on):
        return out
    z2 = np.abs(z) ** 2
    a = z2 ** (1.0 / 6.0)
    da = a * np.expm1(np.log1p(d_abs2 / z2) / 6.0)
    T = r2_a2(p[..., 1], p[..., 2], p[..., 3])
    num = da * (2 * a * (a + T) - a * a) + da * da * (a + T) - a * a * dT
    dpsi = cfg.c * num / ((a + T) * (a + da + T + dT))
    return out + np.where(on, dpsi, 0.0)


# --------------------------------------------------------------- regions


def region_classify(p, cfg: GluingConfig = GluingConfig(), D: float | None = None) -> RegionLabel:
    """Region label from ``R`` and ``rho``, with ``K = R`` as the dyadic scale.

    Thresholds, tested in order: I ``R > kappa rho``; II ``R > 4 rho^alpha``;
    III ``R > rho^alpha / 2``; IV ``R >= 2 rho^{1/d} / kappa``; V otherwise.
    """
    *_, R, rho = _parts(p)
    R, rho = float(R), float(rho)
    if rho <= cfg.P:
        return RegionLabel.Core
    if D is not None and not D / 2 < rho < 2 * D:
        raise DomainError("rho outside (D/2, 2D)")
    return classify_R_rho(R, rho, cfg)


def classify_R_rho(R: float, rho: float, cfg: GluingConfig = GluingConfig()) -> RegionLabel:
    if rho <= cfg.P:
        return RegionLabel.Core
    a, k, d = cfg.alpha, cfg.kappa, cfg.d
    if R > k * rho:
        return RegionLabel.AwaySingular
    if R > 4 * rho**a:
        return RegionLabel.Intermediate
    if R > rho**a / 2:
        return RegionLabel.GluingBand
    if R >= 2 * rho ** (1.0 / d) / k:
        return RegionLabel.InnerCone
    return RegionLabel.NearSingular


def weight_w(p, cfg: GluingConfig = GluingConfig()):
    """Singular-ray weight ``w`` with the transition bands smoothed by ``gamma1``."""
    *_, R, rho = _parts(p)
    if np.any(rho <= cfg.P):
        raise CoreRegionError("rho <= P")
    return weight_from_R_rho(R, rho, cfg)


def weight_from_R_rho(R, rho, cfg: GluingConfig = GluingConfig()):
    k, d = cfg.kappa, cfg.d
    R = np.asarray(R, dtype=float)
    rho = np.asarray(rho, dtype=float)
    mid = R / (k * rho)
    inner = k**-2 * rho ** (1.0 / d - 1.0)
    # band (kappa rho / 2, kappa rho), where R / (kappa rho) <= 1, keeps w <= 1
    g_out = cutoff_gamma1(2 * R / (k * rho))
    g_in = cutoff_gamma1(R / (0.5 / k * rho ** (1.0 / d)))
    upper = g_out + (1 - g_out) * mid
    return g_in * upper + (1 - g_in) * inner


# --------------------------------------------------------- weighted norms


@dataclass(frozen=True)
class WeightedNormSpec:
    delta: float
    tau: float
    k: int = 0
    alpha_h: float = 0.5

    def __post_init__(self):
        if not 0 <= self.k <= 2:
            raise ValueError("k must be 0, 1 or 2")
        if not 0 < self.alpha_h < 1:
            raise ValueError("alpha_h must lie in (0, 1)")


@dataclass
class FieldSamples:
    """Pointwise data for a weighted norm estimate.

    ``derivs[j]`` holds ``|nabla^j f|`` at the sample points.  Optional Hölder
    pairs give the top-order quantity at two points, their distance, and the
    ``rho``, ``w`` of the first point.
    """

    rho: np.ndarray
    w: np.ndarray
    derivs: list
    pair_values: np.ndarray | None = None  # shape (m, 2)
    pair_dist: np.ndarray | None = None
    pair_rho: np.ndarray | None = None
    pair_w: np.ndarray | None = None


@dataclass(frozen=True)
class NormEstimate:
    value: float
    sup_part: float
    holder_part: float
    lower_bound: bool = True


def weighted_norm_estimate(samples: FieldSamples, spec: WeightedNormSpec) -> NormEstimate:
    """Sampled ``C^{k,alpha}_{delta,tau}`` norm; a lower bound for the true norm."""
    rho = np.asarray(samples.rho, dtype=float)
    w = np.asarray(samples.w, dtype=float)
    if len(samples.derivs) < spec.k + 1:
        raise SamplingError("missing derivative samples")
    tot = np.zeros_like(rho)
    for j in range(spec.k + 1):
        tot = tot + rho ** (-spec.delta + j) * w ** (-spec.tau + j) * np.abs(samples.derivs[j])
    sup_part = float(np.max(tot))
    hold = 0.0
    if samples.pair_values is not None:
        sep = np.asarray(samples.pair_dist) / (np.asarray(samples.pair_rho) * np.asarray(samples.pair_w))
        ok = (sep >= 0.1) & (sep <= 0.5)
        if not np.any(ok):
            raise SamplingError("no Hölder pairs at separation in [0.1, 0.5] rho w")
        pr, pw = np.asarray(samples.pair_rho)[ok], np.asarray(samples.pair_w)[ok]
        v = np.asarray(samples.pair_values)[ok]
        kk, a = spec.k, spec.alpha_h
        scale = pr ** (-spec.delta + kk) * pw ** (-spec.tau + kk)
        quot = np.abs(v[:, 0] - v[:, 1]) * scale / np.asarray(samples.pair_dist)[ok] ** a
        hold = float(np.max((pr * pw) ** a * quot))
    return NormEstimate(sup_part + hold, sup_part, hold)


# ------------------------------------------------------------ sample rays


@dataclass(frozen=True)
class Ray:
    """Family of points ``D -> point`` on a hypersurface in one region.

    ``kind = "I"``: ``(z, x1, x2) = (D zt, D^3 xt)``, ``y`` solved near ``D^2 yt0``.
    ``kind = "V"``: ``z = D e^{i theta}``, ``x = z^{1/2} xt``, ``y`` solved near ``z^{1/3} yt0``.
    """

    kind: str
    zt: complex
    xt: tuple
    index: int = 0

    def point(self, X: HypersurfaceFamily, D: float) -> np.ndarray:
        xt = np.asarray(self.xt, dtype=complex)
        if self.kind == "I":
            z = D * self.zt
            x = D**3 * xt
            y0 = D**2 * _cube_root_near(-(xt[0] ** 2 + xt[1] ** 2), 1.0)
        elif self.kind == "V":
            z = D * self.zt / abs(self.zt)
            h = np.sqrt(z)
            x = h * xt
            y0 = np.cbrt(abs(z)) * np.exp(1j * np.angle(z) / 3) * _cube_root_near(-(1 + xt[0] ** 2 + xt[1] ** 2), 1.0)
        else:
            raise ValueError("ray kind must be 'I' or 'V'")
        return solve_y(X, z, x[0], x[1], y0)


def _cube_root_near(v: complex, guess: complex) -> complex:
    roots = [abs(v) ** (1 / 3) * np.exp(1j * (np.angle(v) + 2 * np.pi * k) / 3) for k in range(3)]
    return min(roots, key=lambda r: abs(r - guess))


def solve_y(X: Hypersurface, z, x1, x2, y0, maxiter: int = 60) -> np.ndarray:
    """Point of ``X`` with given ``(z, x1, x2)``, ``y`` by Newton from ``y0``."""
    p = np.array([z, x1, x2, y0], dtype=complex)
    for _ in range(maxiter):
        g = X.grad(p)[3]
        step = X(p) / g
        p[3] -= step
        if abs(step) <= 1e-16 * abs(p[3]):
            break
    return p


def default_rays(kind: str, n: int, rng: np.random.Generator) -> list[Ray]:
    """``n`` pseudorandom rays of the given kind, with O(1) rescaled coordinates."""
    rays = []
    for i in range(n):
        if kind == "I":
            zt = 0.4 * np.exp(2j * np.pi * rng.random())
            xt = (rng.normal(size=2) + 1j * rng.normal(size=2)) * 0.5
        else:
            zt = np.exp(2j * np.pi * rng.random())
            xt = (rng.normal(size=2) + 1j * rng.normal(size=2)) * 0.5
        rays.append(Ray(kind, complex(zt), tuple(complex(v) for v in xt), i))
    return rays


# --------------------------------------------------------------- fitting


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    stderr: float
    n: int
    radius_range: tuple
    intercept: float = 0.0

    def within(self, target: float, tol: float) -> bool:
        return abs(self.exponent - target) <= tol


def decay_fit(radii, values, min_points: int = 8, min_decades: float = 3.0) -> DecayFit:
    """OLS slope of ``log |value|`` against ``log radius``."""
    r = np.asarray(radii, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if len(r) < min_points:
        raise SamplingError(f"need at least {min_points} radii")
    if np.log10(r.max() / r.min()) < min_decades - 1e-9:
        raise SamplingError(f"radii must span at least {min_decades} decades")
    if np.any(v <= 0):
        raise SamplingError("values must be nonzero for a log-log fit")
    X = np.log(r)
    Y = np.log(v)
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ coef
    dof = max(len(r) - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((X - X.mean()) ** 2).sum()))
    return DecayFit(float(coef[0]), se, len(r), (float(r.min()), float(r.max())), float(coef[1]))


# ------------------------------------------------ equation perturbation


def equation_perturbation_magnitude(region: RegionLabel | str, D: float, K: float | None, b: float,
                                    d: int = DEGREE, cfg: GluingConfig = GluingConfig()) -> float:
    """Size of the rescaled difference between the equations of ``X_1`` and ``X_{1,b}``."""
    label = region if isinstance(region, RegionLabel) else RegionLabel(region)
    if D <= 0:
        raise DomainError("D must be positive")
    if b == 0:
        return 0.0
    if label is RegionLabel.AwaySingular:
        return abs(b) * D ** (2 - d)
    if label is RegionLabel.NearSingular:
        return abs(b) * D ** ((2 - d) / d)
    if label is RegionLabel.Core:
        raise DomainError("no perturbation order in the core")
    if K is None or K <= 0:
        raise DomainError("regions II-IV need a scale K")
    lo, hi = D / 2, 2 * D
    a, k = cfg.alpha, cfg.kappa
    ok = {
        RegionLabel.Intermediate: 4 * lo**a < K < k * hi,
        RegionLabel.GluingBand: lo**a < K < 2 * hi**a,
        RegionLabel.InnerCone: k * lo ** (1.0 / d) < K < hi**a / 2,
    }[label]
    if not ok:
        raise DomainError("scale K inconsistent with region")
    return abs(b) * K ** (2 - d)


def equation_perturbation_sample(p, X_b: HypersurfaceFamily, region: RegionLabel | str,
                                 X_ref: HypersurfaceFamily = X1) -> float:
    """Measured rescaled equation difference at a point ``p`` of ``X_ref``.

    Region I divides ``(F_b - F)(p)`` by ``rho^d``; Region V by ``|z|`` (the
    size of the constant term after rescaling by ``z^{-1/d}``).
    """
    label = region if isinstance(region, RegionLabel) else RegionLabel(region)
    z, *_, rho = _parts(p)
    off = abs(complex(X_b.offset(X_ref, p)))
    if label is RegionLabel.AwaySingular:
        return off / float(rho) ** DEGREE
    if label is RegionLabel.NearSingular:
        return off / abs(complex(z))
    raise DomainError("measured perturbation implemented for Regions I and V")


# -------------------------------------------------------- Ricci residuals


def ricci_residual_map(X: HypersurfaceFamily, cfg: GluingConfig, rays: Sequence[Ray], radii,
                       fd: FDConfig = DEFAULT_FD) -> list[dict]:
    """Ricci potential of the glued metric minus the cone gauge, per ray and radius.

    For ``b = 0`` the potential is differentiated on ``X`` itself.  Otherwise
    sample points live on ``X_1`` and the Ricci potential is evaluated at their
    projection on ``X`` for the potential ``Phi o G^{-1}``.  Each row carries
    ``noise``, the change in ``h`` when the FD step is halved; values below it
    are not resolved.
    """
    from .projection import pushed_potential

    rows, failures, total = [], 0, 0
    phi = glued_terms(cfg)
    for ray in rays:
        for D in radii:
            total += 1
            try:
                p = ray.point(X1, D)
                label = region_classify(p, cfg)
                if X.b == 0 and X.a == 1:
                    ch, terms, Xh = build_chart(p, X1), phi, X1
                else:
                    terms, q = pushed_potential(p, X1, X, phi)
                    ch, Xh = build_chart(q, X), X
                h = ricci_potential(terms, ch, Xh, fd) - CONE_GAUGE
                half = FDConfig(fd.eps / 2, fd.richardson, fd.chart_threshold)
                noise = abs(ricci_potential(terms, ch, Xh, half) - CONE_GAUGE - h)
            except (ValueError, np.linalg.LinAlgError):
                failures += 1
                continue
            *_, R, rho = _parts(p)
            rows.append(dict(ray=ray.index, radius=float(D), rho=float(rho), R=float(R),
                             region=label.value, h=float(h), noise=noise))
    if total and failures > 0.2 * total:
        raise ExperimentError(f"{failures} of {total} samples failed")
    rows.sort(key=lambda r: (r["ray"], r["radius"]))
    return rows


# ------------------------------------------------ nonlinear decomposition


def monge_ampere_split(G: np.ndarray, U: np.ndarray):
    """``(F(u) - F(0), Delta u, Q(u))`` with ``F(u) = log det(g + U) - log det g``.

    ``Q`` is evaluated as ``sum(log1p(l) - l)`` over the eigenvalues of
    ``g^{-1} U`` so that it stays accurate for tiny ``U``.
    """
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    M = Li @ U @ Li.conj().T
    lam = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    if np.any(lam <= -1):
        raise MetricDegeneracyError("g + ddbar u is not positive")
    lap = float(lam.sum())
    Q = float(np.sum(np.log1p(lam) - lam))
    return lap + Q, lap, Q


def _gnorm(G, U):
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    return float(np.linalg.norm(Li @ U @ Li.conj().T, 2))


def bump(t):
    """``exp(-1/(1-t))`` for ``t < 1``, zero otherwise; compactly supported in ``t``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)


@dataclass(frozen=True)
class NonlinearReport:
    order: DecayFit
    max_ratio: float
    n_samples: int
    n_skipped: int
    max_split_residual: float


def nonlinear_split_check(samples, X: Hypersurface = X1, cfg: GluingConfig = GluingConfig(),
                          eps_sweep=None, amplitude: float = 0.05,
                          fd: FDConfig = DEFAULT_FD) -> NonlinearReport:
    """Quadratic vanishing of ``Q`` and the pointwise bound for ``v = 2u``.

    At each sample ``p`` the test function is a bump centred at ``p`` of radius
    ``rho/4`` and amplitude ``amplitude * rho^2``; its Hessian is rescaled if
    needed so that ``|ddbar u|_g < 0.1``.  The Hessians of ``u`` and ``Phi`` are computed
    once; ``Q(eps u)`` then follows from linearity of ``ddbar``.
    """
    eps_sweep = np.geomspace(1e-1, 1e-3, 9) if eps_sweep is None else np.asarray(eps_sweep)
    phi = glued_terms(cfg)
    Qs = np.zeros(len(eps_sweep))
    worst_ratio, worst_split, skipped, used = 0.0, 0.0, 0, 0
    for p in samples:
        p = np.asarray(p, dtype=complex)
        try:
            ch = build_chart(p, X)
            G = ddbar(phi, ch, fd).H
            rho = float(_parts(p)[5])
            rad = 0.25 * rho

            def u(q, centre=p, rad=rad, rho=rho):
                t = np.sum(np.abs(q - centre) ** 2, axis=-1) / rad**2
                return amplitude * rho**2 * math.e * bump(t)

            U = ddbar(u, ch, fd).H
            size = _gnorm(G, U)
            if size >= 0.1:
                U = U * (0.05 / size)
            FU, lap, Q = monge_ampere_split(G, U)
            worst_split = max(worst_split, abs(FU - lap - Q))
            for i, e in enumerate(eps_sweep):
                Qs[i] = max(Qs[i], abs(monge_ampere_split(G, e * U)[2]))
            Fu = monge_ampere_split(G, U)[2]
            Fv = monge_ampere_split(G, 2 * U)[2]
            nu, nv = _gnorm(G, U), _gnorm(G, 2 * U)
            denom = (nu + nv) * _gnorm(G, U)
            if denom > 0:
                worst_ratio = max(worst_ratio, abs(Fu - Fv) / denom)
            used += 1
        except (ValueError, np.linalg.LinAlgError):
            skipped += 1
    order = decay_fit(eps_sweep, Qs, min_points=3, min_decades=2.0)
    return NonlinearReport(order, worst_ratio, used, skipped, worst_split)


# ------------------------------------------------- Laplacian perturbation


def riemannian_laplacian(metric, u, x, h: float = 1e-3) -> float:
    """``(1/sqrt det g) d_i (sqrt det g g^{ij} d_j u)`` at ``x`` by nested central differences."""
    x = np.asarray(x, dtype=float)
    n = len(x)

    def flux(y):
        g = metric(y)
        gi = np.linalg.inv(g)
        sq = math.sqrt(np.linalg.det(g))
        grad = np.array([(u(y + h * e) - u(y - h * e)) / (2 * h) for e in np.eye(n)])
        return sq * gi @ grad

    div = sum((flux(x + h * e)[i] - flux(x - h * e)[i]) / (2 * h) for i, e in enumerate(np.eye(n)))
    return float(div / math.sqrt(np.linalg.det(metric(x))))


def laplacian_perturbation_check(rng: np.random.Generator, n_samples: int = 100, dim: int = 4,
                                 size: float = 0.05) -> float:
    """Largest measured constant in ``|Delta_b u - Delta u| <= C (|d(g_b-g)||du| + |g_b-g||d^2u|)``.

    Metrics are synthetic smooth perturbations of the identity on R^dim.
    """
    worst = 0.0
    for _ in range(n_samples):
        A = rng.normal(size=(dim, dim))
        A = 0.5 * (A + A.T)
        Bm = rng.normal(size=(dim, dim))
        Bm = 0.5 * (Bm + Bm.T)
        k = rng.normal(size=dim)
        c = rng.normal(size=dim)
        quad = rng.normal(size=(dim, dim))
        quad = 0.5 * (quad + quad.T)
        x = rng.normal(size=dim) * 0.3

        g = lambda y: np.eye(dim) + 0.2 * np.sin(y @ k) * A
        dg = lambda y: size * np.cos(y @ c) * Bm
        gb = lambda y: g(y) + dg(y)
        u = lambda y: float(y @ quad @ y + np.sin(y @ c))

        lhs = abs(riemannian_laplacian(gb, u, x) - riemannian_laplacian(g, u, x))
        grad_dg = np.linalg.norm(size * np.sin(x @ c)) * np.linalg.norm(c) * np.linalg.norm(Bm, 2)
        du = np.linalg.norm(2 * quad @ x + np.cos(x @ c) * c)
        hess = np.linalg.norm(2 * quad - np.sin(x @ c) * np.outer(c, c), 2)
        rhs = grad_dg * du + np.linalg.norm(dg(x), 2) * hess
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return worst


# ------------------------------------------------------ model comparison


class GluedPotential:
    """The glued potential as named terms, with an exact increment."""

    def __init__(self, cfg: GluingConfig = GluingConfig()):
        self.cfg = cfg
        t = glued_terms(cfg)
        self.parts = {"z2": t[0], "r2": t[1]}
        if len(t) > 2:
            self.parts["fiber"] = t[2]

    @property
    def terms(self):
        return tuple(self.parts.values())

    def increment(self, p, dp):
        return potential_increment(p, dp, self.cfg)


class FiberModelPotential:
    """Potential of ``C x V_{z0}`` scaled from ``C x V_1``, with fiber stand-in amplitude ``c``.

    In ambient coordinates it reads ``|z - z0|^2 + r^2 + c |z0|^{2/3} / (|z0|^{1/3} + r^2)``.
    The term ``|z - z0|^2`` is represented by ``|z|^2``; they differ by a
    pluriharmonic function.
    """

    def __init__(self, z0: complex, c: float):
        self.a0 = abs(z0) ** (1.0 / 3.0)
        self.c = c

        def fiber(p):
            return self.c * self.a0**2 / (self.a0 + r2_term(p))

        self.parts = {"z2": abs_z2, "r2": r2_term, "fiber": fiber}

    @property
    def terms(self):
        return tuple(self.parts.values())

    def increment(self, p, dp):
        p = np.asarray(p, dtype=complex)
        dp = np.asarray(dp, dtype=complex)
        z, dz = p[..., 0], dp[..., 0]
        dT = r2_increment(p[..., 1:], dp[..., 1:])
        T = r2_term(p)
        a0 = self.a0
        dfib = -self.c * a0 * a0 * dT / ((a0 + T) * (a0 + T + dT))
        return 2 * np.real(np.conj(z) * dz) + np.abs(dz) ** 2 + dT + dfib


def potential_offset(pot_t, pot_s, p):
    """``(Phi_t - Phi_s)(p)`` summed over the terms that differ."""
    out = 0.0
    for name, f in pot_t.parts.items():
        g = pot_s.parts.get(name)
        if g is f:
            continue
        out = out + f(p) - (g(p) if g is not None else 0.0)
    for name, g in pot_s.parts.items():
        if name not in pot_t.parts:
            out = out - g(p)
    return out


def solve_increment(Xt: Hypersurface, Xs: Hypersurface, p, dfree, k: int, maxiter: int = 60):
    """Displacement ``dp`` with free part ``dfree`` and ``F_t(p + dp) = 0`` for ``p`` on ``X_s``."""
    p = np.asarray(p, dtype=complex)
    dp = np.zeros_like(p)
    free = [j for j in range(p.shape[-1]) if j != k]
    dp[..., free] = dfree
    off = Xt.offset(Xs, p)
    scale = np.abs(p[..., k]) + 1e-300
    for _ in range(maxiter):
        r = off + Xt.increment(p, dp)
        step = r / Xt.grad(p + dp)[..., k]
        dp[..., k] -= step
        if np.all(np.abs(step) <= 1e-16 * (scale + np.abs(dp[..., k]))):
            break
    return dp


@dataclass(frozen=True)
class MetricDeviation:
    deviation: np.ndarray  # real symmetric, G^* g_t - g_s in the source chart
    metric: np.ndarray  # real metric of the source potential
    chart: object

    @property
    def norm(self) -> float:
        C = np.linalg.cholesky(self.metric)
        Ci = np.linalg.inv(C)
        return float(np.linalg.norm(Ci @ self.deviation @ Ci.T, 2))


def metric_deviation(p, Xs: Hypersurface, Xt: Hypersurface, pot_s, pot_t,
                     fd: FDConfig = DEFAULT_FD) -> MetricDeviation:
    """``G^* g_t - g_s`` at ``p`` for the projection ``G: X_s -> X_t``.

    With ``w' = w + Delta(w)`` and ``S_t``, ``S_s`` the real metrics in charts
    sharing free coordinates,

        G^* g_t - g_s = [S_t(w') - S_t(w)] + [S_t(w) - S_s(w)]
                        + E^T S_t(w') + S_t(w') E + E^T S_t(w') E.

    Both brackets are Hessians of potential differences that are evaluated
    without cancellation.
    """
    from .complex_diff import Chart, complex_from_real_hessian, real_hessian, real_jacobian
    from .projection import _project, displacement_map

    p = np.asarray(p, dtype=complex)
    ch = build_chart(p, Xs)
    k = ch.solved
    free = list(ch.free)
    E = real_jacobian(displacement_map(ch, Xs, Xt), ch, fd)
    step0, _, _ = _project(p, Xs, Xt)
    delta0 = step0[free]
    S_s = real_metric(ddbar(pot_s.terms, ch, fd).H)

    def to_target(pts):
        return pts + solve_increment(Xt, Xs, pts, 0.0, k)

    def d_fun(pts):
        dp = solve_increment(Xt, Xs, pts, 0.0, k)
        return potential_offset(pot_t, pot_s, pts) + pot_t.increment(pts, dp)

    def shift_fun(pts):
        q = to_target(pts)
        dp = solve_increment(Xt, Xt, q, delta0, k)
        return pot_t.increment(q, dp)

    as_metric = lambda H: real_metric(complex_from_real_hessian(H))
    base_t = to_target(p)
    S_t = real_metric(ddbar(pot_t.terms, Chart(Xt, k, base_t, weights=ch.weights), fd).H)
    S_t_shift = S_t + as_metric(real_hessian(shift_fun, ch, fd))
    dev = as_metric(real_hessian(d_fun, ch, fd)) + (S_t_shift - S_t)
    dev = dev + E.T @ S_t_shift + S_t_shift @ E + E.T @ S_t_shift @ E
    return MetricDeviation(0.5 * (dev + dev.T), S_s, ch)


def model_comparison_check(region: RegionLabel | str, D: float, cfg: GluingConfig = GluingConfig(),
                           rays: Sequence[Ray] | None = None, fiber_c: float | None = None,
                           fd: FDConfig = DEFAULT_FD) -> float:
    """Max metric deviation from the model geometry at scale ``D``.

    ``AwaySingular``: nearest-point projection ``X_1 -> X_0`` with the cone
    potential on both sides.  ``NearSingular``: projection onto ``C x V_{z0}``
    (``z0`` the ``z`` coordinate of each sample) with the fiber stand-in of
    amplitude ``fiber_c`` (default ``cfg.c``).
    """
    from .cone_geometry import X0

    label = region if isinstance(region, RegionLabel) else RegionLabel(region)
    rng = np.random.default_rng(0)
    worst = 0.0
    if label is RegionLabel.AwaySingular:
        rays = default_rays("I", 4, rng) if rays is None else rays
        pot = GluedPotential(cfg)
        for ray in rays:
            p = ray.point(X1, D)
            worst = max(worst, metric_deviation(p, X1, X0, pot, pot, fd).norm)
    elif label is RegionLabel.NearSingular:
        rays = default_rays("V", 4, rng) if rays is None else rays
        fc = cfg.c if fiber_c is None else fiber_c
        for ray in rays:
            p = ray.point(X1, D)
            z0 = complex(p[0])
            Y = HypersurfaceFamily(a=0.0, b=0.0, extra={(0, 0, 0, 0): z0})
            worst = max(worst, metric_deviation(p, X1, Y, GluedPotential(cfg),
                                                FiberModelPotential(z0, fc), fd).norm)
    else:
        raise DomainError("model comparison is defined for Regions I and V")
    return worst


def radial_length_comparison(D: float, ray: Ray, cfg: GluingConfig = GluingConfig(),
                             n_segments: int = 16, fd: FDConfig = DEFAULT_FD) -> dict:
    """Lengths of the radial curve ``t -> ray.point(X_1, t D)``, ``t in [1, 2]``, under ``g`` and ``G^* g_0``.

    Midpoint rule in the curve parameter; per segment the length difference is
    ``v^T dev v / (|v|_g + |v|_{G^* g_0})``, so it is free of cancellation.
    """
    from .cone_geometry import X0

    pot = GluedPotential(cfg)
    ts = np.linspace(1.0, 2.0, n_segments + 1)
    len_g = 0.0
    diff = 0.0
    for a, b in zip(ts[:-1], ts[1:]):
        m = ray.point(X1, 0.5 * (a + b) * D)
        md = metric_deviation(m, X1, X0, pot, pot, fd)
        ch = md.chart
        va = ch.coords(ray.point(X1, a * D))
        vb = ch.coords(ray.point(X1, b * D))
        v = vb - va
        x = np.concatenate([v.real, v.imag])
        lg = float(np.sqrt(x @ md.metric @ x))
        l0 = float(np.sqrt(max(x @ (md.metric + md.deviation) @ x, 0.0)))
        len_g += lg
        diff += float(x @ md.deviation @ x) / (lg + l0)
    return {"D": D, "length_g": len_g, "length_g0": len_g + diff, "relative_error": abs(diff) / len_g}
