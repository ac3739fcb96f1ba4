"""Implicit-function charts on hypersurfaces and finite-difference Kähler geometry.

A :class:`Chart` parametrises a neighbourhood of a point on ``{F = 0}`` by the
displacement of all but one coordinate; the remaining (solved) coordinate is
recovered by Newton iteration on the exactly expanded increment of ``F``.

The metric of a potential ``phi`` is its complex Hessian
``g[j, k] = d^2 phi / dw_j d(conj w_k)``.  Tangent vectors have squared length
``v^T g conj(v)``, so ``phi = |w|^2`` gives the Euclidean length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cone_geometry import CXA2_WEIGHTS, Hypersurface, volume_form_coeff


class ChartError(ValueError):
    """Chart construction or evaluation failed."""


class SingularChartError(ChartError):
    """All partial derivatives vanish at the base point."""


class EvaluationError(ValueError):
    """A scalar field returned non-finite values on a stencil."""


class MetricDegeneracyError(ValueError):
    """A Hermitian form expected to be positive definite is not."""


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference settings.

    ``eps`` is the relative step.  Second differences lose about
    ``1e-16 / eps^2`` relative accuracy to rounding, so the default is coarse
    and accuracy comes from Richardson extrapolation instead.
    """

    eps: float = 2e-3
    richardson: int = 1
    chart_threshold: float = 1e-6

    def __post_init__(self):
        if not 1e-9 < self.eps < 1e-2:
            raise ValueError("eps must lie in (1e-9, 1e-2)")
        if self.richardson < 0:
            raise ValueError("richardson must be nonnegative")


DEFAULT_FD = FDConfig()


@dataclass(frozen=True)
class HermitianForm:
    """A complex Hermitian matrix, symmetrised exactly on construction."""

    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        object.__setattr__(self, "H", 0.5 * (H + H.conj().T))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.H)

    @property
    def is_positive(self) -> bool:
        """Positivity after diagonal scaling, so that anisotropic charts are judged fairly."""
        d = np.real(np.diag(self.H))
        if np.any(d <= 0):
            return False
        s = 1.0 / np.sqrt(d)
        ev = np.linalg.eigvalsh(self.H * np.outer(s, s))
        return bool(ev[0] > 1e-10)

    def det(self) -> float:
        return float(np.real(np.linalg.det(self.H)))

    def __add__(self, other: "HermitianForm") -> "HermitianForm":
        return HermitianForm(self.H + other.H)


@dataclass(frozen=True)
class Chart:
    """Chart on ``X`` around ``base`` solving for coordinate ``solved``.

    Chart coordinates are displacements of the free coordinates from their
    base values.
    """

    X: Hypersurface
    solved: int
    base: np.ndarray
    threshold: float = 0.0
    radius: float = np.inf
    weights: tuple = field(default=tuple(float(w) for w in CXA2_WEIGHTS.vector()))

    @property
    def free(self) -> tuple[int, ...]:
        return tuple(j for j in range(len(self.base)) if j != self.solved)

    @property
    def dim(self) -> int:
        return len(self.base) - 1

    def coords(self, p) -> np.ndarray:
        """Chart coordinates (displacements) of an ambient point."""
        p = np.asarray(p, dtype=complex)
        return p[..., list(self.free)] - self.base[list(self.free)]

    def solve_displacement(self, dw, maxiter: int = 40) -> np.ndarray:
        """Full ambient displacement ``dp`` with ``F(base + dp) = 0`` for free part ``dw``."""
        dw = np.asarray(dw, dtype=complex)
        dp = np.zeros(dw.shape[:-1] + (len(self.base),), dtype=complex)
        dp[..., list(self.free)] = dw
        F0 = self.X(self.base)
        k = self.solved
        scale = 1.0 + np.abs(self.base[k])
        for it in range(maxiter):
            r = F0 + self.X.increment(self.base, dp)
            dF = self.X.grad(self.base + dp)[..., k]
            if np.any(np.abs(dF) < 1e-300):
                raise ChartError("solved-coordinate derivative vanished during Newton solve")
            step = r / dF
            dp[..., k] -= step
            if np.all(np.abs(step) <= 1e-15 * (scale + np.abs(dp[..., k]))):
                break
        else:
            raise ChartError("Newton re-solve did not converge; point outside chart")
        return dp

    def embed(self, dw) -> np.ndarray:
        return self.base + self.solve_displacement(dw)

    def steps(self, eps: float) -> np.ndarray:
        """Per-coordinate FD steps: eps times the largest same-weight coordinate size."""
        a = np.abs(self.base)
        w = np.asarray(self.weights)
        out = []
        for j in self.free:
            same = a[np.isclose(w, w[j])]
            out.append(eps * max(1.0, float(same.max())))
        return np.asarray(out)


@dataclass(frozen=True)
class FlatChart:
    """Identity chart on C^n, with displacements as coordinates."""

    base: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.base)

    def coords(self, p):
        return np.asarray(p, dtype=complex) - self.base

    def embed(self, dw):
        return self.base + np.asarray(dw, dtype=complex)

    def steps(self, eps: float) -> np.ndarray:
        return eps * np.maximum(1.0, np.abs(self.base))


def build_chart(p, X: Hypersurface, cfg: FDConfig = DEFAULT_FD, weights=None) -> Chart:
    """Chart at ``p`` solving for the coordinate with the largest ``|dF|``.

    Ties go to the earliest coordinate in the order ``(z, x1, x2, y)``.
    """
    p = np.asarray(p, dtype=complex)
    deg = max(sum(e) for e in X.terms)
    norm = float(np.linalg.norm(p))
    if abs(X(p)) > 1e-8 * (1 + norm**deg):
        raise ChartError("point is not on the hypersurface")
    g = np.abs(X.grad(p))
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0 or gnorm < 1e-300:
        raise SingularChartError("all partial derivatives vanish (singular point)")
    k = int(np.argmax(g))  # argmax returns the first maximiser
    thr = cfg.chart_threshold * gnorm
    radius = 0.25 * g[k] * max(1.0, norm) / gnorm
    if weights is None:
        weights = _default_weights(X)
    return Chart(X, k, p.copy(), thr, radius, tuple(weights))


def _default_weights(X):
    if len(X.names) == 4:
        return tuple(float(w) for w in CXA2_WEIGHTS.vector())
    return tuple(float(CXA2_WEIGHTS.weights[n]) for n in X.names)


def _stencil(n: int, h: np.ndarray):
    """Offsets (in real coordinates) and the bookkeeping for a full real Hessian."""
    m = 2 * n
    hs = np.concatenate([h, h])
    offs = [np.zeros(m)]
    index = {}
    for a in range(m):
        for s in (1, -1):
            e = np.zeros(m)
            e[a] = s * hs[a]
            index[(a, s)] = len(offs)
            offs.append(e)
    for a in range(m):
        for b in range(a + 1, m):
            for sa in (1, -1):
                for sb in (1, -1):
                    e = np.zeros(m)
                    e[a] = sa * hs[a]
                    e[b] = sb * hs[b]
                    index[(a, sa, b, sb)] = len(offs)
                    offs.append(e)
    return np.asarray(offs), index, hs


def _real_hessian(vals, index, hs):
    m = len(hs)
    H = np.zeros(m * m).reshape(m, m)
    f0 = vals[0]
    for a in range(m):
        H[a, a] = (vals[index[(a, 1)]] - 2 * f0 + vals[index[(a, -1)]]) / hs[a] ** 2
    for a in range(m):
        for b in range(a + 1, m):
            v = (
                vals[index[(a, 1, b, 1)]]
                - vals[index[(a, 1, b, -1)]]
                - vals[index[(a, -1, b, 1)]]
                + vals[index[(a, -1, b, -1)]]
            ) / (4 * hs[a] * hs[b])
            H[a, b] = H[b, a] = v
    return H


def complex_from_real_hessian(H: np.ndarray) -> np.ndarray:
    """``g[j,k] = d^2/dw_j d(conj w_k)`` from the Hessian in ``(Re w, Im w)`` blocks."""
    n = H.shape[-1] // 2
    A = H[..., :n, :n]
    B = H[..., n:, n:]
    C = H[..., :n, n:]
    return 0.25 * ((A + B) + 1j * (C - np.swapaxes(C, -1, -2)))


def real_hessian(phi, chart, cfg: FDConfig = DEFAULT_FD, dw0=None, error: bool = False):
    """Richardson-extrapolated real Hessian of ``phi o chart.embed`` at ``dw0``.

    ``phi`` may be a callable on ambient points or a sequence of callables whose
    Hessians are summed (each differentiated separately).
    """
    fields = list(phi) if isinstance(phi, (list, tuple)) else [phi]
    n = chart.dim
    dw0 = np.zeros(n, dtype=complex) if dw0 is None else np.asarray(dw0, dtype=complex)
    h0 = chart.steps(cfg.eps)
    levels = []
    for lev in range(cfg.richardson + 1):
        offs, index, hs = _stencil(n, h0 / 2**lev)
        dws = dw0 + offs[:, :n] + 1j * offs[:, n:]
        pts = chart.embed(dws)
        H = np.zeros((2 * n, 2 * n))
        for f in fields:
            vals = np.asarray(f(pts), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise EvaluationError("non-finite field value on FD stencil")
            H = H + _real_hessian(vals, index, hs)
        levels.append(H)
    # Richardson tableau for an even-power error expansion
    T = levels
    err = np.zeros_like(levels[0])
    for j in range(1, len(T)):
        new = []
        for i in range(len(T) - 1):
            f = 4.0**j
            new.append((f * T[i + 1] - T[i]) / (f - 1))
        if j == 1:
            err = np.abs(T[-1] - T[-2]) / 3
        T = new
    H = 0.5 * (T[-1] + T[-1].T)
    return (H, err) if error else H


def ddbar(phi, chart, cfg: FDConfig = DEFAULT_FD, dw0=None, error: bool = False):
    """Complex Hessian of a real potential in chart coordinates, as a :class:`HermitianForm`."""
    H = real_hessian(phi, chart, cfg, dw0, error)
    if error:
        H, err = H
        return HermitianForm(complex_from_real_hessian(H)), np.abs(complex_from_real_hessian(err))
    return HermitianForm(complex_from_real_hessian(H))


def ricci_potential(phi, chart, X: Hypersurface | None = None, cfg: FDConfig = DEFAULT_FD,
                    g: HermitianForm | None = None) -> float:
    """``log det g - log |Omega_chart|^2`` (flat space with Euclidean potential gives 0).

    ``X = None`` means the chart is a flat chart of C^n with the standard form.
    """
    g = ddbar(phi, chart, cfg) if g is None else g
    if not g.is_positive:
        raise MetricDegeneracyError("metric is not positive definite")
    logdet = float(np.sum(np.log(g.eigenvalues)))
    coef = 1.0 if X is None else volume_form_coeff(chart.base, X, chart)
    return logdet - 2.0 * float(np.log(abs(coef)))


def laplacian(g: HermitianForm, u, chart, cfg: FDConfig = DEFAULT_FD) -> float:
    """``g^{j kbar} d_j d_kbar u``, the complex trace."""
    if not g.is_positive:
        raise MetricDegeneracyError("metric is not positive definite")
    U = ddbar(u, chart, cfg).H
    return float(np.real(np.trace(np.linalg.solve(g.H, U))))


def hermitian_norm(A: np.ndarray, g: HermitianForm) -> float:
    """Operator norm of a complex-linear endomorphism measured in the metric ``g``."""
    L = np.linalg.cholesky(g.H.T).conj().T  # |v|_g^2 = v^H g^T v = |L v|^2
    return float(np.linalg.norm(L @ A @ np.linalg.inv(L), 2))


def real_metric(G: np.ndarray) -> np.ndarray:
    """Real symmetric form on ``(Re v, Im v)`` with ``x^T S x = v^T G conj(v)``."""
    A, B = G.real, G.imag
    return np.block([[A, B], [-B, A]])


def curve_length(metric: Callable, polyline: Sequence, chart=None) -> float:
    """Length of a polyline with the metric evaluated at segment midpoints.

    ``metric(q)`` returns a Hermitian matrix at the point ``q`` (coordinates of
    the polyline).  If ``chart`` is given, the polyline holds chart
    displacements and each midpoint must lie within the validity radius.
    """
    pts = np.asarray(polyline, dtype=complex)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v = b - a
        mid = 0.5 * (a + b)
        if chart is not None and np.linalg.norm(mid) > chart.radius:
            raise ChartError("polyline leaves the chart; resample")
        G = np.asarray(metric(mid))
        total += float(np.sqrt(max(np.real(v @ G @ np.conj(v)), 0.0)))
    return total


def real_jacobian(func, chart, cfg: FDConfig = DEFAULT_FD, dw0=None) -> np.ndarray:
    """Real Jacobian of a complex-vector-valued ``func`` of chart displacements.

    Rows and columns are in ``(Re, Im)`` block order.  Central differences with
    ``cfg.richardson`` extrapolation levels.
    """
    n = chart.dim
    dw0 = np.zeros(n, dtype=complex) if dw0 is None else np.asarray(dw0, dtype=complex)
    h0 = np.concatenate([chart.steps(cfg.eps)] * 2)
    levels = []
    for lev in range(cfg.richardson + 1):
        h = h0 / 2**lev
        offs = np.zeros((2 * n, 2, n), dtype=complex)
        for a in range(2 * n):
            unit = 1.0 if a < n else 1j
            offs[a, 0, a % n] = unit * h[a]
            offs[a, 1, a % n] = -unit * h[a]
        vals = np.asarray(func(dw0 + offs), dtype=complex)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("non-finite values on FD stencil")
        d = (vals[:, 0] - vals[:, 1]) / (2 * h[:, None])  # (2n, m): column a
        levels.append(np.concatenate([d.real, d.imag], axis=1).T)
    T = levels
    for j in range(1, len(levels)):
        f = 4.0**j
        T = [(f * T[i + 1] - T[i]) / (f - 1) for i in range(len(T) - 1)]
    return T[-1]


def standard_J(n: int) -> np.ndarray:
    """Multiplication by ``i`` on ``(Re, Im)`` block coordinates of C^n."""
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, -I], [I, Z]])


def log1p_complex(z):
    """Accurate ``log(1 + z)`` for complex ``z`` including tiny values."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    series = z - z * z / 2 + z**3 / 3 - z**4 / 4
    with np.errstate(all="ignore"):
        direct = np.log(1 + z)
    return np.where(small, series, direct)
