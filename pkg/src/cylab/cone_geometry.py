"""Explicit geometry of the A2 cone and of C x A2 inside C^4.

Points of C^4 are complex arrays with trailing axis ``(z, x1, x2, y)``; points
of the surface cone in C^3 use ``(x1, x2, y)``.  Every function accepts batches
(any leading shape).

Weights are ``z:1, x1:3, x2:3, y:2`` with homogeneity degree 6, so that
``f = x1^2 + x2^2 + y^3`` satisfies ``f(t.x) = t^6 f(x)``.
"""

from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping

import numpy as np

COORDS = ("z", "x1", "x2", "y")
SURFACE_COORDS = ("x1", "x2", "y")
DEGREE = 6

# fixed cube root of -1 used by the quotient map
ZETA = cmath.exp(1j * math.pi / 3)


class DomainError(ValueError):
    """Input outside the domain of an operation."""


@dataclass(frozen=True)
class WeightSystem:
    weights: Mapping[str, Fraction]
    degree: Fraction

    def __post_init__(self):
        if any(w <= 0 for w in self.weights.values()):
            raise DomainError("weights must be strictly positive")
        if self.degree <= 0:
            raise DomainError("degree must be positive")

    def vector(self, names=COORDS) -> tuple[Fraction, ...]:
        return tuple(self.weights[n] for n in names)

    def weighted_degree(self, exponents, names=COORDS) -> Fraction:
        return sum((Fraction(e) * self.weights[n] for e, n in zip(exponents, names)), Fraction(0))

    def is_homogeneous(self, terms: Mapping[tuple, complex], names=COORDS) -> bool:
        """True when every monomial with nonzero coefficient has weighted degree ``degree``."""
        return all(
            self.weighted_degree(e, names) == self.degree for e, c in terms.items() if c != 0
        )


CXA2_WEIGHTS = WeightSystem(
    {"z": Fraction(1), "x1": Fraction(3), "x2": Fraction(3), "y": Fraction(2)}, Fraction(DEGREE)
)


@dataclass(frozen=True)
class ScaledPoint:
    point: np.ndarray
    log_t: complex  # principal logarithm used for the fractional powers


def weighted_scale(t: complex, p, w: WeightSystem = CXA2_WEIGHTS, names=COORDS) -> ScaledPoint:
    """Apply ``t . p`` coordinate-wise, ``p_i -> t^{w_i} p_i``.

    Non-integer weights use ``exp(w_i * Log t)`` with the principal logarithm,
    which is recorded in the result.
    """
    if t == 0:
        raise DomainError("weighted action needs t != 0")
    p = np.asarray(p, dtype=complex)
    log_t = cmath.log(t)
    factors = []
    for n in names:
        wi = w.weights[n]
        if wi.denominator == 1:
            factors.append(complex(t) ** int(wi))
        else:
            factors.append(cmath.exp(float(wi) * log_t))
    return ScaledPoint(p * np.asarray(factors), log_t)


def quotient_map_a2(z1, z2) -> np.ndarray:
    """The Z3 quotient map C^2 -> A2, returning ``(x1, x2, y)``."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    a, b = z1**3, z2**3
    return np.stack([(a + b) / 2, (a - b) / 2j, ZETA * z1 * z2], axis=-1)


def a2_cover_volume_coeff(z1, z2):
    """Coefficient of the pulled-back residue form ``dx1 ^ dx2 / (3 y^2)`` on the cover.

    The Jacobian of ``(z1, z2) -> (x1, x2)`` is ``(9/2) i z1^2 z2^2``, so the
    coefficient is the constant ``(3/2) i / zeta^2``; computed pointwise here.
    """
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    jac = (1.5 * z1**2) * (-1.5 * z2**2 / 1j) - (1.5 * z2**2) * (1.5 * z1**2 / 1j)
    y = ZETA * z1 * z2
    return jac / (3 * y * y)


def f_a2(x1, x2, y):
    return x1 * x1 + x2 * x2 + y**3


def _cubic_largest_root(s, q):
    # largest real root of T^3 - 3 q T - 2 s = 0 for s, q >= 0
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    s, q = np.broadcast_arrays(s, q)
    T = np.zeros(s.shape)
    disc = s * s - q**3
    one = disc >= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        A = np.cbrt(s + np.sqrt(np.where(one, disc, 0.0)))
        Tc = np.where(A > 0, A + q / np.where(A > 0, A, 1.0), 0.0)
        sq = np.sqrt(q)
        c = np.clip(s / np.where(q > 0, q * sq, 1.0), -1.0, 1.0)
        Tt = 2 * sq * np.cos(np.arccos(c) / 3)
    T = np.where(one, Tc, Tt)
    for _ in range(2):
        d = 3 * (T * T - q)
        ok = d > 1e-300
        step = np.where(ok, (T**3 - 3 * q * T - 2 * s) / np.where(ok, d, 1.0), 0.0)
        T = T - step
    return T


def r2_from_invariants(s, q):
    """``r^2`` as a function of ``s = |x1|^2+|x2|^2`` and ``q = |y|^2``."""
    return _cubic_largest_root(s, q)


def r2_a2(x1, x2, y):
    """Radial potential of the flat A2 cone, extended to all of C^3.

    Returns the largest real root of ``T^3 - 3|y|^2 T - 2(|x1|^2+|x2|^2) = 0``.
    On A2 this agrees with the closed form obtained from Cardano's formula
    and with ``|z1|^2 + |z2|^2`` on the cover.
    """
    x1, x2, y = (np.asarray(v, dtype=complex) for v in (x1, x2, y))
    s = np.abs(x1) ** 2 + np.abs(x2) ** 2
    q = np.abs(y) ** 2
    return _cubic_largest_root(s, q)


def r2_closed_form(x1, x2, y):
    """Cardano expression for ``r^2`` valid where ``s^2 >= |y|^6`` (e.g. on A2)."""
    s = np.abs(x1) ** 2 + np.abs(x2) ** 2
    q3 = np.abs(y) ** 6
    root = np.sqrt(np.maximum(s * s - q3, 0.0))
    plus = s + root
    # s - root = |y|^6 / (s + root), free of cancellation
    minus = np.divide(q3, plus, out=np.zeros_like(plus), where=plus > 0)
    return np.cbrt(plus) + np.cbrt(minus)


def r2_increment(x, dx):
    """``r^2(x + dx) - r^2(x)`` without cancellation for tiny ``dx``.

    ``x`` and ``dx`` carry ``(x1, x2, y)`` on the trailing axis.
    """
    x = np.asarray(x, dtype=complex)
    dx = np.asarray(dx, dtype=complex)
    s = np.abs(x[..., 0]) ** 2 + np.abs(x[..., 1]) ** 2
    q = np.abs(x[..., 2]) ** 2
    ds = sum(2 * np.real(np.conj(x[..., i]) * dx[..., i]) + np.abs(dx[..., i]) ** 2 for i in (0, 1))
    dq = 2 * np.real(np.conj(x[..., 2]) * dx[..., 2]) + np.abs(dx[..., 2]) ** 2
    T = _cubic_largest_root(s, q)
    d = np.zeros_like(T)
    for _ in range(4):
        den = 3 * T * T + 3 * T * d + d * d - 3 * q - 3 * dq
        d = (2 * ds + 3 * dq * T) / den
    return d


def ambient_R2(x1, x2, y):
    """Weighted-homogeneous radial function ``((|x1|^2+|x2|^2)^2 + |y|^6)^{1/6}``."""
    s = np.abs(x1) ** 2 + np.abs(x2) ** 2
    return (s * s + np.abs(y) ** 6) ** (1.0 / 6.0)


def ambient_rho2(p):
    p = np.asarray(p, dtype=complex)
    return np.abs(p[..., 0]) ** 2 + ambient_R2(p[..., 1], p[..., 2], p[..., 3])


def ambient_metric(p) -> np.ndarray:
    """Closed-form complex Hessian of ``rho^2`` on C^4, shape ``(..., 4, 4)``.

    Entry ``[j, k]`` is ``d^2 rho^2 / dw_j d(conj w_k)``.  Singular on ``x = 0``.
    """
    p = np.asarray(p, dtype=complex)
    x1, x2, y = p[..., 1], p[..., 2], p[..., 3]
    s = np.abs(x1) ** 2 + np.abs(x2) ** 2
    q = np.abs(y) ** 2
    S = s * s + q**3
    dS = np.stack([np.zeros_like(x1), 2 * s * np.conj(x1), 2 * s * np.conj(x2), 3 * q * q * np.conj(y)], -1)
    ddS = np.zeros(p.shape + (4,), dtype=complex)
    xs = np.stack([x1, x2], -1)
    ddS[..., 1:3, 1:3] = 2 * (np.conj(xs)[..., :, None] * xs[..., None, :]) + 2 * s[..., None, None] * np.eye(2)
    ddS[..., 3, 3] = 9 * q * q
    S6 = S[..., None, None]
    G = (S6 ** (-5 / 6)) / 6 * ddS - 5 / 36 * S6 ** (-11 / 6) * dS[..., :, None] * np.conj(dS)[..., None, :]
    G[..., 0, 0] += 1.0
    return G


class Hypersurface:
    """Zero set of a polynomial given by a sparse ``exponents -> coefficient`` map."""

    names: tuple[str, ...] = COORDS

    @property
    def terms(self) -> dict[tuple[int, ...], complex]:
        raise NotImplementedError

    @property
    def ndim(self) -> int:
        return len(self.names)

    def __call__(self, p):
        p = np.asarray(p, dtype=complex)
        out = np.zeros(p.shape[:-1], dtype=complex)
        for e, c in self.terms.items():
            out = out + c * _monomial(p, e)
        return out

    def grad(self, p):
        """Holomorphic gradient ``(dF/dw_j)``."""
        p = np.asarray(p, dtype=complex)
        out = np.zeros(p.shape, dtype=complex)
        for e, c in self.terms.items():
            for j, ej in enumerate(e):
                if ej:
                    e2 = list(e)
                    e2[j] -= 1
                    out[..., j] += c * ej * _monomial(p, e2)
        return out

    def increment(self, p, dp):
        """``F(p + dp) - F(p)`` expanded term by term (no cancellation for small dp)."""
        p = np.asarray(p, dtype=complex)
        dp = np.asarray(dp, dtype=complex)
        p, dp = np.broadcast_arrays(p, dp)
        out = np.zeros(p.shape[:-1], dtype=complex)
        for e, c in self.terms.items():
            for k in itertools.product(*(range(ej + 1) for ej in e)):
                if not any(k):
                    continue
                coef = c * math.prod(math.comb(ej, kj) for ej, kj in zip(e, k))
                term = coef * np.ones(p.shape[:-1], dtype=complex)
                for j, (ej, kj) in enumerate(zip(e, k)):
                    if ej - kj:
                        term = term * p[..., j] ** (ej - kj)
                    if kj:
                        term = term * dp[..., j] ** kj
                out = out + term
        return out

    def offset(self, other: "Hypersurface", p):
        """``(F_self - F_other)(p)`` evaluated from the coefficient difference."""
        diff = dict(self.terms)
        for e, c in other.terms.items():
            diff[e] = diff.get(e, 0) - c
        p = np.asarray(p, dtype=complex)
        out = np.zeros(p.shape[:-1], dtype=complex)
        for e, c in diff.items():
            if c != 0:
                out = out + c * _monomial(p, e)
        return out


class Polynomial(Hypersurface):
    """A polynomial given directly by its sparse terms."""

    def __init__(self, terms, names=COORDS):
        self._terms = {tuple(e): c for e, c in terms.items() if c != 0}
        self.names = tuple(names)

    @property
    def terms(self):
        return self._terms


def partial(X: Hypersurface, k: int) -> Polynomial:
    """``dF/dw_k`` as a :class:`Polynomial`."""
    out = {}
    for e, c in X.terms.items():
        if e[k]:
            e2 = list(e)
            e2[k] -= 1
            out[tuple(e2)] = out.get(tuple(e2), 0) + c * e[k]
    return Polynomial(out, X.names)


def _monomial(p, e):
    out = np.ones(p.shape[:-1], dtype=complex)
    for j, ej in enumerate(e):
        if ej:
            out = out * p[..., j] ** ej
    return out


_MONO = {"z": (1, 0, 0, 0), "x1": (0, 1, 0, 0), "x2": (0, 0, 1, 0), "y": (0, 0, 0, 1)}


@dataclass(frozen=True)
class HypersurfaceFamily(Hypersurface):
    """``a z + b y + x1^2 + x2^2 + y^3 (+ extra) = 0`` in C^4.

    ``a = 0`` gives the cone ``C x A2``; family members proper have ``a != 0``.
    """

    a: complex = 1.0
    b: complex = 0.0
    extra: Mapping[tuple[int, int, int, int], complex] = field(default_factory=dict)

    @cached_property
    def terms(self):
        t = {(0, 2, 0, 0): 1.0, (0, 0, 2, 0): 1.0, (0, 0, 0, 3): 1.0}
        if self.a != 0:
            t[(1, 0, 0, 0)] = complex(self.a)
        if self.b != 0:
            t[(0, 0, 0, 1)] = complex(self.b)
        for e, c in self.extra.items():
            t[tuple(e)] = t.get(tuple(e), 0) + c
        return t

    @property
    def is_member(self) -> bool:
        return self.a != 0

    def __hash__(self):
        return hash((complex(self.a), complex(self.b), tuple(sorted(self.extra.items()))))


@dataclass(frozen=True)
class FiberSurface(Hypersurface):
    """``c + x1^2 + x2^2 + y^3 = 0`` in C^3 (``c = 0``: the A2 cone, ``c = 1``: V1)."""

    c: complex = 0.0
    names: tuple[str, ...] = SURFACE_COORDS

    @cached_property
    def terms(self):
        t = {(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 3): 1.0}
        if self.c != 0:
            t[(0, 0, 0)] = complex(self.c)
        return t

    def __hash__(self):
        return hash(("fiber", complex(self.c)))


X0 = HypersurfaceFamily(a=0.0, b=0.0)
X1 = HypersurfaceFamily(a=1.0, b=0.0)
A2_CONE = FiberSurface(0.0)
V1 = FiberSurface(1.0)


def volume_form_coeff(p, X: Hypersurface, chart) -> complex:
    """Coefficient of the residue form ``dw_1 ^ ... / dF`` in the chart coordinates.

    For a chart solving coordinate ``k`` this is ``(-1)^k / (dF/dw_k)``.  On
    ``X_{1,b}`` in the z-chart it is 1, and on the A2 cone in the y-chart it is
    ``1/(3 y^2)``.
    """
    k = chart.solved
    g = X.grad(p)[..., k]
    if np.any(np.abs(g) < chart.threshold):
        from .complex_diff import ChartError

        raise ChartError("solved-coordinate derivative below chart threshold")
    return (-1) ** k / g


def rescaled_family_coefficients(X: HypersurfaceFamily, t: float):
    """Coefficients ``(z, y)`` of ``F_t^{-1} X`` normalised so that ``f`` has coefficient 1.

    With ``d = 6`` these are ``a t^{-5}`` and ``b t^{-4}``.
    """
    return X.a * t ** (1 - DEGREE), X.b * t ** (2 - DEGREE)
