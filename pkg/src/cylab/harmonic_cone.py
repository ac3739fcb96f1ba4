"""Harmonic functions, linear vector fields and automorphisms of C x A2.

The catalog consists of the two families of degree-2, phase-invariant
harmonic functions

* ``u1``, built from a real skew matrix ``b`` acting on ``(x1, x2)``;
* ``u2 = 2|z|^2 - r^2``;

together with the holomorphic linear vector fields ``W1``, ``W2`` and the
generator of the automorphisms ``Phi_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .cone_geometry import HypersurfaceFamily, quotient_map_a2, r2_a2
from .complex_diff import DEFAULT_FD, FDConfig, FlatChart, ddbar


class ExcludedLocusError(ValueError):
    """Evaluation requested where the closed form has a vanishing square root."""


class TangencyError(ValueError):
    """Vector field not tangent to the hypersurface."""


BETA = sp.Rational(4, 9)
RADIAL_COEFF = sp.Rational(5, 18)


def _split(p):
    p = np.asarray(p, dtype=complex)
    return p[..., 0], p[..., 1], p[..., 2], p[..., 3]


def _skew(b_matrix):
    B = np.asarray(b_matrix, dtype=float)
    if B.shape != (2, 2) or not np.allclose(B, -B.T):
        raise ValueError("b_matrix must be a real skew-symmetric 2x2 matrix")
    return B


def _check_u1_locus(x1, x2, y):
    s = np.abs(x1) ** 2 + np.abs(x2) ** 2
    root = np.sqrt(np.maximum(s * s - np.abs(y) ** 6, 0.0))
    if np.any(root <= 1e-12 * np.maximum(1.0, s)):
        raise ExcludedLocusError("u1 is undefined where (|x1|^2+|x2|^2)^2 = |y|^6")
    return s, root


def eval_u1(p, b_matrix) -> np.ndarray:
    """``u1 = W1(r^2)`` for ``W1 = i b_ij x_i d/dx_j``.

    The chain rule applied to the cubic defining ``r^2`` gives
    ``(2/3) i b_ij x_i conj(x_j) / (r^4 - |y|^2)``.  On the C^2 cover this is
    ``-b_12 (|z1|^2 - |z2|^2) / 3``.
    """
    B = _skew(b_matrix)
    _, x1, x2, y = _split(p)
    _check_u1_locus(x1, x2, y)
    T = r2_a2(x1, x2, y)
    herm = 1j * B[0, 1] * (x1 * np.conj(x2) - x2 * np.conj(x1))
    return np.real(2.0 / 3.0 * herm / (T * T - np.abs(y) ** 2))


def eval_u1_printed(p, b_matrix) -> np.ndarray:
    """The closed form ``(1/3) i b_ij r^2 x_i conj(x_j) / sqrt(s^2 - |y|^6)``.

    Kept for comparison with :func:`eval_u1`; on the cover it equals
    ``-(b_12/3)(|z1|^2+|z2|^2) sign(|z1|-|z2|)``, which is not harmonic.
    """
    B = _skew(b_matrix)
    _, x1, x2, y = _split(p)
    _, root = _check_u1_locus(x1, x2, y)
    T = r2_a2(x1, x2, y)
    herm = 1j * B[0, 1] * (x1 * np.conj(x2) - x2 * np.conj(x1))
    return np.real(herm * T / (3.0 * root))


def eval_u2(p) -> np.ndarray:
    z, x1, x2, y = _split(p)
    return 2 * np.abs(z) ** 2 - r2_a2(x1, x2, y)


@dataclass(frozen=True)
class HarmonicCatalogEntry:
    name: str
    evaluator: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, p):
        return self.evaluator(p)


def u1_entry(b12: float = 1.0) -> HarmonicCatalogEntry:
    B = np.array([[0.0, b12], [-b12, 0.0]])
    return HarmonicCatalogEntry("u1", lambda p: eval_u1(p, B), {"b12": b12})


U2 = HarmonicCatalogEntry("u2", eval_u2)


def cover_to_ambient(q) -> np.ndarray:
    """``(z, z1, z2) -> (z, x1, x2, y)`` on C x A2."""
    q = np.asarray(q, dtype=complex)
    x = quotient_map_a2(q[..., 1], q[..., 2])
    return np.concatenate([q[..., :1], x], axis=-1)


def sample_cover(rng: np.random.Generator, n: int, scale: float = 1.0, min_ratio: float = 1e-3):
    """Gaussian points of C^3 (the cover of C x A2) away from the singular ray.

    Points with ``|z1|^2+|z2|^2 <= min_ratio * rho`` or with ``|z1| ~ |z2|`` (the
    excluded locus of the u1 closed form) are rejected.
    """
    out = []
    while sum(len(o) for o in out) < n:
        q = scale * (rng.normal(size=(2 * n, 3)) + 1j * rng.normal(size=(2 * n, 3)))
        u, v = np.abs(q[:, 1]) ** 2, np.abs(q[:, 2]) ** 2
        rho = np.abs(q[:, 0]) ** 2 + u + v
        keep = (u + v > min_ratio * rho) & (np.abs(u - v) > 1e-3 * (u + v))
        out.append(q[keep])
    return np.concatenate(out)[:n]


def check_harmonic(entry, samples, cfg: FDConfig = DEFAULT_FD) -> float:
    """Max ``|Laplacian u|`` for the flat product metric, computed on the cover.

    ``samples`` are cover points ``(z, z1, z2)``; ``entry`` acts on ambient points.
    """
    worst = 0.0
    f = lambda q: entry(cover_to_ambient(q))
    for q in np.asarray(samples, dtype=complex):
        U = ddbar(f, FlatChart(q), cfg).H
        worst = max(worst, abs(float(np.real(np.trace(U)))))
    return worst


@dataclass(frozen=True)
class ConeVectorField:
    """Holomorphic linear field ``W = sum_j (A w)_j d/dw_j`` on C^4 (or C^n)."""

    name: str
    A: np.ndarray

    def __call__(self, p):
        return np.asarray(p, dtype=complex) @ np.asarray(self.A, dtype=complex).T

    def apply_real(self, f, p, h: float = 1e-3):
        """``(Re W) f = d/dt f(p + t W(p) / 2)`` at ``t = 0`` by Richardson central differences."""
        p = np.asarray(p, dtype=complex)
        v = 0.5 * self(p)

        def d(hh):
            return (f(p + hh * v) - f(p - hh * v)) / (2 * hh)

        return (4 * d(h / 2) - d(h)) / 3


def v_generator() -> ConeVectorField:
    return ConeVectorField("V", np.diag([1.0, 0.5, 0.5, 1.0 / 3.0]).astype(complex))


def w1_field(b12: float = 1.0) -> ConeVectorField:
    A = np.zeros((4, 4), dtype=complex)
    # component x_j = i b_ij x_i
    A[2, 1] = 1j * b12
    A[1, 2] = -1j * b12
    return ConeVectorField("W1", A)


def w2_field() -> ConeVectorField:
    return ConeVectorField("W2", np.diag([1.0, -1.5, -1.5, -1.0]).astype(complex))


def _sym_poly(X, syms):
    return sum(sp.nsimplify(c) * sp.prod([s**e for s, e in zip(syms, ex)]) for ex, c in X.terms.items())


def lie_derivative_volume(W: ConeVectorField, X=None) -> complex:
    """``lambda`` with ``L_W Omega = lambda Omega`` for the residue form of ``X``.

    For ``W(F) = lambda_F F`` this is ``tr A - lambda_F``.  ``X = None`` means
    flat C^n with the standard volume form.
    """
    A = sp.Matrix(np.asarray(W.A).tolist()).applyfunc(sp.nsimplify)
    tr = sp.nsimplify(A.trace())
    if X is None:
        return complex(tr)
    syms = sp.symbols("w0:%d" % A.shape[0])
    F = sp.expand(_sym_poly(X, syms))
    Wv = A * sp.Matrix(syms)
    WF = sp.expand(sum(Wv[j] * sp.diff(F, syms[j]) for j in range(len(syms))))
    q, r = sp.div(sp.Poly(WF, *syms), sp.Poly(F, *syms))
    if not r.is_zero or q.total_degree() > 0:
        raise TangencyError("W(F) is not a constant multiple of F")
    lam = q.as_expr()
    return complex(sp.nsimplify(tr - lam))


def phi_t(t: complex, p) -> np.ndarray:
    """``Phi_t(z, x1, x2, y) = (e^{t/2} z, e^{t/4} x1, e^{t/4} x2, e^{t/6} y)``."""
    f = np.exp(np.array([t / 2, t / 4, t / 4, t / 6], dtype=complex))
    return np.asarray(p, dtype=complex) * f


def phi_t_volume_factor(t: complex) -> complex:
    """Coefficient of ``Phi_t^*(dx1 ^ dx2 ^ dy)``, the determinant of the x-block."""
    return complex(np.prod(np.exp(np.array([t / 4, t / 4, t / 6], dtype=complex))))


def cone_potential(p):
    z, x1, x2, y = _split(p)
    return np.abs(z) ** 2 + r2_a2(x1, x2, y)


def radial_identity_residual(samples) -> float:
    """Max of ``|V(|z|^2+r^2) - beta (|z|^2+r^2) - (5/18) u2|`` over ambient samples."""
    V = v_generator()
    beta, c = float(BETA), float(RADIAL_COEFF)
    worst = 0.0
    for p in np.asarray(samples, dtype=complex):
        scale = max(1.0, float(cone_potential(p)))
        lhs = V.apply_real(cone_potential, p) - beta * cone_potential(p)
        worst = max(worst, abs(float(lhs - c * eval_u2(p))) / scale)
    return worst


def taylor_remainder(t: float, samples, coeff: float = float(RADIAL_COEFF)) -> float:
    p = np.asarray(samples, dtype=complex)
    phi0 = cone_potential(p)
    lhs = np.exp(-4 * t / 9) * cone_potential(phi_t(t, p))
    return float(np.max(np.abs(lhs - phi0 - coeff * eval_u2(p) * t)))


def taylor_expansion_check(ts, samples, coeff: float = float(RADIAL_COEFF)):
    """Fitted log-log slope of the first-order Taylor remainder over ``ts``."""
    from .gluing import decay_fit

    ts = np.asarray(ts, dtype=float)
    E = np.array([taylor_remainder(t, samples, coeff) for t in ts])
    return decay_fit(ts, E)


def phi_action_on_family(t: complex, X: HypersurfaceFamily) -> HypersurfaceFamily:
    """Image ``Phi_t(X)``: substitute ``Phi_{-t}`` and renormalise ``x1^2`` to 1."""
    syms = sp.symbols("z x1 x2 y")
    T = sp.Symbol("t")
    F = _sym_poly(X, syms)
    sub = {s: s * sp.exp(-T * w) for s, w in zip(syms, (sp.Rational(1, 2), sp.Rational(1, 4), sp.Rational(1, 4), sp.Rational(1, 6)))}
    G = sp.expand(F.xreplace(sub))
    lead = G.coeff(syms[1], 2).subs({s: 0 for s in syms})
    G = sp.expand(G / lead)
    P = sp.Poly(G, *syms)
    coeffs = {m: complex(sp.N(c.subs(T, t))) for m, c in zip(P.monoms(), P.coeffs())}
    a = coeffs.pop((1, 0, 0, 0), 0.0)
    b = coeffs.pop((0, 0, 0, 1), 0.0)
    for m in [(0, 2, 0, 0), (0, 0, 2, 0), (0, 0, 0, 3)]:
        coeffs[m] = coeffs.get(m, 0.0) - 1.0
    extra = {m: c for m, c in coeffs.items() if abs(c) > 1e-15}
    a = a.real if abs(a.imag) < 1e-15 * max(1.0, abs(a)) else a
    b = b.real if abs(b.imag) < 1e-15 * max(1.0, abs(b)) else b
    return HypersurfaceFamily(a=a, b=b, extra=extra)
