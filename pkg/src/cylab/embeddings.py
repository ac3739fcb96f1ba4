"""Special-embedding dynamics, Milnor numbers and the invariant separating metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import sympy as sp
from sympy.polys.matrices import DomainMatrix


class NonIsolated(Exception):
    """The critical point at the origin is not isolated."""


class RejectedInput(ValueError):
    """Input outside the degeneration families."""


# ---------------------------------------------------------------- dynamics


@dataclass(frozen=True)
class EmbeddingState:
    i: int
    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a_i must be positive")
        if self.b < 0:
            raise ValueError("b_i must be nonnegative")


# limit ratios of the rescalings between consecutive embeddings
K1, K2, K3 = Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)


def rescale_step(s: EmbeddingState) -> EmbeddingState:
    """Next state at the limit ratios: ``a -> a k2^3 / k1 = a/32``, ``b -> b k2^2 = b/16``."""
    fa = K2**3 / K1
    fb = K2**2
    return EmbeddingState(s.i + 1, s.a * fa.numerator / fa.denominator, s.b * fb.numerator / fb.denominator)


def invariant_b(s: EmbeddingState) -> float:
    """``b_i a_i^{-1/2} 2^{3i/2}``."""
    return s.b / math.sqrt(s.a) * 2.0 ** (1.5 * s.i)


# ------------------------------------------------------------ polynomials


@dataclass(frozen=True)
class QuasiHomogPoly:
    """Sparse polynomial, every monomial of weighted degree ``degree``."""

    terms: Mapping[tuple, object]
    weights: tuple
    degree: Fraction

    def __post_init__(self):
        w = tuple(Fraction(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "degree", Fraction(self.degree))
        for e, c in self.terms.items():
            if c != 0 and sum(Fraction(k) * wi for k, wi in zip(e, w)) != self.degree:
                raise ValueError(f"monomial {e} is not of weighted degree {self.degree}")

    @property
    def nvars(self) -> int:
        return len(self.weights)

    def product_formula(self) -> Fraction:
        """``prod (d - w_i) / w_i``, the Milnor number when the singularity is isolated."""
        out = Fraction(1)
        for w in self.weights:
            out *= (self.degree - w) / w
        return out

    def partials(self):
        out = []
        for j in range(self.nvars):
            t = {}
            for e, c in self.terms.items():
                if e[j] and c != 0:
                    e2 = list(e)
                    e2[j] -= 1
                    t[tuple(e2)] = t.get(tuple(e2), 0) + c * e[j]
            out.append(t)
        return out


def _monomials_upto(weights, bound):
    """All exponent vectors of weighted degree ``<= bound``, grouped by degree."""
    by_deg = {}
    maxe = [int(bound / w) for w in weights]
    for e in itertools.product(*(range(m + 1) for m in maxe)):
        dg = sum(k * w for k, w in zip(e, weights))
        if dg <= bound:
            by_deg.setdefault(dg, []).append(e)
    return by_deg


def jacobian_ring_dims(f: QuasiHomogPoly, bound: Fraction):
    """Dimension of ``C[x]/(df)`` in each weighted degree ``<= bound`` (exact ranks)."""
    parts = f.partials()
    pdeg = [f.degree - w for w in f.weights]
    mons = _monomials_upto(f.weights, bound)
    dims = {}
    for dg, basis in sorted(mons.items()):
        index = {e: i for i, e in enumerate(basis)}
        rows = {}
        for j, dj in enumerate(parts):
            for m in mons.get(dg - pdeg[j], []):
                row = {}
                for e, c in dj.items():
                    col = index[tuple(a + b for a, b in zip(m, e))]
                    row[col] = row.get(col, 0) + c
                row = {k: sp.QQ.convert(sp.nsimplify(v)) for k, v in row.items() if v != 0}
                if row:
                    rows[len(rows)] = row
        rank = DomainMatrix(rows, (len(rows), len(basis)), sp.QQ).rank() if rows else 0
        dims[dg] = len(basis) - rank
    return dims


def milnor_number(f: QuasiHomogPoly) -> int:
    """Milnor number at the origin from the graded Jacobian ring.

    For an isolated quasi-homogeneous singularity the Jacobian ring has its
    socle in degree ``s = sum(d - 2 w_i)`` and vanishes above.  Conversely, if
    it vanishes in every degree of ``(s, s + max w]``, every monomial of higher
    degree is divisible by one of those, so the ring is finite.  The window
    test is therefore conclusive.
    """
    s = sum(f.degree - 2 * w for w in f.weights)
    if s < 0:
        raise NonIsolated("negative socle degree: not an isolated singularity")
    top = s + max(f.weights)
    dims = jacobian_ring_dims(f, top)
    if any(v for dg, v in dims.items() if dg > s):
        raise NonIsolated("Jacobian ring is infinite-dimensional")
    return int(sum(dims.values()))


# -------------------------------------------------------- degenerations

BASE = {(2, 0, 0, 0): 1, (0, 2, 0, 0): 1, (0, 0, 3, 0): 1}  # variables (x1, x2, y, z)


def base_polynomial() -> QuasiHomogPoly:
    """``x1^2 + x2^2 + y^3`` in three variables."""
    return QuasiHomogPoly({(2, 0, 0): 1, (0, 2, 0): 1, (0, 0, 3): 1}, (3, 3, 2), 6)


def brieskorn(exponents) -> QuasiHomogPoly:
    """``sum x_i^{a_i}`` with weights ``L / a_i``, ``L = lcm(a_i)``."""
    L = math.lcm(*exponents)
    n = len(exponents)
    terms = {}
    for i, a in enumerate(exponents):
        e = [0] * n
        e[i] = a
        terms[tuple(e)] = 1
    return QuasiHomogPoly(terms, tuple(Fraction(L, a) for a in exponents), L)


def degeneration_polynomial(case: str, *params) -> QuasiHomogPoly:
    """Polynomial in ``(x1, x2, y, z)`` for one of the three degeneration families.

    ``("zky", k)``: ``+ z^k y``; ``("zl", l)``: ``+ z^l``; ``("cubic", a, b)``:
    ``+ a z^2 y + b z^3``.
    """
    t = dict(BASE)
    if case == "zky":
        (k,) = params
        if not 1 <= k <= 4:
            raise RejectedInput("k must be in 1..4")
        t[(0, 0, 1, k)] = 1
        wz = Fraction(4, k)
    elif case == "zl":
        (l,) = params
        if l == 1:
            raise RejectedInput("l = 1: the hypersurface is biholomorphic to C^3")
        if not 2 <= l <= 6:
            raise RejectedInput("l must be in 2..6")
        t[(0, 0, 0, l)] = 1
        wz = Fraction(6, l)
    elif case == "cubic":
        a, b = (sp.nsimplify(v) for v in params)
        if a == 0 or b == 0:
            raise RejectedInput("the cubic family needs a, b != 0")
        t[(0, 0, 1, 2)] = a
        t[(0, 0, 0, 3)] = b
        wz = Fraction(2)
    else:
        raise RejectedInput(f"unknown case {case!r}")
    return QuasiHomogPoly(t, (3, 3, 2, wz), 6)


@dataclass(frozen=True)
class Degeneration:
    case: int
    label: str
    milnor: int | None
    discriminant: object = None
    subcase: str | None = None


def classify_degeneration(case: str, *params) -> Degeneration:
    f = degeneration_polynomial(case, *params)
    if case == "zky":
        return Degeneration(1, f"x1^2+x2^2+y^3+z^{params[0]}y", milnor_number(f))
    if case == "zl":
        return Degeneration(2, f"x1^2+x2^2+y^3+z^{params[0]}", milnor_number(f))
    a, b = (sp.nsimplify(v) for v in params)
    disc = 27 * b**2 + 4 * a**3
    if disc != 0:
        return Degeneration(3, "x1^2+x2^2+y^3+az^2y+bz^3", milnor_number(f), disc, "isolated (D4)")
    try:
        mu = milnor_number(f)
    except NonIsolated:
        mu = None
    return Degeneration(3, "x1^2+x2^2+y^3+az^2y+bz^3", mu, disc, "line singularity x1^2+x2^2+vw^2")


# -------------------------------------------------- distinguishing metrics


@dataclass(frozen=True)
class ScalingSolution:
    a1: complex
    a2: complex
    a3: complex
    c: float
    free_phase: bool  # a2 may be any unit complex number (b = b' = 0)


def scaling_constraints_solve(b: float, b_prime: float, rel_tol: float = 1e-12):
    """Solve ``1/a1 = b/(b' a2) = 1/a2^3 = 1/a3^2``, ``|a3|^4 |a2|^2 = c^6``, ``c = |a1|``.

    Elimination: ``a1 = a2^3`` and ``a3^2 = a2^3`` give ``|a2|^8 = c^6 = |a2|^18``,
    so ``|a2| = c = 1``; then ``b a2^2 = b'`` forces ``b = b'``.  Returns a
    representative solution or ``None``.
    """
    if b < 0 or b_prime < 0:
        raise ValueError("b and b' must be nonnegative")
    if b == 0 and b_prime == 0:
        return ScalingSolution(1, 1, 1, 1.0, True)
    if b == 0 or b_prime == 0:
        return None
    if not math.isclose(b, b_prime, rel_tol=rel_tol, abs_tol=0.0):
        return None
    a2 = 1.0  # a2^2 = b'/b = 1
    return ScalingSolution(a2**3, a2, 1.0, 1.0, False)
