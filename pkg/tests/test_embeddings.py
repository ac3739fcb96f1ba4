import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cylab.embeddings import (
    EmbeddingState,
    NonIsolated,
    QuasiHomogPoly,
    RejectedInput,
    base_polynomial,
    brieskorn,
    classify_degeneration,
    degeneration_polynomial,
    invariant_b,
    jacobian_ring_dims,
    milnor_number,
    rescale_step,
    scaling_constraints_solve,
)


def groebner_milnor(f: QuasiHomogPoly) -> int:
    """Independent count: standard monomials of a Groebner basis of the Jacobian ideal."""
    xs = sp.symbols(f"v0:{f.nvars}")
    expr = sum(sp.nsimplify(c) * sp.prod([x**e for x, e in zip(xs, ex)]) for ex, c in f.terms.items())
    G = sp.groebner([sp.diff(expr, x) for x in xs], *xs, order="grevlex")
    leads = [sp.Poly(g, *xs).monoms(order="grevlex")[0] for g in G.exprs]
    pure = [max(m[i] for m in leads if all(m[j] == 0 for j in range(f.nvars) if j != i)) for i in range(f.nvars)]
    count = 0
    for e in itertools.product(*(range(p) for p in pure)):
        if not any(all(a >= b for a, b in zip(e, m)) for m in leads):
            count += 1
    return count


def test_rescale_examples():
    s = rescale_step(EmbeddingState(0, 1.0, 1.0))
    assert (s.i, s.a, s.b) == (1, 2.0**-5, 2.0**-4)
    s = EmbeddingState(0, 1.0, 0.0)
    for _ in range(10):
        s = rescale_step(s)
        assert s.b == 0
    assert s.a == 2.0**-50


def test_state_validation():
    with pytest.raises(ValueError):
        EmbeddingState(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        EmbeddingState(0, 1.0, -1.0)


def test_invariant_examples():
    s = EmbeddingState(0, 1.0, 1.0)
    assert invariant_b(s) == 1.0
    assert invariant_b(rescale_step(s)) == 1.0
    assert invariant_b(EmbeddingState(3, 2.0, 0.0)) == 0.0


@settings(max_examples=50, deadline=None)
@given(a=st.floats(1e-3, 1e3), b=st.just(0.0) | st.floats(1e-3, 1e3))
def test_invariant_constant_over_100_steps(a, b):
    s = EmbeddingState(0, a, b)
    b0 = invariant_b(s)
    for _ in range(100):
        s = rescale_step(s)
        assert invariant_b(s) == pytest.approx(b0, rel=1e-12, abs=0)


def test_quasi_homogeneous_validation():
    with pytest.raises(ValueError):
        QuasiHomogPoly({(2, 0): 1, (0, 3): 1}, (3, 3), 6)
    f = base_polynomial()
    assert f.product_formula() == 2 and f.nvars == 3


def test_milnor_examples():
    assert milnor_number(base_polynomial()) == 2
    assert milnor_number(degeneration_polynomial("zl", 6)) == 10
    assert milnor_number(degeneration_polynomial("zky", 1)) == 1


def test_milnor_non_isolated():
    # x^2 in two variables: singular along the y axis
    f = QuasiHomogPoly({(2, 0): 1}, (1, 1), 2)
    with pytest.raises(NonIsolated):
        milnor_number(f)


def test_jacobian_ring_graded_pieces():
    dims = jacobian_ring_dims(base_polynomial(), Fraction(4))
    # 1 and y survive; x1, x2 and y^2 lie in the ideal
    assert dims[0] == 1 and dims[2] == 1 and dims[3] == 0 and dims[4] == 0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_brieskorn_matches_product_formula(n):
    for e in itertools.combinations_with_replacement(range(2, 9), n):
        f = brieskorn(e)
        assert milnor_number(f) == math.prod(a - 1 for a in e) == f.product_formula()


@pytest.mark.parametrize("k", range(2, 9))
def test_brieskorn_four_variables(k):
    assert milnor_number(brieskorn((2, 2, 3, k))) == 2 * (k - 1)


@pytest.mark.parametrize(
    "f", [base_polynomial()]
    + [degeneration_polynomial("zky", k) for k in range(1, 5)]
    + [degeneration_polynomial("zl", l) for l in range(2, 7)]
    + [degeneration_polynomial("cubic", 1, 1), degeneration_polynomial("cubic", 2, -1)],
)
def test_milnor_matches_groebner_oracle(f):
    assert milnor_number(f) == groebner_milnor(f)


def test_classification_cases():
    d = classify_degeneration("zky", 2)
    assert d.case == 1 and d.milnor == 4
    assert [classify_degeneration("zky", k).milnor for k in range(1, 5)] == [1, 4, 7, 10]
    assert [classify_degeneration("zl", l).milnor for l in range(2, 7)] == [2, 4, 6, 8, 10]
    for k in range(1, 5):
        assert classify_degeneration("zky", k).milnor >= 1
    with pytest.raises(RejectedInput, match="biholomorphic to C\\^3"):
        classify_degeneration("zl", 1)
    for bad in (("zky", 5), ("zl", 7), ("cubic", 0, 1), ("other", 1)):
        with pytest.raises(RejectedInput):
            classify_degeneration(*bad)


def test_cubic_case_discriminant():
    iso = classify_degeneration("cubic", 1, 1)
    assert iso.discriminant == 31 and iso.milnor == 4 and "isolated" in iso.subcase
    line = classify_degeneration("cubic", -3, 2)
    assert line.discriminant == 0 and line.milnor is None
    assert line.subcase == "line singularity x1^2+x2^2+vw^2"


def test_scaling_examples():
    s = scaling_constraints_solve(1.0, 1.0)
    assert s is not None and s.c == 1 and (s.a1, s.a2, s.a3) == (1, 1, 1)
    assert scaling_constraints_solve(1.0, 2.0) is None
    assert scaling_constraints_solve(0.0, 1.0) is None
    assert scaling_constraints_solve(0.0, 0.0).free_phase
    with pytest.raises(ValueError):
        scaling_constraints_solve(-1.0, 1.0)


def test_scaling_random_pairs(rng):
    pairs = rng.uniform(0, 10, size=(1000, 2))
    assert all(scaling_constraints_solve(a, b) is None for a, b in pairs if a != b)
    assert all(scaling_constraints_solve(a, a).c == 1 for a in pairs[:, 0])


def test_scaling_solution_satisfies_system():
    s = scaling_constraints_solve(0.7, 0.7)
    b = bp = 0.7
    lhs = [1 / s.a1, b / (bp * s.a2), 1 / s.a2**3, 1 / s.a3**2]
    assert np.allclose(lhs, lhs[0])
    assert abs(s.a3) ** 4 * abs(s.a2) ** 2 == pytest.approx(s.c**6) and s.c == abs(s.a1)
