import itertools

import numpy as np
import pytest
import sympy as sp

from nambu import exprcalc as ec
from nambu.bracket import (
    BivectorField, NambuSystem, PoissonOperator3, hamiltonian_vector_field, induced_operator,
    divergence, nambu_bracket,
)
from nambu.exprcalc import parse
from nambu.identities import axiom_residuals
from nambu.skewtensor import SkewTensor3

from oracles import bracket_sym, dense_from_entries, induced_sym, sym, sym_dense_from_entries, symbols


def _coords(n):
    return [ec.ScalarField.coordinate(i, n) for i in range(n)]


def test_levi_civita_coordinate_bracket(eps):
    x = _coords(3)
    assert nambu_bracket(eps, *x).eval([0.3, 0.2, 0.1]) == 1.0
    assert nambu_bracket(eps, x[1], x[0], x[2]).eval([0, 0, 0]) == -1.0
    assert nambu_bracket(eps, x[0], x[0], x[2]).eval([1, 2, 3]) == 0.0


def test_block_e6_coordinate_brackets(e6):
    x = _coords(6)
    assert nambu_bracket(e6, x[3], x[4], x[5]).eval(np.zeros(6)) == 1.0
    assert nambu_bracket(e6, x[0], x[1], x[2]).eval(np.zeros(6)) == 1.0
    assert nambu_bracket(e6, x[0], x[3], x[4]).eval(np.zeros(6)) == 0.0


BRACKET_CASES = [
    ("x1^2 + x4", "x2*x5 - x6", "sin(x3) + x4*x5"),
    ("x1*x2*x3", "exp(x4/2)", "x5^2 - x6^3"),
    ("x1 + x2 + x3 + x4 + x5 + x6", "x1*x6", "cos(x2 - x5)"),
]


@pytest.mark.parametrize("fgh", BRACKET_CASES)
@pytest.mark.parametrize("which", ["e6", "r6", "random"])
def test_bracket_matches_full_index_sum(fgh, which, e6, r6):
    n = 6
    xs = symbols(n)
    if which == "random":
        rng = np.random.default_rng(7)
        vals = np.round(rng.standard_normal(20), 3)
        T = SkewTensor3(n, vals)
    else:
        T = {"e6": e6, "r6": r6}[which]
    entries = [(i, j, k, sp.Float(v)) for (i, j, k), v in T.entries().items()]
    D = sym_dense_from_entries(n, entries)
    want = bracket_sym(D, *(sym(t, n) for t in fgh), xs)
    got = nambu_bracket(T, *(parse(t, n) for t in fgh))
    f = sp.lambdify(xs, want, "numpy")
    X = np.random.default_rng(3).uniform(-1, 1, size=(25, n))
    assert np.allclose(got.eval_many(X), f(*X.T), rtol=1e-12, atol=1e-12)


def test_field_operator_bracket_matches_sympy():
    n = 4
    J = PoissonOperator3.from_fields(n, {(0, 1, 2): "1 + x1^2", (1, 2, 3): "x4*x2"})
    xs = symbols(n)
    x1, x2, x4 = xs[0], xs[1], xs[3]
    D = sym_dense_from_entries(n, [(0, 1, 2, 1 + x1**2), (1, 2, 3, x4 * x2)])
    F, G, H = "x1*x3", "x2 + x4^2", "sin(x1) + x3*x4"
    want = sp.lambdify(xs, bracket_sym(D, sym(F, n), sym(G, n), sym(H, n), xs))
    got = nambu_bracket(J, parse(F, n), parse(G, n), parse(H, n))
    X = np.random.default_rng(5).uniform(-1, 1, size=(20, n))
    assert np.allclose(got.eval_many(X), want(*X.T), rtol=1e-12, atol=1e-12)


def test_rigid_body_vector_field_is_cross_product(eps):
    G = parse("(x1^2 + x2^2 + x3^2)/2", 3)
    H = parse("x1^2/2 + x2^2/4 + x3^2/6", 3)
    X = hamiltonian_vector_field(NambuSystem(3, eps, G, H))
    rng = np.random.default_rng(0)
    for x in rng.uniform(-1, 1, size=(10, 3)):
        want = np.cross(x, x * np.array([1, 0.5, 1 / 3]))
        assert np.allclose(X.eval(x), want, rtol=1e-14, atol=1e-15)


def test_vector_field_matches_bracket_with_coordinates(r6):
    G = parse("x2*x4 + x3^2/2 + x6*x1", 6)
    H = parse("(x1^2 + x2^2 + x3^2 + x4^2 + x5^2)/2", 6)
    X = hamiltonian_vector_field(NambuSystem(6, r6, G, H))
    P = np.random.default_rng(1).uniform(-1, 1, size=(15, 6))
    for i, xi in enumerate(_coords(6)):
        assert np.allclose(X[i].eval_many(P), nambu_bracket(r6, xi, G, H).eval_many(P), atol=1e-14)


def test_hamiltonians_are_conserved_along_field(e6):
    G = parse("x3 + x2*x6", 6)
    H = parse("(x1^2 + x2^2 + x3^2 + x4^2 + x5^2 + x6^2)/2", 6)
    X = hamiltonian_vector_field(NambuSystem(6, e6, G, H))
    P = np.random.default_rng(2).uniform(-1, 1, size=(30, 6))
    V = X.eval_many(P)
    for F in (G, H):
        grad = np.stack([F.diff(i).eval_many(P) for i in range(6)], axis=1)
        assert np.abs((grad * V).sum(axis=1)).max() <= 1e-14


def test_divergence_zero_for_constant_operator(e6):
    G = parse("x1*x4^2 + sin(x2)", 6)
    H = parse("exp(x3) + x5*x6", 6)
    X = hamiltonian_vector_field(NambuSystem(6, e6, G, H))
    P = np.random.default_rng(4).uniform(-1, 1, size=(20, 6))
    assert np.abs(divergence(X).eval_many(P)).max() <= 1e-14


def test_divergence_of_field_operator():
    # J^{123} = 1 + x1^2 with G = x2, H = x3 gives X = (1 + x1^2, 0, 0)
    J = PoissonOperator3.from_fields(3, {(0, 1, 2): "1 + x1^2"})
    X = hamiltonian_vector_field(NambuSystem(3, J, parse("x2", 3), parse("x3", 3)))
    assert divergence(X).eval([0.7, 0, 0]) == pytest.approx(1.4, abs=1e-15)


def test_induced_operator_matches_sympy(r6):
    n = 6
    xs = symbols(n)
    G = "x2*x4 + x3^2/2 + x6*x1"
    D = sym_dense_from_entries(n, [(0, 1, 2, 1), (0, 3, 4, 1)])
    want = induced_sym(D, sym(G, n), xs)
    P = induced_operator(r6, parse(G, n))
    X = np.random.default_rng(8).uniform(-1, 1, size=(10, n))
    vals = P.values_at(X)
    for a, c in itertools.product(range(n), repeat=2):
        f = sp.lambdify(xs, want[a][c])
        assert np.allclose(vals[:, a, c], f(*X.T) * np.ones(len(X)), atol=1e-14)


def test_induced_operator_rigid_body(eps):
    # freezing the middle slot with G = |x|^2/2 gives P[a,c] = eps[a,b,c] x_b
    P = induced_operator(eps, parse("(x1^2 + x2^2 + x3^2)/2", 3))
    x = np.array([0.4, -1.1, 2.0])
    want = np.einsum("abc,b->ac", dense_from_entries(3, [(0, 1, 2, 1.0)]), x)
    assert np.allclose(P.values_at(x)[0], want, atol=1e-15)


@pytest.mark.parametrize("which", ["eps", "e6", "field"])
def test_axioms_hold(which, eps, e6):
    J = {"eps": eps, "e6": e6,
         "field": PoissonOperator3.from_fields(4, {(0, 1, 2): "1 + x1^2", (0, 2, 3): "x2"})}[which]
    for name, rep in axiom_residuals(J, seed=3).items():
        assert rep.max_abs <= 1e-10, name


def test_bivector_checks():
    with pytest.raises(ValueError):
        BivectorField.from_matrix(np.ones((2, 2)))
    B = BivectorField.from_matrix([[0, 2.0], [-2.0, 0]])
    assert B.entry(1, 0).eval([0, 0]) == -2.0
    V = B.apply(parse("x1*x2", 2))
    assert np.allclose(V.eval([3.0, 5.0]), [6.0, -10.0])


def test_dimension_mismatch_rejected(eps):
    with pytest.raises(ValueError):
        nambu_bracket(eps, parse("x1", 4), parse("x1", 3), parse("x1", 3))
    with pytest.raises(ValueError):
        PoissonOperator3.from_fields(3, {(0, 0, 1): "x1"})
    with pytest.raises(ValueError):
        PoissonOperator3.from_fields(3, {(0, 1, 2): "x1", (2, 1, 0): "x2"})
