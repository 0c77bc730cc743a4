import itertools
import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nambu import exprcalc as ec
from nambu.bracket import PoissonOperator3, SymplecticForm3, induced_operator
from nambu.exprcalc import parse
from nambu.identities import (
    PairingError, ResidualReport, classical_jacobi_residual, classical_jacobi_values,
    closure_residual, exterior_derivative_2form, find_fi_witness, fundamental_identity_residual,
    jacobi_necessary_residual, ncj_values, sample_points,
)
from nambu.skewtensor import COVARIANT, SkewTensor3, generalized_E, levi_civita, right_inverse

from conftest import DATA
from oracles import bracket_sym, induced_sym, jacobi2_sym, ncj_bruteforce, sym, sym_dense_from_entries, symbols


def _random_field_operator(seed, n=6):
    """Block two-triplet operator plus seeded linear perturbations in every component."""
    rng = np.random.default_rng(seed)
    comps = {}
    for t in itertools.combinations(range(n), 3):
        base = 1.0 if t in ((0, 1, 2), (3, 4, 5)) else 0.0
        m = int(rng.integers(0, n))
        comps[t] = f"{base} + {0.2 * rng.standard_normal():.3f}*x{m + 1}"
    return PoissonOperator3.from_fields(n, comps)


# --------------------------------------------------------------- reports


def test_report_json_is_one_based():
    r = ResidualReport(0.5, np.array([0.1, 0.2]), (0, 3), 7)
    d = json.loads(r.to_json())
    assert d == {"max_abs": 0.5, "point": [0.1, 0.2], "indices": [1, 4], "samples": 7}
    with pytest.raises(ValueError):
        ResidualReport(-1.0)


def test_sample_points_seeded():
    a, b = sample_points(4, seed=3), sample_points(4, seed=3)
    assert a.shape == (100, 4) and np.array_equal(a, b)
    assert a.min() >= -1 and a.max() <= 1


# --------------------------------------------------------------- closure


def test_closure_constant_is_exactly_zero(e6):
    assert closure_residual(e6.with_variance(COVARIANT)).max_abs == 0.0
    assert closure_residual(levi_civita(COVARIANT)).max_abs == 0.0


def test_closure_single_component_counterexample():
    w = SymplecticForm3.from_fields(4, {(0, 1, 2): "x4"})
    rep = closure_residual(w)
    assert rep.max_abs == 1.0
    assert rep.indices == (0, 1, 2, 3)
    assert np.all(rep.per_point == 1.0)


def test_four_term_sum_matches_exterior_derivative():
    # independent route: coefficient of dx^i^dx^j^dx^k^dx^l in dw, via sympy
    n = 5
    xs = symbols(n)
    comps = {(0, 1, 2): "x4*x5", (0, 2, 3): "x1^2 - x5", (1, 3, 4): "sin(x1)", (0, 3, 4): "x2*x3"}
    w = SymplecticForm3.from_fields(n, comps)
    D = sym_dense_from_entries(n, [(i, j, k, sym(v, n)) for (i, j, k), v in comps.items()])
    X = sample_points(n, 20, seed=1)
    worst = 0.0
    for q in itertools.combinations(range(n), 4):
        # (dw)_{ijkl} = d_i w_jkl - d_j w_ikl + d_k w_ijl - d_l w_ijk
        i, j, k, l = q
        dw = (sp.diff(D[j][k][l], xs[i]) - sp.diff(D[i][k][l], xs[j])
              + sp.diff(D[i][j][l], xs[k]) - sp.diff(D[i][j][k], xs[l]))
        f = sp.lambdify(xs, dw)
        worst = max(worst, np.abs(f(*X.T) * np.ones(len(X))).max())
    assert closure_residual(w, X).max_abs == pytest.approx(worst, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_exact_forms_are_closed(seed):
    rng = np.random.default_rng(seed)
    n = 5
    sigma = {(i, j): ec.random_polynomial(n, 3, rng, terms=3)
             for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.6}
    w = exterior_derivative_2form(sigma, n)
    assert closure_residual(w, sample_points(n, 30, seed=seed % 1000)).max_abs <= 1e-12


# ------------------------------------------------------ necessary Jacobi


def test_ncj_einsum_matches_loops(rng):
    n = 5
    for _ in range(3):
        Jv = SkewTensor3(n, rng.standard_normal(10)).dense
        wv = SkewTensor3(n, rng.standard_normal(10), COVARIANT).dense
        Jd = rng.standard_normal((n, n, n, n))
        Jd = Jd - Jd.transpose(1, 0, 2, 3)  # antisymmetric in the first pair is enough here
        assert np.allclose(ncj_values(Jv, Jd, wv), ncj_bruteforce(Jv, Jd, wv), atol=1e-12)


@pytest.mark.parametrize("name", ["eps", "e6"])
def test_ncj_constant_pairs_vanish(name, eps, e6):
    J = {"eps": eps, "e6": e6}[name]
    rep = jacobi_necessary_residual(J, J.with_variance(COVARIANT))
    assert rep.max_abs == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_ncj_field_pair_nonzero(seed):
    J = _random_field_operator(seed)
    rep = jacobi_necessary_residual(J, points=sample_points(6, 30, seed=seed))
    assert rep.max_abs > 1e-3
    assert len(rep.indices) == 2


def test_ncj_rejects_non_inverse_pair(eps):
    with pytest.raises(PairingError):
        jacobi_necessary_residual(eps, levi_civita(COVARIANT) * 2.0)


def test_ncj_leaf_mode_for_degenerate_operator():
    E = generalized_E(1, 2)
    with pytest.raises(PairingError):
        jacobi_necessary_residual(E, E.with_variance(COVARIANT))
    rep = jacobi_necessary_residual(E, E.with_variance(COVARIANT), pairing_mode="leaf")
    assert rep.max_abs == 0.0


# ------------------------------------------------------ classical Jacobi


def test_classical_jacobi_constant_matrix_is_zero():
    M = np.array([[0, 1, -2], [-1, 0, 3], [2, -3, 0.]])
    assert classical_jacobi_residual(M).max_abs == 0.0


def test_classical_jacobi_matches_sympy(e6):
    n = 6
    xs = symbols(n)
    G = "x3 + x2*x6"
    D = sym_dense_from_entries(n, [(0, 1, 2, 1), (3, 4, 5, 1)])
    S = jacobi2_sym(induced_sym(D, sym(G, n), xs), xs)
    X = sample_points(n, 10, seed=2)
    got = classical_jacobi_values(induced_operator(e6, parse(G, n)), X)
    for (i, j, k), e in S.items():
        want = sp.lambdify(xs, e)(*X.T) * np.ones(len(X))
        assert np.allclose(got[:, i, j, k], want, atol=1e-13)
    assert S[(0, 3, 4)] == 1


def test_induced_bracket_fails_jacobi_on_coupled_triplets(e6):
    rep = classical_jacobi_residual(induced_operator(e6, parse("x3 + x2*x6", 6)))
    assert rep.max_abs == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(rep.per_point, 1.0, atol=1e-10)
    assert rep.to_dict()["indices"] == [1, 4, 5]


@pytest.mark.parametrize("seed", range(5))
def test_induced_bracket_is_poisson_in_three_dimensions(seed, eps):
    G = ec.random_polynomial(3, 3, np.random.default_rng(seed), terms=8)
    assert classical_jacobi_residual(induced_operator(eps, G)).max_abs <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_separable_hamiltonian_keeps_jacobi(seed, e6):
    rng = np.random.default_rng(seed)
    G = ec.random_polynomial(6, 3, rng, terms=6, variables=[0, 1, 2]) \
        + ec.random_polynomial(6, 3, rng, terms=6, variables=[3, 4, 5])
    assert classical_jacobi_residual(induced_operator(e6, G)).max_abs <= 1e-10


# ------------------------------------------------------------------- FI


@pytest.mark.parametrize("seed", range(4))
def test_fundamental_identity_levi_civita(seed, eps):
    rng = np.random.default_rng(seed)
    Fs = [ec.random_polynomial(3, 2, rng, terms=4) for _ in range(5)]
    assert fundamental_identity_residual(eps, *Fs).max_abs <= 1e-10


def test_fundamental_identity_trivial_when_first_two_agree(e6, rng):
    F = ec.random_polynomial(6, 2, rng, terms=4)
    others = [ec.random_polynomial(6, 2, rng, terms=4) for _ in range(3)]
    assert fundamental_identity_residual(e6, F, F, *others).max_abs <= 1e-12


def test_frozen_fi_witness_reproduces(e6):
    doc = json.loads((DATA / "fi_witness_e6.json").read_text())
    Fs = [parse(t, 6) for t in doc["fields"]]
    X = sample_points(6, doc["points"]["count"], tuple(doc["points"]["box"]), doc["points"]["seed"])
    rep = fundamental_identity_residual(e6, *Fs, points=X)
    assert rep.max_abs == pytest.approx(doc["max_abs"], rel=1e-12)
    assert rep.max_abs >= 1e-3
    found = find_fi_witness(e6, seed=doc["search_seed"], points=X)
    assert [str(f) for f in found[0]] == doc["fields"]


def test_frozen_fi_witness_full_index_oracle():
    doc = json.loads((DATA / "fi_witness_e6.json").read_text())
    n = 6
    xs = symbols(n)
    D = sym_dense_from_entries(n, [(0, 1, 2, 1), (3, 4, 5, 1)])
    F = [sym(t, n) for t in doc["fields"]]
    b = lambda f, g, h: bracket_sym(D, f, g, h, xs)  # noqa: E731
    diff = (b(b(F[0], F[1], F[2]), F[3], F[4]) - b(b(F[0], F[3], F[4]), F[1], F[2])
            - b(F[0], b(F[1], F[3], F[4]), F[2]) - b(F[0], F[1], b(F[2], F[3], F[4])))
    val = float(sp.expand(diff).subs(dict(zip(xs, doc["point"]))))
    assert abs(val) == pytest.approx(doc["max_abs"], rel=1e-9)
