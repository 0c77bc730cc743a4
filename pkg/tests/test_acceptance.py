"""Exit criteria, one test per criterion, each recording a PASS/FAIL summary line."""
import json

import numpy as np
import pytest

from nambu import exprcalc as ec
from nambu.bracket import NambuSystem, hamiltonian_vector_field, induced_operator, divergence
from nambu.canonical import BasisChange, transform, verify_canonicalizing_map
from nambu.exprcalc import parse
from nambu.flow import IntegratorConfig, conservation_report, integrate, lie_invariance_residual, \
    monodromy_determinant
from nambu.identities import (
    classical_jacobi_residual, classical_jacobi_values, closure_residual,
    fundamental_identity_residual, jacobi_necessary_residual, sample_points,
)
from nambu.kernel import casimir_space, verify_semi_casimir
from nambu.skewtensor import (
    COVARIANT, InverseError, SkewTensor3, flat_rank, flatten, generalized_E, inverse_residual,
    levi_civita, right_inverse,
)
from nambu.systemfile import load_system

from conftest import CORPUS, DATA
from oracles import lie_derivative_constant_form, numerical_jacobian, pairing_full

pytestmark = pytest.mark.acceptance


def _corpus():
    return {p.stem: load_system(p) for p in sorted(CORPUS.glob("*.json"))}


def _random_full_rank_form(seed, n=6):
    rng = np.random.default_rng(seed)
    while True:
        w = SkewTensor3(n, rng.standard_normal(n * (n - 1) * (n - 2) // 6), COVARIANT)
        try:
            return w, right_inverse(w)
        except InverseError:
            continue


def test_criterion_01_levi_civita_inverse(criterion):
    w = levi_civita(COVARIANT)
    J = right_inverse(w)
    A = pairing_full(w.dense, J.dense)
    exact = float(np.abs(A - 2 * np.eye(3)).max())
    res = inverse_residual(w, J)
    ok = J.max_abs_diff(levi_civita()) <= 1e-12 and res <= 1e-12 and exact <= 1e-12
    criterion(1, ok, f"right_inverse(eps) residual {res:.2e}, loop contraction {exact:.2e}")
    assert ok


def test_criterion_02_constant_tensors_satisfy_jacobi(criterion, e6):
    cases = [("eps", levi_civita(COVARIANT), levi_civita(), "full"),
             ("E6", e6.with_variance(COVARIANT), e6, "full"),
             # E(1,2) is inverse only on its three-dimensional leaf
             ("E(1,2)", generalized_E(1, 2, COVARIANT), generalized_E(1, 2), "leaf")]
    for seed in range(5):
        w, J = _random_full_rank_form(seed)
        cases.append((f"random{seed}", w, J, "full"))
    worst_closure, worst_ncj = 0.0, 0.0
    for _, w, J, mode in cases:
        worst_closure = max(worst_closure, closure_residual(w).max_abs)
        worst_ncj = max(worst_ncj, jacobi_necessary_residual(J, w, pairing_mode=mode).max_abs)
    ok = worst_closure == 0.0 and worst_ncj <= 1e-10
    criterion(2, ok, f"{len(cases)} pairs: closure {worst_closure:.1e}, necessary Jacobi max {worst_ncj:.2e}")
    assert ok


def test_criterion_03_induced_bracket_poisson_n3(criterion, eps):
    X = sample_points(3, 100, seed=0)
    worst = 0.0
    for seed in range(20):
        G = ec.random_polynomial(3, 3, np.random.default_rng(seed), terms=8)
        worst = max(worst, classical_jacobi_residual(induced_operator(eps, G), X).max_abs)
    ok = worst <= 1e-10
    criterion(3, ok, f"20 cubic G, Jacobi max {worst:.2e}")
    assert ok


def test_criterion_04_induced_bracket_fails_n6(criterion, e6):
    X = sample_points(6, 100, seed=0)
    S = classical_jacobi_values(induced_operator(e6, parse("x3 + x2*x6", 6)), X)
    witness = S[:, 0, 3, 4]  # indices (1,4,5) in 1-based labels
    dev = float(np.abs(witness - 1.0).max())
    rep = classical_jacobi_residual(induced_operator(e6, parse("x3 + x2*x6", 6)), X)
    ok = dev <= 1e-10 and abs(rep.max_abs - 1.0) <= 1e-10
    criterion(4, ok, f"Jacobi sum at (1,4,5) = 1 within {dev:.1e} at all 100 points")
    assert ok


def test_criterion_05_fundamental_identity_separation(criterion, eps, e6):
    X = sample_points(3, 100, seed=0)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        Fs = [ec.random_polynomial(3, 2, rng, terms=4) for _ in range(5)]
        worst = max(worst, fundamental_identity_residual(eps, *Fs, points=X).max_abs)
    doc = json.loads((DATA / "fi_witness_e6.json").read_text())
    Y = sample_points(6, doc["points"]["count"], tuple(doc["points"]["box"]), doc["points"]["seed"])
    e6_res = fundamental_identity_residual(e6, *(parse(t, 6) for t in doc["fields"]), points=Y).max_abs
    ok = worst <= 1e-10 and e6_res >= 1e-3
    criterion(5, ok, f"FI eps max {worst:.2e}; E6 frozen witness {e6_res:.3f}")
    assert ok


def test_criterion_06_separable_hamiltonian(criterion, e6):
    X = sample_points(6, 100, seed=0)
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        G = (ec.random_polynomial(6, 3, rng, terms=6, variables=[0, 1, 2])
             + ec.random_polynomial(6, 3, rng, terms=6, variables=[3, 4, 5]))
        worst = max(worst, classical_jacobi_residual(induced_operator(e6, G), X).max_abs)
    ok = worst <= 1e-10
    criterion(6, ok, f"10 separable cubic G, Jacobi max {worst:.2e}")
    assert ok


def test_criterion_07_kernel(criterion, r6):
    K = casimir_space(r6)
    basis_ok = K.dimension == 1 and np.allclose(K.basis[0], np.eye(6)[5], atol=1e-12)
    rec = verify_semi_casimir(r6, [0, 1, 0, -1, 0, 0], [0, 0, 1, 0, 1, 0])
    ok = basis_ok and rec.accepted and rec.norm_Ju > 0 and rec.norm_Jv > 0
    criterion(7, ok, f"Casimir basis {K.basis.tolist()}, pair certificates "
                     f"|J(u)|={rec.norm_Ju:g} |J(v)|={rec.norm_Jv:g} |J(u,v)|={rec.norm_Juv:g}")
    assert ok


def test_criterion_08_conservation(criterion):
    c = _corpus()
    rb = c["rigid_body"]
    traj = integrate(rb.system(), rb.initial_state, IntegratorConfig(t_span=(0, 10), rel_tol=1e-10))
    rel = max(d.relative for d in conservation_report(traj, {"G": rb.G, "H": rb.H}))
    r6 = c["r6_semicasimir"]
    C = casimir_space(r6.tensor.constant).basis
    drifts = []
    for tol in (1e-10, 1e-13):
        cfg = IntegratorConfig(t_span=(0, 10), rel_tol=tol, abs_tol=min(1e-12, tol * 1e-2))
        t = integrate(r6.system(), r6.initial_state, cfg, casimirs=C)
        drifts.append(conservation_report(t, {"C": C[0]})[0].max_abs)
    ok = rel <= 1e-8 and max(drifts) <= 1e-10
    criterion(8, ok, f"rigid body G/H relative drift {rel:.2e}; R6 Casimir drift {drifts[0]:.2e} "
                     f"(reference {drifts[1]:.2e})")
    assert ok


def test_criterion_09_liouville(criterion):
    worst_det, worst_div, names = 0.0, 0.0, []
    for name, spec in _corpus().items():
        # constant operator with a trajectory that starts inside the domain
        if not spec.is_constant or spec.variance != "contravariant" or spec.initial_state is None:
            continue
        if name == "log_domain":
            continue
        sysm = spec.system()
        det = monodromy_determinant(sysm, spec.initial_state, 10.0)
        div = divergence(hamiltonian_vector_field(sysm)).eval_many(spec.sample_points(100))
        worst_det = max(worst_det, abs(det - 1.0))
        worst_div = max(worst_div, float(np.abs(div).max()))
        names.append(name)
    ok = worst_det <= 1e-6 and worst_div <= 1e-12 and len(names) >= 4
    criterion(9, ok, f"{len(names)} systems: |det Phi(10) - 1| max {worst_det:.2e}, "
                     f"|div X| max {worst_div:.1e}")
    assert ok


def _constant_form_systems():
    out = []
    for name, spec in _corpus().items():
        if not spec.is_constant or spec.variance != "contravariant":
            continue
        try:
            w = right_inverse(spec.tensor.constant)
        except InverseError:
            continue
        out.append((name, spec, w))
    return out


@pytest.mark.xfail(strict=True, reason="Lie invariance of w fails for the coupled two-triplet system")
def test_criterion_10_lie_invariance(criterion):
    results = {name: lie_invariance_residual(spec.system(), w, spec.sample_points(100)).max_abs
               for name, spec, w in _constant_form_systems()}
    worst = max(results, key=results.get)
    ok = results[worst] <= 1e-10
    detail = ", ".join(f"{k} {v:.2e}" for k, v in results.items())
    criterion(10, ok, f"{detail} (worst {worst})")
    assert ok


def test_lie_invariance_residual_matches_coordinate_formula():
    # the criterion-10 failure is a property of the system, not of the contraction code
    for name, spec, w in _constant_form_systems():
        X = spec.sample_points(5)
        rep = lie_invariance_residual(spec.system(), w, X)
        field = hamiltonian_vector_field(spec.system())
        worst = 0.0
        for x in X:
            dX = numerical_jacobian(field.eval, x, h=1e-6)
            L = lie_derivative_constant_form(w.dense, dX)
            worst = max(worst, float(np.abs(L).max()))
        assert worst == pytest.approx(rep.flux.max_abs, abs=1e-7), name


def test_criterion_11_canonical_round_trip(criterion):
    worst = 0.0
    for n, m in ((3, 1), (6, 2)):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            T = rng.standard_normal((n, n))
            while abs(np.linalg.det(T)) < 0.1:
                T = rng.standard_normal((n, n))
            T = BasisChange(T)
            E = generalized_E(m, 0, COVARIANT)
            worst = max(worst, verify_canonicalizing_map(transform(E, T), T.inverse(), m))
    ok = worst <= 1e-10
    criterion(11, ok, f"20 random maps, round-trip max {worst:.2e}")
    assert ok


def test_criterion_12_parser(criterion):
    rng = np.random.default_rng(2024)
    worst_rt, worst_fd = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        F = ec.random_expression(n, 4, rng)
        G = parse(str(F), n)
        X = rng.uniform(-1, 1, size=(20, n))
        worst_rt = max(worst_rt, float(np.abs(F.eval_many(X) - G.eval_many(X)).max()))
        x = X[0]
        g = ec.grad(F, x)
        fd = numerical_jacobian(F.eval, x, h=1e-5)
        worst_fd = max(worst_fd, float((np.abs(g - fd) / (1 + np.abs(g))).max()))
    ok = worst_rt <= 1e-12 and worst_fd <= 1e-6
    criterion(12, ok, f"200 expressions: round-trip {worst_rt:.1e}, gradient vs FD {worst_fd:.1e}")
    assert ok
