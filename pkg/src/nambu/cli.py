"""Command-line front end: ``nambu validate|check|simulate|kernel|invert <file>``.

Exit codes: 0 success, 1 a check failed (or the tensor is not invertible),
2 invalid input, 3 integration failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from nambu import exprcalc as ec
from nambu import flow, identities, kernel
from nambu.bracket import PoissonOperator3, SymplecticForm3, induced_operator
from nambu.skewtensor import (
    CONTRAVARIANT, InverseError, flat_rank, flatten, inverse_residual, right_inverse,
)
from nambu.systemfile import SystemFileError, dumps, load_system, tensor_to_doc, write_atomic

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INTEGRATION = 0, 1, 2, 3
CHECKS = ("closure", "ncj", "jacobi-induced", "fi", "axioms")
DEFAULT_THRESHOLD = 1e-8


def _seed_override() -> int | None:
    raw = os.environ.get("NAMBU_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise SystemFileError(f"NAMBU_SEED must be an integer, got {raw!r}") from None


def _load(path):
    return load_system(path, _seed_override())


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _emit(text: str, out) -> None:
    if out:
        write_atomic(out, text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    spec = _load(args.file)
    if spec.is_constant:
        T = spec.tensor.constant
        where = ""
    else:
        x = spec.sample_points(1)[0]
        T = spec.tensor.at(x)
        where = " at first sample point"
    rank = flat_rank(flatten(T))
    kdim = T.n - rank
    print(f"{spec.label or spec.source}: n={spec.n}, {spec.variance} {'constant' if spec.is_constant else 'field'} tensor")
    for rec in (T.to_records() if spec.is_constant else []):
        print(f"  [{rec['i']},{rec['j']},{rec['k']}] = {rec['value']:.17g}")
    print(f"rank {rank}, kernel dim {kdim}{where}")
    return EXIT_OK


# ---------------------------------------------------------------- check


def _thresholds(items) -> dict[str, float]:
    out = {c: DEFAULT_THRESHOLD for c in CHECKS}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or name not in out:
            raise SystemFileError(f"--threshold expects NAME=VALUE with NAME in {', '.join(CHECKS)}")
        try:
            out[name] = float(value)
        except ValueError:
            raise SystemFileError(f"bad threshold value {value!r}") from None
    return out


def _pair(spec):
    """``(J, w)`` for the file's tensor; either side may be None when not available."""
    if spec.variance == CONTRAVARIANT:
        J = spec.tensor
        if J.is_constant:
            return J, SymplecticForm3.from_constant(right_inverse(J.constant))
        return J, None
    w = spec.tensor
    if w.is_constant:
        return PoissonOperator3.from_constant(right_inverse(w.constant)), w
    return None, w


def _operator(spec, what: str):
    if spec.variance == CONTRAVARIANT:
        return spec.tensor
    J, _ = _pair(spec)
    if J is None:
        raise InverseError(f"{what} needs the operator symbolically")
    return J


def _run_check(name, spec, X, rng_seed):
    if name == "closure":
        J, w = _pair(spec)
        if w is None:
            raise InverseError("closure needs a covariant 3-form or a constant operator")
        return {"closure": identities.closure_residual(w, X)}
    if name == "ncj":
        J, w = _pair(spec)
        if J is None:
            raise InverseError("the necessary Jacobi condition needs the operator symbolically")
        return {"ncj": identities.jacobi_necessary_residual(J, w, X)}
    if name == "jacobi-induced":
        J = _operator(spec, "induced bracket")
        return {"jacobi-induced": identities.classical_jacobi_residual(induced_operator(J, spec.G), X)}
    if name == "fi":
        J = _operator(spec, "fundamental identity")
        rng = np.random.default_rng(rng_seed)
        worst = None
        for _ in range(3):
            Fs = [ec.random_polynomial(spec.n, 2, rng, terms=3) for _ in range(5)]
            r = identities.fundamental_identity_residual(J, *Fs, points=X)
            if worst is None or r.max_abs > worst.max_abs:
                worst = r
        return {"fi": worst}
    if name == "axioms":
        J = _operator(spec, "bracket axioms")
        return {f"axioms.{k}": v for k, v in identities.axiom_residuals(J, X, seed=rng_seed).items()}
    raise AssertionError(name)


def cmd_check(args) -> int:
    spec = _load(args.file)
    thr = _thresholds(args.threshold)
    wanted = [c for c in CHECKS if getattr(args, c.replace("-", "_"))] or list(CHECKS)
    if args.points < 1:
        raise SystemFileError("--points must be at least 1")
    X = spec.sample_points(args.points)
    results, ok = {}, True
    for name in wanted:
        try:
            reports = _run_check(name, spec, X, spec.seed)
        except (InverseError, identities.PairingError, ec.DomainError) as exc:
            results[name] = {"error": str(exc), "passed": False}
            ok = False
            continue
        for key, rep in reports.items():
            d = rep.to_dict()
            d["threshold"] = thr[name]
            d["passed"] = rep.passed(thr[name])
            ok &= d["passed"]
            results[key] = d
    _emit(dumps({"system": spec.label, "samples": int(args.points), "seed": spec.seed,
                 "checks": results, "passed": ok}), args.out)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    spec = _load(args.file)
    if spec.initial_state is None:
        raise SystemFileError("simulate needs 'initial_state'")
    cfg = spec.integrator
    t0, t1 = cfg.t_span
    if args.t_end is not None:
        t1 = args.t_end
    kw = dict(method=args.method or cfg.method, t_span=(t0, t1), step=cfg.step,
              rel_tol=args.rel_tol or cfg.rel_tol, abs_tol=cfg.abs_tol,
              max_steps=cfg.max_steps, output_dt=cfg.output_dt)
    try:
        cfg = flow.IntegratorConfig(**kw)
    except ValueError as exc:
        raise SystemFileError(str(exc)) from exc
    system = spec.system()
    cas = kernel.casimir_space(spec.tensor).basis if spec.is_constant else None
    try:
        traj = flow.integrate(system, spec.initial_state, cfg, casimirs=cas)
        det = flow.monodromy_determinant(system, spec.initial_state, t1 - t0, cfg)
    except flow.IntegrationError as exc:
        where = {"t": exc.t, "state": None if exc.state is None else exc.state[:spec.n].tolist()}
        _err(f"{exc} {dumps(where, indent=0).replace(chr(10), '')}")
        return EXIT_INTEGRATION
    fields = {"G": spec.G, "H": spec.H}
    if cas is not None:
        fields.update({f"C{a + 1}": c for a, c in enumerate(cas)})
    drifts = [d.to_dict() for d in flow.conservation_report(traj, fields)]
    summary = {
        "system": spec.label, "method": cfg.method, "t_end": float(t1), "steps": traj.steps,
        "samples": len(traj.times), "drift": drifts,
        "det_monodromy": det, "det_deviation": abs(det - 1.0),
        "max_abs_divergence": float(np.abs(traj.divergence).max()),
        "final_state": traj.states[-1].tolist(),
    }
    if args.out:
        write_atomic(args.out, traj.to_csv())
    if args.json:
        write_atomic(args.json, dumps(traj.to_dict()) + "\n")
    print(dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------- kernel


def cmd_kernel(args) -> int:
    spec = _load(args.file)
    if not spec.is_constant:
        _err("kernel analysis requires constant operator")
        return EXIT_INPUT
    T = spec.tensor.constant
    basis = kernel.casimir_space(T)
    pairs = kernel.find_semi_casimir_pairs(T, attempts=args.attempts, seed=spec.seed)
    _emit(dumps({"system": spec.label, "casimir": basis.to_dict(),
                 "semi_casimir_pairs": [p.to_dict() for p in pairs]}), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- invert


def cmd_invert(args) -> int:
    spec = _load(args.file)
    if not spec.is_constant:
        _err("inversion requires a constant tensor")
        return EXIT_INPUT
    T = spec.tensor.constant
    try:
        inv = right_inverse(T)
    except InverseError as exc:
        _err(str(exc))
        return EXIT_FAIL
    res = inverse_residual(T, inv) if T.variance != CONTRAVARIANT else inverse_residual(inv, T)
    doc = tensor_to_doc(inv)
    if args.out:
        write_atomic(args.out, dumps(doc) + "\n")
    else:
        print(dumps(doc))
    print(f"verification residual {res:.17g}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nambu", description="Nambu-system analysis and simulation")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse a system file and report rank")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("check", help="identity residuals over sample points")
    c.add_argument("file")
    for name in CHECKS:
        c.add_argument(f"--{name}", action="store_true")
    c.add_argument("--points", type=int, default=identities.DEFAULT_SAMPLES)
    c.add_argument("--threshold", action="append", metavar="NAME=VALUE",
                   help=f"per-check threshold (default {DEFAULT_THRESHOLD:g})")
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="integrate and report conservation diagnostics")
    s.add_argument("file")
    s.add_argument("--t-end", type=float)
    s.add_argument("--method", choices=("rk4", "rk45"))
    s.add_argument("--rel-tol", type=float)
    s.add_argument("--out", help="trajectory CSV")
    s.add_argument("--json", help="trajectory JSON")
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("kernel", help="Casimir basis and semi-Casimir pairs")
    k.add_argument("file")
    k.add_argument("--attempts", type=int, default=200)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernel)

    i = sub.add_parser("invert", help="right inverse of a constant tensor")
    i.add_argument("file")
    i.add_argument("--out")
    i.set_defaults(func=cmd_invert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (SystemFileError, ec.ParseError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except ValueError as exc:
        # remaining validation failures from the tensor layer (duplicate triples, ...)
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
