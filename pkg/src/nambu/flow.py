"""Trajectory integration and structure-preservation diagnostics.

The integrators are generic explicit Runge-Kutta schemes.  Conservation of
G, H, Casimirs, phase volume and the 3-form is measured afterwards.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from nambu import exprcalc as ec
from nambu.bracket import NambuSystem, VectorField, as_form, divergence, hamiltonian_vector_field
from nambu.exprcalc import DomainError, ScalarField, compile_fields
from nambu.identities import ResidualReport, _check_pairing, _points, _report


class IntegrationError(RuntimeError):
    """Integration stopped early; ``t`` and ``state`` locate the failure."""

    def __init__(self, message: str, t: float | None = None, state=None):
        super().__init__(message)
        self.t = t
        self.state = None if state is None else np.asarray(state, dtype=float).copy()


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    t_span: tuple[float, float] = (0.0, 10.0)
    step: float = 1e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_steps: int = 1_000_000
    output_dt: float = 0.01
    first_step: float | None = None

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown method {self.method!r}; use 'rk4' or 'rk45'")
        if self.step <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0 or self.output_dt <= 0:
            raise ValueError("step, tolerances and output spacing must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if not self.t_span[1] >= self.t_span[0]:
            raise ValueError("t_span must be increasing")

    def output_times(self) -> np.ndarray:
        t0, t1 = map(float, self.t_span)
        k = int(math.floor((t1 - t0) / self.output_dt + 1e-9))
        ts = t0 + self.output_dt * np.arange(k + 1)
        if t1 - ts[-1] > 1e-12 * max(1.0, abs(t1)):
            ts = np.append(ts, t1)
        else:
            ts[-1] = t1
        return ts


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _dopri_step(f, t, y, h, k1):
    ks = [k1]
    for s in range(1, 7):
        ys = y + h * sum(a * k for a, k in zip(_A[s], ks))
        ks.append(f(t + _C[s] * h, ys))
    y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b)
    err = h * sum(e * k for e, k in zip(_E, ks))
    return y_new, err, ks[-1]  # FSAL: last stage is f(t+h, y_new)


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def solve(f, y0, cfg: IntegratorConfig, times=None):
    """Integrate ``y' = f(t, y)`` and return ``(times, states, steps_taken)``."""
    times = cfg.output_times() if times is None else np.asarray(times, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((len(times), y.size))
    out[0] = y
    t = float(times[0])
    steps = 0

    def guarded(tt, yy):
        try:
            v = f(tt, yy)
        except DomainError as exc:
            raise IntegrationError(f"vector field undefined at t={tt:.17g}: {exc}", tt, yy) from exc
        if not np.all(np.isfinite(v)):
            raise IntegrationError(f"non-finite vector field at t={tt:.17g}", tt, yy)
        return v

    if cfg.method == "rk4":
        for idx in range(1, len(times)):
            target = float(times[idx])
            span = target - t
            nsub = max(1, int(math.ceil(span / cfg.step - 1e-9)))
            h = span / nsub
            for _ in range(nsub):
                y = _rk4_step(guarded, t, y, h)
                t += h
                steps += 1
                if steps > cfg.max_steps:
                    raise IntegrationError(f"max_steps={cfg.max_steps} exceeded", t, y)
            t = target
            out[idx] = y
        return times, out, steps

    # adaptive Dormand-Prince with Hairer's error norm and step controller
    k1 = guarded(t, y)
    h = cfg.first_step or _initial_step(guarded, t, y, k1, cfg)
    for idx in range(1, len(times)):
        target = float(times[idx])
        while t < target:
            if steps >= cfg.max_steps:
                raise IntegrationError(f"max_steps={cfg.max_steps} exceeded", t, y)
            last = t + h >= target
            step = target - t if last else h
            if step <= 1e-14 * max(1.0, abs(t)) and not last:
                raise IntegrationError(f"step size underflow at t={t:.17g}", t, y)
            y_new, err, k_new = _dopri_step(guarded, t, y, step, k1)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            en = float(np.sqrt(np.mean((err / scale) ** 2)))
            steps += 1
            if en <= 1.0:
                t = target if last else t + step
                y, k1 = y_new, k_new
                fac = 10.0 if en == 0.0 else min(10.0, max(0.2, 0.9 * en ** -0.2))
                if not last or fac < 1.0:
                    h = step * fac
            else:
                h = step * max(0.2, 0.9 * en ** -0.2)
                if h <= 1e-14 * max(1.0, abs(t)):
                    raise IntegrationError(f"step size underflow at t={t:.17g}", t, y)
        out[idx] = y
    return times, out, steps


def _initial_step(f, t, y, k1, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((k1 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    k2 = f(t + h0, y + h0 * k1)
    d2 = np.sqrt(np.mean(((k2 - k1) / scale) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, cfg.t_span[1] - cfg.t_span[0] or 1.0)


# ----------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    G: np.ndarray
    H: np.ndarray
    divergence: np.ndarray
    casimirs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    steps: int = 0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        for arr in (self.times, self.states, self.G, self.H, self.divergence, self.casimirs):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.n)] + ["G", "H", "div"])
        for k, t in enumerate(self.times):
            row = [t, *self.states[k], self.G[k], self.H[k], self.divergence[k]]
            w.writerow([f"{float(v):.17g}" for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "t": [float(v) for v in self.times],
            "states": [[float(v) for v in row] for row in self.states],
            "G": [float(v) for v in self.G],
            "H": [float(v) for v in self.H],
            "div": [float(v) for v in self.divergence],
        }


def integrate(sys: NambuSystem, x0, cfg: IntegratorConfig = IntegratorConfig(),
              casimirs=None) -> Trajectory:
    """Integrate ``dx/dt = X`` and record G, H, divergence (and optional linear Casimirs)."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"initial state must have {sys.n} components")
    try:
        compile_fields([sys.G, sys.H], sys.n).eval(x0)
    except DomainError as exc:
        raise IntegrationError(f"Hamiltonians undefined at the initial state: {exc}",
                               float(cfg.t_span[0]), x0) from exc
    X = hamiltonian_vector_field(sys)
    rhs = X.eval
    times, states, steps = solve(lambda t, y: rhs(y), x0, cfg)
    diag = compile_fields([sys.G, sys.H, divergence(X)], sys.n)
    try:
        vals = diag.eval_batch(states)
    except DomainError as exc:
        raise IntegrationError(f"diagnostics undefined along trajectory: {exc}") from exc
    C = np.zeros((len(times), 0)) if casimirs is None else states @ np.atleast_2d(casimirs).T
    return Trajectory(times, states, vals[:, 0].copy(), vals[:, 1].copy(), vals[:, 2].copy(), C, steps)


@dataclass
class Drift:
    name: str
    initial: float
    max_abs: float
    relative: float

    def to_dict(self) -> dict:
        return {"name": self.name, "initial": self.initial, "max_abs": self.max_abs,
                "relative": self.relative}


def conservation_report(traj: Trajectory, fields: dict | list) -> list[Drift]:
    """Max ``|F(x(t)) - F(x(0))|`` and its ratio to ``|F(x(0))|`` (absolute when that is 0)."""
    if not isinstance(fields, dict):
        fields = {str(f): f for f in fields}
    out = []
    for name, f in fields.items():
        if isinstance(f, ScalarField):
            v = f.eval_many(traj.states)
        else:
            v = traj.states @ np.asarray(f, dtype=float)
        d = float(np.abs(v - v[0]).max())
        ref = abs(float(v[0]))
        out.append(Drift(name, float(v[0]), d, d / ref if ref > 0 else d))
    return out


def monodromy(sys: NambuSystem, x0, t: float, cfg: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """Fundamental matrix ``Phi(t)`` of the variational equations ``Phi' = (dX/dx) Phi``."""
    n = sys.n
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return np.eye(n)
    tape = hamiltonian_vector_field(sys).rhs_with_jacobian_tape()

    def f(_t, y):
        v = tape.eval(y[:n])
        A = v[n:].reshape(n, n)
        return np.concatenate([v[:n], (A @ y[n:].reshape(n, n)).ravel()])

    y0 = np.concatenate([x0, np.eye(n).ravel()])
    run = IntegratorConfig(cfg.method, (0.0, float(t)), cfg.step, cfg.rel_tol, cfg.abs_tol,
                           cfg.max_steps, float(t), cfg.first_step)
    _, states, _ = solve(f, y0, run, times=[0.0, float(t)])
    return states[-1, n:].reshape(n, n)


def monodromy_determinant(sys: NambuSystem, x0, t: float,
                          cfg: IntegratorConfig = IntegratorConfig()) -> float:
    return float(np.linalg.det(monodromy(sys, x0, t, cfg)))


# -------------------------------------------------------- Lie invariance


@dataclass
class LieInvarianceReport:
    """``max_abs`` is the larger of the two exterior-derivative residuals.

    ``flux`` is the 3-form ``d(i_X w)`` (the Lie derivative for closed w) and
    ``shifted`` the exterior derivative of ``i_X w + dH ^ dG`` computed
    separately.  ``contraction`` is the size of ``i_X w + dH ^ dG`` itself.
    """

    flux: ResidualReport
    shifted: ResidualReport
    contraction: ResidualReport

    @property
    def max_abs(self) -> float:
        return max(self.flux.max_abs, self.shifted.max_abs)

    def to_dict(self) -> dict:
        return {"max_abs": self.max_abs, "d(i_X w)": self.flux.to_dict(),
                "d(i_X w + dH^dG)": self.shifted.to_dict(),
                "i_X w + dH^dG": self.contraction.to_dict()}


def contract_field(X: VectorField, w) -> dict[tuple[int, int], ScalarField]:
    """The 2-form ``(i_X w)_jk = X^i w_ijk`` for ``j<k``."""
    w = as_form(w)
    n = w.n
    terms: dict[tuple[int, int], list] = {}
    for (a, b, c), coef in w.support():
        for i, j, k, s in ((a, b, c, 1), (b, a, c, -1), (c, a, b, 1)):
            terms.setdefault((j, k), []).append(
                ec.mul(ec.const(float(s)), ec.mul(X[i].expr, coef)))
    return {key: ScalarField(ec.sum_exprs(t), n) for key, t in terms.items()}


def _d2(sigma: dict, n: int, X: np.ndarray) -> np.ndarray:
    """Dense ``(d sigma)_ijk`` for ``i<j<k`` from the symbolic 2-form, evaluated at ``X``."""
    zero = ec.ZERO
    s = lambda i, j: sigma[(i, j)].expr if (i, j) in sigma else zero  # noqa: E731
    exprs = [ec.sum_exprs([ec.derivative(s(j, k), i), ec.neg(ec.derivative(s(i, k), j)),
                           ec.derivative(s(i, j), k)])
             for i, j, k in itertools.combinations(range(n), 3)]
    if not exprs:
        return np.zeros((len(X), 0))
    return compile_fields(exprs, n).eval_batch(X)


def lie_invariance_residual(sys: NambuSystem, w, points=None,
                            pairing_tol: float = 1e-8) -> LieInvarianceReport:
    w = as_form(w)
    n = sys.n
    if w.n != n:
        raise ValueError("dimension mismatch between system and 3-form")
    X = _points(points, n)
    Jv, wv = sys.J.values_at(X), w.values_at(X)
    for p, x in enumerate(X):
        _check_pairing(wv[p], Jv[p], pairing_tol, "full", x)

    field_X = hamiltonian_vector_field(sys)
    ixw = contract_field(field_X, w)
    G, H = sys.G, sys.H
    shifted = {}
    for j, k in itertools.combinations(range(n), 2):
        dHdG = H.diff(j) * G.diff(k) - H.diff(k) * G.diff(j)
        base = ixw.get((j, k))
        shifted[(j, k)] = dHdG if base is None else base + dHdG

    pairs = list(itertools.combinations(range(n), 2))
    contraction = compile_fields([shifted[p].expr for p in pairs], n).eval_batch(X)
    flux = _d2(ixw, n, X)
    sh = _d2(shifted, n, X)

    def rep(vals, name, keys):
        r = _report(vals, X, name, index_axes=False)
        if vals.size:
            col = int(np.unravel_index(np.argmax(np.abs(vals)), vals.shape)[1])
            r.indices = tuple(keys[col])
        return r

    tri = list(itertools.combinations(range(n), 3))
    return LieInvarianceReport(rep(flux, "d(i_X w)", tri), rep(sh, "d(i_X w + dH^dG)", tri),
                               rep(contraction, "i_X w + dH^dG", pairs))
