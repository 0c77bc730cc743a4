"""Reading and writing system definition files (JSON, 1-based indices)."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nambu import exprcalc as ec
from nambu.bracket import NambuSystem, PoissonOperator3, SkewField3, SymplecticForm3
from nambu.flow import IntegratorConfig
from nambu.skewtensor import CONTRAVARIANT, COVARIANT, SkewTensor3


class SystemFileError(ValueError):
    """Invalid system file; ``location`` is a JSON path such as ``tensor.entries[2].i``."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass
class SystemSpec:
    n: int
    tensor: SkewField3
    G: ec.ScalarField
    H: ec.ScalarField
    label: str = ""
    box: np.ndarray = field(default_factory=lambda: np.array([[-1.0, 1.0]]))
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    initial_state: np.ndarray | None = None
    source: str = ""

    @property
    def variance(self) -> str:
        return self.tensor.variance

    @property
    def is_constant(self) -> bool:
        return self.tensor.is_constant

    def system(self) -> NambuSystem:
        """The dynamical system; needs a contravariant operator."""
        if self.variance != CONTRAVARIANT:
            raise SystemFileError("dynamics need a contravariant operator", "tensor.variance")
        return NambuSystem(self.n, self.tensor, self.G, self.H, self.label)

    def sample_points(self, count: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        lo, hi = self.box[:, 0], self.box[:, 1]
        return rng.uniform(lo, hi, size=(count, self.n))


def _int(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SystemFileError(f"expected an integer, got {v!r}", where)
    return v


def _num(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SystemFileError(f"expected a finite number, got {v!r}", where)
    return float(v)


def _expr(text, n, where) -> ec.ScalarField:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return ec.ScalarField.constant(float(text), n)
    if not isinstance(text, str):
        raise SystemFileError(f"expected an expression string, got {text!r}", where)
    try:
        return ec.parse(text, n)
    except ec.ParseError as exc:
        raise SystemFileError(str(exc), where) from exc


def parse_tensor(doc: dict, n: int, where: str = "tensor") -> SkewField3:
    if not isinstance(doc, dict):
        raise SystemFileError("expected an object", where)
    variance = doc.get("variance", CONTRAVARIANT)
    if variance not in (CONTRAVARIANT, COVARIANT):
        raise SystemFileError(f"variance must be {CONTRAVARIANT!r} or {COVARIANT!r}", f"{where}.variance")
    kind = doc.get("kind", "constant")
    if kind not in ("constant", "field"):
        raise SystemFileError("kind must be 'constant' or 'field'", f"{where}.kind")
    entries = doc.get("entries")
    if not isinstance(entries, list):
        raise SystemFileError("expected a list of entries", f"{where}.entries")
    seen: dict[tuple[int, int, int], str] = {}
    consts, fields = [], {}
    for pos, rec in enumerate(entries):
        loc = f"{where}.entries[{pos}]"
        if not isinstance(rec, dict):
            raise SystemFileError("expected an object with i, j, k, value", loc)
        idx = []
        for key in "ijk":
            if key not in rec:
                raise SystemFileError(f"missing index {key!r}", loc)
            v = _int(rec[key], f"{loc}.{key}")
            if not 1 <= v <= n:
                raise SystemFileError(f"index {v} out of range 1..{n}", f"{loc}.{key}")
            idx.append(v - 1)
        if len(set(idx)) < 3:
            raise SystemFileError(f"repeated index in triple {[i + 1 for i in idx]}", loc)
        ckey = tuple(sorted(idx))
        if ckey in seen:
            raise SystemFileError(f"triple already given at {seen[ckey]}", loc)
        seen[ckey] = loc
        if "value" not in rec:
            raise SystemFileError("missing 'value'", loc)
        value = rec["value"]
        if kind == "constant":
            consts.append((*idx, _num(value, f"{loc}.value")))
        else:
            fields[tuple(idx)] = _expr(value, n, f"{loc}.value")
    if kind == "constant":
        T = SkewTensor3.from_entries(n, consts, variance)
        cls = PoissonOperator3 if variance == CONTRAVARIANT else SymplecticForm3
        return cls.from_constant(T)
    cls = PoissonOperator3 if variance == CONTRAVARIANT else SymplecticForm3
    return cls.from_fields(n, fields)


def _box(doc, n) -> np.ndarray:
    if doc is None:
        return np.tile([-1.0, 1.0], (n, 1))
    where = "sample_box"
    if (isinstance(doc, list) and len(doc) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in doc)):
        rows = [doc] * n
    elif isinstance(doc, list) and len(doc) == n:
        rows = doc
    else:
        raise SystemFileError("expected [lo, hi] or one [lo, hi] per axis", where)
    out = np.empty((n, 2))
    for a, r in enumerate(rows):
        if not isinstance(r, list) or len(r) != 2:
            raise SystemFileError("expected [lo, hi]", f"{where}[{a}]")
        lo, hi = _num(r[0], f"{where}[{a}]"), _num(r[1], f"{where}[{a}]")
        if not lo < hi:
            raise SystemFileError("need lo < hi", f"{where}[{a}]")
        out[a] = lo, hi
    return out


_INTEGRATOR_KEYS = {"method", "t_span", "t_end", "step", "rel_tol", "abs_tol", "max_steps", "output_dt"}


def _integrator(doc) -> IntegratorConfig:
    if doc is None:
        return IntegratorConfig()
    if not isinstance(doc, dict):
        raise SystemFileError("expected an object", "integrator")
    unknown = set(doc) - _INTEGRATOR_KEYS
    if unknown:
        raise SystemFileError(f"unknown keys {sorted(unknown)}", "integrator")
    kw = {}
    if "method" in doc:
        kw["method"] = str(doc["method"]).lower()
    if "t_span" in doc:
        ts = doc["t_span"]
        if not isinstance(ts, list) or len(ts) != 2:
            raise SystemFileError("expected [t0, t1]", "integrator.t_span")
        kw["t_span"] = (_num(ts[0], "integrator.t_span"), _num(ts[1], "integrator.t_span"))
    if "t_end" in doc:
        kw["t_span"] = (kw.get("t_span", (0.0, 0.0))[0], _num(doc["t_end"], "integrator.t_end"))
    for key in ("step", "rel_tol", "abs_tol", "output_dt"):
        if key in doc:
            kw[key] = _num(doc[key], f"integrator.{key}")
    if "max_steps" in doc:
        kw["max_steps"] = _int(doc["max_steps"], "integrator.max_steps")
    try:
        return IntegratorConfig(**kw)
    except ValueError as exc:
        raise SystemFileError(str(exc), "integrator") from exc


def load_system(source, seed_override: int | None = None) -> SystemSpec:
    """Parse a system file (path or already-decoded dict)."""
    name = ""
    if isinstance(source, (str, os.PathLike)):
        name = str(source)
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise SystemFileError(f"cannot read file: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SystemFileError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from exc
    else:
        doc = source
    if not isinstance(doc, dict):
        raise SystemFileError("top level must be an object")
    n = _int(doc.get("dimension"), "dimension")
    if n < 3:
        raise SystemFileError("dimension must be at least 3", "dimension")
    if "tensor" not in doc:
        raise SystemFileError("missing 'tensor'")
    tensor = parse_tensor(doc["tensor"], n)
    hams = doc.get("hamiltonians", {})
    if not isinstance(hams, dict):
        raise SystemFileError("expected an object", "hamiltonians")
    G = _expr(hams.get("G", "0"), n, "hamiltonians.G")
    H = _expr(hams.get("H", "0"), n, "hamiltonians.H")
    seed = _int(doc.get("seed", 0), "seed")
    if seed_override is not None:
        seed = seed_override
    x0 = doc.get("initial_state")
    if x0 is not None:
        if not isinstance(x0, list) or len(x0) != n:
            raise SystemFileError(f"expected a list of {n} numbers", "initial_state")
        x0 = np.array([_num(v, f"initial_state[{a}]") for a, v in enumerate(x0)])
    label = doc.get("label", Path(name).stem if name else "")
    return SystemSpec(n, tensor, G, H, str(label), _box(doc.get("sample_box"), n), seed,
                      _integrator(doc.get("integrator")), x0, name)


def tensor_to_doc(T: SkewTensor3) -> dict:
    return {"variance": T.variance, "kind": "constant", "entries": T.to_records()}


# ------------------------------------------------------------- output


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    if v == int(v) and abs(v) < 1e16:
        return f"{v:.1f}"
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory so failures leave nothing behind."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
