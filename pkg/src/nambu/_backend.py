"""Selects the tape evaluator at import time.

The compiled ``_speedups`` extension is used when importable, unless the
environment variable ``NAMBU_PURE_PYTHON`` is set to a non-empty value.
"""
import os

from nambu import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("NAMBU_PURE_PYTHON"):
    try:
        from nambu import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback

eval_point = _impl.eval_point
eval_batch = _impl.eval_batch


def implementations():
    """Return ``{name: module}`` for every evaluator available in this build."""
    impls = {"python": _fallback}
    try:
        from nambu import _speedups

        impls["compiled"] = _speedups
    except ImportError:  # pragma: no cover
        pass
    return impls
