"""Simplex kernel selection.

The compiled Cython kernel is preferred when it imported cleanly; the
pure NumPy kernel is the fallback.  Set ``RISKSDDP_KERNEL`` to
``compiled`` or ``python`` to force a backend (``auto`` is the
default).  Both backends implement the same pivot sequence and return
bitwise identical results.
"""

from __future__ import annotations

import os

from risksddp import _simplex_py

OPTIMAL = _simplex_py.OPTIMAL
INFEASIBLE = _simplex_py.INFEASIBLE
UNBOUNDED = _simplex_py.UNBOUNDED
ITERATION_LIMIT = _simplex_py.ITERATION_LIMIT

try:
    from risksddp import _simplex as _compiled
except ImportError:
    _compiled = None

_choice = os.environ.get("RISKSDDP_KERNEL", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise RuntimeError(f"RISKSDDP_KERNEL must be auto, compiled or python, got {_choice!r}")
if _choice == "compiled" and _compiled is None:
    raise RuntimeError("RISKSDDP_KERNEL=compiled but the compiled kernel is not built")

if _compiled is not None and _choice in ("auto", "compiled"):
    BACKEND = "compiled"
    simplex_solve = _compiled.simplex_solve
else:
    BACKEND = "python"
    simplex_solve = _simplex_py.simplex_solve

__all__ = ["simplex_solve", "BACKEND", "OPTIMAL", "INFEASIBLE",
           "UNBOUNDED", "ITERATION_LIMIT"]
