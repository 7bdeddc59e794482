"""Propagation engines: compiled extension with a pure-Python fallback.

The compiled module is optional; when the extension is missing (source
checkout without a build, PARSHOOT_NO_EXT install) everything runs through
the numpy engine.  Set PARSHOOT_PURE=1 to force the fallback, or pass
prefer="pure"/"compiled" to get_engine.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import PropagationError
from .pure import PureEngine

try:
    from . import _native
except ImportError:  # extension not built
    _native = None


def compiled_available() -> bool:
    return _native is not None


class CompiledEngine:
    name = "compiled"

    def __init__(self, prob):
        if _native is None:
            raise RuntimeError("compiled kernels are not built")
        self.prob = prob
        if prob.kernel_hint == "ds":
            self._kernel = _native.DSFieldKernel()
        else:
            self._kernel = _native.CallbackFieldKernel(
                prob.n, prob.l, prob.m,
                [f.value for f in prob.fields],
                [f.dx for f in prob.fields],
                [f.du for f in prob.fields],
                [f.dxx for f in prob.fields],
                [f.dxu for f in prob.fields],
                [f.duu for f in prob.fields],
            )

    def propagate(self, x0, p0, grid_n, scheme,
                  newton_tol=1e-12, newton_max_iter=25,
                  elim_tol=None, elim_max_iter=None):
        x0 = np.ascontiguousarray(x0, dtype=float)
        p0 = np.ascontiguousarray(p0, dtype=float)
        try:
            return _native.propagate(
                self._kernel, x0, p0, float(self.prob.horizon), int(grid_n),
                scheme, newton_tol, newton_max_iter,
                1e-12 if elim_tol is None else elim_tol,
                50 if elim_max_iter is None else elim_max_iter,
            )
        except _native.NativeStepError as exc:
            raise PropagationError(str(exc), step_index=exc.step_index,
                                   time=exc.time) from exc

    def eliminate(self, x, p, warm=None, tol=1e-12, max_iter=50):
        """Single control elimination through the compiled kernel (used by
        the parity tests and the benchmark)."""
        l, m = self.prob.l, self.prob.m
        if warm is None:
            u0, v0 = np.zeros(l), np.zeros(m)
        else:
            u0 = np.ascontiguousarray(warm[0], dtype=float)
            v0 = np.ascontiguousarray(warm[1], dtype=float)
        return _native.eliminate(
            self._kernel,
            np.ascontiguousarray(x, dtype=float),
            np.ascontiguousarray(p, dtype=float),
            u0, v0, tol, max_iter,
        )


def get_engine(prob, prefer: str | None = None):
    """Engine for one problem: compiled when built, pure otherwise."""
    choice = prefer or os.environ.get("PARSHOOT_ENGINE")
    if os.environ.get("PARSHOOT_PURE"):
        choice = "pure"
    if choice == "pure":
        return PureEngine(prob)
    if choice == "compiled":
        return CompiledEngine(prob)
    return CompiledEngine(prob) if _native is not None else PureEngine(prob)
