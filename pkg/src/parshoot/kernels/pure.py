"""Reference propagation engine in plain numpy.

Algorithmically identical to the compiled engine in _native: implicit
Euler on the stacked (x, p) system with a chord Newton inner solve (the
finite-difference Jacobian is built once and refreshed only when an inner
solve is slow), or classical RK4, with the control elimination warm-started
from the previous evaluation throughout.
"""

from __future__ import annotations

import numpy as np

from ..eliminate import eliminate_controls
from ..errors import LegendreViolation, NoConvergence, PropagationError
from ..hamiltonian import dynamics_jacobians, dynamics_value, field_tensors

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 25
_REFRESH_AFTER = 5  # inner iterations before the chord Jacobian is rebuilt


class PureEngine:
    name = "pure"

    def __init__(self, prob):
        self.prob = prob

    def _rhs_factory(self, elim_tol, elim_max_iter):
        prob = self.prob
        n = prob.n
        warm = [None]

        def rhs(z):
            u, v, _, _ = eliminate_controls(
                prob, z[:n], z[n:], warm=warm[0], tol=elim_tol, max_iter=elim_max_iter
            )
            warm[0] = (u, v)
            t = field_tensors(prob, z[:n], u)
            fx, _, _ = dynamics_jacobians(t, v)
            out = np.empty(2 * n)
            out[:n] = dynamics_value(t, v)
            out[n:] = -(z[n:] @ fx)
            return out

        return rhs, warm

    def propagate(self, x0, p0, grid_n, scheme,
                  newton_tol=NEWTON_TOL, newton_max_iter=NEWTON_MAX_ITER,
                  elim_tol=None, elim_max_iter=None):
        prob = self.prob
        n = prob.n
        h = prob.horizon / grid_n
        elim_kwargs = {}
        if elim_tol is not None:
            elim_kwargs["tol"] = elim_tol
        if elim_max_iter is not None:
            elim_kwargs["max_iter"] = elim_max_iter
        rhs, warm = self._rhs_factory(
            elim_kwargs.get("tol", 1e-12), elim_kwargs.get("max_iter", 50)
        )

        x = np.zeros((grid_n + 1, n))
        p = np.zeros((grid_n + 1, n))
        ug = np.zeros((grid_n + 1, prob.l))
        vg = np.zeros((grid_n + 1, prob.m))
        z = np.concatenate([np.asarray(x0, dtype=float), np.asarray(p0, dtype=float)])

        def store(k, zk):
            u, v, _, _ = eliminate_controls(prob, zk[:n], zk[n:], warm=warm[0], **elim_kwargs)
            warm[0] = (u, v)
            x[k] = zk[:n]
            p[k] = zk[n:]
            ug[k] = u
            vg[k] = v

        def fd_jac(zk, f0):
            jac = np.empty((2 * n, 2 * n))
            for j in range(2 * n):
                step = 1e-6 * max(1.0, abs(zk[j]))
                zj = zk.copy()
                zj[j] += step
                jac[:, j] = (rhs(zj) - f0) / step
            return jac

        try:
            store(0, z)
            if scheme == "rk4":
                for k in range(grid_n):
                    self._k = k
                    k1 = rhs(z)
                    k2 = rhs(z + 0.5 * h * k1)
                    k3 = rhs(z + 0.5 * h * k2)
                    k4 = rhs(z + h * k3)
                    z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                    store(k + 1, z)
            elif scheme == "implicit-euler":
                lu = None
                for k in range(grid_n):
                    self._k = k
                    zc = z.copy()
                    refreshed = False
                    if lu is None:
                        f0 = rhs(zc)
                        lu = np.linalg.inv(np.eye(2 * n) - h * fd_jac(zc, f0))
                    converged = False
                    for it in range(newton_max_iter):
                        r = zc - z - h * rhs(zc)
                        delta = lu @ (-r)
                        zc = zc + delta
                        if np.max(np.abs(delta)) <= newton_tol:
                            converged = True
                            break
                        if it == _REFRESH_AFTER - 1 and not refreshed:
                            f0 = rhs(zc)
                            lu = np.linalg.inv(np.eye(2 * n) - h * fd_jac(zc, f0))
                            refreshed = True
                    if not converged:
                        raise PropagationError(
                            f"implicit step {k} did not converge",
                            step_index=k, time=k * h,
                        )
                    z = zc
                    store(k + 1, z)
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
        except (LegendreViolation, NoConvergence) as exc:
            k = getattr(self, "_k", 0)
            raise PropagationError(
                f"control elimination failed during step {k}: {exc}",
                step_index=k, time=k * h,
            ) from exc

        times = np.linspace(0.0, prob.horizon, grid_n + 1)
        return times, x, p, ug, vg
