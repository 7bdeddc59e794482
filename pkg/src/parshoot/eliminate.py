"""Solve the stationarity system for the controls and check Legendre margins.

The stationarity of H in u together with the vanishing second time
derivative of H_v define (u, v) implicitly as functions of (x, p).  The
system is solved by Newton iteration on u with an exact linear solve in v
at every pass, exploiting that the v-equation is affine in v whenever the
affine fields carry no u-curvature (it is treated as a local affine model
otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LegendreViolation, NoConvergence
from .hamiltonian import (
    dynamics_jacobians,
    elimination_jacobian,
    field_tensors,
    hv_ddot,
)
from .model import ProblemDef, TrajectoryGrid

ELIM_TOL = 1e-12
ELIM_MAX_ITER = 50
_COND_LIMIT = 1e12


def _affine_model(prob, x, u, v, p, tensors):
    """Value and v-slope of hv_ddot around the current v at fixed (x, u, p).

    Exact when hv_ddot is affine in v, which holds whenever the affine
    fields have no u-curvature; a quasi-Newton model otherwise.
    """
    m = prob.m
    c = hv_ddot(prob, x, u, v, p, tensors=tensors)
    a = np.empty((m, m))
    for j in range(m):
        ej = v.copy()
        ej[j] += 1.0
        a[:, j] = hv_ddot(prob, x, u, ej, p, tensors=tensors) - c
    return c, a


def eliminate_controls(prob: ProblemDef, x, p, warm=None,
                       tol: float = ELIM_TOL, max_iter: int = ELIM_MAX_ITER):
    """Return (u, v, iterations, residual) solving (H_u, Hddot_v) = 0.

    warm is an optional (u, v) starting guess; the zero pair is used when
    it is omitted.  Each pass solves the v-equation exactly through its
    affine model and then takes one Newton step on u through the Schur
    complement of the elimination Jacobian.  The returned residual is the
    sup norm of the stacked system re-evaluated at the output.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    l, m = prob.l, prob.m
    if warm is None:
        u = np.zeros(l)
        v = np.zeros(m)
    else:
        u = np.array(warm[0], dtype=float).reshape(l)
        v = np.array(warm[1], dtype=float).reshape(m)

    residual = np.inf
    for it in range(1, max_iter + 1):
        t = field_tensors(prob, x, u)
        if m > 0:
            c, a = _affine_model(prob, x, u, v, p, t)
            try:
                v = v + np.linalg.solve(a, -c)
            except np.linalg.LinAlgError as exc:
                raise LegendreViolation(
                    "v-block of the elimination Jacobian is singular",
                    smallest_eigenvalue=0.0,
                ) from exc
            hvdd = hv_ddot(prob, x, u, v, p, tensors=t)
        else:
            hvdd = np.zeros(0)
        _, fu, _ = dynamics_jacobians(t, v)
        hu = p @ fu
        residual = float(max(np.max(np.abs(hu), initial=0.0),
                             np.max(np.abs(hvdd), initial=0.0)))
        if residual <= tol:
            return u, v, it, residual
        jac = elimination_jacobian(prob, x, u, v, p)
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[0] <= 0 or sv[0] / max(sv[-1], np.finfo(float).tiny) > _COND_LIMIT:
            raise LegendreViolation(
                "elimination Jacobian numerically singular "
                f"(condition {sv[0] / max(sv[-1], np.finfo(float).tiny):.2e})",
                smallest_eigenvalue=float(sv[-1]),
            )
        if l > 0:
            # Newton step on u through the Schur complement of the v-block;
            # jac rows are d(H_u, -Hddot_v), so the v-sensitivity of the
            # u-equation enters with the signs below.
            huu = jac[:l, :l]
            huv = jac[:l, l:]
            if m > 0:
                dv_du = np.linalg.solve(jac[l:, l:], jac[l:, :l])
                schur = huu - huv @ dv_du
            else:
                schur = huu
            u = u - np.linalg.solve(schur, hu)
        # l == 0: the v-solve already zeroed the affine equation, the next
        # pass only confirms the residual.

    raise NoConvergence(
        f"control elimination did not reach {tol:.1e} in {max_iter} iterations",
        residual=residual,
        iterate=(u, v),
    )


@dataclass
class LCReport:
    """Legendre margins along a trajectory grid."""

    problem: str
    huu_margin: float
    generalized_margin: float
    satisfied: bool

    def to_dict(self):
        return {
            "problem": self.problem,
            "huu_margin": self.huu_margin,
            "generalized_margin": self.generalized_margin,
            "satisfied": self.satisfied,
        }


def check_legendre(prob: ProblemDef, traj: TrajectoryGrid) -> LCReport:
    """Smallest eigenvalues over the grid of H_uu and of -dHddot_v/dv.

    Both blocks are symmetrized before the eigenvalue computation; the
    strengthened conditions hold when both minima are positive.  This is a
    reporting operation and never raises: where the generalized block is
    not even defined (singular H_uu blocks the udot feedback inside
    Hddot_v), its margin is reported as nan and counts as violated.
    """
    from .hamiltonian import field_tensors, second_order_blocks

    l = prob.l
    huu_min = np.inf
    gen_min = np.inf
    gen_defined = True
    for k in range(len(traj.times)):
        x, u, v, p = traj.x[k], traj.u[k], traj.v[k], traj.p[k]
        if l > 0:
            t = field_tensors(prob, x, u)
            _, _, huu, _, _ = second_order_blocks(t, v, p)
            huu_min = min(huu_min, float(np.linalg.eigvalsh(0.5 * (huu + huu.T))[0]))
        if prob.m > 0:
            try:
                jac = elimination_jacobian(prob, x, u, v, p)
            except LegendreViolation:
                gen_defined = False
                continue
            gen = 0.5 * (jac[l:, l:] + jac[l:, l:].T)
            gen_min = min(gen_min, float(np.linalg.eigvalsh(gen)[0]))
    if prob.l == 0:
        huu_min = np.inf
    if prob.m == 0:
        gen_min = np.inf
    elif not gen_defined:
        gen_min = np.nan
    satisfied = bool(
        (prob.l == 0 or huu_min > 0) and (prob.m == 0 or gen_min > 0)
    )
    return LCReport(
        problem=prob.name,
        huu_margin=float(huu_min),
        generalized_margin=float(gen_min),
        satisfied=satisfied,
    )
