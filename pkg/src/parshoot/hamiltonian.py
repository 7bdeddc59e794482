"""Pre-Hamiltonian algebra: gradients, Lie brackets, and the elimination map.

Everything here is a pure function of a problem definition and numeric
points.  The costate p is treated as a row vector throughout.  The scalar
pre-Hamiltonian is H = p . F(x, u, v) with F = f0 + sum_i v_i f_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LegendreViolation
from .model import ProblemDef

_ELIM_FD_STEP = 1e-6  # step for the finite-difference blocks of the elimination Jacobian


@dataclass(frozen=True)
class FieldTensors:
    """Stacked evaluations of f_0..f_m and their derivatives at one (x, u)."""

    f: np.ndarray      # (m+1, n)
    dxf: np.ndarray    # (m+1, n, n)
    duf: np.ndarray    # (m+1, n, l)
    dxxf: np.ndarray   # (m+1, n, n, n)
    dxuf: np.ndarray   # (m+1, n, n, l)
    duuf: np.ndarray   # (m+1, n, l, l)


def field_tensors(prob: ProblemDef, x, u) -> FieldTensors:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return FieldTensors(
        f=np.stack([f.value(x, u) for f in prob.fields]),
        dxf=np.stack([f.dx(x, u) for f in prob.fields]),
        duf=np.stack([f.du(x, u) for f in prob.fields]),
        dxxf=np.stack([f.dxx(x, u) for f in prob.fields]),
        dxuf=np.stack([f.dxu(x, u) for f in prob.fields]),
        duuf=np.stack([f.duu(x, u) for f in prob.fields]),
    )


def _vfull(v, m):
    out = np.empty(m + 1)
    out[0] = 1.0
    out[1:] = v
    return out


def dynamics_jacobians(t: FieldTensors, v):
    """F_x (n, n), F_u (n, l), F_v (n, m) at the tensors' base point."""
    vf = _vfull(np.asarray(v, dtype=float), t.f.shape[0] - 1)
    fx = np.einsum("i,iab->ab", vf, t.dxf)
    fu = np.einsum("i,iac->ac", vf, t.duf)
    fv = t.f[1:].T.copy()
    return fx, fu, fv


def dynamics_value(t: FieldTensors, v):
    vf = _vfull(np.asarray(v, dtype=float), t.f.shape[0] - 1)
    return vf @ t.f


@dataclass(frozen=True)
class HamiltonianPoint:
    """One evaluation point (x, u, v, p) with the field tensors cached."""

    prob: ProblemDef
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    tensors: FieldTensors

    @classmethod
    def at(cls, prob, x, u, v, p):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        p = np.asarray(p, dtype=float)
        return cls(prob, x, u, v, p, field_tensors(prob, x, u))


def h_value(pt: HamiltonianPoint) -> float:
    """H = p . F(x, u, v)."""
    return float(pt.p @ dynamics_value(pt.tensors, pt.v))


def h_gradients(pt: HamiltonianPoint):
    """Row gradients (H_x, H_u, H_v) at the point."""
    fx, fu, _ = dynamics_jacobians(pt.tensors, pt.v)
    hx = pt.p @ fx
    hu = pt.p @ fu
    hv = pt.tensors.f[1:] @ pt.p
    return hx, hu, hv


def second_order_blocks(t: FieldTensors, v, p):
    """Hessian blocks of H in (x, u) plus the mixed rows in v.

    Returns (Hxx, Hux, Huu, Hvx, Hvu); Hux[c, b] differentiates H_u[c] by
    x[b], Hvx[i, b] differentiates H_v[i] by x[b], Hvu = Huv^T.
    """
    p = np.asarray(p, dtype=float)
    vf = _vfull(np.asarray(v, dtype=float), t.f.shape[0] - 1)
    fxx = np.einsum("i,iabc->abc", vf, t.dxxf)
    fxu = np.einsum("i,iabc->abc", vf, t.dxuf)
    fuu = np.einsum("i,iacd->acd", vf, t.duuf)
    hxx = np.einsum("a,abc->bc", p, fxx)
    hux = np.einsum("a,abc->cb", p, fxu)
    huu = np.einsum("a,acd->cd", p, fuu)
    hvx = np.einsum("a,iab->ib", p, t.dxf[1:])
    hvu = np.einsum("a,iac->ic", p, t.duf[1:])
    return hxx, hux, huu, hvx, hvu


def lie_bracket(prob: ProblemDef, i: int, j: int, x, u):
    """[f_i, f_j]^x = (Dx f_j) f_i - (Dx f_i) f_j at (x, u)."""
    if not (0 <= i <= prob.m and 0 <= j <= prob.m):
        raise IndexError(f"field index out of range: ({i}, {j}) with m={prob.m}")
    t = field_tensors(prob, x, u)
    return t.dxf[j] @ t.f[i] - t.dxf[i] @ t.f[j]


def drift_brackets(t: FieldTensors):
    """[f_0, f_i]^x for i = 1..m plus its x and u derivatives, from tensors.

    g_i = (Dx f_i) f_0 - (Dx f_0) f_i; the derivatives only need second
    derivatives of the fields.
    """
    f0 = t.f[0]
    dxf0 = t.dxf[0]
    duf0 = t.duf[0]
    fi = t.f[1:]
    dxfi = t.dxf[1:]
    dufi = t.duf[1:]

    g = np.einsum("iab,b->ia", dxfi, f0) - np.einsum("ab,ib->ia", dxf0, fi)
    dxg = (
        np.einsum("iabc,b->iac", t.dxxf[1:], f0)
        + np.einsum("iab,bc->iac", dxfi, dxf0)
        - np.einsum("abc,ib->iac", t.dxxf[0], fi)
        - np.einsum("ab,ibc->iac", dxf0, dxfi)
    )
    dug = (
        np.einsum("iabd,b->iad", t.dxuf[1:], f0)
        + np.einsum("iab,bd->iad", dxfi, duf0)
        - np.einsum("abd,ib->iad", t.dxuf[0], fi)
        - np.einsum("ab,ibd->iad", dxf0, dufi)
    )
    return g, dxg, dug


def hv_dot(prob: ProblemDef, x, u, p):
    """Time derivative of H_v in its reduced form, component i = p . [f_0, f_i]^x.

    Valid along candidate extremals where the mixed Hessian H_uv and the
    pairings p [f_i, f_j]^x vanish; used as the defining form of the
    optimality system everywhere, on or off the solution.
    """
    t = field_tensors(prob, x, u)
    g, _, _ = drift_brackets(t)
    return g @ np.asarray(p, dtype=float)


def gamma_udot(prob: ProblemDef, x, u, v, p, tensors: FieldTensors | None = None):
    """Rate of the nonlinear control along an extremal.

    Solves the time-differentiated stationarity of H_u for udot, with the
    vdot coefficient dropped (it vanishes on extremals):

        0 = -H_x F_u + p (F_xu : F) + H_uu udot.
    """
    p = np.asarray(p, dtype=float)
    if prob.l == 0:
        return np.zeros(0)
    t = tensors if tensors is not None else field_tensors(prob, x, u)
    vf = _vfull(np.asarray(v, dtype=float), prob.m)
    F = vf @ t.f
    fx = np.einsum("i,iab->ab", vf, t.dxf)
    fu = np.einsum("i,iac->ac", vf, t.duf)
    fxu = np.einsum("i,iabc->abc", vf, t.dxuf)
    fuu = np.einsum("i,iacd->acd", vf, t.duuf)
    huu = np.einsum("a,acd->cd", p, fuu)
    eigs = np.linalg.eigvalsh(0.5 * (huu + huu.T))
    if np.min(np.abs(eigs)) < 1e-12 * max(1.0, np.max(np.abs(eigs))):
        raise LegendreViolation(
            "H_uu singular while eliminating udot", smallest_eigenvalue=float(eigs[0])
        )
    rhs = -(p @ fx) @ fu + np.einsum("a,abc,b->c", p, fxu, F)
    return -np.linalg.solve(huu, rhs)


def hv_ddot(prob: ProblemDef, x, u, v, p, tensors: FieldTensors | None = None):
    """Second time derivative of H_v along the reduced dynamics.

    Component i differentiates p . [f_0, f_i]^x along xdot = F, the costate
    equation, and udot from gamma_udot.
    """
    p = np.asarray(p, dtype=float)
    t = tensors if tensors is not None else field_tensors(prob, x, u)
    vf = _vfull(np.asarray(v, dtype=float), prob.m)
    F = vf @ t.f
    fx = np.einsum("i,iab->ab", vf, t.dxf)
    hx = p @ fx
    g, dxg, dug = drift_brackets(t)
    out = -g @ hx + np.einsum("iac,c,a->i", dxg, F, p)
    if prob.l > 0:
        gamma = gamma_udot(prob, x, u, v, p, tensors=t)
        out = out + np.einsum("iad,d,a->i", dug, gamma, p)
    return out


def elimination_jacobian(prob: ProblemDef, x, u, v, p):
    """Derivative of the stacked map (H_u, -Hddot_v) with respect to (u, v).

    The upper blocks are analytic; the lower blocks come from central
    differences of hv_ddot, which keeps the problem definition at second
    derivatives only.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    t = field_tensors(prob, x, u)
    _, _, huu, _, hvu = second_order_blocks(t, v, p)
    l, m = prob.l, prob.m
    jac = np.zeros((l + m, l + m))
    jac[:l, :l] = huu
    jac[:l, l:] = hvu.T

    for c in range(l):
        hi = u.copy()
        lo = u.copy()
        hi[c] += _ELIM_FD_STEP
        lo[c] -= _ELIM_FD_STEP
        col = (hv_ddot(prob, x, hi, v, p) - hv_ddot(prob, x, lo, v, p)) / (2 * _ELIM_FD_STEP)
        jac[l:, c] = -col
    for c in range(m):
        hi = v.copy()
        lo = v.copy()
        hi[c] += _ELIM_FD_STEP
        lo[c] -= _ELIM_FD_STEP
        col = (hv_ddot(prob, x, u, hi, p, tensors=t)
               - hv_ddot(prob, x, u, lo, p, tensors=t)) / (2 * _ELIM_FD_STEP)
        jac[l:, l + c] = -col
    return jac
