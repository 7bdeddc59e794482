"""Second-order machinery: linearized dynamics, Goh transform, coercivity.

The second variation of the Lagrangian has no quadratic term in the affine
control direction, so positivity is checked after the change of variables

    ybar = integral of vbar,    xibar = xbar - F_v ybar,

which turns it into a quadratic form that can be coercive against the
weighted norm gamma.  The discretized check assembles both quadratic forms
on the free coordinates (xibar_0, ubar nodes, ybar nodes, hbar), restricts
to the transformed constraint subspace, and reports the smallest
generalized eigenvalue as the coercivity constant estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .eliminate import check_legendre
from .errors import InternalError
from .hamiltonian import (
    dynamics_jacobians,
    field_tensors,
    hv_ddot,
    second_order_blocks,
)
from .model import Multiplier, ProblemDef, TrajectoryGrid

LEMMA_TOL = 1e-8


@dataclass
class LinearizedDirection:
    """A direction (xbar, ubar, vbar) of the linearized state equation."""

    xbar: np.ndarray
    ubar: np.ndarray
    vbar: np.ndarray


@dataclass
class GohDirection:
    """A transformed direction (xibar, ubar, ybar, hbar)."""

    xibar: np.ndarray
    ubar: np.ndarray
    ybar: np.ndarray
    hbar: np.ndarray


@dataclass
class NecessaryReport:
    """Residuals of the first-order necessary structure along a grid."""

    problem: str
    huv_sup: float
    bracket_sup: float
    v_sup: float
    hu_sup: float
    hvddot_sup: float
    threshold: float
    passed: bool

    def to_dict(self):
        return {
            "problem": self.problem,
            "huv_sup": self.huv_sup,
            "bracket_sup": self.bracket_sup,
            "v_sup": self.v_sup,
            "hu_sup": self.hu_sup,
            "hvddot_sup": self.hvddot_sup,
            "threshold": self.threshold,
            "passed": self.passed,
        }


@dataclass
class SSCReport:
    """Outcome of the discretized coercivity test."""

    problem: str
    grid_n: int
    rho_hat: float
    huu_margin: float
    generalized_margin: float
    necessary: NecessaryReport
    cone: str
    verdict: str

    @property
    def coercive(self):
        return self.verdict == "coercive"

    def to_dict(self):
        return {
            "schema": "parshoot/ssc-report/v1",
            "problem": self.problem,
            "grid_n": self.grid_n,
            "rho_hat": self.rho_hat,
            "huu_margin": self.huu_margin,
            "generalized_margin": self.generalized_margin,
            "necessary": self.necessary.to_dict(),
            "cone": self.cone,
            "verdict": self.verdict,
        }


def trapezoid_weights(times):
    w = np.full(len(times), times[1] - times[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def multiplier_for(prob: ProblemDef, traj: TrajectoryGrid) -> Multiplier:
    """Recover the constraint multiplier from the initial transversality
    relation p0 = -D_x0 ell and attach the costate path."""
    x0, xT = traj.x[0], traj.x[-1]
    p0 = traj.p[0]
    g0 = np.asarray(prob.cost.grad(x0, xT))[: prob.n]
    if prob.d_eta:
        j0 = prob.constraints.jac(x0, xT)[:, : prob.n]
        beta, *_ = np.linalg.lstsq(j0.T, -(p0 + g0), rcond=None)
    else:
        beta = np.zeros(0)
    return Multiplier(beta=beta, p=traj.p.copy())


class _Coeffs:
    """Per-node coefficient paths along a nominal trajectory.

    Time derivatives (of H_vx, F_v, and S) use central differences on the
    grid with one-sided stencils at the endpoints.
    """

    def __init__(self, prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier):
        npts = len(sol.times)
        n, l, m = prob.n, prob.l, prob.m
        h = sol.dt
        self.fx = np.zeros((npts, n, n))
        self.fu = np.zeros((npts, n, l))
        self.fv = np.zeros((npts, n, m))
        self.hxx = np.zeros((npts, n, n))
        self.hux = np.zeros((npts, l, n))
        self.huu = np.zeros((npts, l, l))
        self.hvx = np.zeros((npts, m, n))
        self.hvu = np.zeros((npts, m, l))
        for k in range(npts):
            t = field_tensors(prob, sol.x[k], sol.u[k])
            self.fx[k], self.fu[k], self.fv[k] = dynamics_jacobians(t, sol.v[k])
            (self.hxx[k], self.hux[k], self.huu[k],
             self.hvx[k], self.hvu[k]) = second_order_blocks(t, sol.v[k], lam.p[k])

        def ddt(path):
            out = np.empty_like(path)
            if npts > 2:
                out[1:-1] = (path[2:] - path[:-2]) / (2.0 * h)
            out[0] = (path[1] - path[0]) / h
            out[-1] = (path[-1] - path[-2]) / h
            return out

        dfv = ddt(self.fv)
        dhvx = ddt(self.hvx)
        self.b = np.einsum("kab,kbm->kam", self.fx, self.fv) - dfv
        hvxfv = np.einsum("kib,kbj->kij", self.hvx, self.fv)
        self.s = 0.5 * (hvxfv + np.swapaxes(hvxfv, 1, 2))
        self.vmat = 0.5 * (hvxfv - np.swapaxes(hvxfv, 1, 2))
        ds = ddt(self.s)
        self.m_coef = (np.einsum("kam,kab->kmb", self.fv, self.hxx)
                       - dhvx
                       - np.einsum("kib,kbc->kic", self.hvx, self.fx))
        self.j_coef = (np.einsum("kam,kca->kmc", self.fv, self.hux)
                       - np.einsum("kib,kbc->kic", self.hvx, self.fu))
        hvxb = np.einsum("kib,kbj->kij", self.hvx, self.b)
        self.r_coef = (np.einsum("kam,kab,kbj->kmj", self.fv, self.hxx, self.fv)
                       - (hvxb + np.swapaxes(hvxb, 1, 2))
                       - ds)

        self.ell_hess = np.asarray(prob.cost.hess(sol.x[0], sol.x[-1]),
                                   dtype=float).copy()
        if prob.d_eta:
            eta_h = np.asarray(prob.constraints.hess(sol.x[0], sol.x[-1]))
            self.ell_hess += np.einsum("j,jab->ab", lam.beta, eta_h)


def nominal_coefficients(prob: ProblemDef, sol: TrajectoryGrid,
                         lam: Multiplier) -> "_Coeffs":
    """Precompute the coefficient paths along sol for repeated use."""
    return _Coeffs(prob, sol, lam)


def propagate_linearized(prob: ProblemDef, sol: TrajectoryGrid, x0bar, ubar, vbar,
                         scheme: str = "implicit-euler",
                         lam: Multiplier | None = None,
                         coeffs: "_Coeffs | None" = None) -> LinearizedDirection:
    """Integrate the linearized state equation along sol.

    ubar and vbar are node values on the same grid as sol; the scheme
    family matches the nonlinear propagator (implicit Euler default, rk4
    available with averaged midpoint coefficients).
    """
    npts = len(sol.times)
    n = prob.n
    h = sol.dt
    ubar = np.asarray(ubar, dtype=float).reshape(npts, prob.l)
    vbar = np.asarray(vbar, dtype=float).reshape(npts, prob.m)
    if coeffs is None:
        lam = lam if lam is not None else multiplier_for(prob, sol)
        coeffs = _Coeffs(prob, sol, lam)
    fx, fu, fv = coeffs.fx, coeffs.fu, coeffs.fv

    xbar = np.zeros((npts, n))
    xbar[0] = np.asarray(x0bar, dtype=float)
    eye = np.eye(n)
    if scheme == "implicit-euler":
        for k in range(npts - 1):
            drive = fu[k + 1] @ ubar[k + 1] + fv[k + 1] @ vbar[k + 1]
            xbar[k + 1] = np.linalg.solve(eye - h * fx[k + 1], xbar[k] + h * drive)
    elif scheme == "rk4":
        for k in range(npts - 1):
            fxh = 0.5 * (fx[k] + fx[k + 1])
            fuh = 0.5 * (fu[k] + fu[k + 1])
            fvh = 0.5 * (fv[k] + fv[k + 1])
            uh = 0.5 * (ubar[k] + ubar[k + 1])
            vh = 0.5 * (vbar[k] + vbar[k + 1])
            k1 = fx[k] @ xbar[k] + fu[k] @ ubar[k] + fv[k] @ vbar[k]
            k2 = fxh @ (xbar[k] + 0.5 * h * k1) + fuh @ uh + fvh @ vh
            k3 = fxh @ (xbar[k] + 0.5 * h * k2) + fuh @ uh + fvh @ vh
            k4 = (fx[k + 1] @ (xbar[k] + h * k3) + fu[k + 1] @ ubar[k + 1]
                  + fv[k + 1] @ vbar[k + 1])
            xbar[k + 1] = xbar[k] + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return LinearizedDirection(xbar=xbar, ubar=ubar, vbar=vbar)


def goh_transform(direction: LinearizedDirection, sol: TrajectoryGrid,
                  prob: ProblemDef) -> GohDirection:
    """ybar by trapezoidal cumulative integration of vbar, xibar pointwise."""
    npts = len(sol.times)
    h = sol.dt
    vbar = direction.vbar
    ybar = np.zeros_like(vbar)
    for k in range(npts - 1):
        ybar[k + 1] = ybar[k] + 0.5 * h * (vbar[k] + vbar[k + 1])
    if prob.m:
        fv = np.stack([
            np.stack([f.value(sol.x[k], sol.u[k]) for f in prob.fields[1:]], axis=-1)
            for k in range(npts)
        ])
        xibar = direction.xbar - np.einsum("kam,km->ka", fv, ybar)
    else:
        xibar = direction.xbar.copy()
    return GohDirection(xibar=xibar, ubar=direction.ubar.copy(), ybar=ybar,
                        hbar=ybar[-1].copy())


def second_variation_omega(prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier,
                           direction: LinearizedDirection,
                           coeffs: "_Coeffs | None" = None) -> float:
    """Second variation of the Lagrangian at a linearized direction.

    Trapezoidal quadrature of the running quadratic form plus the endpoint
    Hessian of the endpoint Lagrangian; there is no quadratic term in vbar.
    """
    if coeffs is None:
        coeffs = _Coeffs(prob, sol, lam)
    w = trapezoid_weights(sol.times)
    xb, ub, vb = direction.xbar, direction.ubar, direction.vbar
    running = 0.5 * np.einsum("ka,kab,kb->k", xb, coeffs.hxx, xb)
    if prob.l:
        running = running + np.einsum("kc,kcb,kb->k", ub, coeffs.hux, xb)
        running = running + 0.5 * np.einsum("kc,kcd,kd->k", ub, coeffs.huu, ub)
    if prob.m:
        running = running + np.einsum("ki,kib,kb->k", vb, coeffs.hvx, xb)
        if prob.l:
            running = running + np.einsum("ki,kic,kc->k", vb, coeffs.hvu, ub)
    zeta = np.concatenate([xb[0], xb[-1]])
    return float(w @ running + 0.5 * zeta @ coeffs.ell_hess @ zeta)


def omega_bar_coeffs(prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier, k: int):
    """Coefficient matrices (M, J, S, V, R, B, F_v) at grid node k."""
    coeffs = _Coeffs(prob, sol, lam)
    return (coeffs.m_coef[k], coeffs.j_coef[k], coeffs.s[k], coeffs.vmat[k],
            coeffs.r_coef[k], coeffs.b[k], coeffs.fv[k])


def omega_bar(prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier,
              gdir: GohDirection, coeffs: "_Coeffs | None" = None) -> float:
    """The transformed second variation at a Goh direction."""
    if coeffs is None:
        coeffs = _Coeffs(prob, sol, lam)
    w = trapezoid_weights(sol.times)
    xi, ub, yb, hb = gdir.xibar, gdir.ubar, gdir.ybar, gdir.hbar
    running = 0.5 * np.einsum("ka,kab,kb->k", xi, coeffs.hxx, xi)
    if prob.l:
        running = running + np.einsum("kc,kcb,kb->k", ub, coeffs.hux, xi)
        running = running + 0.5 * np.einsum("kc,kcd,kd->k", ub, coeffs.huu, ub)
    if prob.m:
        running = running + np.einsum("ki,kib,kb->k", yb, coeffs.m_coef, xi)
        running = running + 0.5 * np.einsum("ki,kij,kj->k", yb, coeffs.r_coef, yb)
        if prob.l:
            running = running + np.einsum("ki,kic,kc->k", yb, coeffs.j_coef, ub)
    fvT_h = coeffs.fv[-1] @ hb if prob.m else np.zeros(prob.n)
    zeta = np.concatenate([xi[0], xi[-1] + fvT_h])
    g_val = 0.5 * zeta @ coeffs.ell_hess @ zeta
    if prob.m:
        g_val += hb @ (coeffs.hvx[-1] @ xi[-1] + 0.5 * coeffs.s[-1] @ hb)
    return float(w @ running + g_val)


def gamma_order(times, zeta0, ubar, ybar, hbar) -> float:
    """Weighted norm |zeta0|^2 + |hbar|^2 + integral(|ubar|^2 + |ybar|^2)."""
    w = trapezoid_weights(np.asarray(times))
    ubar = np.atleast_2d(np.asarray(ubar, dtype=float).T).T
    ybar = np.atleast_2d(np.asarray(ybar, dtype=float).T).T
    run = w @ ((ubar * ubar).sum(axis=1) + (ybar * ybar).sum(axis=1))
    zeta0 = np.asarray(zeta0, dtype=float)
    hbar = np.asarray(hbar, dtype=float)
    return float(zeta0 @ zeta0 + hbar @ hbar + run)


def gamma_order_from_v(times, zeta0, ubar, vbar) -> float:
    """The same norm on a raw direction, transforming vbar to its primitive
    internally."""
    times = np.asarray(times)
    vbar = np.asarray(vbar, dtype=float)
    h = float(times[1] - times[0])
    ybar = np.zeros_like(vbar)
    for k in range(len(times) - 1):
        ybar[k + 1] = ybar[k] + 0.5 * h * (vbar[k] + vbar[k + 1])
    return gamma_order(times, zeta0, ubar, ybar, ybar[-1])


def check_necessary(prob: ProblemDef, sol: TrajectoryGrid,
                    lam: Multiplier, threshold: float = LEMMA_TOL) -> NecessaryReport:
    """Sup norms over the grid of H_uv, the costate bracket pairings of the
    affine fields, and the stationarity residuals H_u and Hddot_v."""
    npts = len(sol.times)
    huv_sup = bracket_sup = v_sup = hu_sup = hvdd_sup = 0.0
    for k in range(npts):
        x, u, v, p = sol.x[k], sol.u[k], sol.v[k], lam.p[k]
        t = field_tensors(prob, x, u)
        _, _, _, hvx, hvu = second_order_blocks(t, v, p)
        if hvu.size:
            huv_sup = max(huv_sup, float(np.max(np.abs(hvu))))
        _, fu, fv = dynamics_jacobians(t, v)
        hu = p @ fu
        if hu.size:
            hu_sup = max(hu_sup, float(np.max(np.abs(hu))))
        hvdd = hv_ddot(prob, x, u, v, p, tensors=t)
        if hvdd.size:
            hvdd_sup = max(hvdd_sup, float(np.max(np.abs(hvdd))))
        for i in range(1, prob.m + 1):
            for j in range(i + 1, prob.m + 1):
                bracket = t.dxf[j] @ t.f[i] - t.dxf[i] @ t.f[j]
                bracket_sup = max(bracket_sup, float(abs(p @ bracket)))
        if prob.m:
            hvxfv = hvx @ fv
            vmat = 0.5 * (hvxfv - hvxfv.T)
            v_sup = max(v_sup, float(np.max(np.abs(vmat))))
    passed = max(huv_sup, bracket_sup, hu_sup, hvdd_sup) <= threshold
    return NecessaryReport(
        problem=prob.name,
        huv_sup=huv_sup,
        bracket_sup=bracket_sup,
        v_sup=v_sup,
        hu_sup=hu_sup,
        hvddot_sup=hvdd_sup,
        threshold=threshold,
        passed=bool(passed),
    )


def _assemble_pencil(prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier):
    """Quadratic forms of the transformed second variation and of the gamma
    norm on the free coordinates, with xibar eliminated through the discrete
    transformed dynamics (implicit Euler).

    Returns (A, gdiag, C, xi_map) with theta^T A theta the second variation,
    diag(gdiag) the gamma norm, and C theta = 0 the constraint rows.
    """
    coeffs = _Coeffs(prob, sol, lam)
    npts = len(sol.times)
    n, l, m = prob.n, prob.l, prob.m
    h = sol.dt
    w = trapezoid_weights(sol.times)

    dim = n + l * npts + m * npts + m
    u_off = n
    y_off = n + l * npts
    h_off = y_off + m * npts

    def u_slice(k):
        return slice(u_off + k * l, u_off + (k + 1) * l)

    def y_slice(k):
        return slice(y_off + k * m, y_off + (k + 1) * m)

    xi = np.zeros((npts, n, dim))
    xi[0, :, :n] = np.eye(n)
    eye = np.eye(n)
    for k in range(npts - 1):
        rhs = xi[k].copy()
        if l:
            rhs[:, u_slice(k + 1)] += h * coeffs.fu[k + 1]
        if m:
            rhs[:, y_slice(k + 1)] += h * coeffs.b[k + 1]
        xi[k + 1] = np.linalg.solve(eye - h * coeffs.fx[k + 1], rhs)

    a = np.zeros((dim, dim))
    xi_flat = xi.reshape(npts * n, dim)
    hxx_rows = np.einsum("kab,kbd->kad", w[:, None, None] * coeffs.hxx, xi)
    a += 0.5 * xi_flat.T @ hxx_rows.reshape(npts * n, dim)
    if l:
        hux_rows = np.einsum("kcb,kbd->kcd", w[:, None, None] * coeffs.hux, xi)
        a[u_off:y_off, :] += hux_rows.reshape(npts * l, dim)
    if m:
        m_rows = np.einsum("kib,kbd->kid", w[:, None, None] * coeffs.m_coef, xi)
        a[y_off:h_off, :] += m_rows.reshape(npts * m, dim)
    for k in range(npts):
        if l:
            a[u_slice(k), u_slice(k)] += 0.5 * w[k] * coeffs.huu[k]
            if m:
                a[y_slice(k), u_slice(k)] += w[k] * coeffs.j_coef[k]
        if m:
            a[y_slice(k), y_slice(k)] += 0.5 * w[k] * coeffs.r_coef[k]

    zeta = np.zeros((2 * n, dim))
    zeta[:n, :n] = np.eye(n)
    zeta[n:] = xi[-1]
    if m:
        zeta[n:, h_off:] += coeffs.fv[-1]
    a += 0.5 * zeta.T @ coeffs.ell_hess @ zeta
    if m:
        a[h_off:, :] += coeffs.hvx[-1] @ xi[-1]
        a[h_off:, h_off:] += 0.5 * coeffs.s[-1]

    a = 0.5 * (a + a.T)

    gdiag = np.ones(dim)
    for k in range(npts):
        gdiag[u_slice(k)] = w[k]
        gdiag[y_slice(k)] = w[k]

    rows = []
    grad = np.asarray(prob.cost.grad(sol.x[0], sol.x[-1]), dtype=float)
    z0 = zeta[:n]
    zt = zeta[n:]
    if prob.d_eta:
        jac = prob.constraints.jac(sol.x[0], sol.x[-1])
        for j in range(prob.d_eta):
            rows.append(jac[j, :n] @ z0 + jac[j, n:] @ zt)
    rows.append(grad[:n] @ z0 + grad[n:] @ zt)
    cmat = np.vstack(rows)
    return a, gdiag, cmat, xi


def coercivity_check(prob: ProblemDef, sol: TrajectoryGrid, lam: Multiplier,
                     grid_n: int | None = None) -> SSCReport:
    """Discretized test of uniform positivity of the transformed second
    variation against the gamma norm on the constraint subspace.

    rho_hat is the smallest eigenvalue of the pencil (A, G) on the
    transformed equality constraints (the linearized cost row is treated as
    an equality; see the cone tag); the verdict is coercive when rho_hat is
    positive and the necessary-structure residuals pass.
    """
    if grid_n is not None and grid_n != sol.grid_n:
        raise ValueError(f"sol has grid {sol.grid_n}, expected {grid_n}")
    a, gdiag, cmat, _ = _assemble_pencil(prob, sol, lam)

    basis = scipy.linalg.null_space(cmat) if cmat.shape[0] else np.eye(a.shape[0])
    if basis.shape[1] == 0:
        raise InternalError("constraint subspace is trivial")
    az = basis.T @ a @ basis
    az = 0.5 * (az + az.T)
    gz = basis.T @ (gdiag[:, None] * basis)
    gz = 0.5 * (gz + gz.T)
    min_g = float(np.min(scipy.linalg.eigvalsh(gz)))
    if min_g <= 0:
        raise InternalError(
            f"gamma norm degenerate on the subspace (min eig {min_g:.3e})"
        )
    try:
        eigs = scipy.linalg.eigvalsh(az, gz)
    except scipy.linalg.LinAlgError as exc:
        raise InternalError(f"generalized eigenvalue solve failed: {exc}") from exc
    rho_hat = float(eigs[0])

    lc = check_legendre(prob, sol)
    necessary = check_necessary(prob, sol, lam)
    verdict = "coercive" if (rho_hat > 0 and necessary.passed) else "not-coercive"
    return SSCReport(
        problem=prob.name,
        grid_n=sol.grid_n,
        rho_hat=rho_hat,
        huu_margin=lc.huu_margin,
        generalized_margin=lc.generalized_margin,
        necessary=necessary,
        cone="equality-surrogate",
        verdict=verdict,
    )
