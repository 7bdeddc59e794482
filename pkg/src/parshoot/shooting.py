"""Shooting residual, finite-difference Jacobian, and the Gauss-Newton driver.

The shooting unknown packs (x0, p0, beta) into one vector nu; its residual
stacks the endpoint constraints, both transversality relations, the final
stationarity of H_v, and the initial stationarity of its time derivative.
A root of the residual is a candidate extremal of the problem.  Reduced
problems pin part of nu and keep a subset of rows (see model.Reduction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, NoConvergence, PropagationError, SingularNormalMatrix
from .hamiltonian import HamiltonianPoint, h_gradients, hv_dot
from .integrate import propagate
from .kernels import get_engine
from .model import ProblemDef, ProblemSetup, Reduction, get_setup

GN_TOL = 1e-10
GN_MAX_ITER = 30
_JAC_STEP = 1e-6
_SV_RATIO_SQ = 1e-14  # rank floor for S'(nu)^T S'(nu)

ORDER_BAND = (1e-8, 1e-2)
ORDER_NOISE_FLOOR = 1e-11


@dataclass(frozen=True)
class ShootingPoint:
    """The unknown (x0, p0, beta), packed in that order."""

    x0: np.ndarray
    p0: np.ndarray
    beta: np.ndarray

    def pack(self):
        return np.concatenate([self.x0, self.p0, self.beta])

    @classmethod
    def unpack(cls, prob: ProblemDef, nu):
        nu = np.asarray(nu, dtype=float)
        n, d = prob.n, prob.d_eta
        if nu.size != 2 * n + d:
            raise ValueError(f"nu has size {nu.size}, expected {2 * n + d}")
        return cls(x0=nu[:n].copy(), p0=nu[n:2 * n].copy(), beta=nu[2 * n:].copy())


def endpoint_lagrangian(prob: ProblemDef, beta, x0, xT):
    """Value and both partial gradients of the endpoint Lagrangian
    phi0 + beta . eta at (x0, xT)."""
    beta = np.asarray(beta, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    n = prob.n
    value = float(prob.cost.value(x0, xT))
    grad = np.asarray(prob.cost.grad(x0, xT), dtype=float).copy()
    if prob.d_eta:
        value += float(beta @ prob.constraints.value(x0, xT))
        grad += beta @ prob.constraints.jac(x0, xT)
    return value, grad[:n], grad[n:]


def full_residual_rows(prob: ProblemDef, beta, traj):
    """The stacked residual blocks for a propagated trajectory.

    Order: eta(x0, xT); p0 + D_x0 ell; pT - D_xT ell; H_v at T;
    Hdot_v at 0.  Row count d_eta + 2n + 2m.
    """
    x0, xT = traj.x[0], traj.x[-1]
    p0, pT = traj.p[0], traj.p[-1]
    _, g0, gT = endpoint_lagrangian(prob, beta, x0, xT)
    ptT = HamiltonianPoint.at(prob, xT, traj.u[-1], traj.v[-1], pT)
    _, _, hv_T = h_gradients(ptT)
    hvdot_0 = hv_dot(prob, x0, traj.u[0], p0)
    return np.concatenate([
        np.asarray(prob.constraints.value(x0, xT), dtype=float),
        p0 + g0,
        pT - gT,
        hv_T,
        hvdot_0,
    ])


class ShootingMap:
    """Generic shooting map: nu = (x0, p0, beta), all rows kept."""

    def __init__(self, prob: ProblemDef, engine=None):
        self.problem = prob
        self.engine = engine if engine is not None else get_engine(prob)
        self.dim = 2 * prob.n + prob.d_eta
        self.n_rows = prob.d_eta + 2 * prob.n + 2 * prob.m

    def row_labels(self):
        prob = self.problem
        labels = [f"eta[{j}]" for j in range(prob.d_eta)]
        labels += [f"p0+D_x0_ell[{a}]" for a in range(prob.n)]
        labels += [f"pT-D_xT_ell[{a}]" for a in range(prob.n)]
        labels += [f"Hv_T[{i}]" for i in range(prob.m)]
        labels += [f"Hvdot_0[{i}]" for i in range(prob.m)]
        return labels

    def split(self, nu):
        pt = ShootingPoint.unpack(self.problem, nu)
        return pt.x0, pt.p0, pt.beta

    def propagate(self, nu, grid_n, scheme):
        x0, p0, _ = self.split(nu)
        return propagate(self.problem, x0, p0, grid_n, scheme, engine=self.engine)

    def residual(self, nu, grid_n, scheme):
        x0, p0, beta = self.split(nu)
        traj = propagate(self.problem, x0, p0, grid_n, scheme, engine=self.engine)
        return full_residual_rows(self.problem, beta, traj)

    def multiplier(self, nu, traj):
        from .model import Multiplier

        _, _, beta = self.split(nu)
        return Multiplier(beta=beta, p=traj.p.copy())


class ReducedShootingMap:
    """Shooting map with the initial state and part of p0 pinned.

    The unknowns are the free initial costate entries; the constraint
    multiplier is recovered from the initial transversality relation, and
    only the rows named by the reduction remain in the residual.
    """

    def __init__(self, prob: ProblemDef, reduction: Reduction, engine=None):
        self.problem = prob
        self.reduction = reduction
        self.engine = engine if engine is not None else get_engine(prob)
        self.dim = len(reduction.free_indices)
        self.n_rows = len(reduction.rows)

    def row_labels(self):
        full = ShootingMap(self.problem, engine=self.engine).row_labels()
        return [full[r] for r in self.reduction.rows]

    def split(self, nu):
        nu = np.asarray(nu, dtype=float)
        if nu.size != self.dim:
            raise ValueError(f"nu has size {nu.size}, expected {self.dim}")
        red = self.reduction
        p0 = red.p0_fixed.copy()
        p0[np.isnan(red.p0_fixed)] = nu
        return red.x0.copy(), p0

    def _beta(self, p0, x0, xT):
        # Initial transversality: p0 + D_x0 phi0 + beta @ D_x0 eta = 0.
        jac = self.problem.constraints.jac(x0, xT)
        j0 = jac[:, : self.problem.n]
        g0 = np.asarray(self.problem.cost.grad(x0, xT))[: self.problem.n]
        beta, *_ = np.linalg.lstsq(j0.T, -(p0 + g0), rcond=None)
        return beta

    def propagate(self, nu, grid_n, scheme):
        x0, p0 = self.split(nu)
        return propagate(self.problem, x0, p0, grid_n, scheme, engine=self.engine)

    def residual(self, nu, grid_n, scheme):
        x0, p0 = self.split(nu)
        traj = propagate(self.problem, x0, p0, grid_n, scheme, engine=self.engine)
        beta = self._beta(p0, traj.x[0], traj.x[-1])
        rows = full_residual_rows(self.problem, beta, traj)
        return rows[list(self.reduction.rows)]

    def multiplier(self, nu, traj):
        from .model import Multiplier

        x0, p0 = self.split(nu)
        beta = self._beta(p0, traj.x[0], traj.x[-1])
        return Multiplier(beta=beta, p=traj.p.copy())


def make_shooting_map(target, engine=None):
    """Build the shooting map for a problem, setup, or registered name."""
    if isinstance(target, str):
        target = get_setup(target)
    if isinstance(target, ProblemSetup):
        if target.reduction is not None:
            return ReducedShootingMap(target.problem, target.reduction, engine=engine)
        return ShootingMap(target.problem, engine=engine)
    if isinstance(target, ProblemDef):
        return ShootingMap(target, engine=engine)
    return target  # already a map


def shooting_residual(prob, nu, grid_n, scheme="implicit-euler"):
    """Residual of the generic shooting map at nu = (x0, p0, beta)."""
    return make_shooting_map(prob).residual(np.asarray(nu, dtype=float), grid_n, scheme)


def shooting_jacobian(target, nu, grid_n, scheme="implicit-euler", step=_JAC_STEP):
    """Central finite-difference Jacobian of the shooting residual.

    Column j uses step*max(1, |nu_j|).  A propagation failure at a
    perturbed point is re-raised naming the column.
    """
    smap = make_shooting_map(target)
    nu = np.asarray(nu, dtype=float)
    cols = []
    for j in range(nu.size):
        h = step * max(1.0, abs(nu[j]))
        hi = nu.copy()
        lo = nu.copy()
        hi[j] += h
        lo[j] -= h
        try:
            cols.append((smap.residual(hi, grid_n, scheme)
                         - smap.residual(lo, grid_n, scheme)) / (2.0 * h))
        except PropagationError as exc:
            raise PropagationError(
                f"propagation failed while differencing column {j} of the "
                f"shooting Jacobian: {exc}",
                step_index=exc.step_index, time=exc.time,
            ) from exc
    return np.stack(cols, axis=-1)


@dataclass
class GNReport:
    """Everything recorded along one Gauss-Newton run."""

    problem: str
    grid_n: int
    scheme: str
    tol: float
    max_iter: int
    status: str
    iterations: int
    nu0: np.ndarray
    nu: np.ndarray
    iterates: list
    residual_norms: list
    step_norms: list
    final_residual: np.ndarray
    singular_values: np.ndarray
    order_estimate: float | None = None
    seed: int | None = None

    @property
    def converged(self):
        return self.status == "converged"

    def to_dict(self):
        return {
            "schema": "parshoot/gn-report/v1",
            "problem": self.problem,
            "grid_n": self.grid_n,
            "scheme": self.scheme,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "nu0": np.asarray(self.nu0).tolist(),
            "nu": np.asarray(self.nu).tolist(),
            "iterates": [np.asarray(it).tolist() for it in self.iterates],
            "residual_norms": [float(r) for r in self.residual_norms],
            "step_norms": [float(s) for s in self.step_norms],
            "final_residual": np.asarray(self.final_residual).tolist(),
            "singular_values": np.asarray(self.singular_values).tolist(),
            "order_estimate": self.order_estimate,
            "seed": self.seed,
        }


def gauss_newton(target, nu0, grid_n, scheme="implicit-euler",
                 tol: float = GN_TOL, max_iter: int = GN_MAX_ITER,
                 raise_on_failure: bool = True) -> GNReport:
    """Gauss-Newton iteration on the shooting residual.

    Each update solves the normal equations of the linearized least squares
    problem through the singular value decomposition of the residual
    Jacobian (a rank-revealing solve); iteration stops when the sup norm of
    the residual drops to tol or max_iter updates have been taken.

    Raises SingularNormalMatrix when the normal matrix is numerically rank
    deficient and NoConvergence when the cap is hit; both carry the report
    on the exception.  Pass raise_on_failure=False to always get the report.
    """
    smap = make_shooting_map(target)
    nu = np.asarray(nu0, dtype=float).copy()
    iterates = [nu.copy()]
    residual_norms: list[float] = []
    step_norms: list[float] = []
    status = "no-convergence"
    iterations = 0
    sv_at_failure = None

    # a start that cannot even be propagated is the caller's problem; a
    # propagation failure later in the iteration is a solver outcome and
    # downgrades to no-convergence at the last good iterate
    residual = smap.residual(nu, grid_n, scheme)
    residual_norms.append(float(np.max(np.abs(residual))))
    try:
        for k in range(max_iter):
            if residual_norms[-1] <= tol:
                status = "converged"
                break
            jac = shooting_jacobian(smap, nu, grid_n, scheme)
            left, sv, right_t = np.linalg.svd(jac, full_matrices=False)
            if sv[0] <= 0.0 or (sv[-1] / sv[0]) ** 2 < _SV_RATIO_SQ:
                status = "singular-normal-matrix"
                sv_at_failure = sv
                break
            delta = -(right_t.T @ ((left.T @ residual) / sv))
            nu = nu + delta
            iterations = k + 1
            iterates.append(nu.copy())
            step_norms.append(float(np.linalg.norm(delta)))
            residual = smap.residual(nu, grid_n, scheme)
            residual_norms.append(float(np.max(np.abs(residual))))
        else:
            if residual_norms[-1] <= tol:
                status = "converged"
    except PropagationError:
        # fall back to the last iterate with a recorded residual; the
        # residual variable already belongs to it in both failure spots
        nu = iterates[len(residual_norms) - 1]
        iterates = iterates[: len(residual_norms)]

    if sv_at_failure is not None:
        final_sv = sv_at_failure
    else:
        try:
            final_sv = np.linalg.svd(shooting_jacobian(smap, nu, grid_n, scheme),
                                     compute_uv=False)
        except PropagationError:
            final_sv = np.zeros(0)
    report = GNReport(
        problem=smap.problem.name,
        grid_n=grid_n,
        scheme=scheme,
        tol=tol,
        max_iter=max_iter,
        status=status,
        iterations=iterations,
        nu0=np.asarray(nu0, dtype=float).copy(),
        nu=nu,
        iterates=iterates,
        residual_norms=residual_norms,
        step_norms=step_norms,
        final_residual=residual,
        singular_values=np.asarray(final_sv),
    )
    try:
        report.order_estimate = convergence_order(report, nu)
    except InsufficientData:
        report.order_estimate = None

    if raise_on_failure and status == "singular-normal-matrix":
        raise SingularNormalMatrix(
            "shooting derivative is numerically not one-to-one",
            singular_values=final_sv, report=report,
        )
    if raise_on_failure and status == "no-convergence":
        raise NoConvergence(
            f"Gauss-Newton did not reach {tol:.1e} in {max_iter} iterations",
            residual=residual_norms[-1], iterate=nu, report=report,
        )
    return report


def convergence_order(report: GNReport, nu_star,
                      band=ORDER_BAND, noise_floor=ORDER_NOISE_FLOOR) -> float:
    """Least-squares slope of log e_{k+1} against log e_k.

    Errors are measured against nu_star.  Only consecutive pairs touching
    the measurable band are used, and iterates at or below the noise floor
    of the finite-difference Jacobian are excluded.  Raises
    InsufficientData when fewer than 3 pairs remain.
    """
    nu_star = np.asarray(nu_star, dtype=float)
    errors = [float(np.linalg.norm(np.asarray(it) - nu_star)) for it in report.iterates]
    lo, hi = band
    xs, ys = [], []
    for e_k, e_next in zip(errors, errors[1:]):
        if e_k <= noise_floor or e_next <= noise_floor:
            continue
        if (lo <= e_k <= hi) or (lo <= e_next <= hi):
            xs.append(np.log(e_k))
            ys.append(np.log(e_next))
    if len(xs) < 3:
        raise InsufficientData(
            f"only {len(xs)} iterate pairs inside the measurable band "
            f"[{lo:g}, {hi:g}]"
        )
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope)
