"""Problem descriptions, built-in problems, validation, and qualification.

A problem is a Mayer optimal control problem whose dynamics are affine in
one block of the control,

    xdot = f0(x, u) + sum_i v_i * f_i(x, u),    i = 1..m,

with a nonlinear control u of dimension l, an affine control v of
dimension m, an endpoint cost phi0(x0, xT) and d_eta endpoint equality
constraints eta(x0, xT) = 0 on a fixed horizon [0, T].  The drift weight
v_0 = 1 is a convention, never a stored variable.

All evaluators are plain callables over numpy arrays.  A ProblemDef is
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ProblemDefinitionError

_FD_STEP_SECOND = 1e-5  # step for synthesizing second derivatives


def _fd_matrix(func, point, step):
    """Central-difference Jacobian of func w.r.t. point, column per coordinate."""
    point = np.asarray(point, dtype=float)
    cols = []
    for j in range(point.size):
        h = step[j] if np.ndim(step) else step
        hi = point.copy()
        lo = point.copy()
        hi[j] += h
        lo[j] -= h
        cols.append((np.asarray(func(hi)) - np.asarray(func(lo))) / (2.0 * h))
    if not cols:
        return np.zeros(np.shape(func(point)) + (0,))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class VectorField:
    """One dynamics field f(x, u) with first and second derivatives.

    Shapes, for state dimension n and nonlinear-control dimension l:
    value (n,), dx (n, n), du (n, l), dxx (n, n, n), dxu (n, n, l),
    duu (n, l, l).  Second-derivative index order is output, then the two
    differentiation directions.
    """

    value: Callable
    dx: Callable
    du: Callable
    dxx: Callable
    dxu: Callable
    duu: Callable

    @classmethod
    def from_first_order(cls, value, dx, du, step=_FD_STEP_SECOND):
        """Build a field whose second derivatives come from central differences
        of the supplied first derivatives."""

        def dxx(x, u):
            return _fd_matrix(lambda xx: dx(xx, u), x, step)

        def dxu(x, u):
            return _fd_matrix(lambda uu: dx(x, uu), u, step)

        def duu(x, u):
            return _fd_matrix(lambda uu: du(x, uu), u, step)

        return cls(value=value, dx=dx, du=du, dxx=dxx, dxu=dxu, duu=duu)


@dataclass(frozen=True)
class EndpointCost:
    """Endpoint cost phi0(x0, xT) with gradient (2n,) and Hessian (2n, 2n)."""

    value: Callable
    grad: Callable
    hess: Callable

    @classmethod
    def from_gradient(cls, value, grad, step=_FD_STEP_SECOND):
        def hess(x0, xT):
            n = np.asarray(x0).size
            z = np.concatenate([x0, xT])

            def g(zz):
                return np.asarray(grad(zz[:n], zz[n:]))

            return _fd_matrix(g, z, step)

        return cls(value=value, grad=grad, hess=hess)


@dataclass(frozen=True)
class EndpointConstraints:
    """Endpoint constraints eta(x0, xT) with Jacobian (d_eta, 2n) and
    per-component Hessians (d_eta, 2n, 2n)."""

    value: Callable
    jac: Callable
    hess: Callable

    @classmethod
    def from_jacobian(cls, value, jac, step=_FD_STEP_SECOND):
        def hess(x0, xT):
            n = np.asarray(x0).size
            z = np.concatenate([x0, xT])

            def j(zz):
                return np.asarray(jac(zz[:n], zz[n:]))

            return _fd_matrix(j, z, step)

        return cls(value=value, jac=jac, hess=hess)

    @classmethod
    def empty(cls, n):
        """No endpoint constraints (d_eta = 0)."""
        return cls(
            value=lambda x0, xT: np.zeros(0),
            jac=lambda x0, xT: np.zeros((0, 2 * n)),
            hess=lambda x0, xT: np.zeros((0, 2 * n, 2 * n)),
        )


@dataclass(frozen=True)
class ProblemDef:
    """Immutable description of one optimal control problem.

    fields holds f_0 .. f_m in order; kernel_hint names a compiled
    evaluator for the dynamics when one exists (propagation only, the
    endpoint functions always stay in Python).
    """

    name: str
    n: int
    l: int
    m: int
    d_eta: int
    horizon: float
    fields: tuple[VectorField, ...]
    cost: EndpointCost
    constraints: EndpointConstraints
    kernel_hint: str | None = None

    def __post_init__(self):
        if len(self.fields) != self.m + 1:
            raise ProblemDefinitionError(
                f"{self.name}: expected {self.m + 1} fields f_0..f_{self.m}, "
                f"got {len(self.fields)}"
            )
        x = np.zeros(self.n)
        u = np.zeros(self.l)
        n, l = self.n, self.l
        shapes = {
            "value": (n,),
            "dx": (n, n),
            "du": (n, l),
            "dxx": (n, n, n),
            "dxu": (n, n, l),
            "duu": (n, l, l),
        }
        for i, f in enumerate(self.fields):
            for part, want in shapes.items():
                got = np.shape(getattr(f, part)(x, u))
                if got != want:
                    raise ProblemDefinitionError(
                        f"{self.name}: f_{i}.{part} returned shape {got}, "
                        f"expected {want}"
                    )
        checks = [
            ("cost.value", np.shape(self.cost.value(x, x)), ()),
            ("cost.grad", np.shape(self.cost.grad(x, x)), (2 * n,)),
            ("cost.hess", np.shape(self.cost.hess(x, x)), (2 * n, 2 * n)),
            ("eta.value", np.shape(self.constraints.value(x, x)), (self.d_eta,)),
            ("eta.jac", np.shape(self.constraints.jac(x, x)), (self.d_eta, 2 * n)),
            (
                "eta.hess",
                np.shape(self.constraints.hess(x, x)),
                (self.d_eta, 2 * n, 2 * n),
            ),
        ]
        for label, got, want in checks:
            if tuple(got) != want:
                raise ProblemDefinitionError(
                    f"{self.name}: {label} returned shape {got}, expected {want}"
                )


@dataclass(frozen=True)
class Reduction:
    """Pins part of the shooting unknown of a problem.

    x0 is the fixed initial state; p0_fixed holds the pinned initial
    costate entries with NaN marking the free ones; rows selects which
    components of the full shooting residual remain.  The constraint
    multiplier is recovered from the initial transversality relation.
    """

    x0: np.ndarray
    p0_fixed: np.ndarray
    rows: tuple[int, ...]

    @property
    def free_indices(self):
        return tuple(int(i) for i in np.flatnonzero(np.isnan(self.p0_fixed)))


@dataclass(frozen=True)
class ProblemSetup:
    """Registry entry: a problem plus its shooting reduction, if any."""

    problem: ProblemDef
    reduction: Reduction | None = None


@dataclass
class TrajectoryGrid:
    """Discrete record of (x, p, u, v) on the uniform grid t_k = k T / N."""

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        npts = len(self.times)
        for label in ("x", "p", "u", "v"):
            arr = getattr(self, label)
            if len(arr) != npts:
                raise ValueError(f"{label} has {len(arr)} rows, expected {npts}")
        dt = np.diff(self.times)
        if npts > 1 and (np.any(dt <= 0) or np.ptp(dt) > 1e-12 * dt[0]):
            raise ValueError("grid must be strictly increasing and uniform")

    @property
    def grid_n(self):
        return len(self.times) - 1

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def to_json(self):
        return json.dumps(
            {
                "t": self.times.tolist(),
                "x": self.x.tolist(),
                "p": self.p.tolist(),
                "u": self.u.tolist(),
                "v": self.v.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(
            times=np.asarray(data["t"], dtype=float),
            x=np.asarray(data["x"], dtype=float),
            p=np.asarray(data["p"], dtype=float),
            u=np.asarray(data["u"], dtype=float),
            v=np.asarray(data["v"], dtype=float),
        )


@dataclass
class Multiplier:
    """Lagrange multiplier: constraint row vector beta plus the costate path."""

    beta: np.ndarray
    p: np.ndarray


# ---------------------------------------------------------------------------
# Built-in problems
# ---------------------------------------------------------------------------

def _ds_f0_value(x, u):
    return np.array([x[1] + u[0], 0.0, x[0] ** 2 + x[1] ** 2 + u[0] ** 2])


def _ds_f0_dx(x, u):
    return np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [2.0 * x[0], 2.0 * x[1], 0.0]])


def _ds_f0_du(x, u):
    return np.array([[1.0], [0.0], [2.0 * u[0]]])


def _ds_f0_dxx(x, u):
    out = np.zeros((3, 3, 3))
    out[2, 0, 0] = 2.0
    out[2, 1, 1] = 2.0
    return out


def _ds_f0_dxu(x, u):
    return np.zeros((3, 3, 1))


def _ds_f0_duu(x, u):
    out = np.zeros((3, 1, 1))
    out[2, 0, 0] = 2.0
    return out


def _ds_f1_value(x, u):
    return np.array([0.0, 1.0, 10.0 * x[1]])


def _ds_f1_dx(x, u):
    out = np.zeros((3, 3))
    out[2, 1] = 10.0
    return out


def _ds_f1_du(x, u):
    return np.zeros((3, 1))


def _ds_f1_dxx(x, u):
    return np.zeros((3, 3, 3))


def _ds_f1_dxu(x, u):
    return np.zeros((3, 3, 1))


def _ds_f1_duu(x, u):
    return np.zeros((3, 1, 1))


def _ds_cost_value(x0, xT):
    return -2.0 * xT[0] * xT[1] + xT[2]


def _ds_cost_grad(x0, xT):
    return np.array([0.0, 0.0, 0.0, -2.0 * xT[1], -2.0 * xT[0], 1.0])


def _ds_cost_hess(x0, xT):
    out = np.zeros((6, 6))
    out[3, 4] = -2.0
    out[4, 3] = -2.0
    return out


def _ds_eta_value(x0, xT):
    return np.asarray(x0, dtype=float).copy()


def _ds_eta_jac(x0, xT):
    return np.hstack([np.eye(3), np.zeros((3, 3))])


def _ds_eta_hess(x0, xT):
    return np.zeros((3, 6, 6))


def _ds_fields():
    f0 = VectorField(_ds_f0_value, _ds_f0_dx, _ds_f0_du, _ds_f0_dxx, _ds_f0_dxu, _ds_f0_duu)
    f1 = VectorField(_ds_f1_value, _ds_f1_dx, _ds_f1_du, _ds_f1_dxx, _ds_f1_dxu, _ds_f1_duu)
    return (f0, f1)


def ds_example():
    """Three-state benchmark with one nonlinear and one affine control.

    Dynamics xdot = (x2 + u, v, x1^2 + x2^2 + 10 x2 v + u^2), cost
    -2 x1(T) x2(T) + x3(T), initial state pinned to the origin through the
    endpoint constraints, horizon T = 1.
    """
    return ProblemDef(
        name="ds-example",
        n=3,
        l=1,
        m=1,
        d_eta=3,
        horizon=1.0,
        fields=_ds_fields(),
        cost=EndpointCost(_ds_cost_value, _ds_cost_grad, _ds_cost_hess),
        constraints=EndpointConstraints(_ds_eta_value, _ds_eta_jac, _ds_eta_hess),
        kernel_hint="ds",
    )


def ds_reduced():
    """The ds-example with x0 pinned to 0 and p3 fixed at 1.

    The shooting unknown shrinks to the two free initial costates
    (p1, p2); the residual keeps the two nontrivial final transversality
    rows and the final affine-control stationarity row.
    """
    return replace(ds_example(), name="ds-reduced")


def _ds_reduction():
    # Row layout of the full residual for n=3, d_eta=3, m=1:
    # 0..2 eta, 3..5 initial transversality, 6..8 final transversality,
    # 9 H_v at T, 10 Hdot_v at 0.  The reduced map keeps rows 6, 7, 9;
    # the dropped rows vanish identically once x0 and beta are pinned.
    return Reduction(
        x0=np.zeros(3),
        p0_fixed=np.array([np.nan, np.nan, 1.0]),
        rows=(6, 7, 9),
    )


_BUILTIN_FACTORIES = {
    "ds-example": lambda: ProblemSetup(ds_example(), None),
    "ds-reduced": lambda: ProblemSetup(ds_reduced(), _ds_reduction()),
}

_REGISTRY: dict[str, ProblemSetup] = {}


def register_problem(setup: ProblemSetup):
    """Register a user problem for lookup by name (library interface only,
    nothing is loaded dynamically)."""
    _REGISTRY[setup.problem.name] = setup


def available_problems():
    return sorted(set(_BUILTIN_FACTORIES) | set(_REGISTRY))


def get_setup(name: str) -> ProblemSetup:
    if name in _REGISTRY:
        return _REGISTRY[name]
    if name in _BUILTIN_FACTORIES:
        return _BUILTIN_FACTORIES[name]()
    raise KeyError(
        f"unknown problem {name!r}; available: {', '.join(available_problems())}"
    )


def builtin_problem(name: str) -> ProblemDef:
    """Return a built-in problem by name ('ds-example' or 'ds-reduced')."""
    if name not in _BUILTIN_FACTORIES:
        raise KeyError(
            f"unknown problem {name!r}; available: "
            f"{', '.join(sorted(_BUILTIN_FACTORIES))}"
        )
    return _BUILTIN_FACTORIES[name]().problem


def negate_cost(prob: ProblemDef) -> ProblemDef:
    """The same problem with the endpoint cost negated.

    Propagation kernels are unaffected (the dynamics are unchanged), so the
    kernel hint is preserved.
    """
    cost = prob.cost
    negated = EndpointCost(
        value=lambda x0, xT: -cost.value(x0, xT),
        grad=lambda x0, xT: -np.asarray(cost.grad(x0, xT)),
        hess=lambda x0, xT: -np.asarray(cost.hess(x0, xT)),
    )
    return replace(prob, name=prob.name + "+negated-cost", cost=negated)


def negate_setup(setup: ProblemSetup) -> ProblemSetup:
    """Negate the cost of a whole setup.

    Costate entries pinned by a reduction flip sign with the cost, since
    they are values the transversality relations would impose.
    """
    reduction = setup.reduction
    if reduction is not None:
        reduction = Reduction(
            x0=reduction.x0,
            p0_fixed=-reduction.p0_fixed,
            rows=reduction.rows,
        )
    return ProblemSetup(negate_cost(setup.problem), reduction)


# ---------------------------------------------------------------------------
# Derivative validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    """Worst relative finite-difference error per evaluator."""

    problem: str
    samples: int
    seed: int
    tol: float
    worst: dict[str, float]
    passed: bool
    failures: tuple[str, ...]

    def to_dict(self):
        return {
            "problem": self.problem,
            "samples": self.samples,
            "seed": self.seed,
            "tol": self.tol,
            "worst": self.worst,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def _relerr(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(1.0, np.max(np.abs(analytic), initial=0.0),
                np.max(np.abs(numeric), initial=0.0))
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def _fd_step(point):
    return np.maximum(1e-6, 1e-6 * np.abs(point))


def validate_problem(prob: ProblemDef, samples: int = 20, seed: int = 0,
                     tol: float = 1e-5) -> ValidationReport:
    """Check every analytic derivative against central finite differences
    at randomly sampled points."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(label, err):
        worst[label] = max(worst.get(label, 0.0), err)

    for _ in range(samples):
        x = rng.standard_normal(prob.n)
        u = rng.standard_normal(prob.l)
        hx = _fd_step(x)
        hu = _fd_step(u)
        for i, f in enumerate(prob.fields):
            record(f"f{i}.dx", _relerr(f.dx(x, u),
                                       _fd_matrix(lambda xx: f.value(xx, u), x, hx)))
            record(f"f{i}.dxx", _relerr(f.dxx(x, u),
                                        _fd_matrix(lambda xx: f.dx(xx, u), x, hx)))
            if prob.l > 0:
                record(f"f{i}.du", _relerr(f.du(x, u),
                                           _fd_matrix(lambda uu: f.value(x, uu), u, hu)))
                record(f"f{i}.dxu", _relerr(f.dxu(x, u),
                                            _fd_matrix(lambda uu: f.dx(x, uu), u, hu)))
                record(f"f{i}.duu", _relerr(f.duu(x, u),
                                            _fd_matrix(lambda uu: f.du(x, uu), u, hu)))
        x0 = rng.standard_normal(prob.n)
        xT = rng.standard_normal(prob.n)
        z = np.concatenate([x0, xT])
        hz = _fd_step(z)
        n = prob.n

        def split(func):
            return lambda zz: np.asarray(func(zz[:n], zz[n:]))

        record("cost.grad", _relerr(prob.cost.grad(x0, xT),
                                    _fd_matrix(split(prob.cost.value), z, hz)))
        record("cost.hess", _relerr(prob.cost.hess(x0, xT),
                                    _fd_matrix(split(prob.cost.grad), z, hz)))
        if prob.d_eta > 0:
            record("eta.jac", _relerr(prob.constraints.jac(x0, xT),
                                      _fd_matrix(split(prob.constraints.value), z, hz)))
            record("eta.hess", _relerr(prob.constraints.hess(x0, xT),
                                       _fd_matrix(split(prob.constraints.jac), z, hz)))

    failures = tuple(sorted(k for k, e in worst.items() if e > tol))
    return ValidationReport(
        problem=prob.name,
        samples=samples,
        seed=seed,
        tol=tol,
        worst=worst,
        passed=not failures,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Endpoint-constraint qualification
# ---------------------------------------------------------------------------

@dataclass
class QualificationReport:
    """Singular values of the discretized endpoint-constraint derivative."""

    problem: str
    grid_n: int
    singular_values: np.ndarray
    qualified: bool
    ratio: float

    def to_dict(self):
        return {
            "problem": self.problem,
            "grid_n": self.grid_n,
            "singular_values": self.singular_values.tolist(),
            "qualified": self.qualified,
            "ratio": self.ratio,
        }


def check_qualification(prob: ProblemDef, traj: TrajectoryGrid,
                        rel_threshold: float = 1e-8) -> QualificationReport:
    """Rank surrogate for the endpoint-constraint derivative.

    Columns of the assembled matrix are the sensitivities of eta(x0, xT) to
    the initial state and to piecewise-constant control perturbations on
    each grid interval, computed through the discretized linearized
    dynamics along traj.  Rank deficiency is reported, not raised; callers
    decide what an unqualified problem means for them.
    """
    from .hamiltonian import field_tensors, dynamics_jacobians

    n, l, m = prob.n, prob.l, prob.m
    N = traj.grid_n
    h = traj.dt
    jac = prob.constraints.jac(traj.x[0], traj.x[-1])
    j0, jT = jac[:, :n], jac[:, n:]

    # Per-step implicit-Euler transition T_k maps node k to k+1; the
    # endpoint weight W_k = jT @ P_k with P_k the suffix product is built
    # backward so each column costs one matmul.
    eye = np.eye(n)
    steps = []
    for k in range(N):
        t = field_tensors(prob, traj.x[k + 1], traj.u[k + 1])
        fx, fu, fv = dynamics_jacobians(t, traj.v[k + 1])
        T_k = np.linalg.solve(eye - h * fx, eye)
        steps.append((T_k, fu, fv))

    weights = [None] * (N + 1)
    weights[N] = jT
    for k in range(N - 1, -1, -1):
        weights[k] = weights[k + 1] @ steps[k][0]

    cols = [j0 + weights[0]]
    for k in range(N):
        T_k, fu, fv = steps[k]
        if l:
            cols.append(weights[k + 1] @ (h * T_k @ fu))
        if m:
            cols.append(weights[k + 1] @ (h * T_k @ fv))
    matrix = np.hstack(cols) if cols else np.zeros((prob.d_eta, 0))

    if prob.d_eta == 0 or matrix.size == 0:
        sv = np.zeros(0)
        qualified = prob.d_eta == 0
        ratio = np.inf if qualified else 0.0
    else:
        sv = np.linalg.svd(matrix, compute_uv=False)
        ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        qualified = bool(sv[0] > 0 and sv[-1] > rel_threshold * sv[0])
    return QualificationReport(
        problem=prob.name,
        grid_n=N,
        singular_values=sv,
        qualified=qualified,
        ratio=ratio,
    )
