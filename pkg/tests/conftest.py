import numpy as np
import pytest

import parshoot as ps


@pytest.fixture(scope="session")
def ds():
    return ps.ds_example()


@pytest.fixture(scope="session")
def ds_setup():
    return ps.get_setup("ds-reduced")


def make_zero_extremal(grid_n, p3=1.0):
    """The stationary trajectory of the builtin problem: everything zero,
    third costate pinned."""
    times = np.linspace(0.0, 1.0, grid_n + 1)
    return ps.TrajectoryGrid(
        times=times,
        x=np.zeros((grid_n + 1, 3)),
        p=np.tile([0.0, 0.0, p3], (grid_n + 1, 1)),
        u=np.zeros((grid_n + 1, 1)),
        v=np.zeros((grid_n + 1, 1)),
    )


@pytest.fixture
def zero_extremal():
    return make_zero_extremal(100)


def make_two_affine_problem():
    """A three-state problem with one nonlinear and two affine controls.

    The affine fields have a nonzero Lie bracket, which the builtin problem
    (m = 1) cannot exercise.  Second derivatives come from the
    finite-difference fallback constructors.  The eliminated feedback has a
    large gain, so the horizon is kept short enough to propagate.
    """
    f0 = ps.VectorField.from_first_order(
        value=lambda x, u: np.array([x[1] + u[0], x[2], x[0] ** 2 + u[0] ** 2]),
        dx=lambda x, u: np.array([[0.0, 1, 0], [0, 0, 1], [2 * x[0], 0, 0]]),
        du=lambda x, u: np.array([[1.0], [0.0], [2 * u[0]]]),
    )
    f1 = ps.VectorField.from_first_order(
        value=lambda x, u: np.array([0.0, 1.0, x[0]]),
        dx=lambda x, u: np.array([[0.0, 0, 0], [0, 0, 0], [1, 0, 0]]),
        du=lambda x, u: np.zeros((3, 1)),
    )
    f2 = ps.VectorField.from_first_order(
        value=lambda x, u: np.array([x[1], 0.0, 1.0]),
        dx=lambda x, u: np.array([[0.0, 1, 0], [0, 0, 0], [0, 0, 0]]),
        du=lambda x, u: np.zeros((3, 1)),
    )
    cost = ps.EndpointCost.from_gradient(
        value=lambda x0, xT: xT[2],
        grad=lambda x0, xT: np.array([0.0, 0, 0, 0, 0, 1]),
    )
    return ps.ProblemDef(
        name="two-affine",
        n=3, l=1, m=2, d_eta=0, horizon=0.1,
        fields=(f0, f1, f2),
        cost=cost,
        constraints=ps.EndpointConstraints.empty(3),
    )


@pytest.fixture(scope="session")
def two_affine():
    return make_two_affine_problem()
