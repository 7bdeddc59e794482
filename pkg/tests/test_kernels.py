"""Parity between the compiled engine and the pure-Python fallback."""

import dataclasses

import numpy as np
import pytest

import parshoot as ps
from parshoot.kernels import CompiledEngine, PureEngine, compiled_available, get_engine

pytestmark = pytest.mark.skipif(not compiled_available(),
                                reason="compiled kernels not built")

X0 = np.zeros(3)
P0 = np.array([0.7, -0.4, 1.0])


@pytest.fixture(scope="module")
def engines():
    ds = ps.ds_example()
    return CompiledEngine(ds), PureEngine(ds)


@pytest.mark.parametrize("scheme,grid_n", [("implicit-euler", 200), ("rk4", 100)])
def test_propagation_parity(engines, scheme, grid_n):
    compiled, pure = engines
    res_c = compiled.propagate(X0, P0, grid_n, scheme)
    res_p = pure.propagate(X0, P0, grid_n, scheme)
    for a, b in zip(res_c, res_p):
        np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=0, atol=1e-12)


def test_callback_kernel_matches_builtin(ds):
    # the generic callback path must agree with the hard-coded evaluators
    as_callback = dataclasses.replace(ds, kernel_hint=None, name="ds-callback")
    res_cb = CompiledEngine(as_callback).propagate(X0, P0, 200, "implicit-euler")
    res_ds = CompiledEngine(ds).propagate(X0, P0, 200, "implicit-euler")
    for a, b in zip(res_cb, res_ds):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_compiled_eliminate_matches_pure(ds):
    compiled = CompiledEngine(ds)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal(3)
        p = np.array([*rng.standard_normal(2), 1.0])
        u_c, v_c, iters_c, resid_c = compiled.eliminate(x, p)
        u_p, v_p, iters_p, resid_p = ps.eliminate_controls(ds, x, p)
        np.testing.assert_allclose(u_c, u_p, atol=1e-13)
        np.testing.assert_allclose(v_c, v_p, atol=1e-13)
        assert iters_c == iters_p


def test_engine_selection_respects_preference(ds):
    assert get_engine(ds).name == "compiled"
    assert get_engine(ds, prefer="pure").name == "pure"


def test_pure_env_override(ds, monkeypatch):
    monkeypatch.setenv("PARSHOOT_PURE", "1")
    assert get_engine(ds).name == "pure"


def test_propagation_error_carries_step(ds):
    from parshoot.errors import PropagationError

    # third costate zero makes the control system singular immediately
    with pytest.raises(PropagationError) as exc_info:
        CompiledEngine(ds).propagate(np.zeros(3), np.zeros(3), 10, "implicit-euler")
    assert exc_info.value.step_index == 0


def test_two_affine_callback_propagation(two_affine):
    # a user problem with two affine controls runs through the callback
    # kernel and matches the fallback
    x0 = np.array([0.05, 0.0, -0.1])
    p0 = np.array([0.02, -0.05, 1.0])
    res_c = CompiledEngine(two_affine).propagate(x0, p0, 50, "implicit-euler")
    res_p = PureEngine(two_affine).propagate(x0, p0, 50, "implicit-euler")
    for a, b in zip(res_c, res_p):
        np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=0, atol=1e-10)


def test_benchmark_smoke():
    # the comparison script's core loop, at a tiny size
    import importlib.util
    from pathlib import Path

    bench = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_core.py"
    spec = importlib.util.spec_from_file_location("bench_core", bench)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    rows = module.run_benchmark(grid_n=50, repeats=1, starts=2)
    assert {row["engine"] for row in rows} >= {"compiled", "pure"}
    for row in rows:
        assert row["propagate_ms"] > 0
