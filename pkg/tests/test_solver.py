import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glmqs.linear import to_dense
from glmqs.problems import BurgersConfig, GrayScottConfig, burgers_system, grayscott_system, vdp_system, VdpConfig
from glmqs.solver import (
    NewtonConfig, OdeSystem, StageFailure, StageSolver, finite_difference_jacobian, solve_stages,
)
from glmqs.tableau import BUILTIN_NAMES, builtin_tableau


def linear_system(L):
    L = np.asarray(L, dtype=float)
    return OdeSystem("linear", L.shape[0], lambda y: L @ y, lambda y: L)


def _bisect(g, lo, hi, tol=1e-16):
    glo = g(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def test_cubic_stage_matches_bisection():
    tab = builtin_tableau("GLMQS-1")
    sys = OdeSystem("cubic", 1, lambda y: -y ** 3, lambda y: np.array([[-3 * y[0] ** 2]]))
    h = 0.1
    blocks = np.array([[1.0], [-0.1]])
    st_ = solve_stages(tab, sys, h, blocks)
    r0 = tab.U[0] @ blocks[:, 0]
    gl = h * tab.lam
    root = _bisect(lambda Y: Y + gl * Y ** 3 - r0, 0.0, 2.0)
    assert abs(st_.Y[0, 0] - root) <= 1e-12
    assert st_.converged


def test_linear_problem_one_iteration_per_stage():
    L = np.array([[-2.0, 1.0], [0.5, -3.0]])
    tab = builtin_tableau("GLMQS-2")
    blocks = np.array([[1.0, 2.0], [0.1, -0.2], [0.01, 0.03]])
    out = solve_stages(tab, linear_system(L), 0.1, blocks)
    np.testing.assert_array_equal(out.newton_iters, 1)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_zero_step_is_input_combination(name):
    tab = builtin_tableau(name)
    rng = np.random.default_rng(0)
    blocks = rng.standard_normal((tab.r, 3))
    out = solve_stages(tab, linear_system(-np.eye(3)), 0.0, blocks)
    np.testing.assert_array_equal(out.Y, tab.U @ blocks)


@settings(max_examples=30, deadline=None)
@given(
    name=st.sampled_from(BUILTIN_NAMES),
    d=st.integers(1, 4),
    seed=st.integers(0, 10_000),
    h=st.floats(1e-3, 0.5),
)
def test_block_linear_oracle(name, d, seed, h):
    tab = builtin_tableau(name)
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((d, d)) - 2.0 * np.eye(d)
    blocks = rng.standard_normal((tab.r, d))
    s = tab.s
    K = np.eye(s * d) - h * np.kron(tab.A, L)
    want = np.linalg.solve(K, np.kron(tab.U, np.eye(d)) @ blocks.ravel()).reshape(s, d)
    got = solve_stages(tab, linear_system(L), h, blocks).Y
    scale = np.abs(want).max()
    assert np.abs(got - want).max() <= 1e-10 * scale


def test_reported_residual_within_tolerance():
    tab = builtin_tableau("GLMQS-2")
    sys = vdp_system(VdpConfig())
    blocks = np.array([[2.0, -0.6666654], [-0.0333, -0.018], [-0.0009, -0.0016]])
    out = solve_stages(tab, sys, 0.05, blocks)
    assert np.all(out.residual <= out.tolerance)
    assert np.all(np.isfinite(out.Y))


def test_raw_residual_nonstiff():
    tab = builtin_tableau("GLMQS-3")
    sys = OdeSystem("cubic", 1, lambda y: -y ** 3, lambda y: np.array([[-3 * y[0] ** 2]]))
    blocks = np.array([[1.0], [-0.1], [0.03], [-0.006]])
    h = 0.1
    out = solve_stages(tab, sys, h, blocks)
    R = tab.U @ blocks
    cfg = NewtonConfig()
    for j in range(tab.s):
        rhs_j = R[j] + h * tab.A[j, :j] @ out.F[:j]
        res = np.abs(out.Y[j] - h * tab.lam * out.F[j] - rhs_j).max()
        assert res <= 10 * cfg.rel_tol * (1 + np.abs(out.Y[j]).max())


def test_deterministic():
    tab = builtin_tableau("GLMQS-4")
    sys = burgers_system(BurgersConfig())
    blocks = np.zeros((tab.r, sys.dim))
    blocks[0] = np.sin(np.pi * BurgersConfig().x_interior)
    a = solve_stages(tab, sys, 0.01, blocks).Y
    b = solve_stages(tab, sys, 0.01, blocks).Y
    assert np.array_equal(a, b)


def test_no_root_raises_stage_failure():
    tab = builtin_tableau("GLMQS-1")
    sys = OdeSystem("quad", 1, lambda y: y ** 2, lambda y: np.array([[2 * y[0]]]))
    # Y - h lam Y^2 = r has no real root once 4 h lam r > 1
    blocks = np.array([[10.0], [0.0]])
    with pytest.raises(StageFailure) as err:
        solve_stages(tab, sys, 1.0, blocks, NewtonConfig(max_iters=15))
    assert err.value.stage == 0


def test_bad_shapes():
    tab = builtin_tableau("GLMQS-2")
    with pytest.raises(ValueError):
        solve_stages(tab, linear_system(-np.eye(2)), 0.1, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        NewtonConfig(jacobian_reuse="sometimes")
    with pytest.raises(ValueError):
        NewtonConfig(rel_tol=0.0)


@pytest.mark.parametrize("policy", ["per-step", "per-stage", "never"])
def test_jacobian_policies_agree(policy):
    tab = builtin_tableau("GLMQS-2")
    sys = vdp_system(VdpConfig(epsilon=1e-3))
    blocks = np.array([[2.0, -0.66], [-0.03, -0.02], [0.0, 0.0]])
    ref = solve_stages(tab, sys, 0.02, blocks).Y
    out = StageSolver(tab, sys, NewtonConfig(jacobian_reuse=policy)).solve(0.02, blocks).Y
    np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-11)


def test_fd_jacobian_linear():
    rng = np.random.default_rng(4)
    L = rng.standard_normal((5, 5))
    sys = OdeSystem("lin", 5, lambda y: L @ y)
    J = finite_difference_jacobian(sys, rng.standard_normal(5))
    assert np.abs(J - L).max() <= 1e-7 * np.abs(L).max()


def test_fd_jacobian_constant():
    sys = OdeSystem("const", 3, lambda y: np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(finite_difference_jacobian(sys, np.ones(3)), 0.0, atol=1e-8)


def test_fd_jacobian_vdp():
    eps = 1e-6
    sys = vdp_system(VdpConfig(epsilon=eps))
    y = np.array([2.0, -2.0 / 3.0])
    J = finite_difference_jacobian(sys, y)
    A = sys.jacobian(y)
    assert np.abs(J - A).max() <= 1e-6 * np.abs(A).max()
    assert A[1, 0] == pytest.approx((-2 * y[0] * y[1] - 1) / eps, rel=1e-14)


def test_fd_jacobian_respects_structure():
    b = burgers_system(BurgersConfig())
    u = np.random.default_rng(5).uniform(0.1, 1.0, b.dim)
    ab = finite_difference_jacobian(b, u)
    assert ab.shape == (3, b.dim)
    np.testing.assert_allclose(to_dense(ab, b.structure), to_dense(b.jacobian(u), b.structure), rtol=1e-6, atol=1e-4)
    g = grayscott_system(GrayScottConfig(M=6))
    y = np.random.default_rng(6).uniform(0, 1, g.dim)
    Jg = finite_difference_jacobian(g, y)
    np.testing.assert_allclose(Jg.toarray(), g.jacobian(y).toarray(), rtol=1e-6, atol=1e-6)


def test_missing_jacobian_falls_back_to_fd():
    L = np.array([[-1.0, 0.5], [0.0, -2.0]])
    sys = OdeSystem("lin", 2, lambda y: L @ y)
    np.testing.assert_allclose(sys.jac(np.ones(2)), L, atol=1e-7)
