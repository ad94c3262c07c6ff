import functools

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from glmqs.harness import estimate_order, reference_solution
from glmqs.integrator import Integrator, NordsieckState, integrate, start_nordsieck, step
from glmqs.problems import (
    dahlquist, make_problem, polynomial, prothero_robinson, vdp_system,
)
from glmqs.solver import OdeSystem
from glmqs.stability import stability_matrix
from glmqs.tableau import BUILTIN_NAMES, builtin_tableau


def _slow_manifold_derivatives(epsilon, y0=2, order=4, terms=6):
    """Time derivatives of van der Pol on its slow manifold ``z = H(y)``.

    ``H`` is expanded in powers of epsilon from ``eps H' H = (1 - y^2) H - y``
    and ``d/dt`` acts as ``H d/dy``; evaluated with 40 digits.
    """
    y, e = sp.symbols("y epsilon")
    hs = [y / (1 - y ** 2)]
    for n in range(1, terms):
        hs.append(sp.together(sum(sp.diff(hs[i], y) * hs[n - 1 - i] for i in range(n)) / (1 - y ** 2)))
    H = sum(e ** n * hs[n] for n in range(terms))
    ys = [y, H]
    for _ in range(2, order + 2):
        ys.append(sp.diff(ys[-1], y) * H)
    at = {y: y0, e: sp.Rational(epsilon).limit_denominator(10 ** 12)}
    vals = [float(sp.N(expr.subs(at), 40)) for expr in ys]
    # row k: (y^(k), z^(k)) with z = y'
    return np.array([[vals[k], vals[k + 1]] for k in range(order + 1)])


def test_start_exponential():
    sys = dahlquist(1.0)
    st_ = start_nordsieck(builtin_tableau("GLMQS-2"), sys, 0.0, np.array([1.0]), 0.1)
    np.testing.assert_allclose(st_.blocks[:, 0], [1.0, 0.1, 0.01], rtol=1e-15)


def _cubic_system():
    def exact(t, k):
        vals = [t ** 3, 3 * t ** 2, 6 * t, 6.0]
        return np.array([vals[k] if k < 4 else 0.0, t if k == 0 else float(k == 1)])

    return OdeSystem("cubic", 2, lambda w: np.array([3 * w[1] ** 2, 1.0]),
                     lambda w: np.array([[0.0, 6 * w[1]], [0.0, 0.0]]),
                     y0=np.zeros(2), t_end=1.0, exact_derivatives=exact, time_index=1)


def test_start_cubic():
    h = 0.1
    st_ = start_nordsieck(builtin_tableau("GLMQS-3"), _cubic_system(), 0.0, np.zeros(2), h)
    np.testing.assert_allclose(st_.blocks[:, 0], [0.0, 0.0, 0.0, 6 * h ** 3], rtol=1e-15, atol=0)


def test_start_vdp_against_slow_manifold():
    eps, h = 1e-6, 0.05
    sys = vdp_system()
    got = start_nordsieck(builtin_tableau("GLMQS-2"), sys, 0.0, sys.y0, h).blocks
    ders = _slow_manifold_derivatives(eps, order=2)
    want = np.array([h ** k * ders[k] for k in range(3)])
    assert np.abs(got - want).max() <= 1e-8


def test_start_without_derivatives_uses_reference():
    sys = dahlquist(-2.0)
    bare = OdeSystem("decay", 1, sys.rhs, sys.jacobian, y0=np.array([1.0]), t_end=1.0)
    tab = builtin_tableau("GLMQS-3")

    def start_error(h):
        got = start_nordsieck(tab, bare, 0.0, bare.y0, h).blocks[:, 0]
        return np.abs(got - np.array([(-2 * h) ** k for k in range(4)])).max()

    e1, e2 = start_error(0.02), start_error(0.01)
    # interpolating p + 1 values makes every block accurate to O(h^(p+1))
    assert e2 <= 2 * (2 * 0.01) ** 4
    assert estimate_order(e1, e2, 1, 2) >= tab.p + 0.5


def test_zero_rhs_step_applies_V():
    tab = builtin_tableau("GLMQS-3")
    sys = OdeSystem("zero", 2, lambda y: np.zeros(2), lambda y: np.zeros((2, 2)))
    blocks = np.array([[1.0, -1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    new = step(tab, sys, NordsieckState(0.0, 0.1, blocks))
    np.testing.assert_array_equal(new.blocks, tab.V @ blocks)
    np.testing.assert_array_equal(new.blocks[0], blocks[0])


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_linear_step_is_stability_matrix(name):
    tab = builtin_tableau(name)
    zeta, h = -3.0 + 1.5j, 0.1
    sys = dahlquist(zeta)
    st0 = start_nordsieck(tab, sys, 0.0, sys.y0, h)
    new = step(tab, sys, st0)
    want = stability_matrix(tab, h * zeta).M @ st0.blocks
    np.testing.assert_allclose(new.blocks, want, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_polynomial_step_exact(name):
    tab = builtin_tableau(name)
    sys = polynomial(tab.p)
    h = 0.1
    st0 = start_nordsieck(tab, sys, 0.0, sys.y0, h)
    new = step(tab, sys, st0)
    exact = sys.exact_solution(h)
    scale = 1.0 + np.abs(exact).max()
    assert np.abs(new.blocks[0] - exact).max() <= 10.0 ** -(tab.coeff_digits - 3) * scale


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_constant_solution(name):
    sys = OdeSystem("still", 1, lambda y: np.zeros(1), lambda y: np.zeros((1, 1)), y0=np.array([3.0]), t_end=1.0)
    res = integrate(builtin_tableau(name), sys, N=7)
    assert res.y_end[0] == 3.0


def test_state_bookkeeping():
    tab = builtin_tableau("GLMQS-2")
    sys = dahlquist(-1.0)
    res = integrate(tab, sys, 0.0, 1.0, 10, store=True)
    assert len(res.states) == 11
    assert res.states[-1].t == 1.0 and res.t_end == 1.0
    assert all(s.blocks.shape == (tab.r, 1) for s in res.states)
    assert res.stats.steps == 10
    with pytest.raises(ValueError):
        integrate(tab, sys, 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        integrate(tab, sys, 1.0, 0.0, 10)


@settings(max_examples=50, deadline=None)
@given(
    name=st.sampled_from(BUILTIN_NAMES),
    radius=st.floats(1e-2, 50.0),
    angle=st.floats(np.pi / 2, 3 * np.pi / 2),
    N=st.integers(4, 40),
)
def test_linear_equivalence(name, radius, angle, N):
    tab = builtin_tableau(name)
    w = radius * np.exp(1j * angle)
    h = 1.0 / N
    sys = dahlquist(w / h)
    st0 = start_nordsieck(tab, sys, 0.0, sys.y0, h)
    res = Integrator(tab, sys).run(st0, N)[0]
    want = np.linalg.matrix_power(stability_matrix(tab, w).M, N) @ st0.blocks
    scale = max(np.abs(want).max(), 1e-300)
    assert np.abs(res.blocks - want).max() <= 1e-8 * max(scale, np.abs(st0.blocks).max() * 1e-3)


@pytest.mark.parametrize("name,degree", [(n, d) for n in BUILTIN_NAMES for d in range(builtin_tableau(n).p + 1)])
def test_polynomial_exactness(name, degree):
    tab = builtin_tableau(name)
    sys = polynomial(degree)
    res = integrate(tab, sys, N=10)
    exact = sys.exact_solution(1.0)
    assert np.abs(res.y_end - exact).max() <= 1e-8 * (1 + np.abs(exact).max())


def _dahlquist_orders(tab, Ns):
    sys = dahlquist(-1.0)
    errs = [abs(integrate(tab, sys, N=N).y_end[0] - np.exp(-1.0)) for N in Ns]
    return [estimate_order(errs[i], errs[i + 1], Ns[i], Ns[i + 1]) for i in range(len(Ns) - 1)]


@pytest.mark.parametrize("name", [
    "GLMQS-1", "GLMQS-2", "GLMQS-4",
    pytest.param("GLMQS-3", marks=pytest.mark.xfail(
        strict=True, reason="the 1e-10 order residual of 10-digit coefficients floors the error near 5e-11")),
])
def test_dahlquist_orders(name):
    tab = builtin_tableau(name)
    orders = _dahlquist_orders(tab, [40, 80, 160, 320])
    assert all(abs(o - tab.p) <= 0.2 for o in orders)
    assert abs(_dahlquist_orders(tab, [80, 160])[0] - tab.p) <= 0.1


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_stiff_decay(name):
    sys = prothero_robinson(-1e6)
    res = integrate(builtin_tableau(name), sys, 0.0, 1.0, 10, store=True)
    for st_ in res.states[5:]:
        assert abs(st_.blocks[0, 0]) <= 1 + 1e-3


@functools.lru_cache(maxsize=None)
def _reference(problem):
    return reference_solution(make_problem(problem)).y


def test_vdp_glmqs2_error_level():
    err = np.linalg.norm(integrate(builtin_tableau("GLMQS-2"), make_problem("vdp"), N=320).y_end - _reference("vdp"))
    assert 9.11e-6 / 3 <= err <= 9.11e-6 * 3


def test_burgers_glmqs3_error_level():
    err = np.linalg.norm(integrate(builtin_tableau("GLMQS-3"), make_problem("burgers"), N=1280).y_end - _reference("burgers"))
    assert 5.03e-11 / 3 <= err <= 5.03e-11 * 3
