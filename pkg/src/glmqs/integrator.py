"""Fixed-step integration in Nordsieck form."""

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .linear import to_dense
from .solver import NewtonConfig, StageFailure, StageSolver


@dataclass
class NordsieckState:
    """External state; ``blocks[j]`` approximates ``h**j y^(j)(t)``."""

    t: float
    h: float
    blocks: np.ndarray

    @property
    def y(self):
        return self.blocks[0]

    def copy(self):
        return NordsieckState(self.t, self.h, self.blocks.copy())


@dataclass
class IntegrationStats:
    steps: int = 0
    newton_iters: int = 0
    jacobian_evals: int = 0
    factorizations: int = 0
    rhs_evals: int = 0


@dataclass
class IntegrationResult:
    y_end: np.ndarray
    t_end: float
    states: Optional[list] = None
    stats: IntegrationStats = field(default_factory=IntegrationStats)


def _reference_values(sys, t0, y0, times):
    """Tight-tolerance stiff reference at ``times`` (used only for starting)."""
    jac = None
    if sys.jacobian is not None:
        def jac(t, y):
            return to_dense(sys.jac(y), sys.structure) if sys.structure.kind == "banded" else sys.jac(y)
    sol = solve_ivp(
        lambda t, y: sys.f(y), (t0, times[-1]), np.asarray(y0), method="Radau", t_eval=times,
        rtol=1e-13, atol=1e-15 * max(1.0, float(np.max(np.abs(y0)))), jac=jac,
    )
    if not sol.success:
        raise RuntimeError(f"reference integration for the start failed: {sol.message}")
    return sol.y.T


def start_nordsieck(tab, sys, t0, y0, h):
    """Initial Nordsieck vector for step size ``h``.

    Uses ``sys.exact_derivatives`` when available. Otherwise reference values
    at ``t0 + i h`` (``i = 0..p``) are interpolated and the interpolant's
    scaled derivatives ``h**j P^(j)(t0)`` are taken, which is accurate to
    ``O(h**(p+1))`` per block.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    p, r = tab.p, tab.r
    y0 = np.asarray(y0)
    if sys.exact_derivatives is not None:
        blocks = np.array([h ** j * np.asarray(sys.exact_derivatives(t0, j)) for j in range(r)])
        blocks[0] = y0
        return NordsieckState(t0, h, blocks)
    times = t0 + h * np.arange(p + 1)
    values = _reference_values(sys, t0, y0, times)
    values[0] = y0
    nodes = np.arange(p + 1, dtype=float)
    vander = np.vander(nodes, p + 1, increasing=True)
    coeffs = np.linalg.solve(vander, values)
    fact = np.array([math.factorial(j) for j in range(p + 1)], dtype=float)
    return NordsieckState(t0, h, fact[:, None] * coeffs)


class Integrator:
    """Steps one tableau on one system; owns the stage solver workspace."""

    def __init__(self, tab, sys, cfg=None, use_numba=None):
        self.tab = tab
        self.sys = sys
        self.cfg = cfg or NewtonConfig()
        self.solver = StageSolver(tab, sys, self.cfg, use_numba=use_numba)
        self.steps = 0

    def step(self, state):
        tab = self.tab
        try:
            stages = self.solver.solve(state.h, state.blocks)
        except StageFailure as exc:
            raise exc.at_step(self.steps + 1)
        blocks = state.h * (tab.B @ stages.F) + tab.V @ state.blocks
        self.steps += 1
        return NordsieckState(state.t + state.h, state.h, blocks)

    def stats(self):
        s = self.solver.stats
        return IntegrationStats(self.steps, s.newton_iters, s.jacobian_evals, s.factorizations, s.rhs_evals)

    def run(self, state, n_steps, t_end=None, store=False):
        t0 = state.t
        states = [state.copy()] if store else None
        for n in range(1, n_steps + 1):
            state = self.step(state)
            # accumulate time without drift
            state.t = t0 + n * state.h
            if store:
                states.append(state.copy())
        if t_end is not None:
            state.t = t_end
        return state, states


def step(tab, sys, state, cfg=None):
    """Advance ``state`` by one step: ``y^[n] = h B F + V y^[n-1]``."""
    return Integrator(tab, sys, cfg).step(state)


def integrate(tab, sys, t0=None, T=None, N=None, cfg=None, y0=None, store=False, start=None,
              use_numba=None):
    """Integrate ``sys`` over ``[t0, T]`` with ``N`` uniform steps.

    Parameters
    ----------
    tab : GlmTableau
    sys : OdeSystem
    t0, T : float, optional
        Defaults are ``sys.t0`` and ``sys.t_end``.
    N : int
        Number of steps, at least ``p + 1``. The starting procedure uses no
        steps of its own.
    cfg : NewtonConfig, optional
    y0 : array_like, optional
        Defaults to ``sys.y0``.
    store : bool
        Keep every Nordsieck state.
    start : NordsieckState, optional
        Use this starting vector instead of :func:`start_nordsieck`.

    Returns
    -------
    IntegrationResult
    """
    t0 = sys.t0 if t0 is None else t0
    T = sys.t_end if T is None else T
    if T is None or not T > t0:
        raise ValueError("need T > t0")
    if N is None or int(N) != N or N < tab.p + 1:
        raise ValueError(f"N must be an integer >= p + 1 = {tab.p + 1}")
    N = int(N)
    h = (T - t0) / N
    y0 = sys.y0 if y0 is None else np.asarray(y0)
    state = start if start is not None else start_nordsieck(tab, sys, t0, y0, h)
    runner = Integrator(tab, sys, cfg, use_numba=use_numba)
    final, states = runner.run(state, N, t_end=T, store=store)
    return IntegrationResult(y_end=final.blocks[0].copy(), t_end=final.t, states=states, stats=runner.stats())
