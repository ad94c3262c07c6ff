"""Sequential implicit stage solves by modified Newton iteration."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse

from .linear import DENSE, FactorizationError, Structure, linear_backend

JACOBIAN_REUSE = ("per-step", "per-stage", "never")


class StageFailure(RuntimeError):
    """Newton iteration for one stage diverged or ran out of iterations.

    Attributes
    ----------
    stage : int
        Zero-based stage index.
    residual : float
        Last residual norm seen.
    step : int or None
        Step number, filled in by the integrator.
    """

    def __init__(self, stage, residual, reason, step=None):
        self.stage = stage
        self.residual = residual
        self.reason = reason
        self.step = step
        super().__init__(self._message())

    def _message(self):
        where = f"stage {self.stage + 1}"
        if self.step is not None:
            where = f"step {self.step}, " + where
        return f"{where}: {self.reason} (residual {self.residual:.3e})"

    def at_step(self, step):
        self.step = step
        self.args = (self._message(),)
        return self


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """Autonomous system ``y' = f(y)``.

    Parameters
    ----------
    name : str
    dim : int
    rhs : callable
        ``y -> f(y)``, returns an array of length ``dim``.
    jacobian : callable, optional
        ``y -> df/dy`` in the format implied by ``structure``. When missing the
        solver falls back to :func:`finite_difference_jacobian`.
    structure : Structure
    y0 : ndarray, optional
        Default initial state.
    t0, t_end : float
    exact_derivatives : callable, optional
        ``(t0, k) -> y^(k)(t0)``.
    exact_solution : callable, optional
        ``t -> y(t)``.
    time_index : int, optional
        Index of an appended ``t' = 1`` component for non-autonomous problems.
    params : dict
        Problem parameters, echoed into reports.
    """

    name: str
    dim: int
    rhs: Callable
    jacobian: Optional[Callable] = None
    structure: Structure = DENSE
    y0: Optional[np.ndarray] = None
    t0: float = 0.0
    t_end: Optional[float] = None
    exact_derivatives: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    time_index: Optional[int] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.y0 is not None:
            y0 = np.asarray(self.y0)
            if y0.shape != (self.dim,):
                raise ValueError(f"y0 has shape {y0.shape}, expected ({self.dim},)")
        if self.structure.kind == "sparse" and self.structure.pattern.shape != (self.dim, self.dim):
            raise ValueError("sparsity pattern shape does not match dim")

    def f(self, y):
        out = np.asarray(self.rhs(y))
        if out.shape != (self.dim,):
            raise ValueError(f"{self.name}: rhs returned shape {out.shape}, expected ({self.dim},)")
        return out

    def jac(self, y):
        if self.jacobian is None:
            return finite_difference_jacobian(self, y)
        J = self.jacobian(y)
        _check_jacobian_shape(self, J)
        return J


def _check_jacobian_shape(sys, J):
    st, d = sys.structure, sys.dim
    if st.kind == "banded":
        expect = (st.lower + st.upper + 1, d)
    else:
        expect = (d, d)
    if J.shape != expect:
        raise ValueError(f"{sys.name}: Jacobian shape {J.shape} does not match {st!r} ({expect})")


@dataclass(frozen=True)
class NewtonConfig:
    """Modified Newton settings.

    ``rel_tol`` and ``abs_tol`` enter the stage stopping test
    ``res <= abs_tol + rel_tol * scale`` where ``scale`` is the largest of
    ``|Y|``, ``|h lam f(Y)|`` and ``|r_j|`` (max norms) and ``res`` is the raw
    or the weighted stage residual, see :meth:`StageSolver._newton`.
    """

    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iters: int = 25
    jacobian_reuse: str = "per-step"
    divergence_factor: float = 2.0
    slow_ratio: float = 0.5

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.jacobian_reuse not in JACOBIAN_REUSE:
            raise ValueError(f"jacobian_reuse must be one of {JACOBIAN_REUSE}")
        if self.divergence_factor <= 1:
            raise ValueError("divergence_factor must exceed 1")


@dataclass
class StageValues:
    """Converged stages of one step.

    ``residual[j]`` is the max-norm residual (raw or weighted) on which stage
    ``j`` was accepted and ``tolerance[j]`` the threshold it met.
    """

    Y: np.ndarray
    F: np.ndarray
    newton_iters: np.ndarray
    converged: bool
    residual: np.ndarray
    tolerance: np.ndarray


@dataclass
class SolverStats:
    newton_iters: int = 0
    jacobian_evals: int = 0
    factorizations: int = 0
    rhs_evals: int = 0


def _column_groups_banded(d, lower, upper):
    width = lower + upper + 1
    return [np.arange(g, d, width) for g in range(min(width, d))]


def _column_groups_pattern(pattern):
    """Greedy colouring: columns in one group share no row."""
    pat = scipy.sparse.csc_matrix(pattern)
    d = pat.shape[1]
    rows_of = [pat.indices[pat.indptr[j]:pat.indptr[j + 1]] for j in range(d)]
    used = []  # boolean row masks per group
    groups = []
    for j in range(d):
        rows = rows_of[j]
        for g, mask in enumerate(used):
            if not mask[rows].any():
                mask[rows] = True
                groups[g].append(j)
                break
        else:
            mask = np.zeros(pat.shape[0], dtype=bool)
            mask[rows] = True
            used.append(mask)
            groups.append([j])
    return [np.asarray(g) for g in groups]


_GROUP_CACHE = {}


def _groups_for(sys):
    st = sys.structure
    if st.kind == "dense":
        return None
    key = (id(st), sys.dim)
    groups = _GROUP_CACHE.get(key)
    if groups is None:
        if st.kind == "banded":
            groups = _column_groups_banded(sys.dim, st.lower, st.upper)
        else:
            groups = _column_groups_pattern(st.pattern)
        _GROUP_CACHE[key] = groups
    return groups


def finite_difference_jacobian(sys, y, f0=None):
    """One-sided difference Jacobian in the format of ``sys.structure``.

    Column increments are ``sqrt(eps) * (1 + |y_i|)``. With a banded or sparse
    structure, structurally orthogonal columns are perturbed together.
    """
    y = np.asarray(y, dtype=float)
    d = y.size
    if f0 is None:
        f0 = np.asarray(sys.rhs(y))
    steps = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(y))
    # use the representable increment
    steps = (y + steps) - y
    st = sys.structure
    groups = _groups_for(sys)
    if groups is None:
        J = np.empty((d, d), dtype=np.result_type(f0, float))
        for j in range(d):
            yp = y.copy()
            yp[j] += steps[j]
            J[:, j] = (np.asarray(sys.rhs(yp)) - f0) / steps[j]
        return J

    if st.kind == "banded":
        l, u = st.lower, st.upper
        ab = np.zeros((l + u + 1, d), dtype=np.result_type(f0, float))
        for cols in groups:
            yp = y.copy()
            yp[cols] += steps[cols]
            df = np.asarray(sys.rhs(yp)) - f0
            for j in cols:
                lo, hi = max(0, j - u), min(d, j + l + 1)
                rows = np.arange(lo, hi)
                ab[u + rows - j, j] = df[lo:hi] / steps[j]
        return ab

    pat = st.pattern
    rows_all, cols_all, vals = [], [], []
    for cols in groups:
        yp = y.copy()
        yp[cols] += steps[cols]
        df = np.asarray(sys.rhs(yp)) - f0
        for j in cols:
            rows = pat.indices[pat.indptr[j]:pat.indptr[j + 1]]
            rows_all.append(rows)
            cols_all.append(np.full(rows.size, j))
            vals.append(df[rows] / steps[j])
    return scipy.sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(d, d),
    )


class StageSolver:
    """Owns the frozen Jacobian and its factorization across steps.

    Not thread safe; make one per integration run.
    """

    def __init__(self, tab, sys, cfg=None, use_numba=None):
        self.tab = tab
        self.sys = sys
        self.cfg = cfg or NewtonConfig()
        self.backend = linear_backend(sys.structure, use_numba=use_numba)
        self.stats = SolverStats()
        self._J = None
        self._J_age = None  # (step, stage) the Jacobian was taken at
        self._gamma = None
        self._step = 0

    def _f(self, y):
        self.stats.rhs_evals += 1
        return self.sys.f(y)

    def _refresh(self, y, gamma, tag):
        self._J = self.sys.jac(y)
        self.stats.jacobian_evals += 1
        self._J_age = tag
        self._factor(gamma)

    def _factor(self, gamma):
        self.backend.factor(self._J, gamma)
        self.stats.factorizations += 1
        self._gamma = gamma

    def _needs_refresh(self, tag):
        if self._J is None:
            return True
        policy = self.cfg.jacobian_reuse
        if policy == "per-step":
            return self._J_age[0] != tag[0]
        if policy == "per-stage":
            return self._J_age != tag
        return False

    def solve(self, h, y_prev):
        """Solve all stages of one step; see :func:`solve_stages`."""
        tab, cfg = self.tab, self.cfg
        blocks = np.asarray(getattr(y_prev, "blocks", y_prev))
        if blocks.ndim != 2 or blocks.shape != (tab.r, self.sys.dim):
            raise ValueError(f"y_prev must have shape ({tab.r}, {self.sys.dim}), got {blocks.shape}")
        if h < 0:
            raise ValueError("step size must be nonnegative")
        s, lam = tab.s, tab.lam
        dtype = np.result_type(blocks, float)
        R = tab.U @ blocks
        Y = np.empty((s, self.sys.dim), dtype=dtype)
        F = np.empty_like(Y)
        iters = np.zeros(s, dtype=int)
        resid = np.zeros(s)
        tols = np.zeros(s)
        gamma = h * lam
        self._step += 1

        for j in range(s):
            rhs_j = R[j] + h * (tab.A[j, :j] @ F[:j]) if j else R[0].copy()
            if h == 0.0:
                Y[j] = rhs_j
                F[j] = self._f(Y[j])
                continue
            # predictor: explicit part plus the previous stage slope
            if j:
                guess = rhs_j + gamma * F[j - 1]
            else:
                guess = rhs_j + lam * blocks[1]
            Y[j], F[j], iters[j], resid[j], tols[j] = self._newton(j, guess, rhs_j, gamma)

        self.stats.newton_iters += int(iters.sum())
        return StageValues(Y=Y, F=F, newton_iters=iters, converged=True, residual=resid, tolerance=tols)

    def _newton(self, j, y, rhs_j, gamma):
        """Modified Newton for one stage.

        Stops when either the raw residual ``G`` or the weighted residual
        ``(I - gamma J)^-1 G`` falls below the tolerance. The weighted form
        discounts the rounding noise that a stiff ``f`` puts into ``G``.
        Divergence and slow contraction are judged on the weighted residual.
        """
        cfg = self.cfg
        tag = (self._step, j)
        never = cfg.jacobian_reuse == "never"

        def measure(G, y, fy):
            scale = max(np.max(np.abs(y)), abs(gamma) * np.max(np.abs(fy)), np.max(np.abs(rhs_j)))
            return np.max(np.abs(G)), cfg.abs_tol + cfg.rel_tol * scale

        fy = self._f(y)
        G = y - gamma * fy - rhs_j
        res, tol = measure(G, y, fy)
        if not np.isfinite(res):
            raise StageFailure(j, res, "non-finite residual at the predictor")
        if res <= tol:
            return y, fy, 0, res, tol
        fresh = False
        if self._needs_refresh(tag):
            self._refresh(y, gamma, tag)
            fresh = True
        elif self._gamma != gamma:
            self._factor(gamma)
        dy = self.backend.solve(-G)
        wres = np.max(np.abs(dy))
        it = 0
        while True:
            if it >= cfg.max_iters:
                raise StageFailure(j, wres, f"no convergence in {cfg.max_iters} Newton iterations")
            y = y + dy
            it += 1
            fy = self._f(y)
            G = y - gamma * fy - rhs_j
            res, tol = measure(G, y, fy)
            if res <= tol:
                return y, fy, it, res, tol
            dy_new = self.backend.solve(-G)
            w_new = np.max(np.abs(dy_new))
            if w_new <= tol:
                y = y + dy_new
                return y, self._f(y), it, w_new, tol
            ratio = w_new / wres
            if not np.isfinite(w_new) or ratio > cfg.divergence_factor:
                if fresh or never:
                    raise StageFailure(j, w_new, "Newton iteration diverged")
                self._refresh(y, gamma, tag)
                fresh = True
                dy_new = self.backend.solve(-G)
                w_new = np.max(np.abs(dy_new))
            elif ratio > cfg.slow_ratio and not fresh and not never:
                self._refresh(y, gamma, tag)
                fresh = True
                dy_new = self.backend.solve(-G)
                w_new = np.max(np.abs(dy_new))
            dy, wres = dy_new, w_new


def solve_stages(tab, sys, h, y_prev, cfg=None):
    """Stage values of one GLM step.

    Stage ``j`` solves ``Y_j = h lam f(Y_j) + r_j`` with
    ``r_j = h sum_{k<j} a_jk F_k + sum_k u_jk y_prev_k``.

    Parameters
    ----------
    tab : GlmTableau
    sys : OdeSystem
    h : float
    y_prev : NordsieckState or ndarray, shape (r, d)
    cfg : NewtonConfig, optional

    Returns
    -------
    StageValues

    Raises
    ------
    StageFailure
        Divergence or iteration cap.
    FactorizationError
        Singular iteration matrix.
    """
    return StageSolver(tab, sys, cfg).solve(h, y_prev)
