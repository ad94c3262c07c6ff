"""Construction of IQS methods for p <= 2 and certification of the built-ins.

For a given order ``p`` and free parameters (``lam`` and one entry of the
first row of ``V``) the remaining coefficients are fixed step by step:

1. ``c`` uniform on ``[0, 1]``, ``A`` lower triangular with diagonal ``lam``
   and strictly lower entries ``1 / (s - 1)``.
2. ``U = C - A C K`` from the stage conditions.
3. Given the last column ``b`` of ``B`` and the non-free entries of ``V``,
   the output conditions give the other columns of ``B``.
4. ``b``, those ``V`` entries and the free entries of ``X`` solve the IQS
   relations on rows 3..r together with ``tr M(inf) = 0`` and
   ``e2(M(inf)) = 0``.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.optimize import least_squares

from .stability import (
    check_l_stability, check_quadratic_form, scan_a_stability, stability_matrix,
)
from .tableau import (
    BUILTIN_NAMES, DegenerateTableauError, GlmTableau, OrderConditionSystem, builtin_tableau,
    error_constant, order_condition_residual, order_tolerance, verify_iqs, iqs_tolerance,
    PRINTED_ERROR_CONSTANTS,
)

# Name of the free V entry per order (1-based, as in v12 = V[0, 1]).
FREE_V_ENTRY = {1: ("v12", (0, 1)), 2: ("v13", (0, 2))}
ROOT_TOL = 1e-10


class ConstructionFailure(ArithmeticError):
    """No start reached a root of the IQS/L-stability system."""

    def __init__(self, message, best_residual):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3e})")


class InfeasibleBox(ArithmeticError):
    """No screening point passed the A-stability scan."""


@dataclass(frozen=True)
class FreeParameters:
    """Free parameters and their search box.

    Parameters
    ----------
    lam : float
    v : float
        Free entry of ``V`` (``v12`` for ``p = 1``, ``v13`` for ``p = 2``).
    lam_bounds, v_bounds : (float, float)
    """

    lam: float
    v: float
    lam_bounds: tuple = (0.0, np.inf)
    v_bounds: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        lo, hi = self.lam_bounds
        if not (lo <= self.lam <= hi) or self.lam <= 0:
            raise ValueError(f"lam = {self.lam!r} outside {self.lam_bounds}")
        lo, hi = self.v_bounds
        if not lo <= self.v <= hi:
            raise ValueError(f"v = {self.v!r} outside {self.v_bounds}")


@dataclass(frozen=True)
class SearchBox:
    lam: tuple
    v: tuple

    def __post_init__(self):
        for name in ("lam", "v"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty {name} interval {lo, hi}")
        if self.lam[0] <= 0:
            raise ValueError("lam bounds must be positive")

    @property
    def degenerate(self):
        return self.lam[0] == self.lam[1] and self.v[0] == self.v[1]


def _structure(p, lam):
    s = r = p + 1
    c = np.linspace(0.0, 1.0, s)
    A = np.tril(np.full((s, s), 1.0 / (s - 1)), -1) + lam * np.eye(s)
    ocs = OrderConditionSystem.build(c, r)
    U = ocs.Cr - A @ ocs.Cr @ ocs.Kr
    return c, A, U, ocs


def _v_unknown_slots(p):
    r = p + 1
    fixed = FREE_V_ENTRY[p][1]
    slots = [(0, j) for j in range(1, r)] + [(i, j) for i in range(1, r) for j in range(i + 1, r)]
    return [sl for sl in slots if sl != fixed]


class _System:
    """Residual map of step 4 for fixed ``p``, ``lam`` and free ``V`` entry.

    For ``p >= 2`` the last column of ``B`` is pinned to zero below the first
    row; see :func:`assemble_from_parameters`.
    """

    def __init__(self, p, lam, v, U=None):
        self.p, self.r = p, p + 1
        self.lam, self.v = lam, v
        self.c, self.A, U_stage, ocs = _structure(p, lam)
        self.U = U_stage if U is None else np.array(U, dtype=float)
        self.Ct = ocs.Cr[:, : self.r - 1]
        self.Er = ocs.Er
        self.slots = _v_unknown_slots(p)
        # free entries of the last column of B
        self.b_rows = [0] if p >= 2 else list(range(self.r))
        self.n_b, self.n_v, self.n_x = len(self.b_rows), len(self.slots), max(self.r - 2, 0)
        self.Ainv_U = np.linalg.solve(self.A, self.U)
        self.head_inv = np.linalg.inv(self.Ct[: self.r - 1])

    @property
    def n_unknowns(self):
        return self.n_b + self.n_v + self.n_x

    def m_infinity(self, z):
        B, V, _ = self.unpack(z)
        return V - B @ self.Ainv_U

    def unpack(self, z):
        r = self.r
        b = np.zeros(r)
        b[self.b_rows] = z[: self.n_b]
        V = np.zeros((r, r))
        V[0, 0] = 1.0
        V[FREE_V_ENTRY[self.p][1]] = self.v
        for val, sl in zip(z[self.n_b: self.n_b + self.n_v], self.slots):
            V[sl] = val
        x = z[self.n_b + self.n_v:]
        R = (self.Er - V)[:, 1:]
        B1 = (R - np.outer(b, self.Ct[r - 1])) @ self.head_inv
        B = np.column_stack([B1, b])
        X = np.zeros((r, r))
        for i in range(2, r):
            X[i, i - 1] = 1.0
            X[i, r - 1] = x[i - 2]
        return B, V, X

    def residual(self, z):
        B, V, X = self.unpack(z)
        A, U = self.A, self.U
        parts = []
        if self.r > 2:
            parts.append((B @ A - X @ B)[2:].ravel())
            parts.append((B @ U - (X @ V - V @ X))[2:].ravel())
        Minf = V - B @ self.Ainv_U
        tr = np.trace(Minf)
        e2 = 0.5 * (tr * tr - np.trace(Minf @ Minf))
        parts.append([tr, e2])
        return np.concatenate(parts)

    def tableau(self, z, name):
        B, V, _ = self.unpack(z)
        return GlmTableau(name=name, p=self.p, lam=self.lam, c=self.c, A=self.A, U=self.U, B=B, V=V)


def _starts(n, count=8, seed=0):
    rng = np.random.default_rng(seed)
    pts = [np.zeros(n)]
    pts += list(rng.uniform(-2.0, 2.0, size=(count - 1, n)))
    return pts


def _root_search(system, n_starts, damping=1e-3):
    """Converged roots from deterministic starts, each pulled toward small ``M(inf)``.

    A first solve adds ``damping * vec(M(inf))`` to the residual so that,
    where roots form a family, the iterate drifts to its most damped member;
    a second solve on the bare residual then lands exactly on the root set.
    """
    opts = dict(method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)

    def augmented(z):
        return np.concatenate([system.residual(z), damping * system.m_infinity(z).ravel()])

    found, best = [], np.inf
    for z0 in _starts(system.n_unknowns, n_starts):
        z = least_squares(augmented, z0, max_nfev=4000, **opts).x
        z = least_squares(system.residual, z, max_nfev=2000, **opts).x
        res = float(np.abs(system.residual(z)).max())
        best = min(best, res)
        if np.isfinite(res) and res <= ROOT_TOL:
            found.append(z)
    return found, best


def assemble_from_parameters(p, params, n_starts=8, name=None, U=None):
    """Tableau of order ``p`` at the given free parameters.

    The IQS and L-stability equations do not pin every unknown down by
    themselves, so two conventions close the system:

    * ``p = 1``: among the roots, the one with the smallest ``|M(inf)|_F``.
      When ``v12 != -lam`` this is the only exact root.
    * ``p = 2``: the last column of ``B`` vanishes below its first row, so the
      last stage derivative enters only the first output quantity.

    Remaining ties go to the smallest ``|M(inf)|_F``, then error constant, then
    the lexicographically smallest unknown vector.

    Parameters
    ----------
    p : {1, 2}
    params : FreeParameters
    n_starts : int
        Deterministic starting points for the nonlinear solve.
    name : str, optional
    U : array_like, optional
        Replace the ``U`` given by the stage conditions, for diagnostics.

    Returns
    -------
    GlmTableau

    Raises
    ------
    ConstructionFailure
        No start converged to a residual below ``1e-10``.
    """
    if p not in FREE_V_ENTRY:
        raise ValueError("construction supports p = 1 and p = 2 only")
    system = _System(p, params.lam, params.v, U=U)
    name = name or f"constructed-p{p}"
    roots, best = _root_search(system, n_starts)
    ranked = []
    for z in roots:
        try:
            E = error_constant(system.tableau(z, name)).E
        except DegenerateTableauError:
            continue
        size = float(np.round(np.linalg.norm(system.m_infinity(z)), 10))
        ranked.append(((size, round(E, 12), tuple(np.round(z, 10))), z))
    if not ranked:
        raise ConstructionFailure(f"p = {p}, lam = {params.lam!r}, {FREE_V_ENTRY[p][0]} = {params.v!r}", best)
    ranked.sort(key=lambda item: item[0])
    return system.tableau(ranked[0][1], name)


@dataclass
class ConstructionResult:
    """Outcome of a construction or certification run."""

    tableau: GlmTableau
    E: float
    feasible: bool
    worst_boundary_radius: float
    radius_inf: float = float("nan")
    params: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    optimizer_trace: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    def summary_lines(self):
        lines = [f"method = {self.tableau.name}", f"E = {self.E!r}", f"feasible = {self.feasible}",
                 f"worst_boundary_radius = {self.worst_boundary_radius!r}",
                 f"radius_inf = {self.radius_inf!r}"]
        for key, val in self.params.items():
            lines.append(f"param.{key} = {val!r}")
        for key, val in self.checks.items():
            lines.append(f"check.{key} = {val}")
        return lines


@dataclass
class _Evaluation:
    lam: float
    v: float
    E: float
    feasible: bool
    worst: float
    tableau: GlmTableau = None


def _evaluate(p, lam, v, n_points, radius_tol=1e-8):
    try:
        tab = assemble_from_parameters(p, FreeParameters(lam, v))
    except ConstructionFailure:
        return _Evaluation(lam, v, np.inf, False, np.inf)
    scan = scan_a_stability(tab, n_points=n_points, tol=radius_tol)
    E = error_constant(tab).E
    return _Evaluation(lam, v, E, bool(scan.stable), scan.worst_radius, tab)


def optimize_error_constant(p, box, grid_points=9, scan_points=512, max_evals=400, min_step=1e-10):
    """Minimize the error constant over ``box`` subject to the A-stability scan.

    A ``grid_points x grid_points`` screen picks the best feasible start. A
    compass search then halves its step whenever no neighbour improves,
    accepting only scan-feasible points. The search is deterministic; ties go
    to the lexicographically smaller ``(lam, v)``.

    Parameters
    ----------
    p : {1, 2}
    box : SearchBox
    grid_points : int
    scan_points : int
        Imaginary-axis samples per feasibility scan.
    max_evals : int
    min_step : float
        Stop once the step is below this fraction of the box size.

    Returns
    -------
    ConstructionResult

    Raises
    ------
    InfeasibleBox
        No feasible point on the screening grid.
    """
    trace = []
    cache = {}

    def ev(lam, v):
        key = (float(lam), float(v))
        if key not in cache:
            out = _evaluate(p, key[0], key[1], scan_points)
            cache[key] = out
            trace.append({"lam": key[0], "v": key[1], "E": out.E, "feasible": out.feasible,
                          "worst_radius": out.worst})
        return cache[key]

    def better(a, b):
        if not a.feasible:
            return False
        if not b.feasible:
            return True
        return (a.E, a.lam, a.v) < (b.E, b.lam, b.v)

    lam_lo, lam_hi = box.lam
    v_lo, v_hi = box.v
    lam_grid = np.linspace(lam_lo, lam_hi, grid_points) if lam_hi > lam_lo else np.array([lam_lo])
    v_grid = np.linspace(v_lo, v_hi, grid_points) if v_hi > v_lo else np.array([v_lo])
    best = None
    for lam in lam_grid:
        for v in v_grid:
            cand = ev(lam, v)
            if best is None or better(cand, best):
                best = cand
    if best is None or not best.feasible:
        raise InfeasibleBox(f"no A-stable point on the {len(lam_grid)}x{len(v_grid)} screening grid")

    step = np.array([(lam_hi - lam_lo) / max(grid_points - 1, 1), (v_hi - v_lo) / max(grid_points - 1, 1)])
    floor = min_step * np.maximum([lam_hi - lam_lo, v_hi - v_lo], 1e-300)
    while np.any(step > floor) and len(cache) < max_evals:
        improved = False
        for d_lam, d_v in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            lam = min(max(best.lam + d_lam * step[0], lam_lo), lam_hi)
            v = min(max(best.v + d_v * step[1], v_lo), v_hi)
            if (lam, v) == (best.lam, best.v):
                continue
            cand = ev(lam, v)
            if better(cand, best):
                best = cand
                improved = True
        if not improved:
            step = step / 2.0

    # full-density certification of the winner
    final_scan = scan_a_stability(best.tableau)
    linf = check_l_stability(best.tableau)
    name = FREE_V_ENTRY[p][0]
    return ConstructionResult(
        tableau=best.tableau.replace(name=f"optimized-p{p}"),
        E=best.E,
        feasible=bool(final_scan.stable and linf.radius_ok),
        worst_boundary_radius=final_scan.worst_radius,
        radius_inf=linf.radius_inf,
        params={"lam": best.lam, name: best.v},
        optimizer_trace=trace,
        grid={"grid_points": grid_points, "scan_points": scan_points, "certify_points": len(final_scan.ys)},
    )


def certify_published(name):
    """Run every verification on a built-in method and collect the outcomes.

    Failed checks are reported in ``checks``; nothing is raised.
    """
    if name.upper() not in BUILTIN_NAMES:
        raise ValueError(f"unknown method {name!r}; choose from {BUILTIN_NAMES}")
    tab = builtin_tableau(name)
    orders = order_condition_residual(tab)
    iqs = verify_iqs(tab)
    qf = check_quadratic_form(tab)
    scan = scan_a_stability(tab)
    linf = check_l_stability(tab)
    ec = error_constant(tab)
    d = tab.coeff_digits
    checks = {
        "order_residual": f"{orders.max:.3e} (tol {order_tolerance(d):.0e}) "
                          f"{'pass' if orders.max <= order_tolerance(d) else 'FAIL'}",
        "iqs_residual": f"{iqs.residual:.3e} (tol {iqs_tolerance(d):.0e}) "
                        f"{'pass' if iqs.residual <= iqs_tolerance(d) else 'FAIL'}",
        "quadratic_form": f"max spurious |eta| {qf.max_spurious_eigenvalue:.3e} (tol {qf.tol:.0e}) "
                          f"{'pass' if qf.passed else 'FAIL'}",
        "a_stability": f"worst radius {scan.worst_radius!r} {'pass' if scan.stable else 'FAIL'}",
        "l_stability": f"radius(M_inf) {linf.radius_inf:.3e} (tol {linf.radius_tol:.0e}), "
                       f"p1r {linf.p1r:.2e}, p0r {linf.p0r:.2e} {'pass' if linf.passed else 'FAIL'}",
        "error_constant": f"{ec.E!r} (printed {PRINTED_ERROR_CONSTANTS[tab.name]!r})",
    }
    passed = {
        "order": orders.max <= order_tolerance(d),
        "iqs": iqs.residual <= iqs_tolerance(d),
        "quadratic_form": qf.passed,
        "a_stability": scan.stable,
        "l_stability": linf.passed,
    }
    return ConstructionResult(
        tableau=tab, E=ec.E, feasible=bool(scan.stable and linf.radius_ok),
        worst_boundary_radius=scan.worst_radius, radius_inf=linf.radius_inf,
        params={"lam": tab.lam}, checks=checks, grid={"scan_points": len(scan.ys)},
        optimizer_trace=[{"passed": passed}],
    )


def eta_closed_form_p1(lam, v12, omega):
    """Closed-form roots of the stability function of the L-stable p = 1 family.

    ``D eta^2 - N eta + omega (-lam - v12)`` with ``D = (1 - lam w)^2`` and
    ``N = 1 + w (1 - 3 lam - v12)``. Returned as ``(eta_1, eta_2)``, the
    minus-root first.
    """
    w = np.asarray(omega, dtype=complex)
    D = lam * lam * w * w - 2 * lam * w + 1
    N = -3 * lam * w - v12 * w + w + 1
    disc = np.sqrt(N * N - 4 * w * (-lam - v12) * D)
    return np.array([(N - disc) / (2 * D), (N + disc) / (2 * D)])
