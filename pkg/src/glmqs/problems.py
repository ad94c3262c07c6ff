"""Benchmark and synthetic test systems."""

from dataclasses import asdict, dataclass
from fractions import Fraction
import math

import mpmath
import numpy as np
import scipy.sparse

from . import kernels
from .linear import DENSE, banded, sparse
from .solver import OdeSystem


# -- van der Pol ---------------------------------------------------------------

@dataclass(frozen=True)
class VdpConfig:
    epsilon: float = 1e-6
    t0: float = 0.0
    T: float = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


# truncated slow-manifold series for z(0)
_VDP_Z0_SERIES = (Fraction(-2, 3), Fraction(10, 81), Fraction(-292, 2187), Fraction(-1814, 19683))


def vdp_z0(epsilon, dps=None):
    """Initial ``z`` from the truncated series; an mpf when ``dps`` is given."""
    if dps is None:
        return float(sum(c * Fraction(epsilon) ** i for i, c in enumerate(_VDP_Z0_SERIES)))
    with mpmath.workdps(dps):
        eps = mpmath.mpf(epsilon)
        return sum(mpmath.mpf(c.numerator) / c.denominator * eps ** i for i, c in enumerate(_VDP_Z0_SERIES))


def vdp_taylor(y0, z0, epsilon, order, dps=60):
    """Taylor coefficients of the van der Pol solution through ``order``.

    Works in ``dps``-digit arithmetic because the stiff right-hand side cancels
    to O(epsilon) on the slow manifold.

    Returns
    -------
    list of (mpf, mpf)
        ``(Y_n, Z_n)`` with ``y(t0 + tau) = sum Y_n tau**n``.
    """
    with mpmath.workdps(dps):
        eps = mpmath.mpf(epsilon)
        Y = [mpmath.mpf(y0)]
        Z = [mpmath.mpf(z0)]
        for n in range(order):
            # (y^2)_n and (y^2 z)_n by Cauchy products
            y2 = [sum(Y[a] * Y[m - a] for a in range(m + 1)) for m in range(n + 1)]
            y2z = sum(y2[a] * Z[n - a] for a in range(n + 1))
            Y.append(Z[n] / (n + 1))
            Z.append((Z[n] - y2z - Y[n]) / (eps * (n + 1)))
        return list(zip(Y, Z))


def vdp_slow_z0(epsilon, y0=2, order=8, dps=100):
    """``z`` on the slow manifold above ``y0``.

    Found as the root of the ``order``-th Taylor coefficient of ``z``: any
    fast component of amplitude ``a`` contributes ``a (3/epsilon)**order`` to
    it, so the root carries none to working precision.
    """
    with mpmath.workdps(dps):
        start = vdp_z0(epsilon, dps=dps)
        return mpmath.findroot(
            lambda z: vdp_taylor(y0, z, epsilon, order, dps=dps)[order][1], start,
            tol=mpmath.mpf(10) ** (-(dps - 20)),
        )


def vdp_system(cfg=None):
    """Van der Pol oscillator in Lienard-type stiff scaling.

    ``y' = z``, ``z' = ((1 - y**2) z - y) / epsilon`` with ``y(0) = 2`` and
    ``z(0)`` from the truncated slow-manifold series.

    ``exact_derivatives`` returns the derivatives of the slow solution through
    ``(2, vdp_slow_z0(epsilon))``. It differs from the truncated initial value
    only by a transient of relative size ~1e-19 that decays on the
    ``epsilon`` time scale but would dominate third and higher derivatives.
    """
    cfg = cfg or VdpConfig()
    eps = cfg.epsilon

    def rhs(w):
        y, z = w[0], w[1]
        return np.array([z, ((1.0 - y * y) * z - y) / eps])

    def jac(w):
        y, z = w[0], w[1]
        return np.array([[0.0, 1.0], [(-2.0 * y * z - 1.0) / eps, (1.0 - y * y) / eps]])

    y0 = np.array([2.0, vdp_z0(eps)])
    taylor_cache = {}

    def exact_derivatives(t0, k):
        if t0 != cfg.t0:
            raise ValueError("exact derivatives are only known at the initial time")
        if k not in taylor_cache:
            if "z_slow" not in taylor_cache:
                taylor_cache["z_slow"] = vdp_slow_z0(eps)
            coeffs = vdp_taylor(2, taylor_cache["z_slow"], eps, k, dps=100)
            fact = math.factorial(k)
            taylor_cache[k] = np.array([float(coeffs[k][0] * fact), float(coeffs[k][1] * fact)])
        return taylor_cache[k]

    return OdeSystem(
        name="vdp", dim=2, rhs=rhs, jacobian=jac, structure=DENSE, y0=y0,
        t0=cfg.t0, t_end=cfg.T, exact_derivatives=exact_derivatives, params=asdict(cfg),
    )


# -- Burgers -------------------------------------------------------------------

@dataclass(frozen=True)
class BurgersConfig:
    d: float = 0.1
    L: float = 1.0
    M: int = 10
    T: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        if self.M < 3:
            raise ValueError("Burgers needs at least 3 grid points")
        if not (self.d > 0 and self.L > 0):
            raise ValueError("d and L must be positive")

    @property
    def k(self):
        return self.L / (self.M - 1)

    @property
    def x_interior(self):
        return self.k * np.arange(1, self.M - 1)


def burgers_system(cfg=None, use_numba=None):
    """Upwind/central method of lines for ``u_t = -u u_x + d u_xx``.

    Only the ``M - 2`` interior nodes are unknowns; the Dirichlet zeros enter
    through the stencil.
    """
    cfg = cfg or BurgersConfig()
    d, k = cfg.d, cfg.k

    def rhs(u):
        return kernels.burgers_rhs(u, d, k, use_numba)

    def jac(u):
        return kernels.burgers_jac(u, d, k, use_numba)

    y0 = np.sin(np.pi * cfg.x_interior / cfg.L)
    params = asdict(cfg)
    params["k"] = k
    return OdeSystem(
        name="burgers", dim=cfg.M - 2, rhs=rhs, jacobian=jac, structure=banded(1, 1),
        y0=y0, t0=cfg.t0, t_end=cfg.T, params=params,
    )


# -- Gray-Scott ----------------------------------------------------------------

@dataclass(frozen=True)
class GrayScottConfig:
    d1: float = 2e-5
    d2: float = 1e-5
    F: float = 0.04
    kappa: float = 0.06
    L: float = 1.0
    M: int = 32
    T: float = 1.0
    t0: float = 0.0
    amplitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.M < 4:
            raise ValueError("Gray-Scott needs M >= 4")
        if min(self.d1, self.d2, self.F, self.kappa) < 0:
            raise ValueError("rates must be nonnegative")

    @property
    def k(self):
        return self.L / self.M


def grayscott_laplacian(m, k):
    """Five-point Laplacian on ``m x m`` cells with reflected ghost nodes (CSR)."""
    one = np.ones(m)
    # 1-D second difference with reflection: ghost equals the edge cell
    D = scipy.sparse.diags([one[:-1], -2.0 * one, one[:-1]], [-1, 0, 1], format="lil")
    D[0, 0] = -1.0
    D[m - 1, m - 1] = -1.0
    D = D.tocsr()
    eye = scipy.sparse.identity(m, format="csr")
    return ((scipy.sparse.kron(eye, D) + scipy.sparse.kron(D, eye)) / (k * k)).tocsr()


def grayscott_initial(cfg):
    m, n = cfg.M, cfg.M * cfg.M
    centers = (np.arange(m) + 0.5) * cfg.k
    X, Yg = np.meshgrid(centers, centers, indexing="ij")
    half = cfg.L / 8.0
    inside = (np.abs(X - cfg.L / 2) < half) & (np.abs(Yg - cfg.L / 2) < half)
    noise = np.random.default_rng(cfg.seed).uniform(size=(m, m))
    u = np.ones(n)
    v = np.where(inside, cfg.amplitude * noise, 0.0).ravel()
    return np.concatenate((u, v))


def _csc_slots(mat, rows, cols):
    """Positions in ``mat.data`` of entries ``(rows[i], cols[i])`` (sorted CSC)."""
    out = np.empty(len(rows), dtype=np.int64)
    for i, (r, c) in enumerate(zip(rows, cols)):
        lo, hi = mat.indptr[c], mat.indptr[c + 1]
        out[i] = lo + np.searchsorted(mat.indices[lo:hi], r)
    return out


class _GrayScottJacobian:
    """Assembles the Jacobian by writing into a fixed CSC pattern."""

    def __init__(self, cfg):
        m, n = cfg.M, cfg.M * cfg.M
        self.n = n
        lap = grayscott_laplacian(m, cfg.k)
        eye = scipy.sparse.identity(n, format="csr")
        # structural pattern with every diagonal and coupling slot present,
        # independent of which rates happen to be zero
        block = abs(lap).sign() + eye
        pattern = scipy.sparse.bmat([[block, eye], [eye, block]], format="csc")
        pattern.data[:] = 1.0
        pattern.sort_indices()
        self.pattern = pattern
        values = scipy.sparse.bmat(
            [[cfg.d1 * lap - cfg.F * eye, None], [None, cfg.d2 * lap - (cfg.F + cfg.kappa) * eye]],
            format="csr",
        )
        rows, cols = pattern.nonzero()
        self.base_data = np.asarray(values[rows, cols]).ravel()
        idx = np.arange(n)
        self.slot_uu = _csc_slots(pattern, idx, idx)
        self.slot_uv = _csc_slots(pattern, idx, idx + n)
        self.slot_vu = _csc_slots(pattern, idx + n, idx)
        self.slot_vv = _csc_slots(pattern, idx + n, idx + n)

    def __call__(self, y):
        n = self.n
        u, v = y[:n], y[n:]
        data = self.base_data.copy()
        data[self.slot_uu] -= v * v
        data[self.slot_uv] = -2.0 * u * v
        data[self.slot_vu] = v * v
        data[self.slot_vv] += 2.0 * u * v
        J = self.pattern.copy()
        J.data = data
        return J


def grayscott_system(cfg=None, use_numba=None):
    """Gray-Scott reaction-diffusion on a cell-centred grid.

    State is ``[u.ravel(), v.ravel()]`` (row-major ``M x M`` fields).
    """
    cfg = cfg or GrayScottConfig()
    m = cfg.M
    jac = _GrayScottJacobian(cfg)

    def rhs(y):
        return kernels.grayscott_rhs(y, m, cfg.d1, cfg.d2, cfg.F, cfg.kappa, cfg.k, use_numba)

    params = asdict(cfg)
    params["k"] = cfg.k
    return OdeSystem(
        name="grayscott", dim=2 * m * m, rhs=rhs, jacobian=jac, structure=sparse(jac.pattern),
        y0=grayscott_initial(cfg), t0=cfg.t0, t_end=cfg.T, params=params,
    )


# -- synthetic -------------------------------------------------------------------

def dahlquist(zeta, y0=1.0, t0=0.0, T=1.0):
    """``y' = zeta y``; complex ``zeta`` gives a complex state."""
    dtype = complex if np.iscomplexobj(zeta) or isinstance(zeta, complex) else float
    zeta = dtype(zeta)
    y0 = dtype(y0)

    def rhs(y):
        return zeta * y

    def jac(y):
        return np.array([[zeta]])

    def exact_solution(t):
        return np.array([y0 * np.exp(zeta * (t - t0))])

    def exact_derivatives(t, k):
        return zeta ** k * exact_solution(t)

    return OdeSystem(
        name="dahlquist", dim=1, rhs=rhs, jacobian=jac, y0=np.array([y0]), t0=t0, t_end=T,
        exact_derivatives=exact_derivatives, exact_solution=exact_solution, params={"zeta": zeta},
    )


def polynomial(degree, t0=0.0, T=1.0):
    """``y(t) = 1 + t + ... + t**degree`` with time appended as a second component."""
    if not 0 <= degree <= 6:
        raise ValueError("degree must lie in [0, 6]")
    coeffs = np.ones(degree + 1)
    poly = np.polynomial.Polynomial(coeffs)

    def rhs(w):
        return np.array([poly.deriv()(w[1]), 1.0])

    def jac(w):
        return np.array([[0.0, poly.deriv(2)(w[1])], [0.0, 0.0]])

    def exact_derivatives(t, k):
        return np.array([poly.deriv(k)(t), t if k == 0 else float(k == 1)])

    def exact_solution(t):
        return exact_derivatives(t, 0)

    return OdeSystem(
        name=f"polynomial{degree}", dim=2, rhs=rhs, jacobian=jac, y0=exact_solution(t0), t0=t0,
        t_end=T, exact_derivatives=exact_derivatives, exact_solution=exact_solution, time_index=1,
        params={"degree": degree},
    )


def prothero_robinson(zeta, t0=0.0, T=1.0):
    """``y' = zeta (y - cos t) - sin t`` with exact solution ``cos t``."""

    def rhs(w):
        y, t = w
        return np.array([zeta * (y - np.cos(t)) - np.sin(t), 1.0])

    def jac(w):
        t = w[1]
        return np.array([[zeta, zeta * np.sin(t) - np.cos(t)], [0.0, 0.0]])

    def exact_derivatives(t, k):
        # d^k/dt^k cos t = cos(t + k pi / 2)
        return np.array([np.cos(t + k * np.pi / 2), t if k == 0 else float(k == 1)])

    def exact_solution(t):
        return exact_derivatives(t, 0)

    return OdeSystem(
        name="prothero_robinson", dim=2, rhs=rhs, jacobian=jac, y0=exact_solution(t0), t0=t0,
        t_end=T, exact_derivatives=exact_derivatives, exact_solution=exact_solution, time_index=1,
        params={"zeta": zeta},
    )


def synthetic_system(kind, *args, **kwargs):
    """Dispatch by name: ``dahlquist``, ``polynomial`` or ``prothero_robinson``."""
    table = {"dahlquist": dahlquist, "polynomial": polynomial, "prothero_robinson": prothero_robinson}
    try:
        return table[kind](*args, **kwargs)
    except KeyError:
        raise ValueError(f"unknown synthetic system {kind!r}; choose from {sorted(table)}") from None


# -- registry ------------------------------------------------------------------

PROBLEMS = {
    "vdp": (VdpConfig, vdp_system),
    "burgers": (BurgersConfig, burgers_system),
    "grayscott": (GrayScottConfig, grayscott_system),
}


def make_problem(name, **params):
    """Build a benchmark problem from its name and config overrides."""
    key = name.lower().replace("-", "").replace("_", "")
    if key not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    cfg_cls, factory = PROBLEMS[key]
    fields = cfg_cls.__dataclass_fields__
    unknown = set(params) - set(fields)
    if unknown:
        raise ValueError(f"unknown {key} parameter(s): {', '.join(sorted(unknown))}")
    coerced = {name: type(fields[name].default)(val) for name, val in params.items()}
    return factory(cfg_cls(**coerced))


def problem_defaults():
    return {name: asdict(cfg_cls()) for name, (cfg_cls, _) in PROBLEMS.items()}
