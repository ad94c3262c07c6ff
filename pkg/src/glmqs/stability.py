"""Linear stability of GLMs: stability matrix, quadratic stability polynomial, A/L scans."""

from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.linalg import solve_triangular



class StabilityPoleError(ZeroDivisionError):
    """``I - omega A`` is singular (``omega = 1/lambda``)."""


class QuadraticFormError(ArithmeticError):
    """The characteristic polynomial is not ``eta^(r-2)`` times a quadratic."""


SPURIOUS_EIGENVALUE_TOL = 1e-6
L_RADIUS_TOL = 1e-6


def coefficient_tolerance(coeff_digits):
    """Tolerance for polynomial coefficients that must vanish."""
    return max(1e-10, 10.0 ** -(coeff_digits - 3))


@dataclass(frozen=True, eq=False)
class StabilityMatrixSample:
    omega: complex
    M: np.ndarray
    spectral_radius: float


def _m_infinity(tab):
    return tab.V - tab.B @ solve_triangular(tab.A, tab.U, lower=True)


def stability_matrix(tab, omega):
    """``M(omega) = V + omega B (I - omega A)^-1 U``; ``omega=inf`` gives ``V - B A^-1 U``."""
    omega = complex(omega)
    if np.isinf(omega.real) or np.isinf(omega.imag):
        M = _m_infinity(tab)
    else:
        if abs(1.0 - omega * tab.lam) <= 1e-13 * max(1.0, abs(omega * tab.lam)):
            raise StabilityPoleError(f"omega = {omega} is the resolvent pole 1/lambda")
        lhs = np.eye(tab.s) - omega * tab.A
        M = tab.V + omega * (tab.B @ solve_triangular(lhs, tab.U.astype(complex), lower=True))
        if omega.imag == 0.0:
            M = M.real
    rho = float(np.abs(np.linalg.eigvals(M)).max())
    return StabilityMatrixSample(omega, M, rho)


def stability_matrices(tab, omegas):
    """Batched ``M(omega)`` for a 1-D array of finite ``omegas``; shape ``(n, r, r)``."""
    omegas = np.asarray(omegas, dtype=complex)
    s = tab.s
    lhs = np.eye(s)[None] - omegas[:, None, None] * tab.A[None]
    rhs = np.broadcast_to(tab.U.astype(complex), (omegas.size,) + tab.U.shape)
    Z = np.linalg.solve(lhs, rhs)
    return tab.V[None] + omegas[:, None, None] * (tab.B[None] @ Z)


def spectral_radii(tab, omegas):
    return np.abs(np.linalg.eigvals(stability_matrices(tab, omegas))).max(axis=1)


def charpoly(M):
    """Characteristic polynomial coefficients of ``M`` (Faddeev-LeVerrier), highest power first."""
    n = M.shape[0]
    coeffs = np.zeros(n + 1, dtype=np.result_type(M, float))
    coeffs[0] = 1.0
    Mk = np.zeros_like(M)
    eye = np.eye(n)
    for k in range(1, n + 1):
        Mk = M @ (Mk + coeffs[k - 1] * eye)
        coeffs[k] = -np.trace(Mk) / k
    return coeffs


@dataclass(frozen=True, eq=False)
class StabilityPolynomial:
    """``p(eta, omega) = eta^(r-2) ((1 - lam omega)^r eta^2 - p1(omega) eta + p0(omega))``.

    Polynomials in ``omega`` are stored as ascending coefficient arrays.
    ``spurious`` holds the fitted coefficients of ``eta^k`` for ``k < r - 2``,
    which vanish for a method with quadratic stability.
    """

    lam: float
    r: int
    quad_leading: np.ndarray
    p1: np.ndarray
    p0: np.ndarray
    spurious: np.ndarray

    @property
    def leading_power(self):
        return self.r - 2

    @property
    def max_spurious(self):
        return float(np.abs(self.spurious).max()) if self.spurious.size else 0.0

    @property
    def p1r(self):
        return float(self.p1[self.r])

    @property
    def p0r(self):
        return float(self.p0[self.r])

    def __call__(self, eta, omega):
        pv = np.polynomial.polynomial.polyval
        quad = pv(omega, self.quad_leading) * eta ** 2 - pv(omega, self.p1) * eta + pv(omega, self.p0)
        return eta ** (self.r - 2) * quad


def stability_polynomial(tab, tol=None, strict=True, n_samples=None):
    """Fit ``(1 - lam w)^r det(eta I - M(w))`` coefficientwise in ``w`` from real samples.

    Every ``eta``-coefficient is a polynomial of degree ``<= r`` in ``w``;
    ``n_samples >= 2r + 1`` Chebyshev nodes on ``[-2, 0]`` are fitted by least
    squares.
    """
    r, lam = tab.r, tab.lam
    n = n_samples or (2 * r + 1)
    if n < 2 * r + 1:
        raise ValueError("need at least 2r + 1 samples")
    nodes = -1.0 - np.cos(np.pi * (np.arange(n) + 0.5) / n)
    rows = np.empty((n, r + 1))
    for i, w in enumerate(nodes):
        M = stability_matrix(tab, w).M
        rows[i] = (1.0 - lam * w) ** r * charpoly(M)
    # fit in the variable x = w + 1 in [-1, 1], then shift back to powers of w
    vander = np.polynomial.polynomial.polyvander(nodes + 1.0, r)
    fit_x, *_ = np.linalg.lstsq(vander, rows, rcond=None)
    shift = np.array([[_binom(j, i) * 1.0 for j in range(r + 1)] for i in range(r + 1)])
    # c_w[i] = sum_j c_x[j] * binom(j, i)   since (w + 1)^j = sum_i binom(j, i) w^i
    fit_w = shift @ fit_x
    quad = fit_w[:, 0]
    p1 = -fit_w[:, 1]
    p0 = fit_w[:, 2] if r >= 2 else np.zeros(r + 1)
    spurious = fit_w[:, 3:].T
    poly = StabilityPolynomial(lam, r, quad, p1, p0, spurious)
    if strict:
        tol = coefficient_tolerance(tab.coeff_digits) if tol is None else tol
        if poly.max_spurious > tol:
            raise QuadraticFormError(
                f"{tab.name}: eta^k coefficients for k < r-2 reach {poly.max_spurious:.3e} > {tol:.1e}"
            )
    return poly


def _binom(n, k):
    if k < 0 or k > n:
        return 0
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def printed_form(poly):
    """Normalise to the ``(-1 + lam w)^r`` leading factor used when printing methods.

    Returns ``(p1, p0)`` multiplied by ``(-1)^r``.
    """
    sign = (-1.0) ** poly.r
    return sign * poly.p1, sign * poly.p0


# A-stability scan

@dataclass(frozen=True, eq=False)
class AStabilityScan:
    stable: bool
    worst_radius: float
    worst_omega: complex
    radius_inf: float
    ys: np.ndarray
    radii: np.ndarray
    tol: float


def default_scan_grid(n_points=2048, y_min=1e-6, y_max=1e9):
    half = n_points // 2
    pos = np.logspace(np.log10(y_min), np.log10(y_max), half)
    return np.concatenate([-pos[::-1], pos])


def scan_a_stability(tab, grid=None, n_points=2048, y_min=1e-6, y_max=1e9, tol=1e-8, include_inf=True):
    """Spectral radius of ``M(iy)`` on the imaginary axis plus ``M(inf)``.

    ``M`` is analytic in the closed left half-plane (its only pole ``1/lambda``
    is positive), so by the maximum principle boundary samples bounded by
    ``1 + tol`` certify A-stability at the resolution of the grid.
    """
    ys = default_scan_grid(n_points, y_min, y_max) if grid is None else np.asarray(grid, dtype=float)
    if ys.size == 0:
        raise ValueError("empty scan grid")
    radii = spectral_radii(tab, 1j * ys)
    k = int(np.argmax(radii))
    worst = float(radii[k])
    radius_inf = stability_matrix(tab, np.inf).spectral_radius if include_inf else 0.0
    stable = worst <= 1.0 + tol and radius_inf <= 1.0 + tol
    return AStabilityScan(stable, worst, complex(0.0, ys[k]), radius_inf, ys, radii, tol)


# L-stability

def _mp_matrix(a):
    return mpmath.matrix([[mpmath.mpf(float(x)) for x in row] for row in np.asarray(a)])


def exact_spectral_radius(M, dps=50):
    """Spectral radius of a float matrix, eigenvalues taken in extended precision."""
    with mpmath.workdps(dps):
        ev = mpmath.eig(_mp_matrix(M), left=False, right=False)
        return float(max(abs(e) for e in ev))


def m_infinity_radius(tab, dps=50):
    """Spectral radius of ``V - B A^-1 U`` assembled and solved in extended precision.

    The stored float coefficients are taken as exact. A double-precision
    assembly would perturb a nilpotent limit matrix by ``~1e-16``, which moves
    its eigenvalues by ``~1e-16^(1/r)``.
    """
    with mpmath.workdps(dps):
        A, U, B, V = (_mp_matrix(getattr(tab, k)) for k in "AUBV")
        Minf = V - B * (mpmath.inverse(A) * U)
        ev = mpmath.eig(Minf, left=False, right=False)
        return float(max(abs(e) for e in ev))


@dataclass(frozen=True)
class LStabilityCheck:
    passed: bool
    radius_inf: float
    radius_ok: bool
    p1r: float
    p0r: float
    coeff_ok: bool
    nilpotency_residual: float
    radius_tol: float
    coeff_tol: float


def check_l_stability(tab, radius_tol=L_RADIUS_TOL, coeff_tol=None):
    """Two independent views of ``M(omega) -> 0`` as ``omega -> inf``.

    (a) spectral radius of ``V - B A^-1 U``; (b) the degree-``r`` coefficients
    of ``p1`` and ``p0``. ``nilpotency_residual`` (max entry of ``M(inf)^r``)
    is reported as extra evidence.
    """
    Minf = _m_infinity(tab)
    rho = m_infinity_radius(tab)
    coeff_tol = coefficient_tolerance(tab.coeff_digits) if coeff_tol is None else coeff_tol
    poly = stability_polynomial(tab, strict=False)
    coeff_ok = abs(poly.p1r) <= coeff_tol and abs(poly.p0r) <= coeff_tol
    radius_ok = rho <= radius_tol
    nil = float(np.abs(np.linalg.matrix_power(Minf, tab.r)).max())
    return LStabilityCheck(radius_ok and coeff_ok, rho, radius_ok, poly.p1r, poly.p0r,
                           coeff_ok, nil, radius_tol, coeff_tol)


# Quadratic form via eigenvalues

def left_half_plane_samples(n, seed=0, r_min=1e-3, r_max=1e3):
    """Deterministic pseudo-random points with ``Re(omega) <= 0``."""
    rng = np.random.default_rng(seed)
    mag = np.exp(rng.uniform(np.log(r_min), np.log(r_max), n))
    ang = rng.uniform(np.pi / 2, 3 * np.pi / 2, n)
    return mag * np.exp(1j * ang)


def spurious_eigenvalue_magnitudes(tab, omegas):
    """Magnitude of the ``(r-2)``-th smallest eigenvalue of each ``M(omega)``.

    At most ``r - 2`` eigenvalues of ``M`` vanish for a quadratically stable
    method; this returns the largest of those per sample.
    """
    r = tab.r
    if r <= 2:
        return np.zeros(len(omegas))
    mags = np.sort(np.abs(np.linalg.eigvals(stability_matrices(tab, omegas))), axis=1)
    return mags[:, r - 3]


@dataclass(frozen=True)
class QuadraticFormCheck:
    passed: bool
    max_spurious_eigenvalue: float
    n_samples: int
    tol: float


def check_quadratic_form(tab, n_samples=100, seed=0, tol=SPURIOUS_EIGENVALUE_TOL):
    mags = spurious_eigenvalue_magnitudes(tab, left_half_plane_samples(n_samples, seed))
    worst = float(mags.max()) if mags.size else 0.0
    return QuadraticFormCheck(worst <= tol, worst, n_samples, tol)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    a_stable_scan: AStabilityScan
    l_stable: LStabilityCheck
    quadratic_form: QuadraticFormCheck

    @property
    def quadratic_form_ok(self):
        return self.quadratic_form.passed


def stability_report(tab, n_points=2048, y_max=1e9, n_samples=100, seed=0):
    return StabilityReport(
        a_stable_scan=scan_a_stability(tab, n_points=n_points, y_max=y_max),
        l_stable=check_l_stability(tab),
        quadratic_form=check_quadratic_form(tab, n_samples=n_samples, seed=seed),
    )

