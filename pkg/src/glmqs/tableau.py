"""GLM coefficient tableaus, the published GLMQS methods and their algebraic checks.

A general linear method advances ``r`` external quantities through ``s``
internal stages::

    Y      = h (A kron I) F(Y) + (U kron I) y_prev
    y_next = h (B kron I) F(Y) + (V kron I) y_prev

The methods shipped here have ``r = s = p + 1``, stage order ``q = p``, a
Nordsieck input vector, singly diagonally implicit ``A`` and upper triangular
``V`` with ``V[0, 0] = 1``.
"""

from dataclasses import dataclass
from math import factorial

import numpy as np


class TableauError(ValueError):
    """A tableau violates a structural invariant or has inconsistent shapes."""


class UnknownMethodError(KeyError):
    """Requested built-in method name does not exist."""


class DegenerateTableauError(ArithmeticError):
    """The error-constant system ``(I - V~) beta = ...`` is singular."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GlmTableau:
    """Coefficients ``(c, A, U, B, V)`` of an implicit GLM with quadratic stability.

    Parameters
    ----------
    name : str
        Label, e.g. ``"GLMQS-2"``.
    p : int
        Order; the stage order ``q`` equals ``p``.
    lam : float
        Diagonal entry of ``A``.
    c, A, U, B, V : array_like
        Abscissae and coefficient matrices, ``A`` is ``s x s``, ``U`` is
        ``s x r``, ``B`` is ``r x s`` and ``V`` is ``r x r``.
    coeff_digits : int
        Significant digits the coefficients were given with. Verification
        tolerances scale with it.
    """

    name: str
    p: int
    lam: float
    c: np.ndarray
    A: np.ndarray
    U: np.ndarray
    B: np.ndarray
    V: np.ndarray
    coeff_digits: int = 16

    def __post_init__(self):
        for field in ("c", "A", "U", "B", "V"):
            object.__setattr__(self, field, _frozen(getattr(self, field)))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "coeff_digits", int(self.coeff_digits))
        self._validate()

    @property
    def q(self):
        return self.p

    @property
    def s(self):
        return self.A.shape[0]

    @property
    def r(self):
        return self.V.shape[0]

    def _validate(self):
        p, lam = self.p, self.lam
        if self.c.ndim != 1:
            raise TableauError("c: expected a vector")
        s = self.c.shape[0]
        r = self.V.shape[0] if self.V.ndim == 2 else -1
        if r != s:
            raise TableauError(f"r/s: r = {r} must equal s = {s}")
        if p < 1 or s != p + 1:
            raise TableauError(f"p: s = {s} must equal p + 1 = {p + 1}")
        expected = {"A": (s, s), "U": (s, r), "B": (r, s), "V": (r, r)}
        for field, shape in expected.items():
            got = getattr(self, field).shape
            if got != shape:
                raise TableauError(f"{field}: shape {got}, expected {shape}")
        if not np.isfinite(lam) or lam <= 0.0:
            raise TableauError(f"lambda: must be positive, got {lam!r}")
        for field in ("c", "A", "U", "B", "V"):
            if not np.all(np.isfinite(getattr(self, field))):
                raise TableauError(f"{field}: non-finite entry")
        A, V = self.A, self.V
        upper = np.argwhere(np.triu(A, 1) != 0.0)
        if upper.size:
            i, j = upper[0]
            raise TableauError(f"A[{i + 1},{j + 1}]: A must be lower triangular")
        bad = np.flatnonzero(np.diag(A) != lam)
        if bad.size:
            k = bad[0]
            raise TableauError(f"A[{k + 1},{k + 1}]: diagonal entry {A[k, k]!r} != lambda {lam!r}")
        if V[0, 0] != 1.0:
            raise TableauError(f"V[1,1]: must be 1, got {V[0, 0]!r}")
        below = np.argwhere(np.tril(V, 0)[1:, :] != 0.0)
        if below.size:
            i, j = below[0]
            raise TableauError(
                f"V[{i + 2},{j + 1}]: V must be upper triangular with zero diagonal below V[1,1]"
            )

    def replace(self, **changes):
        """Copy with some fields replaced (validated again)."""
        fields = dict(name=self.name, p=self.p, lam=self.lam, c=self.c, A=self.A,
                      U=self.U, B=self.B, V=self.V, coeff_digits=self.coeff_digits)
        fields.update(changes)
        return GlmTableau(**fields)

    def equals(self, other):
        """Bitwise equality of every field."""
        if not isinstance(other, GlmTableau):
            return False
        scalars = ("name", "p", "lam", "coeff_digits")
        if any(getattr(self, k) != getattr(other, k) for k in scalars):
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "cAUBV")

    def __repr__(self):
        return f"GlmTableau(name={self.name!r}, p={self.p}, lam={self.lam!r})"


# Published GLMQS coefficients, transcribed with every printed digit.

def _glmqs1():
    lam = 0.4779022865816724
    return GlmTableau(
        name="GLMQS-1", p=1, lam=lam, coeff_digits=16,
        c=[0.0, 1.0],
        A=[[lam, 0.0],
           [1.0, lam]],
        U=[[1.0, -0.4779022865816724],
           [1.0, -0.4779022865816724]],
        B=[[0.9999999999996634, 0.47790228658136436],
           [0.5220977134183276, 0.4779022865816724]],
        V=[[1.0, -0.4779022865810278],
           [0.0, 0.0]],
    )


def _glmqs2():
    lam = 0.4127594486653355
    return GlmTableau(
        name="GLMQS-2", p=2, lam=lam, coeff_digits=16,
        c=[0.0, 0.5, 1.0],
        A=[[lam, 0.0, 0.0],
           [0.5, lam, 0.0],
           [0.5, 0.5, lam]],
        U=[[1.0, -0.4127594486653355, 0.0],
           [1.0, -0.4127594486653355, 0.04362027566733226],
           [1.0, -0.4127594486653354, -0.16275944866533548]],
        B=[[0.08251725509138857, 1.1935839192127649, -0.10573081184164185],
           [-0.825518897330671, 1.8255188973306709, 0.0],
           [-2.0, 2.0, 0.0]],
        V=[[1.0, -0.17037036246251172, 0.00893885223525935],
           [0.0, 0.0, 0.08724055133466452],
           [0.0, 0.0, 0.0]],
    )


def _glmqs3():
    lam = 1.3070643469
    a = 0.3333333333
    return GlmTableau(
        name="GLMQS-3", p=3, lam=lam, coeff_digits=10,
        c=[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
        A=[[lam, 0.0, 0.0, 0.0],
           [a, lam, 0.0, 0.0],
           [a, a, lam, 0.0],
           [a, a, a, lam]],
        U=[[1.0, -1.3070643469, 0.0, 0.0],
           [1.0, -1.3070643469, -0.3801325601, -0.0664418464],
           [1.0, -1.3070643469, -0.7602651202, -0.2595945462],
           [1.0, -1.3070643469, -1.1403976803, -0.5794580994]],
        B=[[-0.8343558447, 2.1518400434, -0.3006125529, 0.9548594035],
           [5.9455090739, -19.7334042294, 14.7878951555, 0.0],
           [14.7635791223, -32.5271582445, 17.7635791223, 0.0],
           [9.0, -18.0, 9.0, 0.0]],
        V=[[1.0, -0.9717310493, -0.9717310493, -0.3635069146],
           [0.0, 0.0, -2.2807953605, -1.6898986885],
           [0.0, 0.0, 0.0, -1.1403976803],
           [0.0, 0.0, 0.0, 0.0]],
    )


def _glmqs4():
    lam = 1.14488604
    a = 0.25
    return GlmTableau(
        name="GLMQS-4", p=4, lam=lam, coeff_digits=8,
        c=[0.0, 0.25, 0.5, 0.75, 1.0],
        A=[[lam, 0.0, 0.0, 0.0, 0.0],
           [a, lam, 0.0, 0.0, 0.0],
           [a, a, lam, 0.0, 0.0],
           [a, a, a, lam, 0.0],
           [a, a, a, a, lam]],
        U=[[1.0, -1.14488604, 0.0, 0.0, 0.0],
           [1.0, -1.14488604, -0.25497151, -0.03317352, -0.00281871],
           [1.0, -1.14488604, -0.50994302, -0.13008992, -0.02189867],
           [1.0, -1.14488604, -0.76491453, -0.29074920, -0.07317558],
           [1.0, -1.14488604, -1.01988604, -0.51515135, -0.17258517]],
        B=[[43.96171205, -203.73777224, 341.62582482, -248.83459442, 69.31103311],
           [-57.45201209, 215.29165614, -271.46590848, 114.62626443, 0.0],
           [-33.44194715, 138.96219468, -181.59854791, 76.07830038, 0.0],
           [-97.27270647, 307.81811940, -323.81811940, 113.27270647, 0.0],
           [-64.0, 192.0, -192.0, 64.0, 0.0]],
        V=[[1.0, -1.32620332, -2.06355665, -0.84054293, -0.60062733],
           [0.0, 0.0, -3.05965812, -4.53326256, -2.79810815],
           [0.0, 0.0, 0.0, -2.03977208, -1.42783313],
           [0.0, 0.0, 0.0, 0.0, -1.01988604],
           [0.0, 0.0, 0.0, 0.0, 0.0]],
    )


_BUILTINS = {
    "GLMQS-1": _glmqs1,
    "GLMQS-2": _glmqs2,
    "GLMQS-3": _glmqs3,
    "GLMQS-4": _glmqs4,
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_tableau(name):
    """Return one of the four published methods ``GLMQS-1`` ... ``GLMQS-4``."""
    key = str(name).strip().upper()
    if key not in _BUILTINS:
        raise UnknownMethodError(f"unknown method {name!r}; known: {', '.join(BUILTIN_NAMES)}")
    return _BUILTINS[key]()


def order_tolerance(coeff_digits):
    """Order-condition residual tolerance for coefficients with ``coeff_digits`` digits."""
    return 10.0 ** -(coeff_digits - 2)


def iqs_tolerance(coeff_digits):
    return 10.0 ** -(coeff_digits - 4)


# Order conditions in matrix form

@dataclass(frozen=True, eq=False)
class OrderConditionSystem:
    """Matrices ``C_r``, ``K_r`` and ``E_r = exp(K_r)`` of the Nordsieck order conditions.

    A method has order and stage order ``p = r - 1`` iff
    ``C_r = A C_r K_r + U`` and ``E_r = B C_r K_r + V``.
    """

    Cr: np.ndarray
    Kr: np.ndarray
    Er: np.ndarray

    @property
    def W_degree(self):
        return self.Kr.shape[0]

    @classmethod
    def build(cls, c, r):
        c = np.asarray(c, dtype=float)
        Cr = np.empty((c.shape[0], r))
        for j in range(r):
            Cr[:, j] = c ** j / factorial(j)
        Kr = np.eye(r, k=1)
        Er = np.zeros((r, r))
        for i in range(r):
            for j in range(i, r):
                Er[i, j] = 1.0 / factorial(j - i)
        return cls(_frozen(Cr), _frozen(Kr), _frozen(Er))


@dataclass(frozen=True)
class OrderResidual:
    stage: float
    output: float

    @property
    def max(self):
        return max(self.stage, self.output)


def order_condition_residual(tab):
    """Max-abs residuals of ``C_r - (A C_r K_r + U)`` and ``E_r - (B C_r K_r + V)``."""
    if tab.A.shape[0] != tab.c.shape[0] or tab.V.shape[0] != tab.U.shape[1]:
        raise TableauError("dimension mismatch between c, A, U and V")
    ocs = OrderConditionSystem.build(tab.c, tab.r)
    CK = ocs.Cr @ ocs.Kr
    stage = np.abs(ocs.Cr - (tab.A @ CK + tab.U)).max()
    output = np.abs(ocs.Er - (tab.B @ CK + tab.V)).max()
    return OrderResidual(float(stage), float(output))


# Inherent quadratic stability

@dataclass(frozen=True, eq=False)
class IqsCertificate:
    """Matrix ``X`` and the residuals of ``BA == XB`` and ``BU == XV - VX`` on rows 3..r."""

    X: np.ndarray
    residual_BA: float
    residual_BU: float

    @property
    def residual(self):
        return max(self.residual_BA, self.residual_BU)


def iqs_matrix(r, last_column):
    """``X`` with unit subdiagonal on rows 3..r and the given last-column entries there.

    Rows 1 and 2 never enter the relations on rows 3..r, so they are left zero.
    """
    X = np.zeros((r, r), dtype=np.result_type(last_column, float))
    for i in range(2, r):
        X[i, i - 1] = 1.0
        X[i, r - 1] += last_column[i - 2]
    return X


def iqs_residuals(tab, X):
    """Row 3..r blocks of ``BA - XB`` and ``BU - (XV - VX)``."""
    B, A, U, V = tab.B, tab.A, tab.U, tab.V
    RA = (B @ A - X @ B)[2:]
    RU = (B @ U - (X @ V - V @ X))[2:]
    return RA, RU


def verify_iqs(tab):
    """Least-squares fit of the free last-column entries of ``X``.

    The relations are affine in those entries, so one linear least-squares
    solve gives the best certificate. For ``r = 2`` there are no constrained
    rows and both residuals are zero.
    """
    r = tab.r
    if r <= 2:
        return IqsCertificate(_frozen(np.zeros((r, r))), 0.0, 0.0)
    n = r - 2

    def stacked(x):
        RA, RU = iqs_residuals(tab, iqs_matrix(r, x))
        return np.concatenate([RA.ravel(), RU.ravel()])

    base = stacked(np.zeros(n))
    J = np.column_stack([stacked(np.eye(n)[k]) - base for k in range(n)])
    x = np.linalg.lstsq(J, -base, rcond=None)[0]
    X = iqs_matrix(r, x)
    RA, RU = iqs_residuals(tab, X)
    return IqsCertificate(_frozen(X), float(np.abs(RA).max()), float(np.abs(RU).max()))


# Error constant

@dataclass(frozen=True, eq=False)
class ErrorConstantReport:
    E: float
    signed: float
    beta: np.ndarray
    b_row: np.ndarray
    v_row: np.ndarray
    B_tilde: np.ndarray
    V_tilde: np.ndarray


def error_constant(tab):
    """Leading coefficient of the one-step error of the first output component.

    ``E = |1/(p+1)! - b.c^p/p! + v.beta|`` with
    ``(I - V~) beta = [1/p!, 1/(p-1)!, ..., 1] - B~ c^p / p!``.
    """
    p = tab.p
    cp = tab.c ** p / factorial(p)
    b_row, B_tilde = tab.B[0], tab.B[1:]
    v_row, V_tilde = tab.V[0, 1:], tab.V[1:, 1:]
    lhs = np.eye(p) - V_tilde
    if abs(np.linalg.det(lhs)) < 1e-14 or np.linalg.cond(lhs) > 1e14:
        raise DegenerateTableauError(f"{tab.name}: I - V~ is singular")
    target = np.array([1.0 / factorial(p - i) for i in range(p)])
    beta = np.linalg.solve(lhs, target - B_tilde @ cp)
    signed = 1.0 / factorial(p + 1) - b_row @ cp + v_row @ beta
    return ErrorConstantReport(
        E=float(abs(signed)), signed=float(signed), beta=_frozen(beta),
        b_row=_frozen(b_row), v_row=_frozen(v_row),
        B_tilde=_frozen(B_tilde), V_tilde=_frozen(V_tilde),
    )


# Printed reference values, kept next to the coefficients they belong to.
PRINTED_ERROR_CONSTANTS = {
    "GLMQS-1": 0.22741,
    "GLMQS-2": 0.0195824,
    "GLMQS-3": 7.729463e-10,
    "GLMQS-4": 2.25574e-8,
}
