"""Convergence studies: references, error norms, observed orders and CSV output."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import math
import os
from pathlib import Path

import numpy as np
import yaml

from .integrator import integrate
from .problems import make_problem, synthetic_system
from .solver import NewtonConfig, StageFailure
from .linear import FactorizationError
from .tableau import builtin_tableau

NORMS = ("absolute-l2", "relative-l2", "component-1")
THREADS_ENV = "GLMQS_THREADS"


class OrderEstimateError(ValueError):
    """Observed order undefined for non-positive errors or step counts."""


class ReferenceFailure(RuntimeError):
    """Self-refined reference did not settle before the step cap."""

    def __init__(self, gap, N):
        self.gap, self.N = gap, N
        super().__init__(f"reference not settled at N = {N}: relative gap {gap:.3e}")


def estimate_order(e1, e2, N1, N2):
    """Observed order ``log(e1 / e2) / log(N2 / N1)``."""
    if not (e1 > 0 and e2 > 0):
        raise OrderEstimateError(f"errors must be positive, got {e1!r} and {e2!r}")
    if not (N1 > 0 and N2 > N1):
        raise OrderEstimateError(f"need 0 < N1 < N2, got {N1!r} and {N2!r}")
    return math.log(e1 / e2) / math.log(N2 / N1)


def error_norm(y, y_ref, norm="absolute-l2"):
    diff = np.asarray(y) - np.asarray(y_ref)
    if norm == "absolute-l2":
        return float(np.linalg.norm(diff))
    if norm == "relative-l2":
        return float(np.linalg.norm(diff) / np.linalg.norm(y_ref))
    if norm == "component-1":
        return float(abs(diff[0]))
    raise ValueError(f"unknown norm {norm!r}; choose from {NORMS}")


@dataclass
class Reference:
    y: np.ndarray
    gap: float
    N: int = 0
    exact: bool = False


def reference_solution(sys, t0=None, T=None, rtol=1e-11, N0=64, cap=2 ** 20, method="GLMQS-4", cfg=None):
    """Endpoint reference for ``sys`` on ``[t0, T]``.

    Problems with an exact solution return it directly. Otherwise ``method``
    is run at ``N0, 2 N0, ...`` until two successive endpoints agree to
    ``rtol`` relative.

    Returns
    -------
    Reference
        The finer endpoint, the final relative gap and its step count.

    Raises
    ------
    ReferenceFailure
        ``cap`` exceeded before agreement.
    """
    t0 = sys.t0 if t0 is None else t0
    T = sys.t_end if T is None else T
    if sys.exact_solution is not None:
        return Reference(np.asarray(sys.exact_solution(T)), 0.0, 0, exact=True)
    tab = builtin_tableau(method)
    N = max(N0, tab.p + 1)
    prev = integrate(tab, sys, t0, T, N, cfg).y_end
    gap = math.inf
    while 2 * N <= cap:
        N *= 2
        cur = integrate(tab, sys, t0, T, N, cfg).y_end
        gap = float(np.linalg.norm(cur - prev) / max(np.linalg.norm(cur), np.finfo(float).tiny))
        if gap <= rtol:
            return Reference(cur, gap, N)
        prev = cur
    raise ReferenceFailure(gap, N)


@dataclass
class StudySpec:
    """One convergence study.

    Parameters
    ----------
    methods : list of str
    problem : str
        Benchmark name, or ``synthetic:<kind>`` with ``problem_params`` passed
        to :func:`glmqs.problems.synthetic_system`.
    problem_params : dict
    N_list : list of int
        Strictly increasing step counts.
    norm : str
        One of ``absolute-l2``, ``relative-l2``, ``component-1``.
    reference : str
        ``self-refined`` or a path to a file with one value per line.
    t0, T : float, optional
        Override the problem interval.
    output_dir : str
    newton : dict
        ``NewtonConfig`` fields.
    reference_rtol : float
    """

    methods: list
    problem: str
    N_list: list
    problem_params: dict = field(default_factory=dict)
    norm: str = "absolute-l2"
    reference: str = "self-refined"
    t0: float = None
    T: float = None
    output_dir: str = "study_out"
    newton: dict = field(default_factory=dict)
    reference_rtol: float = 1e-11

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must not be empty")
        Ns = list(self.N_list)
        if not Ns or any(int(n) != n or n < 1 for n in Ns):
            raise ValueError("N_list must hold positive integers")
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValueError("N_list must be strictly increasing")
        self.N_list = [int(n) for n in Ns]
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown study key(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping of study keys")
        return cls.from_mapping(data)

    def build_system(self):
        if self.problem.startswith("synthetic:"):
            return synthetic_system(self.problem.split(":", 1)[1], **self.problem_params)
        return make_problem(self.problem, **self.problem_params)


@dataclass
class ConvergenceRow:
    method: str
    N: int
    h: float
    error: float
    observed_p: float = None
    failure: str = None


def _run_one(args):
    method, sys_spec, t0, T, N, newton = args
    sys = StudySpec.from_mapping(sys_spec).build_system()
    try:
        res = integrate(builtin_tableau(method), sys, t0, T, N, NewtonConfig(**newton))
        return res.y_end, None
    except (StageFailure, FactorizationError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _load_reference(path):
    return np.loadtxt(path, ndmin=1)


def _threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_study(spec, write=True):
    """Run every (method, N) pair against a single shared reference.

    Returns
    -------
    rows : list of ConvergenceRow
    reference : Reference
    """
    sys = spec.build_system()
    t0 = sys.t0 if spec.t0 is None else spec.t0
    T = sys.t_end if spec.T is None else spec.T
    newton = NewtonConfig(**spec.newton)
    if spec.reference == "self-refined":
        ref = reference_solution(sys, t0, T, rtol=spec.reference_rtol, cfg=newton)
    else:
        ref = Reference(_load_reference(spec.reference), float("nan"))

    jobs = [(m, asdict(spec), t0, T, N, spec.newton) for m in spec.methods for N in spec.N_list]
    workers = _threads()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]

    rows = []
    for (method, _, _, _, N, _), (y_end, failure) in zip(jobs, outcomes):
        h = (T - t0) / N
        err = error_norm(y_end, ref.y, spec.norm) if y_end is not None else float("nan")
        row = ConvergenceRow(method, N, h, err, failure=failure)
        prev = rows[-1] if rows and rows[-1].method == method else None
        if prev is not None and prev.error > 0 and err > 0:
            row.observed_p = estimate_order(prev.error, err, prev.N, N)
        rows.append(row)
    if write:
        write_outputs(spec, rows, ref, sys, t0, T)
    return rows, ref


def _fmt(x):
    if x is None:
        return ""
    return "%.17g" % x


def _header(spec, sys, t0, T, ref):
    resolved = asdict(spec)
    resolved.update({"t0": t0, "T": T, "problem_params": {**sys.params, **spec.problem_params}})
    lines = yaml.safe_dump(resolved, sort_keys=True, default_flow_style=True, width=10 ** 6).strip()
    gap = "exact" if ref.exact else _fmt(ref.gap)
    return f"# config: {lines}\n# reference: N={ref.N} gap={gap}\n"


def write_outputs(spec, rows, ref, sys, t0, T):
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(spec, sys, t0, T, ref)
    with open(out / "convergence.csv", "w") as fh:
        fh.write(header)
        fh.write("method,N,h,error,observed_p\n")
        for r in rows:
            fh.write(f"{r.method},{r.N},{_fmt(r.h)},{_fmt(r.error)},{_fmt(r.observed_p)}\n")
    with open(out / "loglog.csv", "w") as fh:
        fh.write(header)
        fh.write("method,log10_h,log10_error\n")
        for r in rows:
            if r.error > 0:
                fh.write(f"{r.method},{_fmt(math.log10(r.h))},{_fmt(math.log10(r.error))}\n")
    with open(out / "report.txt", "w") as fh:
        fh.write(header)
        for method in spec.methods:
            mine = [r for r in rows if r.method == method]
            nominal = builtin_tableau(method).p
            last = next((r for r in reversed(mine) if r.observed_p is not None), None)
            fh.write(f"{method}.nominal_p = {nominal}\n")
            fh.write(f"{method}.finest_N = {mine[-1].N}\n")
            fh.write(f"{method}.finest_error = {_fmt(mine[-1].error)}\n")
            fh.write(f"{method}.observed_p = {_fmt(last.observed_p) if last else ''}\n")
            for r in mine:
                if r.failure:
                    fh.write(f"{method}.failure.N{r.N} = {r.failure}\n")
