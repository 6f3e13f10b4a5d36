"""Nonlinear program container and solvers.

``solve_nlp`` works on scaled variables ``z = w / w_scale`` and scaled
constraints ``g / g_scale``. The default backend is a PHR augmented
Lagrangian whose bound-constrained subproblems are solved by SciPy's
L-BFGS-B. Once the iterate is nearly feasible a sparse Gauss-Newton
projection onto the active constraints finishes feasibility, and the
optimality test uses least-squares multipliers at the projected point.
``backend="trust-constr"`` hands the same scaled problem to SciPy's
interior-point method instead.
"""
import logging
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import linalg as splinalg

from core.errors import ConstructionError, ParameterError, WarmStartInvalidError

logger = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    TIME_BUDGET = "time-budget"
    STALLED = "stalled"


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """min phi(w) s.t. g_lb <= g(w) <= g_ub, w_lb <= w <= w_ub.

    ``jacobian`` may return a dense array or a SciPy sparse matrix.
    """
    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], object]
    g_lb: np.ndarray
    g_ub: np.ndarray
    w_lb: np.ndarray
    w_ub: np.ndarray
    w_scale: Optional[np.ndarray] = None
    g_scale: Optional[np.ndarray] = None
    f_scale: float = 1.0
    labels: Dict[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ConstructionError(f"Problem dimension must be >= 1, got {n}")
        g_lb = np.asarray(self.g_lb, dtype=float).reshape(-1)
        g_ub = np.asarray(self.g_ub, dtype=float).reshape(-1)
        if g_lb.shape != g_ub.shape:
            raise ConstructionError(f"g_lb has {g_lb.size} rows but g_ub has {g_ub.size}")
        if np.any(g_lb > g_ub):
            raise ConstructionError("g_lb must not exceed g_ub")
        w_lb = np.broadcast_to(np.asarray(self.w_lb, dtype=float), (n,)).copy()
        w_ub = np.broadcast_to(np.asarray(self.w_ub, dtype=float), (n,)).copy()
        if np.any(w_lb > w_ub):
            raise ConstructionError("w_lb must not exceed w_ub")
        w_scale = np.ones(n) if self.w_scale is None else np.asarray(self.w_scale, dtype=float).reshape(-1)
        g_scale = np.ones(g_lb.size) if self.g_scale is None else np.asarray(self.g_scale, dtype=float).reshape(-1)
        if w_scale.shape != (n,) or g_scale.shape != g_lb.shape:
            raise ConstructionError("Scale vectors must match the variable and constraint counts")
        if np.any(w_scale <= 0) or np.any(g_scale <= 0) or not self.f_scale > 0:
            raise ConstructionError("Scale factors must be positive")
        object.__setattr__(self, "n", n)
        for key, val in (("g_lb", g_lb), ("g_ub", g_ub), ("w_lb", w_lb), ("w_ub", w_ub),
                         ("w_scale", w_scale), ("g_scale", g_scale)):
            object.__setattr__(self, key, val)

    @property
    def m(self) -> int:
        return self.g_lb.size

    def max_violation(self, w: np.ndarray) -> float:
        """Largest scaled residual over constraint rows and variable bounds."""
        w = np.asarray(w, dtype=float)
        worst = 0.0
        if self.m:
            g = np.asarray(self.constraints(w), dtype=float)
            worst = float(np.max(np.maximum(np.maximum(g - self.g_ub, self.g_lb - g), 0.0) / self.g_scale))
        bound = np.maximum(np.maximum(w - self.w_ub, self.w_lb - w), 0.0) / self.w_scale
        return max(worst, float(bound.max()))


@dataclass(frozen=True)
class SolverOptions:
    tol_feas: float = 1e-6
    tol_opt: float = 1e-5
    max_outer: int = 30
    max_inner: int = 3000
    time_budget: float = 120.0
    backend: str = "auglag"
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e12
    scale_objective: bool = True
    restore_below: float = 1e-3
    restore_iter: int = 10

    def __post_init__(self):
        for name in ("tol_feas", "tol_opt", "time_budget", "penalty_init"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ParameterError("max_outer and max_inner must be >= 1")
        if self.restore_below < 0 or self.restore_iter < 0:
            raise ParameterError("restore_below and restore_iter must be >= 0")
        if self.backend not in ("auglag", "trust-constr"):
            raise ParameterError(f"Unknown solver backend '{self.backend}'")


@dataclass(frozen=True, eq=False)
class NlpSolution:
    w_opt: np.ndarray
    objective: float
    iterations: int
    outer_iterations: int
    status: SolveStatus
    max_violation: float
    multipliers: np.ndarray
    wall_time: float
    backend: str = "auglag"

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


class _TimeUp(Exception):
    pass


class _Scaled:
    """The problem in scaled variables with one cached g/J evaluation."""

    def __init__(self, nlp: NlpProblem, f_scale: float):
        self.nlp = nlp
        self.ws = nlp.w_scale
        self.gs = nlp.g_scale
        self.fs = f_scale
        self.lb = nlp.g_lb / self.gs
        self.ub = nlp.g_ub / self.gs
        self._key = None
        self._gJ = None

    def f(self, z):
        return self.fs * float(self.nlp.objective(z * self.ws))

    def grad(self, z):
        return self.fs * np.asarray(self.nlp.gradient(z * self.ws), dtype=float) * self.ws

    def g(self, z):
        return np.asarray(self.nlp.constraints(z * self.ws), dtype=float) / self.gs

    def jac(self, z):
        J = self.nlp.jacobian(z * self.ws)
        if sparse.issparse(J):
            return sparse.diags(1.0 / self.gs) @ J.tocsr() @ sparse.diags(self.ws)
        return (np.asarray(J, dtype=float) / self.gs[:, None]) * self.ws[None, :]

    def g_and_jac(self, z):
        key = z.tobytes()
        if key != self._key:
            self._key = key
            self._gJ = (self.g(z), self.jac(z))
        return self._gJ


def _phr_terms(c, lam, mu, lb, ub, eq):
    """Row-wise d(augmented Lagrangian)/dc and the penalty value (PHR form).

    An inequality row carries one signed multiplier: positive when its upper
    bound is active, negative for the lower bound.
    """
    y = np.zeros_like(c)
    value = 0.0
    if c.size == 0:
        return y, value
    h = c[eq] - lb[eq]
    y[eq] = lam[eq] + mu * h
    value += float(np.dot(lam[eq], h) + 0.5 * mu * np.dot(h, h))
    ineq = ~eq
    ci, li, lbi, ubi = c[ineq], lam[ineq], lb[ineq], ub[ineq]
    lam_up, lam_lo = np.maximum(li, 0.0), np.minimum(li, 0.0)
    with np.errstate(invalid="ignore"):
        y_up = np.where(np.isfinite(ubi), np.maximum(0.0, lam_up + mu * (ci - ubi)), 0.0)
        y_lo = np.where(np.isfinite(lbi), np.minimum(0.0, lam_lo - mu * (lbi - ci)), 0.0)
    y[ineq] = y_up + y_lo
    value += float(0.5 / mu * np.sum(y_up ** 2 - lam_up ** 2 + y_lo ** 2 - lam_lo ** 2))
    return y, value


def _violation(c, lb, ub):
    if c.size == 0:
        return 0.0
    return float(np.max(np.maximum(np.maximum(c - ub, lb - c), 0.0)))


def _projected_gradient(z, grad, zl, zu):
    return float(np.max(np.abs(z - np.clip(z - grad, zl, zu)))) if z.size else 0.0


@dataclass(frozen=True, eq=False)
class _Restored:
    z: np.ndarray
    violation: float
    multipliers: np.ndarray
    projected_gradient: float


def _active_rows(c, lb, ub, eq, band):
    """Equality rows plus inequality rows within ``band`` of (or past) a bound."""
    target = np.where(eq, lb, 0.0)
    with np.errstate(invalid="ignore"):
        up = ~eq & np.isfinite(ub) & (c >= ub - band)
        lo = ~eq & np.isfinite(lb) & (c <= lb + band) & ~up
    target[up] = ub[up]
    target[lo] = lb[lo]
    return np.flatnonzero(eq | up | lo), target, up, lo


def _min_norm_solve(JA, r) -> Optional[np.ndarray]:
    """y with (JA JA^T) y = r; None when the system is numerically singular."""
    K = (JA @ JA.T).tocsc()
    diag = K.diagonal()
    reg = 1e-12 * max(float(diag.max()) if diag.size else 1.0, 1.0)
    K = K + reg * sparse.identity(K.shape[0], format="csc")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", splinalg.MatrixRankWarning)
        y = np.atleast_1d(np.asarray(splinalg.spsolve(K, r), dtype=float))
    return y if np.isfinite(y).all() else None


def _free(z, zl, zu) -> np.ndarray:
    return np.flatnonzero((z > zl) & (z < zu))


def _least_squares_multipliers(prob: _Scaled, z, zl, zu, lb, ub, eq, band):
    """Multipliers minimising |grad f + J^T lam| over the free variables.

    Inequality multipliers with the wrong sign are clipped to zero, so a
    wrongly active row shows up in the projected gradient.
    """
    c, J = prob.g_and_jac(z)
    grad = prob.grad(z)
    rows, _, up, lo = _active_rows(c, lb, ub, eq, band)
    lam = np.zeros(c.size)
    free = _free(z, zl, zu)
    if rows.size and free.size:
        JA = sparse.csr_matrix(J)[rows][:, free]
        y = _min_norm_solve(JA, JA @ grad[free])
        if y is not None:
            lam[rows] = -y
    lam[up] = np.maximum(lam[up], 0.0)
    lam[lo] = np.minimum(lam[lo], 0.0)
    pg = _projected_gradient(z, grad + np.asarray(J.T @ lam, dtype=float).reshape(-1), zl, zu)
    return lam, pg


def _restore(prob: _Scaled, z, zl, zu, lb, ub, eq, tol: float, max_iter: int) -> Optional[_Restored]:
    """Gauss-Newton projection onto the active constraints.

    Only variables strictly inside their bounds move, along the minimum-norm
    correction ``-J^T (J J^T)^-1 r``. Returns None when no step lowers the
    violation.
    """
    c, _ = prob.g_and_jac(z)
    start = _violation(c, lb, ub)
    band = max(10.0 * start, 10.0 * tol)
    zk, viol = z.copy(), start
    for _ in range(max_iter):
        if viol <= 0.1 * tol:
            break
        c, J = prob.g_and_jac(zk)
        rows, target, _, _ = _active_rows(c, lb, ub, eq, band)
        free = _free(zk, zl, zu)
        if rows.size == 0 or free.size == 0:
            break
        JA = sparse.csr_matrix(J)[rows][:, free]
        y = _min_norm_solve(JA, c[rows] - target[rows])
        if y is None:
            break
        trial = zk.copy()
        trial[free] -= np.asarray(JA.T @ y, dtype=float).reshape(-1)
        trial = np.clip(trial, zl, zu)
        v_trial = _violation(prob.g_and_jac(trial)[0], lb, ub)
        if not np.isfinite(v_trial) or v_trial >= viol:
            break
        zk, viol = trial, v_trial
    if viol >= start:
        return None
    lam, pg = _least_squares_multipliers(prob, zk, zl, zu, lb, ub, eq, band)
    return _Restored(zk, viol, lam, pg)


def restore_feasibility(nlp: NlpProblem, w, tol_feas: float = 1e-9, max_iter: int = 10) -> Tuple[np.ndarray, float]:
    """Project ``w`` onto the constraints by Gauss-Newton steps.

    Returns the projected point and its scaled violation; ``w`` comes back
    unchanged when no step helps.
    """
    prob = _Scaled(nlp, nlp.f_scale)
    zl, zu = nlp.w_lb / prob.ws, nlp.w_ub / prob.ws
    z = np.clip(np.asarray(w, dtype=float).reshape(-1) / prob.ws, zl, zu)
    lb, ub = prob.lb, prob.ub
    if nlp.m == 0:
        return z * prob.ws, nlp.max_violation(z * prob.ws)
    restored = _restore(prob, z, zl, zu, lb, ub, lb == ub, tol_feas, max_iter)
    if restored is not None:
        z = restored.z
    return z * prob.ws, nlp.max_violation(z * prob.ws)


def solve_nlp(nlp: NlpProblem, w0, opts: Optional[SolverOptions] = None) -> NlpSolution:
    opts = opts or SolverOptions()
    w0 = np.asarray(w0, dtype=float).reshape(-1)
    if w0.size != nlp.n:
        raise ConstructionError(f"Initial guess has {w0.size} entries, the problem has {nlp.n}")
    if not np.isfinite(w0).all():
        raise WarmStartInvalidError("Initial guess contains non-finite entries")
    f0 = float(nlp.objective(w0))
    g0 = np.asarray(nlp.constraints(w0), dtype=float)
    if not np.isfinite(f0) or not np.isfinite(g0).all():
        raise WarmStartInvalidError("Objective or constraints are not finite at the initial guess")
    f_scale = nlp.f_scale
    if opts.scale_objective:
        f_scale = nlp.f_scale / max(abs(f0) * nlp.f_scale, 1.0)
    prob = _Scaled(nlp, f_scale)
    if opts.backend == "trust-constr":
        return _solve_trust_constr(prob, w0, opts)
    return _solve_auglag(prob, w0, opts)


def _solve_auglag(prob: _Scaled, w0: np.ndarray, opts: SolverOptions) -> NlpSolution:
    nlp = prob.nlp
    t0 = time.perf_counter()
    deadline = t0 + opts.time_budget
    zl, zu = nlp.w_lb / prob.ws, nlp.w_ub / prob.ws
    z = np.clip(w0 / prob.ws, zl, zu)
    lb, ub = prob.lb, prob.ub
    eq = lb == ub
    lam = np.zeros(nlp.m)
    mu = opts.penalty_init
    omega = 1e-2
    bounds = optimize.Bounds(zl, zu)
    iterations = 0
    outer = 0
    status = SolveStatus.MAX_ITERATIONS
    prev_viol = np.inf

    def lagrangian(zz):
        if time.perf_counter() > deadline:
            raise _TimeUp
        c, J = prob.g_and_jac(zz)
        y, penalty = _phr_terms(c, lam, mu, lb, ub, eq)
        val = prob.f(zz) + penalty
        grad = prob.grad(zz) + (J.T @ y if c.size else 0.0)
        return val, np.asarray(grad, dtype=float).reshape(-1)

    for outer in range(1, opts.max_outer + 1):
        best = {"z": z.copy()}

        def track(zk, *_):
            best["z"] = np.array(zk, copy=True)
            if time.perf_counter() > deadline:
                raise StopIteration

        try:
            res = optimize.minimize(lagrangian, z, jac=True, method="L-BFGS-B", bounds=bounds,
                                    callback=track,
                                    options={"maxiter": opts.max_inner, "gtol": omega,
                                             "ftol": 1e-15, "maxcor": 20})
            z = np.clip(res.x, zl, zu)
            iterations += int(res.nit)
        except _TimeUp:
            z = best["z"]
            status = SolveStatus.TIME_BUDGET
            break

        c, J = prob.g_and_jac(z)
        # first-order multiplier update
        lam, _ = _phr_terms(c, lam, mu, lb, ub, eq)
        viol = _violation(c, lb, ub)
        pg = _projected_gradient(z, prob.grad(z) + (J.T @ lam if c.size else 0.0), zl, zu)
        logger.debug("AL outer %d: violation %.3e, projected gradient %.3e, penalty %.1e, inner %d",
                     outer, viol, pg, mu, res.nit)
        if viol <= opts.tol_feas and pg <= opts.tol_opt:
            status = SolveStatus.CONVERGED
            break
        if nlp.m and opts.restore_iter and viol <= opts.restore_below:
            restored = _restore(prob, z, zl, zu, lb, ub, eq, opts.tol_feas, opts.restore_iter)
            if restored is not None:
                logger.debug("AL outer %d: restored violation %.3e, projected gradient %.3e",
                             outer, restored.violation, restored.projected_gradient)
                z = restored.z
                if restored.violation <= opts.tol_feas and restored.projected_gradient <= opts.tol_opt:
                    lam = restored.multipliers
                    status = SolveStatus.CONVERGED
                    break
        if time.perf_counter() > deadline:
            status = SolveStatus.TIME_BUDGET
            break
        if viol > 0.25 * prev_viol:
            if mu >= opts.penalty_max:
                status = SolveStatus.STALLED
                break
            mu = min(mu * opts.penalty_growth, opts.penalty_max)
        else:
            # tighten the subproblem only while feasibility keeps improving
            omega = max(0.1 * omega, 0.1 * opts.tol_opt)
        prev_viol = viol

    w = z * prob.ws
    sol = NlpSolution(
        w_opt=w,
        objective=float(nlp.objective(w)),
        iterations=iterations,
        outer_iterations=outer,
        status=status,
        max_violation=nlp.max_violation(w),
        multipliers=lam / (prob.gs * prob.fs),
        wall_time=time.perf_counter() - t0,
        backend="auglag",
    )
    _log_solution(sol)
    return sol


def _solve_trust_constr(prob: _Scaled, w0: np.ndarray, opts: SolverOptions) -> NlpSolution:
    nlp = prob.nlp
    t0 = time.perf_counter()
    deadline = t0 + opts.time_budget
    zl, zu = nlp.w_lb / prob.ws, nlp.w_ub / prob.ws
    z0 = np.clip(w0 / prob.ws, zl, zu)
    constraints = []
    if nlp.m:
        constraints.append(optimize.NonlinearConstraint(
            lambda zz: prob.g_and_jac(zz)[0], prob.lb, prob.ub,
            jac=lambda zz: prob.g_and_jac(zz)[1], hess=optimize.BFGS()))
    timed_out = {"flag": False}

    def stop(*_):
        if time.perf_counter() > deadline:
            timed_out["flag"] = True
            return True
        return False

    res = optimize.minimize(prob.f, z0, jac=prob.grad, hess=optimize.BFGS(), method="trust-constr",
                            bounds=optimize.Bounds(zl, zu), constraints=constraints, callback=stop,
                            options={"maxiter": opts.max_inner, "gtol": opts.tol_opt,
                                     "xtol": 1e-12, "verbose": 0})
    w = np.clip(res.x, zl, zu) * prob.ws
    viol = nlp.max_violation(w)
    if timed_out["flag"]:
        status = SolveStatus.TIME_BUDGET
    elif res.status in (1, 2) and viol <= opts.tol_feas:
        status = SolveStatus.CONVERGED
    elif res.status == 0:
        status = SolveStatus.MAX_ITERATIONS
    else:
        status = SolveStatus.STALLED
    lam = np.asarray(res.v[0], dtype=float) if nlp.m and getattr(res, "v", None) else np.zeros(nlp.m)
    sol = NlpSolution(w, float(nlp.objective(w)), int(res.nit), 1, status, viol, lam,
                      time.perf_counter() - t0, "trust-constr")
    _log_solution(sol)
    return sol


def _log_solution(sol: NlpSolution):
    level = logging.INFO if sol.converged else logging.WARNING
    logger.log(level, "NLP (%s) %s after %d iterations: objective %.6g, violation %.2e, %.2f s",
               sol.backend, sol.status.value, sol.iterations, sol.objective, sol.max_violation, sol.wall_time)
