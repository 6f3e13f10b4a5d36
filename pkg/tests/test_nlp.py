import numpy as np
import pytest

from core.errors import ConstructionError, ParameterError, WarmStartInvalidError
from core.nlp import NlpProblem, SolverOptions, SolveStatus, restore_feasibility, solve_nlp


def _quadratic(target, rows=None, lb=(), ub=(), w_lb=-np.inf, w_ub=np.inf):
    """min |w - target|^2 subject to the linear rows ``A w`` in [lb, ub]."""
    target = np.asarray(target, dtype=float)
    n = target.size
    A = np.zeros((0, n)) if rows is None else np.asarray(rows, dtype=float)
    return NlpProblem(
        n=n,
        objective=lambda w: float(np.sum((w - target) ** 2)),
        gradient=lambda w: 2.0 * (w - target),
        constraints=lambda w: A @ w,
        jacobian=lambda w: A,
        g_lb=np.asarray(lb, dtype=float),
        g_ub=np.asarray(ub, dtype=float),
        w_lb=w_lb,
        w_ub=w_ub,
    )


def _double_integrator(n_intervals):
    """min int u^2 over [0, 1] for x'' = u from rest at 0 to rest at 1.

    With piecewise-constant u the end state is linear in the controls.
    """
    h = 1.0 / n_intervals
    t = h * np.arange(n_intervals)
    A = np.vstack([h * (1.0 - t - 0.5 * h), np.full(n_intervals, h)])
    target = np.array([1.0, 0.0])
    return NlpProblem(
        n=n_intervals,
        objective=lambda u: float(h * np.dot(u, u)),
        gradient=lambda u: 2.0 * h * u,
        constraints=lambda u: A @ u,
        jacobian=lambda u: A,
        g_lb=target,
        g_ub=target,
        w_lb=-np.inf,
        w_ub=np.inf,
    )


def _unit_circle(target=(2.0, 2.0), lb=1.0, ub=1.0):
    """min |w - target|^2 subject to x^2 + y^2 in [lb, ub]."""
    target = np.asarray(target, dtype=float)
    return NlpProblem(
        n=2,
        objective=lambda w: float(np.sum((w - target) ** 2)),
        gradient=lambda w: 2.0 * (w - target),
        constraints=lambda w: np.array([w @ w]),
        jacobian=lambda w: 2.0 * w.reshape(1, 2),
        g_lb=[lb],
        g_ub=[ub],
        w_lb=-np.inf,
        w_ub=np.inf,
    )


@pytest.mark.parametrize("backend", ["auglag", "trust-constr"])
def test_equality_constrained_qp_kkt(backend):
    nlp = _quadratic([1.0, 2.0], rows=[[1.0, 1.0]], lb=[1.0], ub=[1.0])
    sol = solve_nlp(nlp, [0.0, 0.0], SolverOptions(tol_feas=1e-8, tol_opt=1e-8, backend=backend))
    assert sol.converged
    assert sol.w_opt == pytest.approx([0.0, 1.0], abs=1e-5)
    assert sol.objective == pytest.approx(2.0, abs=1e-5)
    assert sol.max_violation <= 1e-7
    if backend == "auglag":
        # grad f + lambda grad g = 0 at the optimum
        assert sol.multipliers == pytest.approx([2.0], abs=1e-3)


def test_inequality_multiplier_sign():
    upper = solve_nlp(_quadratic([2.0], rows=[[1.0]], lb=[-np.inf], ub=[1.0]), [0.0],
                      SolverOptions(tol_feas=1e-8, tol_opt=1e-8))
    assert upper.converged
    assert upper.w_opt == pytest.approx([1.0], abs=1e-5)
    assert upper.multipliers[0] == pytest.approx(2.0, abs=1e-3)

    lower = solve_nlp(_quadratic([-2.0], rows=[[1.0]], lb=[-1.0], ub=[np.inf]), [0.0],
                      SolverOptions(tol_feas=1e-8, tol_opt=1e-8))
    assert lower.w_opt == pytest.approx([-1.0], abs=1e-5)
    assert lower.multipliers[0] == pytest.approx(-2.0, abs=1e-3)

    inactive = solve_nlp(_quadratic([0.5], rows=[[1.0]], lb=[-np.inf], ub=[1.0]), [0.0])
    assert inactive.w_opt == pytest.approx([0.5], abs=1e-5)
    assert inactive.multipliers[0] == pytest.approx(0.0, abs=1e-6)


def test_variable_bounds_without_constraints():
    sol = solve_nlp(_quadratic([2.0, -3.0], w_lb=-1.0, w_ub=1.0), [0.0, 0.0])
    assert sol.converged
    assert sol.w_opt == pytest.approx([1.0, -1.0])
    assert sol.multipliers.size == 0


def test_double_integrator_minimum_energy():
    N = 50
    sol = solve_nlp(_double_integrator(N), np.zeros(N), SolverOptions(tol_feas=1e-9, tol_opt=1e-8))
    assert sol.converged
    assert sol.objective == pytest.approx(12.0, rel=1e-2)
    t_mid = (np.arange(N) + 0.5) / N
    assert sol.w_opt == pytest.approx(6.0 - 12.0 * t_mid, abs=0.05)


def test_scaling_does_not_change_the_optimum():
    base = _quadratic([1.0, 2.0], rows=[[1.0, 1.0]], lb=[1.0], ub=[1.0])
    scaled = NlpProblem(base.n, base.objective, base.gradient, base.constraints, base.jacobian,
                        base.g_lb, base.g_ub, base.w_lb, base.w_ub,
                        w_scale=[100.0, 0.01], g_scale=[10.0], f_scale=3.0)
    a = solve_nlp(base, [0.0, 0.0], SolverOptions(tol_feas=1e-9, tol_opt=1e-9))
    b = solve_nlp(scaled, [0.0, 0.0], SolverOptions(tol_feas=1e-9, tol_opt=1e-9))
    assert b.w_opt == pytest.approx(a.w_opt, abs=1e-4)


def test_status_when_limits_hit():
    nlp = _double_integrator(20)
    short = solve_nlp(nlp, np.zeros(20), SolverOptions(max_outer=1, max_inner=1, tol_feas=1e-12, tol_opt=1e-12))
    assert short.status == SolveStatus.MAX_ITERATIONS
    assert not short.converged
    rushed = solve_nlp(nlp, np.zeros(20), SolverOptions(time_budget=1e-9))
    assert rushed.status == SolveStatus.TIME_BUDGET
    assert rushed.w_opt.shape == (20,)


def test_infeasible_problem_stalls():
    nlp = _quadratic([0.0], rows=[[1.0], [1.0]], lb=[1.0, 2.0], ub=[1.0, 2.0])
    sol = solve_nlp(nlp, [0.0], SolverOptions(penalty_max=1e4, max_outer=50))
    assert sol.status == SolveStatus.STALLED
    assert sol.max_violation >= 0.4


def test_restore_feasibility_projects_onto_circle():
    # minimum-norm steps on x^2 + y^2 = 1 stay on the ray through the start
    w, violation = restore_feasibility(_unit_circle(), [1.2, 0.3])
    assert violation <= 1e-9
    assert w == pytest.approx(np.array([1.2, 0.3]) / np.hypot(1.2, 0.3), abs=1e-9)

    inside = _unit_circle(lb=-np.inf, ub=4.0)
    w, violation = restore_feasibility(inside, [0.5, 0.5])
    assert violation == 0.0
    assert w.tolist() == [0.5, 0.5]


def test_curved_equality_reaches_tight_feasibility():
    sol = solve_nlp(_unit_circle(), [1.0, 0.0], SolverOptions(tol_feas=1e-12, tol_opt=1e-6))
    assert sol.converged
    assert sol.max_violation <= 1e-12
    assert sol.w_opt == pytest.approx([np.sqrt(0.5), np.sqrt(0.5)], abs=1e-5)
    assert sol.multipliers[0] == pytest.approx(2.0 * np.sqrt(2.0) - 1.0, abs=1e-3)

    without = solve_nlp(_unit_circle(), [1.0, 0.0], SolverOptions(restore_iter=0))
    assert without.w_opt == pytest.approx(sol.w_opt, abs=1e-3)


def test_invalid_initial_guess():
    nlp = _quadratic([1.0, 2.0])
    with pytest.raises(WarmStartInvalidError):
        solve_nlp(nlp, [np.nan, 0.0])
    with pytest.raises(ConstructionError):
        solve_nlp(nlp, [0.0, 0.0, 0.0])
    log_nlp = NlpProblem(1, lambda w: float(np.log(w[0])), lambda w: 1.0 / w, lambda w: np.zeros(0),
                         lambda w: np.zeros((0, 1)), [], [], -np.inf, np.inf)
    with pytest.raises(WarmStartInvalidError):
        solve_nlp(log_nlp, [-1.0])


def test_problem_and_option_checks():
    with pytest.raises(ConstructionError):
        _quadratic([1.0], rows=[[1.0]], lb=[2.0], ub=[1.0])
    with pytest.raises(ConstructionError):
        _quadratic([1.0], w_lb=1.0, w_ub=0.0)
    with pytest.raises(ParameterError):
        SolverOptions(backend="ipopt")
    with pytest.raises(ParameterError):
        SolverOptions(tol_feas=0.0)
    with pytest.raises(ParameterError):
        SolverOptions(restore_below=-1.0)
    with pytest.raises(ParameterError):
        SolverOptions(restore_iter=-1)


if __name__ == "__main__":
    pytest.main([__file__])
