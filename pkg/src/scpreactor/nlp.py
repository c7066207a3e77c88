"""Equality-constrained minimization over simple bounds.

Augmented-Lagrangian outer loop around a projected limited-memory
quasi-Newton (L-BFGS) inner minimizer with Armijo backtracking. The
constraint Jacobian enters only through transpose products, so callers
with structured Jacobians never materialize them.

The inner loop never accepts a step that increases the merit function
for the current multiplier/penalty pair, every iterate satisfies the
bounds exactly by projection, and the algorithm is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_PENALTY_CAP = 1e10
_SY_FLOOR = 1e-12


@dataclass
class NlpProblem:
    """Smooth objective, equality constraints, and box bounds.

    objective(z) returns (value, gradient); constraints(z) returns the
    m-vector of equality residuals; constraint_jtvec(z, v) returns
    J(z)^T v. Evaluators must be deterministic.
    """

    dim: int
    n_constraints: int
    objective: Callable[[np.ndarray], tuple]
    constraints: Callable[[np.ndarray], np.ndarray]
    constraint_jtvec: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower: np.ndarray = None
    upper: np.ndarray = None
    #: Optional exact column norms sum_r J_ri(z)^2; enables Gauss-Newton
    #: diagonal preconditioning of the inner iteration.
    constraint_diag_sq: Callable[[np.ndarray], np.ndarray] | None = None
    #: Optional factory (z, rho) -> (v -> H0 v) applying the inverse of a
    #: Gauss-Newton model of the merit curvature; overrides the diagonal
    #: preconditioner when present.
    penalty_metric: Callable[[np.ndarray, float], Callable] | None = None

    def __post_init__(self):
        if self.lower is None:
            self.lower = np.full(self.dim, -np.inf)
        if self.upper is None:
            self.upper = np.full(self.dim, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ValueError("bound vectors must match the problem dimension")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds must not exceed upper bounds")
        if self.n_constraints < 0 or self.n_constraints > self.dim:
            raise ValueError("need 0 <= m <= n")


@dataclass
class SolverSettings:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-5
    penalty_init: float = 10.0
    max_outer: int = 30
    max_inner: int = 200
    memory: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    #: Inner rounds whose constraint violation overshoots this cap are
    #: rolled back and retried with a 10x sharper penalty: far outside
    #: the feasible tube the Gauss-Newton restoration model degrades and
    #: the iteration can strand at an infeasible stationary point.
    feasibility_guard: float = 1e-3
    #: Infinity-norm cap on each inner trial step. The constraint
    #: Jacobian varies exponentially in the species exponents, so the
    #: quadratic model is trusted only in a small box around the iterate.
    max_step: float = 0.1
    #: Optional per-variable scale (typical magnitudes) seeding the
    #: quasi-Newton metric; ones when omitted.
    variable_scale: np.ndarray | None = None


@dataclass
class SolverReport:
    termination: str
    outer_iterations: int
    inner_iterations: int
    objective: float
    constraint_norm: float
    stationarity: float
    wall_time: float
    penalty: float
    multipliers: np.ndarray = field(repr=False, default=None)

    def summary(self) -> str:
        return (
            f"termination={self.termination} outer={self.outer_iterations} "
            f"inner={self.inner_iterations} objective={self.objective:.8e} "
            f"|c|_inf={self.constraint_norm:.3e} "
            f"stationarity={self.stationarity:.3e} "
            f"wall_time={self.wall_time:.2f}s penalty={self.penalty:.1e}")


def _project(z, lower, upper):
    return np.minimum(np.maximum(z, lower), upper)


class _EvaluationError(RuntimeError):
    def __init__(self, point):
        super().__init__("evaluator returned a non-finite value")
        self.point = point


def _check_finite(value, z):
    if not np.all(np.isfinite(value)):
        raise _EvaluationError(z)
    return value


def _two_loop(grad, pairs, h0_apply, gamma):
    """L-BFGS two-loop recursion; returns the quasi-Newton direction H g."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * h0_apply(q)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return r


def _inner_minimize(merit, z, lower, upper, gtol, settings, h0_apply):
    """Projected L-BFGS descent on the current augmented Lagrangian.

    merit(z, need_grad) returns (value, grad or None); h0_apply seeds
    the quasi-Newton metric. Exits when the metric-weighted step drops
    below gtol (stationarity in variable units) or when the merit stops
    improving materially. Returns the final iterate and the number of
    accepted iterations.
    """
    value, grad = merit(z, True)
    pairs = []
    gamma = 1.0
    accepted = 0
    window_value = value
    window_next = 8
    eps_low = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(lower), lower, 0.0)))
    eps_up = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(upper), upper, 0.0)))
    for iteration in range(settings.max_inner):
        # Two-metric projection: the quasi-Newton metric acts on the free
        # variables only; variables pressed against a bound stay pinned,
        # otherwise the projected step can turn uphill.
        active = (((z - lower <= eps_low) & (grad > 0))
                  | ((upper - z <= eps_up) & (grad < 0)))
        free_grad = np.where(active, 0.0, grad)
        direction = -_two_loop(free_grad, pairs, h0_apply, gamma)
        direction[active] = 0.0
        if grad @ direction >= 0:
            pairs.clear()
            gamma = 1.0
            direction = -h0_apply(free_grad)
            direction[active] = 0.0
            if grad @ direction >= 0:
                break
        # Stationarity in variable units: how far the metric wants to
        # move, clipped by the bounds. Raw gradient norms are useless
        # here because the penalty curvature varies over many decades.
        decrement = np.max(np.abs(_project(z + direction, lower, upper) - z))
        if decrement <= gtol:
            break
        if accepted >= window_next:
            if window_value - value <= 1e-6 * max(1e-4, abs(value)):
                break
            window_value = value
            window_next = accepted + 8
        largest = np.max(np.abs(direction))
        if largest > settings.max_step:
            direction *= settings.max_step / largest

        step = 1.0
        trial = None
        for _ in range(60):
            candidate = _project(z + step * direction, lower, upper)
            move = candidate - z
            slope = grad @ move
            if slope < 0:
                trial_value, _ = merit(candidate, False)
                if trial_value <= value + settings.armijo * slope:
                    trial = (candidate, trial_value)
                    break
            elif not np.any(move):
                break
            step *= settings.backtrack
        if trial is None:
            if pairs:
                # Quasi-Newton direction failed; fall back to the bare
                # metric direction with a fresh memory.
                pairs.clear()
                gamma = 1.0
                continue
            break
        z_new, value_new = trial
        _, grad_new = merit(z_new, True)
        s = z_new - z
        y = grad_new - grad
        sy = s @ y
        if sy > _SY_FLOOR * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > settings.memory:
                pairs.pop(0)
            gamma = sy / (y @ h0_apply(y))
        z, value, grad = z_new, value_new, grad_new
        accepted += 1
    return z, accepted


def _metric_for(prob, settings, rho):
    scale = (np.ones(prob.dim) if settings.variable_scale is None
             else np.asarray(settings.variable_scale, dtype=float))
    base_curvature = 1.0 / (scale * scale)

    def build(point):
        if prob.penalty_metric is not None:
            return prob.penalty_metric(point, rho)
        curvature = base_curvature
        if prob.n_constraints and prob.constraint_diag_sq is not None:
            curvature = curvature + rho * prob.constraint_diag_sq(point)
        diag = 1.0 / curvature
        return lambda v: diag * v
    return build


def evaluate_kkt(prob: NlpProblem, z, multipliers, rho,
                 settings: SolverSettings | None = None):
    """Objective, constraint norm, and stationarity at a point.

    Stationarity is the infinity norm of the metric-weighted projected
    step of the Lagrangian, measured in variable units.
    """
    settings = settings if settings is not None else SolverSettings()
    z = np.asarray(z, dtype=float)
    m = prob.n_constraints
    lam = np.zeros(m) if multipliers is None else np.asarray(multipliers)
    f, g = prob.objective(z)
    if m:
        c = prob.constraints(z)
        grad_l = g + prob.constraint_jtvec(z, lam)
        cnorm = float(np.max(np.abs(c)))
    else:
        c = np.zeros(0)
        grad_l = g
        cnorm = 0.0
    eps_low = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(prob.lower),
                                            prob.lower, 0.0)))
    eps_up = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(prob.upper),
                                           prob.upper, 0.0)))
    active = (((z - prob.lower <= eps_low) & (grad_l > 0))
              | ((prob.upper - z <= eps_up) & (grad_l < 0)))
    step = -_metric_for(prob, settings, rho)(z)(np.where(active, 0.0, grad_l))
    step[active] = 0.0
    stat = float(np.max(np.abs(
        _project(z + step, prob.lower, prob.upper) - z)))
    return float(f), cnorm, stat, c


def minimize(prob: NlpProblem, z0, settings: SolverSettings | None = None,
             multipliers0=None):
    """Minimize the problem from z0; returns (z, SolverReport).

    Iteration exhaustion returns the best iterate found with a truthful
    report; a non-finite evaluator value raises ValueError carrying the
    offending point. multipliers0 optionally warm-starts the multiplier
    estimates (e.g. from a previous solve of the same problem).
    """
    settings = settings if settings is not None else SolverSettings()
    start = time.perf_counter()
    z = _project(np.asarray(z0, dtype=float).copy(), prob.lower, prob.upper)
    m = prob.n_constraints
    lam = (np.zeros(m) if multipliers0 is None
           else np.asarray(multipliers0, dtype=float).copy())
    rho = settings.penalty_init

    def merit_factory(lam_k, rho_k):
        def merit(point, need_grad):
            f, g = prob.objective(point)
            _check_finite(f, point)
            if m:
                c = _check_finite(prob.constraints(point), point)
                value = f + lam_k @ c + 0.5 * rho_k * (c @ c)
                if not need_grad:
                    return value, None
                grad = g + prob.constraint_jtvec(point, lam_k + rho_k * c)
                return value, _check_finite(grad, point)
            return (f, None) if not need_grad else (f, _check_finite(g, point))
        return merit

    def kkt_measures(point, lam_k, rho_k):
        return evaluate_kkt(prob, point, lam_k, rho_k, settings)

    best = None

    def consider(point, fval, cnorm, stat, lam_k, rho_k):
        nonlocal best
        if cnorm <= settings.feas_tol and stat <= settings.opt_tol:
            key = (0, fval)
        elif cnorm <= settings.feas_tol:
            key = (1, fval)
        else:
            key = (2, cnorm)
        if best is None or key < best[0]:
            best = (key, point.copy(), fval, cnorm, stat, lam_k.copy(), rho_k)

    prev_cnorm = np.inf
    total_inner = 0
    termination = "outer_iteration_limit"
    outer_done = 0
    try:
        for outer in range(settings.max_outer):
            outer_done = outer + 1
            z_trial, inner = _inner_minimize(
                merit_factory(lam, rho), z, prob.lower, prob.upper,
                settings.opt_tol, settings,
                _metric_for(prob, settings, rho)(z))
            total_inner += inner
            fval, cnorm, _, c = kkt_measures(z_trial, lam, rho)
            if (m and cnorm > settings.feasibility_guard
                    and rho < _PENALTY_CAP):
                rho = min(rho * 10.0, _PENALTY_CAP)
                continue
            z = z_trial
            if cnorm <= max(0.25 * prev_cnorm, settings.feas_tol):
                # Sufficient feasibility progress: first-order multiplier
                # update; otherwise sharpen the penalty instead so a bad
                # round cannot poison the multiplier estimates.
                lam = lam + rho * c
                prev_cnorm = max(cnorm, settings.feas_tol)
            else:
                rho = min(rho * 10.0, _PENALTY_CAP)
            _, _, stat, _ = kkt_measures(z, lam, rho)
            consider(z, fval, cnorm, stat, lam, rho)
            if cnorm <= settings.feas_tol and stat <= settings.opt_tol:
                termination = "converged"
                break
    except _EvaluationError as exc:
        raise ValueError(
            f"objective or constraint evaluator returned a non-finite value "
            f"at a point with |z|_inf={np.max(np.abs(exc.point)):.3e}"
        ) from exc

    if best is None:
        fval, cnorm, stat, _ = kkt_measures(z, lam, rho)
        consider(z, fval, cnorm, stat, lam, rho)
    _, z_best, _, _, _, lam_best, rho_best = best
    # Re-evaluate honestly at the returned point.
    fval, cnorm, stat, _ = kkt_measures(z_best, lam_best, rho_best)
    report = SolverReport(
        termination=termination,
        outer_iterations=outer_done,
        inner_iterations=total_inner,
        objective=fval,
        constraint_norm=cnorm,
        stationarity=stat,
        wall_time=time.perf_counter() - start,
        penalty=rho_best,
        multipliers=lam_best,
    )
    return z_best, report


def check_gradients(prob: NlpProblem, z, h: float = 1e-6) -> float:
    """Max normalized error of supplied gradients vs central differences.

    Checks the objective gradient column by column and the constraint
    Jacobian row by row (rows recovered through the transpose product).
    Errors are normalized by the largest analytic entry (floored at 1).
    """
    z = np.asarray(z, dtype=float)
    n, m = prob.dim, prob.n_constraints

    _, grad = prob.objective(z)
    fd_grad = np.empty(n)
    fd_jac = np.empty((m, n)) if m else None
    for i in range(n):
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        fp, _ = prob.objective(zp)
        fm, _ = prob.objective(zm)
        fd_grad[i] = (fp - fm) / (2 * h)
        if m:
            fd_jac[:, i] = (prob.constraints(zp) - prob.constraints(zm)) / (2 * h)

    scale = max(1.0, float(np.max(np.abs(grad))))
    worst = float(np.max(np.abs(fd_grad - grad))) / scale
    if m:
        jac = np.empty((m, n))
        basis = np.zeros(m)
        for i in range(m):
            basis[i] = 1.0
            jac[i] = prob.constraint_jtvec(z, basis)
            basis[i] = 0.0
        scale = max(1.0, float(np.max(np.abs(jac))))
        worst = max(worst, float(np.max(np.abs(fd_jac - jac))) / scale)
    return worst
