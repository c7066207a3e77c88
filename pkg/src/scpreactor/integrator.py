"""Implicit-Euler integration of the coupled growth/pH system.

Each step solves the 18-equation residual

    R(z) = [x_new - x_old - f(x_new, y_new, u) dt ;  scaled g(x_new, y_new)]

for z = [x_new; y_tilde_new] by Newton iteration with an entry-wise
absolute value after every update. The absolute step keeps all
concentrations non-negative; it trades away the textbook convergence
guarantee, so a step that stalls is retried once on two half steps
before giving up.

Linear solves use dense LU with partial pivoting; the system is 18x18,
so robustness beats sparsity. A condition estimate above 1e14 aborts the
step as numerically singular.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .components import N_FEEDS, N_SPECIES, N_STATES, ModelParameters
from .equilibrium import (
    ScalingPair,
    jacobian_g,
    residual_g,
    speciate,
)
from .errors import NonConvergenceError, SingularSystemError
from .reactor import rhs_f, rhs_jacobians

#: Default Newton tolerances for a single implicit step.
STEP_TOL = 1e-9
STEP_MAX_ITER = 50

_CONDITION_LIMIT = 1e14
_N_Z = N_STATES + N_SPECIES


@dataclass(frozen=True)
class ControlTrajectory:
    """Piecewise-constant inlet flows on a time grid.

    values[k] applies on [times[k], times[k+1]).
    """

    times: np.ndarray    # (K+1,), h, strictly increasing
    values: np.ndarray   # (K, 6), L/h, non-negative

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need at least two grid times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if values.shape != (times.size - 1, N_FEEDS):
            raise ValueError(
                f"expected {(times.size - 1, N_FEEDS)} control values, "
                f"got {values.shape}")
        if np.any(values < 0):
            raise ValueError("flows must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, u, duration: float, steps: int,
                 t_start: float = 0.0) -> "ControlTrajectory":
        u = np.asarray(u, dtype=float)
        times = t_start + np.linspace(0.0, duration, steps + 1)
        return cls(times, np.tile(u, (steps, 1)))

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True)
class Trajectory:
    """Integration record on a time grid.

    Row 0 holds the initial state with its consistent speciation; the
    diagnostics of row 0 come from that speciation solve, later rows from
    the Newton solve of the step that produced them.
    """

    times: np.ndarray             # (K+1,)
    states: np.ndarray            # (K+1, 10)
    species: np.ndarray           # (K+1, 8)
    inputs: np.ndarray            # (K, 6)
    newton_iterations: np.ndarray  # (K+1,), int
    residual_norms: np.ndarray    # (K+1,)
    halved_steps: tuple = ()      # step indices retried at dt/2

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if np.any(self.states < 0) or np.any(self.species < 0):
            raise ValueError("stored trajectory must be non-negative")

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


def step_residual(z_next, x_prev, u, dt: float, p: ModelParameters,
                  pair: ScalingPair) -> np.ndarray:
    """Implicit-Euler residual at the trial point z_next = [x; y_tilde]."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    z_next = np.asarray(z_next, dtype=float)
    x = z_next[:N_STATES]
    y = pair.variable_scale * z_next[N_STATES:]
    top = x - np.asarray(x_prev, dtype=float) - rhs_f(x, y, u, p) * dt
    bottom = pair.equation_scale * residual_g(x, y, p)
    return np.concatenate([top, bottom])


def step_jacobian(z_next, x_prev, u, dt: float, p: ModelParameters,
                  pair: ScalingPair) -> np.ndarray:
    """Analytic 18x18 Jacobian of step_residual at z_next."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    z_next = np.asarray(z_next, dtype=float)
    x = z_next[:N_STATES]
    y = pair.variable_scale * z_next[N_STATES:]
    df_dx, df_dy = rhs_jacobians(x, y, u, p)
    dg_dx, dg_dy = jacobian_g(x, y, p)
    jac = np.empty((_N_Z, _N_Z))
    jac[:N_STATES, :N_STATES] = np.eye(N_STATES) - df_dx * dt
    jac[:N_STATES, N_STATES:] = -df_dy * dt * pair.variable_scale
    jac[N_STATES:, :N_STATES] = pair.equation_scale[:, None] * dg_dx
    jac[N_STATES:, N_STATES:] = (pair.equation_scale[:, None] * dg_dy
                                 * pair.variable_scale)
    return jac


class NewtonResult(NamedTuple):
    z: np.ndarray
    iterations: int
    residual_norm: float


def absolute_newton_solve(z0, residual: Callable, jacobian: Callable,
                          tol: float = STEP_TOL,
                          max_iter: int = STEP_MAX_ITER) -> NewtonResult:
    """Newton iteration with the absolute-value step z <- |z + dz|.

    The starting point is folded into the non-negative orthant first.
    Raises SingularSystemError on an ill-conditioned Jacobian and
    NonConvergenceError when the iteration budget runs out.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    z = np.abs(np.asarray(z0, dtype=float))
    norm = np.inf
    for iteration in range(max_iter + 1):
        r = np.atleast_1d(residual(z))
        norm = float(np.max(np.abs(r)))
        if norm <= tol:
            return NewtonResult(z, iteration, norm)
        if iteration == max_iter:
            break
        jac = np.atleast_2d(jacobian(z))
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > _CONDITION_LIMIT:
            raise SingularSystemError(
                f"near-singular step Jacobian at iteration {iteration}")
        z = np.abs(z + np.linalg.solve(jac, -r))
    raise NonConvergenceError(
        f"Newton did not reach {tol:g} in {max_iter} iterations "
        f"(residual {norm:.3e})",
        last_iterate=z, residual_norm=norm, iterations=max_iter)


def _solve_step(z_guess, x_prev, u, dt, p, pair, tol, max_iter):
    return absolute_newton_solve(
        z_guess,
        lambda z: step_residual(z, x_prev, u, dt, p, pair),
        lambda z: step_jacobian(z, x_prev, u, dt, p, pair),
        tol=tol, max_iter=max_iter)


def integrate(x0, y0_guess, controls: ControlTrajectory, p: ModelParameters,
              pair: ScalingPair | None = None, tol: float = STEP_TOL,
              max_newton: int = STEP_MAX_ITER) -> Trajectory:
    """Integrate over the control grid, warm-starting each step.

    A non-convergent step is retried once as two half steps (recombined
    into the original grid point); persistent failure raises
    NonConvergenceError tagged with the step index.
    """
    pair = pair if pair is not None else ScalingPair()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N_STATES,):
        raise ValueError(f"expected initial state of length {N_STATES}")
    if np.any(x0 < 0):
        raise ValueError("initial state must be non-negative")

    steps = controls.steps
    dts = controls.step_sizes()
    states = np.empty((steps + 1, N_STATES))
    species = np.empty((steps + 1, N_SPECIES))
    iterations = np.zeros(steps + 1, dtype=int)
    norms = np.zeros(steps + 1)
    halved = []

    initial = speciate(x0, p, y0=y0_guess, pair=pair)
    states[0] = x0
    species[0] = initial.species
    iterations[0] = initial.iterations
    norms[0] = initial.residual_norm

    z = np.concatenate([x0, initial.species / pair.variable_scale])
    for k in range(steps):
        u = controls.values[k]
        dt = dts[k]
        x_prev = states[k]
        try:
            result = _solve_step(z, x_prev, u, dt, p, pair, tol, max_newton)
        except NonConvergenceError:
            # One level of step halving, then give up.
            try:
                mid = _solve_step(z, x_prev, u, dt / 2, p, pair, tol, max_newton)
                result = _solve_step(mid.z, mid.z[:N_STATES], u, dt / 2,
                                     p, pair, tol, max_newton)
                result = NewtonResult(result.z,
                                      mid.iterations + result.iterations,
                                      max(mid.residual_norm,
                                          result.residual_norm))
                halved.append(k)
            except NonConvergenceError as exc:
                raise NonConvergenceError(
                    f"integration step {k} failed after halving: {exc}",
                    last_iterate=exc.last_iterate,
                    residual_norm=exc.residual_norm,
                    iterations=exc.iterations, step_index=k) from exc
        z = result.z
        states[k + 1] = z[:N_STATES]
        species[k + 1] = pair.variable_scale * z[N_STATES:]
        iterations[k + 1] = result.iterations
        norms[k + 1] = result.residual_norm

    return Trajectory(controls.times.copy(), states, species,
                      controls.values.copy(), iterations, norms,
                      tuple(halved))
