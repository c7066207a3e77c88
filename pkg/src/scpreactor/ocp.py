"""Economic optimal control by direct simultaneous transcription.

States, equilibrium species, and inlet flows on the whole grid become
one flat decision vector; the implicit-Euler step residuals become
equality constraints; simple bounds carry the operating limits. Species
are stored as base-10 exponents (y = 10^-a), which keeps them positive
for any finite decision value and makes the pH a decision variable
directly.

The objective prices harvested biomass against feed costs, values the
terminal inventory so the horizon end does not drain the reactor, tracks
a pH target, and damps input movement. All integrals use the
right-rectangle rule of the discretization: states and species at steps
1..K, inputs held from the previous grid point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import reference
from .components import (
    DEFAULT_MOLAR_MASS,
    N_FEEDS,
    N_SPECIES,
    N_STATES,
    ModelParameters,
    Species,
    State,
)
from .equilibrium import ScalingPair, jacobian_g, residual_g, speciate
from .errors import NonConvergenceError, SingularSystemError
from .integrator import ControlTrajectory, Trajectory, integrate
from .nlp import (
    NlpProblem,
    SolverReport,
    SolverSettings,
    evaluate_kkt,
    minimize,
)
from .reactor import (
    LIQUID_FEED_MASK,
    rhs_f,
    rhs_input_jacobian,
    rhs_jacobians,
)

_LN10 = np.log(10.0)
_BLOCK = N_STATES + N_SPECIES


def _default_state_upper() -> np.ndarray:
    upper = np.full(N_STATES, np.inf)
    upper[State.BIOMASS] = (reference.BIOMASS_MAX_GL
                            / DEFAULT_MOLAR_MASS[State.BIOMASS])
    upper[State.AMMONIA_TOTAL] = reference.AMMONIA_TOTAL_MAX_M
    return upper


@dataclass(frozen=True)
class OcpConfig:
    """Horizon, weights, prices, bounds, and the starting point."""

    horizon_h: float = reference.HORIZON_H
    steps: int = reference.STEPS
    weight_economic: float = reference.WEIGHT_ECONOMIC
    weight_ph: float = reference.WEIGHT_PH
    weight_movement: float = reference.WEIGHT_MOVEMENT
    ph_weight: float = reference.PH_WEIGHT
    movement_weights: np.ndarray = field(
        default_factory=lambda: reference.MOVEMENT_WEIGHTS.copy())
    feed_prices: np.ndarray = field(
        default_factory=lambda: reference.FEED_PRICES.copy())  # USD/L
    biomass_price: float = reference.BIOMASS_PRICE              # USD/g
    ph_target: float = 7.0
    state_lower: np.ndarray = field(
        default_factory=lambda: np.zeros(N_STATES))
    state_upper: np.ndarray = field(default_factory=_default_state_upper)
    species_lower: np.ndarray = field(
        default_factory=lambda: np.full(N_SPECIES, 1e-20))
    species_upper: np.ndarray = field(
        default_factory=lambda: np.ones(N_SPECIES))
    input_lower: np.ndarray = field(default_factory=lambda: np.zeros(N_FEEDS))
    input_upper: np.ndarray = field(default_factory=lambda: np.ones(N_FEEDS))
    initial_state: np.ndarray = field(
        default_factory=reference.initial_state_molar)  # mol/L
    initial_input: np.ndarray = field(
        default_factory=lambda: reference.INITIAL_INPUT.copy())

    def __post_init__(self):
        for name in ("movement_weights", "feed_prices", "state_lower",
                     "state_upper", "species_lower", "species_upper",
                     "input_lower", "input_upper", "initial_state",
                     "initial_input"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.horizon_h <= 0:
            raise ValueError("horizon must be > 0")
        if self.steps < 2:
            raise ValueError("need at least 2 steps")
        if min(self.weight_economic, self.weight_ph,
               self.weight_movement) < 0:
            raise ValueError("objective weights must be >= 0")
        for lo, hi in (("state_lower", "state_upper"),
                       ("species_lower", "species_upper"),
                       ("input_lower", "input_upper")):
            if np.any(getattr(self, lo) > getattr(self, hi)):
                raise ValueError(f"{lo} must not exceed {hi}")
        if np.any(self.species_lower <= 0):
            raise ValueError("species bounds must be strictly positive "
                             "(stored as exponents)")

    @property
    def dt(self) -> float:
        return self.horizon_h / self.steps

    def exponent_bounds(self):
        """Bounds for the exponent variables implied by the species bounds."""
        return -np.log10(self.species_upper), -np.log10(self.species_lower)


class DecisionLayout(NamedTuple):
    """Flat packing [x_1..x_K | a_1..a_K | u_0..u_K-1] of length 24K."""

    steps: int

    @property
    def size(self) -> int:
        return (N_STATES + N_SPECIES + N_FEEDS) * self.steps

    @property
    def state_slice(self) -> slice:
        return slice(0, N_STATES * self.steps)

    @property
    def exponent_slice(self) -> slice:
        k = self.steps
        return slice(N_STATES * k, (N_STATES + N_SPECIES) * k)

    @property
    def input_slice(self) -> slice:
        k = self.steps
        return slice((N_STATES + N_SPECIES) * k, self.size)

    def pack(self, states, exponents, inputs) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        exponents = np.asarray(exponents, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        k = self.steps
        if (states.shape != (k, N_STATES) or exponents.shape != (k, N_SPECIES)
                or inputs.shape != (k, N_FEEDS)):
            raise ValueError("grid arrays do not match the layout")
        return np.concatenate([states.ravel(), exponents.ravel(),
                               inputs.ravel()])

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"expected decision vector of length {self.size}")
        k = self.steps
        states = z[self.state_slice].reshape(k, N_STATES)
        exponents = z[self.exponent_slice].reshape(k, N_SPECIES)
        inputs = z[self.input_slice].reshape(k, N_FEEDS)
        return states, exponents, inputs


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Objective value and its terms (USD for the economic parts)."""

    total: float
    economic: float
    profit: float
    cost: float
    cost_to_go: float
    ph_tracking: float
    input_movement: float


def _breakdown(states, ph_grid, inputs, cfg: OcpConfig,
               p: ModelParameters) -> ObjectiveBreakdown:
    """Shared objective evaluation on grid arrays.

    states: (K+1, 10) including the initial state; ph_grid: (K,) pH at
    steps 1..K; inputs: (K, 6) held from each grid point.
    """
    dt = cfg.dt
    biomass_value = cfg.biomass_price * DEFAULT_MOLAR_MASS[State.BIOMASS]
    liquid_out = inputs @ LIQUID_FEED_MASK                       # (K,)
    profit = float(biomass_value * dt
                   * np.sum(states[1:, State.BIOMASS] * liquid_out))
    cost = float(dt * np.sum(inputs @ cfg.feed_prices))
    cost_to_go = float(biomass_value * p.V
                       * (states[-1, State.BIOMASS]
                          - states[0, State.BIOMASS]))
    economic = cost - profit - cost_to_go
    ph_tracking = float(0.5 * cfg.ph_weight * dt
                        * np.sum((cfg.ph_target - ph_grid) ** 2))
    moves = np.diff(np.vstack([cfg.initial_input, inputs]), axis=0)  # (K, 6)
    input_movement = float(0.5 / dt
                           * np.sum(moves ** 2 @ cfg.movement_weights))
    total = (cfg.weight_economic * economic + cfg.weight_ph * ph_tracking
             + cfg.weight_movement * input_movement)
    return ObjectiveBreakdown(total, economic, profit, cost, cost_to_go,
                              ph_tracking, input_movement)


def objective_terms(traj: Trajectory, cfg: OcpConfig,
                    p: ModelParameters) -> ObjectiveBreakdown:
    """Objective breakdown for an integrated trajectory on the OCP grid."""
    if traj.steps != cfg.steps:
        raise ValueError("trajectory grid does not match the configuration")
    ph_grid = -np.log10(traj.species[1:, Species.HYDRONIUM])
    return _breakdown(traj.states, ph_grid, traj.inputs, cfg, p)


def _breakdown_gradients(states_full, exponents, inputs, cfg: OcpConfig,
                         p: ModelParameters):
    """Objective value plus gradients on grid arrays.

    Differentiates with respect to the step-1..K states, exponents, and
    held inputs; the initial state is data.
    """
    k = inputs.shape[0]
    dt = cfg.dt
    biomass_value = cfg.biomass_price * DEFAULT_MOLAR_MASS[State.BIOMASS]
    breakdown = _breakdown(states_full, exponents[:, Species.HYDRONIUM],
                           inputs, cfg, p)

    grad_x = np.zeros((k, N_STATES))
    grad_a = np.zeros((k, N_SPECIES))
    grad_u = np.zeros((k, N_FEEDS))
    liquid_out = inputs @ LIQUID_FEED_MASK
    # economics: cost - profit - cost-to-go
    grad_x[:, State.BIOMASS] -= (cfg.weight_economic * biomass_value
                                 * dt * liquid_out)
    grad_x[-1, State.BIOMASS] -= cfg.weight_economic * biomass_value * p.V
    grad_u += cfg.weight_economic * dt * cfg.feed_prices
    grad_u -= (cfg.weight_economic * biomass_value * dt
               * states_full[1:, State.BIOMASS, None] * LIQUID_FEED_MASK)
    # pH tracking on the hydronium exponent
    grad_a[:, Species.HYDRONIUM] += (
        cfg.weight_ph * cfg.ph_weight * dt
        * (exponents[:, Species.HYDRONIUM] - cfg.ph_target))
    # input movement
    moves = np.diff(np.vstack([cfg.initial_input, inputs]), axis=0)
    weighted = moves * cfg.movement_weights
    grad_u += cfg.weight_movement / dt * weighted
    grad_u[:-1] -= cfg.weight_movement / dt * weighted[1:]
    return breakdown, grad_x, grad_a, grad_u


class _Cache:
    """Single-slot memo for the forward quantities at the last z."""

    def __init__(self):
        self.key = None
        self.value = None

    def get(self, z, compute):
        key = z.tobytes()
        if self.key != key:
            self.key = key
            self.value = compute()
        return self.value


class _BlockTridiagonal:
    """SPD block-tridiagonal system solved by the block Thomas recursion.

    diag holds the (K, n, n) diagonal blocks, sub the (K, n, n) blocks
    coupling group k to group k-1 (entry 0 unused).
    """

    def __init__(self, diag, sub):
        steps = diag.shape[0]
        self.sub = sub
        self.gain = np.empty_like(sub)       # sub_k S_{k-1}^{-1}
        self.schur = np.empty_like(diag)     # Schur complements S_k
        self.schur[0] = diag[0]
        for k in range(1, steps):
            self.gain[k] = np.linalg.solve(self.schur[k - 1].T,
                                           sub[k].T).T
            self.schur[k] = diag[k] - self.gain[k] @ sub[k].T

    def solve(self, rhs):
        """Solve for stacked right-hand sides of shape (K, n)."""
        steps = rhs.shape[0]
        work = rhs.copy()
        for k in range(1, steps):
            work[k] -= self.gain[k] @ work[k - 1]
        out = np.empty_like(work)
        out[-1] = np.linalg.solve(self.schur[-1], work[-1])
        for k in range(steps - 2, -1, -1):
            out[k] = np.linalg.solve(
                self.schur[k], work[k] - self.sub[k + 1].T @ out[k + 1])
        return out


def transcribe(cfg: OcpConfig, p: ModelParameters,
               pair: ScalingPair | None = None,
               row_reference=None) -> NlpProblem:
    """Build the finite-dimensional program for the configured horizon.

    With row_reference (a decision vector, typically the simulated
    initial guess) the constraint rows are equilibrated: rows whose
    Jacobian norm at the reference is far below one are scaled up so
    every constraint carries comparable weight for a first-order solver.
    Without it the residual is exactly the stacked step residual with
    the configured algebraic row scaling.
    """
    pair = pair if pair is not None else ScalingPair()
    layout = DecisionLayout(cfg.steps)
    k = cfg.steps
    dt = cfg.dt
    x0 = cfg.initial_state
    s_g = pair.equation_scale
    eye = np.eye(N_STATES)

    exp_lower, exp_upper = cfg.exponent_bounds()
    lower = layout.pack(np.tile(cfg.state_lower, (k, 1)),
                        np.tile(exp_lower, (k, 1)),
                        np.tile(cfg.input_lower, (k, 1)))
    upper = layout.pack(np.tile(cfg.state_upper, (k, 1)),
                        np.tile(exp_upper, (k, 1)),
                        np.tile(cfg.input_upper, (k, 1)))

    forward_cache = _Cache()
    jacobian_cache = _Cache()
    row_w = np.ones((k, _BLOCK))

    def forward(z):
        def compute():
            states, exponents, inputs = layout.unpack(z)
            species = 10.0 ** (-exponents)
            previous = np.vstack([x0[None, :], states[:-1]])
            f = rhs_f(states, species, inputs, p)
            g = residual_g(states, species, p) * s_g
            residual = (np.concatenate(
                [states - previous - dt * f, g], axis=1) * row_w).ravel()
            return states, exponents, inputs, species, residual
        return forward_cache.get(z, compute)

    def blocks(z):
        def compute():
            states, _, inputs, species, _ = forward(z)
            df_dx, df_dy = rhs_jacobians(states, species, inputs, p)
            df_du = rhs_input_jacobian(states, species, inputs, p)
            dg_dx, dg_dy = jacobian_g(states, species, p)
            a = np.concatenate([eye - dt * df_dx,
                                s_g[:, None] * dg_dx], axis=1)    # (K, 18, 10)
            b_species = np.concatenate([-dt * df_dy,
                                        s_g[:, None] * dg_dy], axis=1)
            b = b_species * (-_LN10 * species)[:, None, :]        # (K, 18, 8)
            d = np.concatenate([-dt * df_du,
                                np.zeros((k, N_SPECIES, N_FEEDS))],
                               axis=1)                            # (K, 18, 6)
            w = row_w[:, :, None]
            return a * w, b * w, d * w
        return jacobian_cache.get(z, compute)

    if row_reference is not None:
        a0, b0, d0 = blocks(np.asarray(row_reference, dtype=float))
        norms = np.max(np.abs(np.concatenate([a0, b0, d0], axis=2)), axis=2)
        # The identity block coupling each step to the previous one.
        norms[1:, :N_STATES] = np.maximum(norms[1:, :N_STATES], 1.0)
        # The cap keeps integrator-tolerance residuals well below the
        # feasibility tolerance in the weighted view.
        row_w = np.clip(1.0 / np.maximum(norms, 1e-12), 1.0, 1e4)
        forward_cache.key = None
        jacobian_cache.key = None

    def constraints(z):
        return forward(z)[4]

    def constraint_jtvec(z, v):
        a, b, d = blocks(z)
        v = np.asarray(v, dtype=float).reshape(k, _BLOCK)
        grad_x = np.einsum("kij,ki->kj", a, v)
        grad_x[:-1] -= v[1:, :N_STATES] * row_w[1:, :N_STATES]
        grad_a = np.einsum("kij,ki->kj", b, v)
        grad_u = np.einsum("kij,ki->kj", d, v)
        return np.concatenate([grad_x.ravel(), grad_a.ravel(),
                               grad_u.ravel()])

    def constraint_diag_sq(z):
        a, b, d = blocks(z)
        col_x = np.einsum("kij,kij->kj", a, a)
        col_x[:-1] += row_w[1:, :N_STATES] ** 2   # coupling into next block
        col_a = np.einsum("kij,kij->kj", b, b)
        col_u = np.einsum("kij,kij->kj", d, d)
        return np.concatenate([col_x.ravel(), col_a.ravel(), col_u.ravel()])

    # Per-step variable grouping (x, a, u) used by the curvature model.
    n_group = N_STATES + N_SPECIES + N_FEEDS
    ph_pos = N_STATES + Species.HYDRONIUM
    u_pos = N_STATES + N_SPECIES + np.arange(N_FEEDS)
    sigma = np.ones(n_group)

    def penalty_metric(z, rho):
        """Inverse Gauss-Newton curvature of the merit, block tridiagonal.

        The penalty Hessian rho J^T J couples each step to its neighbour
        only through the identity block of the Euler residual, so the
        curvature model factorizes by a block Thomas recursion. The exact
        diagonal objective curvature (pH tracking, input movement) and a
        small positive floor keep it definite.
        """
        a, b, d = blocks(z)
        m_k = np.concatenate([a, b, d], axis=2)             # (K, 18, 24)
        diag = rho * np.einsum("kri,krj->kij", m_k, m_k)    # (K, 24, 24)
        sub = np.zeros_like(diag)                           # (k, k-1) blocks
        sub[1:, :, :N_STATES] = -rho * np.transpose(
            m_k[1:, :N_STATES, :] * row_w[1:, :N_STATES, None], (0, 2, 1))
        idx = np.arange(N_STATES)
        diag[:-1, idx, idx] += rho * row_w[1:, :N_STATES] ** 2
        diag[:, ph_pos, ph_pos] += cfg.weight_ph * cfg.ph_weight * dt
        move_curv = cfg.weight_movement * cfg.movement_weights / dt
        diag[:, u_pos, u_pos] += 2.0 * move_curv
        diag[-1, u_pos, u_pos] -= move_curv
        sub[1:, u_pos, u_pos] -= move_curv
        diag[:, np.arange(n_group), np.arange(n_group)] += sigma
        solver = _BlockTridiagonal(diag, sub)

        def apply(v):
            grouped = np.concatenate([
                v[layout.state_slice].reshape(k, N_STATES),
                v[layout.exponent_slice].reshape(k, N_SPECIES),
                v[layout.input_slice].reshape(k, N_FEEDS)], axis=1)
            solution = solver.solve(grouped)
            return np.concatenate([
                solution[:, :N_STATES].ravel(),
                solution[:, N_STATES:N_STATES + N_SPECIES].ravel(),
                solution[:, N_STATES + N_SPECIES:].ravel()])
        return apply

    def objective(z):
        states, exponents, inputs, _, _ = forward(z)
        full_states = np.vstack([x0[None, :], states])
        breakdown, grad_x, grad_a, grad_u = _breakdown_gradients(
            full_states, exponents, inputs, cfg, p)
        grad = np.concatenate([grad_x.ravel(), grad_a.ravel(),
                               grad_u.ravel()])
        return breakdown.total, grad

    return NlpProblem(
        dim=layout.size,
        n_constraints=_BLOCK * k,
        objective=objective,
        constraints=constraints,
        constraint_jtvec=constraint_jtvec,
        lower=lower,
        upper=upper,
        constraint_diag_sq=constraint_diag_sq,
        penalty_metric=penalty_metric,
    )


def initial_guess(cfg: OcpConfig, p: ModelParameters,
                  pair: ScalingPair | None = None) -> np.ndarray:
    """Equality-feasible starting point: simulate under the initial input."""
    pair = pair if pair is not None else ScalingPair()
    controls = ControlTrajectory.constant(cfg.initial_input, cfg.horizon_h,
                                          cfg.steps)
    traj = integrate(cfg.initial_state, None, controls, p, pair, tol=1e-11)
    layout = DecisionLayout(cfg.steps)
    exp_lower, exp_upper = cfg.exponent_bounds()
    with np.errstate(divide="ignore"):
        exponents = -np.log10(np.maximum(traj.species[1:], 1e-300))
    exponents = np.clip(exponents, exp_lower, exp_upper)
    states = np.clip(traj.states[1:], cfg.state_lower, cfg.state_upper)
    return layout.pack(states, exponents, traj.inputs)


@dataclass(frozen=True)
class OcpSolution:
    """Optimal trajectories with the solver's own account of the run."""

    controls: ControlTrajectory
    times: np.ndarray              # (K+1,)
    states: np.ndarray             # (K+1, 10), includes the initial state
    species: np.ndarray            # (K+1, 8)
    breakdown: ObjectiveBreakdown
    report: SolverReport

    @property
    def ph(self) -> np.ndarray:
        return -np.log10(self.species[:, Species.HYDRONIUM])


def _solution_from_vector(z, cfg, p, pair, report) -> OcpSolution:
    layout = DecisionLayout(cfg.steps)
    states, exponents, inputs = layout.unpack(z)
    species = 10.0 ** (-exponents)
    times = np.linspace(0.0, cfg.horizon_h, cfg.steps + 1)
    full_states = np.vstack([cfg.initial_state[None, :], states])
    # Initial species row: consistent speciation for reporting only.
    y0 = speciate(cfg.initial_state, p, pair=pair).species
    full_species = np.vstack([y0[None, :], species])
    breakdown = _breakdown(full_states, exponents[:, Species.HYDRONIUM],
                           inputs, cfg, p)
    return OcpSolution(
        controls=ControlTrajectory(times, inputs),
        times=times, states=full_states, species=full_species,
        breakdown=breakdown, report=report)


