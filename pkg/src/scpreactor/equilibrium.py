"""Aqueous equilibrium subsystem: residuals, Jacobians, scaling, speciation.

Eight algebraic equations close the model: five equilibrium relations
(water, ammonia, and the three carbonate steps), two mass balances
(total ammonia, total carbonate), and the charge balance. Two modelling
conventions are switchable on ModelParameters:

* ``charge_balance_convention``: "physical" writes cations minus anions;
  "paper-literal" keeps the source sign pattern, which mixes signs and is
  retained only for comparison.
* ``carbon_balance``: "liquid-only" counts the four dissolved carbonate
  species; "paper-literal" adds the gas-phase CO2 state to the total.

The speciation solver is a Newton iteration with an entry-wise absolute
value applied to every iterate. That keeps all species non-negative at
the cost of the usual local-convergence guarantees; it is the standard
empirical device for equilibrium systems and behaves well here.

Equations and variables are diagonally scaled before solving: the raw
residuals span ~17 orders of magnitude and an unscaled Jacobian is close
to numerically singular.

Residual and Jacobian functions broadcast over a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .components import (
    N_SPECIES,
    N_STATES,
    ModelParameters,
    Species,
    State,
)
from .errors import NonConvergenceError, SingularSystemError

#: Equation scale factors that condition the residual Jacobian for the
#: default parameter set (rows: water, ammonia, carbonate 1-3, N mass,
#: C mass, charge).
DEFAULT_EQUATION_SCALE = np.array([1e7, 1e7, 1e4, 1e8, 1e10, 1.0, 1.0, 1.0])

#: Default scaled-residual tolerance and iteration budget for speciation.
SPECIATION_TOL = 1e-10
SPECIATION_MAX_ITER = 100

_GUESS_FLOOR = 1e-20


@dataclass(frozen=True)
class ScalingPair:
    """Diagonal scale factors for equations (rows) and variables (columns)."""

    equation_scale: np.ndarray = field(
        default_factory=lambda: DEFAULT_EQUATION_SCALE.copy())
    variable_scale: np.ndarray = field(
        default_factory=lambda: np.ones(N_SPECIES))

    def __post_init__(self):
        eq = np.asarray(self.equation_scale, dtype=float)
        var = np.asarray(self.variable_scale, dtype=float)
        if eq.shape != (N_SPECIES,) or var.shape != (N_SPECIES,):
            raise ValueError(f"scale vectors must have length {N_SPECIES}")
        if np.any(eq <= 0) or np.any(var <= 0):
            raise ValueError("scale factors must be strictly positive")
        object.__setattr__(self, "equation_scale", eq)
        object.__setattr__(self, "variable_scale", var)

    @classmethod
    def identity(cls) -> "ScalingPair":
        return cls(np.ones(N_SPECIES), np.ones(N_SPECIES))


def residual_g(x, y, p: ModelParameters) -> np.ndarray:
    """Equilibrium residual, shape (..., 8).

    Rows: water, ammonia, carbonate hydration, first and second carbonate
    dissociation, total-N mass, total-C mass, charge.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = y[..., Species.HYDRONIUM]
    oh = y[..., Species.HYDROXIDE]
    nh3 = y[..., Species.AMMONIA]
    nh4 = y[..., Species.AMMONIUM]
    co2 = y[..., Species.CO2]
    h2co3 = y[..., Species.CARBONIC_ACID]
    hco3 = y[..., Species.BICARBONATE]
    co3 = y[..., Species.CARBONATE]
    c_n = x[..., State.AMMONIA_TOTAL]
    c_c = x[..., State.CARBON_TOTAL]
    c_no = x[..., State.NITRATE]
    c_na = x[..., State.SODIUM]

    carbon = co2 + h2co3 + hco3 + co3 - c_c
    if p.carbon_balance == "paper-literal":
        carbon = carbon + x[..., State.CO2_GAS]

    if p.charge_balance_convention == "physical":
        charge = h + nh4 + c_na - oh - hco3 - 2.0 * co3 - c_no
    else:
        charge = oh + hco3 - 2.0 * co3 - c_no - h - nh4 - c_na

    return np.stack([
        h * oh - p.K_eW,
        nh4 * oh - p.K_eN * nh3,
        h2co3 - p.K_eC1 * co2,
        hco3 * h - p.K_eC2 * h2co3,
        co3 * h - p.K_eC3 * hco3,
        nh3 + nh4 - c_n,
        carbon,
        charge,
    ], axis=-1)


def jacobian_g(x, y, p: ModelParameters):
    """Analytic partials (dg/dx, dg/dy), shapes (..., 8, 10), (..., 8, 8)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    h = y[..., Species.HYDRONIUM]
    oh = y[..., Species.HYDROXIDE]
    nh4 = y[..., Species.AMMONIUM]
    hco3 = y[..., Species.BICARBONATE]
    co3 = y[..., Species.CARBONATE]

    dg_dy = np.zeros(batch + (N_SPECIES, N_SPECIES))
    dg_dy[..., 0, Species.HYDRONIUM] = oh
    dg_dy[..., 0, Species.HYDROXIDE] = h
    dg_dy[..., 1, Species.AMMONIUM] = oh
    dg_dy[..., 1, Species.HYDROXIDE] = nh4
    dg_dy[..., 1, Species.AMMONIA] = -p.K_eN
    dg_dy[..., 2, Species.CARBONIC_ACID] = 1.0
    dg_dy[..., 2, Species.CO2] = -p.K_eC1
    dg_dy[..., 3, Species.BICARBONATE] = h
    dg_dy[..., 3, Species.HYDRONIUM] = hco3
    dg_dy[..., 3, Species.CARBONIC_ACID] = -p.K_eC2
    dg_dy[..., 4, Species.CARBONATE] = h
    dg_dy[..., 4, Species.HYDRONIUM] = co3
    dg_dy[..., 4, Species.BICARBONATE] = -p.K_eC3
    dg_dy[..., 5, Species.AMMONIA] = 1.0
    dg_dy[..., 5, Species.AMMONIUM] = 1.0
    dg_dy[..., 6, Species.CO2] = 1.0
    dg_dy[..., 6, Species.CARBONIC_ACID] = 1.0
    dg_dy[..., 6, Species.BICARBONATE] = 1.0
    dg_dy[..., 6, Species.CARBONATE] = 1.0

    dg_dx = np.zeros(batch + (N_SPECIES, N_STATES))
    dg_dx[..., 5, State.AMMONIA_TOTAL] = -1.0
    dg_dx[..., 6, State.CARBON_TOTAL] = -1.0
    if p.carbon_balance == "paper-literal":
        dg_dx[..., 6, State.CO2_GAS] = 1.0

    if p.charge_balance_convention == "physical":
        dg_dy[..., 7, Species.HYDRONIUM] = 1.0
        dg_dy[..., 7, Species.AMMONIUM] = 1.0
        dg_dy[..., 7, Species.HYDROXIDE] = -1.0
        dg_dy[..., 7, Species.BICARBONATE] = -1.0
        dg_dy[..., 7, Species.CARBONATE] = -2.0
        dg_dx[..., 7, State.SODIUM] = 1.0
        dg_dx[..., 7, State.NITRATE] = -1.0
    else:
        dg_dy[..., 7, Species.HYDRONIUM] = -1.0
        dg_dy[..., 7, Species.AMMONIUM] = -1.0
        dg_dy[..., 7, Species.HYDROXIDE] = 1.0
        dg_dy[..., 7, Species.BICARBONATE] = 1.0
        dg_dy[..., 7, Species.CARBONATE] = -2.0
        dg_dx[..., 7, State.SODIUM] = -1.0
        dg_dx[..., 7, State.NITRATE] = -1.0

    return dg_dx, dg_dy


def scale_system(pair: ScalingPair, x, y_tilde, p: ModelParameters):
    """Scaled residual and Jacobian at scaled variables y_tilde.

    The scaled residual is S_g g(x, S_y y_tilde); its Jacobian with
    respect to y_tilde follows by the chain rule as S_g (dg/dy) S_y.
    """
    y_tilde = np.asarray(y_tilde, dtype=float)
    y = pair.variable_scale * y_tilde
    g = residual_g(x, y, p) * pair.equation_scale
    _, dg_dy = jacobian_g(x, y, p)
    jac = (pair.equation_scale[:, None] * dg_dy) * pair.variable_scale
    return g, jac


def default_species_guess(x) -> np.ndarray:
    """Strictly positive, mass-consistent starting point for speciation."""
    x = np.asarray(x, dtype=float)
    c_n = x[..., State.AMMONIA_TOTAL]
    c_c = x[..., State.CARBON_TOTAL]
    guess = np.stack([
        np.full_like(c_n, 1e-7), np.full_like(c_n, 1e-7),
        c_n / 2.0, c_n / 2.0,
        c_c / 4.0, c_c / 4.0, c_c / 4.0, c_c / 4.0,
    ], axis=-1)
    return np.maximum(guess, _GUESS_FLOOR)


class SpeciationResult(NamedTuple):
    species: np.ndarray       # (8,) mol/L, entry-wise >= 0
    iterations: int
    residual_norm: float      # scaled, infinity norm


def speciate(x, p: ModelParameters, y0=None, pair: ScalingPair | None = None,
             tol: float = SPECIATION_TOL,
             max_iter: int = SPECIATION_MAX_ITER) -> SpeciationResult:
    """Solve the equilibrium system for one state vector, with diagnostics.

    Newton iteration on the scaled system with the absolute-value step
    y <- |y + dy|. Raises NonConvergenceError when the budget runs out,
    carrying the last iterate.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (N_STATES,):
        raise ValueError("speciation solves one state vector at a time")
    if np.any(x < 0):
        raise ValueError("state must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    pair = pair if pair is not None else ScalingPair()
    if y0 is None:
        y0 = default_species_guess(x)
    y0 = np.asarray(y0, dtype=float)
    if np.any(y0 <= 0):
        raise ValueError("initial species guess must be strictly positive")

    y_tilde = y0 / pair.variable_scale
    for iteration in range(max_iter + 1):
        g, jac = scale_system(pair, x, y_tilde, p)
        norm = float(np.max(np.abs(g)))
        if norm <= tol:
            return SpeciationResult(pair.variable_scale * y_tilde,
                                    iteration, norm)
        if iteration == max_iter:
            break
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"singular equilibrium Jacobian at iteration {iteration}"
            ) from exc
        y_tilde = np.abs(y_tilde + step)

    raise NonConvergenceError(
        f"speciation did not reach {tol:g} in {max_iter} iterations "
        f"(residual {norm:.3e})",
        last_iterate=pair.variable_scale * y_tilde,
        residual_norm=norm, iterations=max_iter)


def solve_speciation(x, p: ModelParameters, y0=None,
                     pair: ScalingPair | None = None,
                     tol: float = SPECIATION_TOL,
                     max_iter: int = SPECIATION_MAX_ITER) -> np.ndarray:
    """Equilibrium species for one state vector (see speciate)."""
    return speciate(x, p, y0=y0, pair=pair, tol=tol, max_iter=max_iter).species


def ph_of(y) -> float:
    """pH of a species vector; requires a strictly positive hydronium entry."""
    y = np.asarray(y, dtype=float)
    h = y[..., Species.HYDRONIUM]
    if np.any(h <= 0):
        raise ValueError("hydronium concentration must be > 0 for pH")
    return -np.log10(h) if h.ndim else float(-np.log10(h))
