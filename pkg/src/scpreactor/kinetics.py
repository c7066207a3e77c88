"""Stoichiometry and growth kinetics.

Two reactions drive the composition: methane oxidation (catabolic) and
biomass formation (anabolic). Growth saturates in dissolved methane,
oxygen, and ammonium, with ammonium also inhibiting methane uptake.
Ammonium is the equilibrium-resolved species, never the total-N state;
every rate signature below takes it from the algebraic side.

All functions broadcast over a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import N_SPECIES, N_STATES, ModelParameters, Species, State

#: Reaction stoichiometry, rows = (oxidation, biomass formation),
#: columns in state order. Dimensionless yields per mole of methane.
STOICHIOMETRY = np.zeros((2, N_STATES))
STOICHIOMETRY[0, State.METHANE] = -1.0
STOICHIOMETRY[0, State.OXYGEN] = -1.0
STOICHIOMETRY[0, State.CARBON_TOTAL] = 1.0
STOICHIOMETRY[1, State.BIOMASS] = 1.0
STOICHIOMETRY[1, State.METHANE] = -1.0
STOICHIOMETRY[1, State.OXYGEN] = -1.0
STOICHIOMETRY[1, State.AMMONIA_TOTAL] = -0.2
STOICHIOMETRY.flags.writeable = False


@dataclass(frozen=True)
class GrowthRates:
    """Specific rates (1/h) and the saturation factors behind them."""

    catabolic: float        # drives methane oxidation
    growth: float           # drives biomass formation
    methane_factor: float   # in [0, 1]
    oxygen_factor: float    # in [0, 1]
    ammonium_factor: float  # in [0, 1]


def specific_growth_rates(c_methane, c_oxygen, c_ammonium, p: ModelParameters):
    """Saturation factors for methane, oxygen, and ammonium uptake.

    Methane uptake is competitively inhibited by ammonium; oxygen and
    ammonium follow plain saturation laws. All factors lie in [0, 1].
    """
    c_s = np.asarray(c_methane, dtype=float)
    c_o = np.asarray(c_oxygen, dtype=float)
    c_n = np.asarray(c_ammonium, dtype=float)
    if np.any(c_s < 0) or np.any(c_o < 0) or np.any(c_n < 0):
        raise ValueError("concentrations must be non-negative")
    methane = c_s / (p.K_S * (1.0 + c_n / p.K_Nox) + c_s)
    oxygen = c_o / (p.K_O + c_o)
    ammonium = c_n / (p.K_N + c_n)
    return methane, oxygen, ammonium


def growth_rates(c_methane, c_oxygen, c_ammonium, c_biomass,
                 p: ModelParameters) -> GrowthRates:
    """Specific catabolic and growth rates at the given concentrations.

    The catabolic rate is affine in the growth rate: ATP bookkeeping sets
    the slope, maintenance sets the floor.
    """
    if np.any(np.asarray(c_biomass, dtype=float) < 0):
        raise ValueError("biomass concentration must be non-negative")
    methane, oxygen, ammonium = specific_growth_rates(
        c_methane, c_oxygen, c_ammonium, p)
    growth = p.mu_max * methane * oxygen * ammonium
    catabolic = _catabolic_slope(p) * growth + _catabolic_floor(p)
    return GrowthRates(catabolic, growth, methane, oxygen, ammonium)


def _catabolic_slope(p: ModelParameters) -> float:
    return p.alpha / (2.0 * p.delta) + 8.0 / 20.0


def _catabolic_floor(p: ModelParameters) -> float:
    return p.m / (2.0 * p.delta)


def reaction_rates(x, y, p: ModelParameters) -> np.ndarray:
    """Volumetric reaction rates r = (oxidation, growth) * c_X, mol/(L h)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rates = growth_rates(
        x[..., State.METHANE], x[..., State.OXYGEN],
        y[..., Species.AMMONIUM], x[..., State.BIOMASS], p)
    c_x = x[..., State.BIOMASS]
    return np.stack([rates.catabolic * c_x, rates.growth * c_x], axis=-1)


def production_rates(x, y, p: ModelParameters) -> np.ndarray:
    """Net volumetric production per state component, mol/(L h)."""
    return reaction_rates(x, y, p) @ STOICHIOMETRY


def production_rate_jacobians(x, y, p: ModelParameters):
    """Partial derivatives of the production rates.

    Returns (dR/dx, dR/dy) with shapes (..., 10, 10) and (..., 10, 8).
    Only biomass, methane, oxygen (states) and ammonium (species) carry
    nonzero columns.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c_s = x[..., State.METHANE]
    c_o = x[..., State.OXYGEN]
    c_n = y[..., Species.AMMONIUM]
    c_x = x[..., State.BIOMASS]

    k_eff = p.K_S * (1.0 + c_n / p.K_Nox)
    den_s = k_eff + c_s
    den_o = p.K_O + c_o
    den_n = p.K_N + c_n
    methane = c_s / den_s
    oxygen = c_o / den_o
    ammonium = c_n / den_n
    growth = p.mu_max * methane * oxygen * ammonium

    d_methane_d_s = k_eff / den_s**2
    d_methane_d_n = -c_s * (p.K_S / p.K_Nox) / den_s**2
    d_oxygen_d_o = p.K_O / den_o**2
    d_ammonium_d_n = p.K_N / den_n**2

    # dr2/d(state or species); r1 = slope*r2 + floor*c_X.
    slope = _catabolic_slope(p)
    floor = _catabolic_floor(p)
    dr2_dx = np.zeros(x.shape[:-1] + (N_STATES,))
    dr2_dx[..., State.BIOMASS] = growth
    dr2_dx[..., State.METHANE] = p.mu_max * d_methane_d_s * oxygen * ammonium * c_x
    dr2_dx[..., State.OXYGEN] = p.mu_max * methane * d_oxygen_d_o * ammonium * c_x
    dr1_dx = slope * dr2_dx
    dr1_dx[..., State.BIOMASS] += floor

    dr2_dy = np.zeros(y.shape[:-1] + (N_SPECIES,))
    dr2_dy[..., Species.AMMONIUM] = p.mu_max * c_x * (
        d_methane_d_n * oxygen * ammonium + methane * oxygen * d_ammonium_d_n)
    dr1_dy = slope * dr2_dy

    dr_dx = np.stack([dr1_dx, dr2_dx], axis=-2)   # (..., 2, 10)
    dr_dy = np.stack([dr1_dy, dr2_dy], axis=-2)   # (..., 2, 8)
    s_t = STOICHIOMETRY.T
    return s_t @ dr_dx, s_t @ dr_dy
