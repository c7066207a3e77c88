"""Stirred-tank balances: convection, reaction, and gas-liquid transfer.

The vessel is perfectly mixed with constant liquid volume: the liquid
outlet matches the summed liquid inlets and the gas outlet matches the
summed gas inlets, so each phase is flushed at its own feed rate.
Dissolved methane, oxygen, and carbonate exchange with their gas-phase
counterparts through a kLa driving-force law with Henry's-law saturation.

The gas-liquid volume fraction is taken as the feed flow ratio and is
clamped away from 0 and 1: the transfer terms divide by both phase
fractions, and zero gas feed would otherwise be singular. With the clamp,
zero gas feed flushes nothing while transfer continues, a deliberate
idealization of the always-aerated laboratory operation.

All functions broadcast over a leading batch axis.
"""

from __future__ import annotations

import numpy as np

from .components import (
    GAS_FEEDS,
    GAS_PHASE_STATES,
    GAS_EXCHANGING_STATES,
    LIQUID_FEEDS,
    LIQUID_PHASE_STATES,
    N_FEEDS,
    N_SPECIES,
    N_STATES,
    Feed,
    ModelParameters,
    State,
)
from .kinetics import production_rate_jacobians, production_rates

#: 0/1 masks over feeds and states for the two phases.
LIQUID_FEED_MASK = np.zeros(N_FEEDS)
LIQUID_FEED_MASK[list(LIQUID_FEEDS)] = 1.0
GAS_FEED_MASK = 1.0 - LIQUID_FEED_MASK
LIQUID_STATE_MASK = np.zeros(N_STATES)
LIQUID_STATE_MASK[list(LIQUID_PHASE_STATES)] = 1.0
GAS_STATE_MASK = 1.0 - LIQUID_STATE_MASK
for _mask in (LIQUID_FEED_MASK, GAS_FEED_MASK, LIQUID_STATE_MASK, GAS_STATE_MASK):
    _mask.flags.writeable = False

_DISSOLVED = list(GAS_EXCHANGING_STATES)   # S, O, C columns
_GASEOUS = list(GAS_PHASE_STATES)          # S_g, O_g, C_g columns


def inlet_matrix(p: ModelParameters) -> np.ndarray:
    """Inlet concentrations per feed stream, shape (10, 6), mol/L."""
    c_in = np.zeros((N_STATES, N_FEEDS))
    c_in[State.AMMONIA_TOTAL, Feed.AMMONIA] = p.c_In_N
    c_in[State.NITRATE, Feed.ACID] = p.c_In_NO
    c_in[State.SODIUM, Feed.BASE] = p.c_In_Na
    c_in[State.METHANE_GAS, Feed.METHANE] = p.c_Sg
    c_in[State.OXYGEN_GAS, Feed.OXYGEN] = p.c_Og
    return c_in


def gas_holdup(u, p: ModelParameters):
    """Gas volume fraction from the feed flow ratio, clamped.

    Returns eps_min when all flows are zero.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("flows must be non-negative")
    liquid = np.asarray(u @ LIQUID_FEED_MASK)
    gas = np.asarray(u @ GAS_FEED_MASK)
    total = liquid + gas
    frac = np.divide(gas, total, out=np.full_like(total, p.eps_min),
                     where=total > 0)
    return np.clip(frac, p.eps_min, 1.0 - p.eps_min)


def mass_transfer(x, p: ModelParameters) -> np.ndarray:
    """Gas-to-liquid transfer rates for (S, O, C), mol/(L h).

    Positive values absorb into the liquid; each rate vanishes at the
    Henry's-law saturation point.
    """
    x = np.asarray(x, dtype=float)
    gamma = p.henry_ratios()
    kla = p.transfer_coefficients()
    saturation = gamma * x[..., _GASEOUS]
    return kla * (saturation - x[..., _DISSOLVED])


def rhs_f(x, y, u, p: ModelParameters) -> np.ndarray:
    """State derivative dx/dt, shape (..., 10), mol/(L h)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    liquid_flow = np.asarray(u @ LIQUID_FEED_MASK)
    gas_flow = np.asarray(u @ GAS_FEED_MASK)
    eps = gas_holdup(u, p)

    convection = (u @ inlet_matrix(p).T
                  - liquid_flow[..., None] * (x * LIQUID_STATE_MASK)
                  - gas_flow[..., None] * (x * GAS_STATE_MASK)) / p.V

    rates = production_rates(x, y, p)
    transfer = mass_transfer(x, p)
    q = rates.copy()
    q[..., _DISSOLVED] += transfer / (1.0 - eps)[..., None]
    q[..., _GASEOUS] = -transfer / eps[..., None]
    return convection + q


def rhs_jacobians(x, y, u, p: ModelParameters):
    """Analytic partials (df/dx, df/dy), shapes (..., 10, 10), (..., 10, 8)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], np.asarray(y).shape[:-1],
                                u.shape[:-1])
    liquid_flow = np.asarray(u @ LIQUID_FEED_MASK)
    gas_flow = np.asarray(u @ GAS_FEED_MASK)
    eps = gas_holdup(u, p)
    gamma = p.henry_ratios()
    kla = p.transfer_coefficients()

    df_dx, df_dy = production_rate_jacobians(x, y, p)
    df_dx = np.broadcast_to(df_dx, batch + (N_STATES, N_STATES)).copy()
    df_dy = np.broadcast_to(df_dy, batch + (N_STATES, N_SPECIES)).copy()

    diag = -(liquid_flow[..., None] * LIQUID_STATE_MASK
             + gas_flow[..., None] * GAS_STATE_MASK) / p.V
    idx = np.arange(N_STATES)
    df_dx[..., idx, idx] += diag

    absorb = 1.0 / (1.0 - eps)
    desorb = 1.0 / eps
    for j, (dis, gas) in enumerate(zip(_DISSOLVED, _GASEOUS)):
        df_dx[..., dis, dis] += -kla[j] * absorb
        df_dx[..., dis, gas] += kla[j] * gamma[j] * absorb
        df_dx[..., gas, dis] += kla[j] * desorb
        df_dx[..., gas, gas] += -kla[j] * gamma[j] * desorb
    return df_dx, df_dy


def rhs_input_jacobian(x, y, u, p: ModelParameters) -> np.ndarray:
    """Analytic df/du, shape (..., 10, 6).

    Includes the flow sensitivity of the gas holdup except where the
    clamp is active, where the holdup is locally constant.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], np.asarray(y).shape[:-1],
                                u.shape[:-1])
    liquid_flow = np.asarray(u @ LIQUID_FEED_MASK)
    gas_flow = np.asarray(u @ GAS_FEED_MASK)
    total = liquid_flow + gas_flow
    eps = gas_holdup(u, p)

    x_b = np.broadcast_to(x, batch + (N_STATES,))
    df_du = np.zeros(batch + (N_STATES, N_FEEDS))
    df_du += inlet_matrix(p) / p.V
    df_du -= (x_b * LIQUID_STATE_MASK)[..., :, None] * LIQUID_FEED_MASK / p.V
    df_du -= (x_b * GAS_STATE_MASK)[..., :, None] * GAS_FEED_MASK / p.V

    # Holdup sensitivity: zero when clamped or when there is no flow.
    raw = np.divide(gas_flow, total, out=np.zeros_like(total), where=total > 0)
    active = ((total > 0)
              & (raw > p.eps_min) & (raw < 1.0 - p.eps_min)).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        deps_liquid = np.where(total > 0, -gas_flow / total**2, 0.0) * active
        deps_gas = np.where(total > 0, liquid_flow / total**2, 0.0) * active
    deps_du = (deps_liquid[..., None] * LIQUID_FEED_MASK
               + deps_gas[..., None] * GAS_FEED_MASK)

    transfer = mass_transfer(x, p)
    dq_deps = np.zeros(batch + (N_STATES,))
    dq_deps[..., _DISSOLVED] = transfer / (1.0 - eps)[..., None] ** 2
    dq_deps[..., _GASEOUS] = transfer / eps[..., None] ** 2
    df_du += dq_deps[..., :, None] * deps_du[..., None, :]
    return df_du
