"""Reference operating point and economics for the laboratory fermentor.

These are the constants of the continuous-phase numerical experiment:
initial charge, inlet flows, substrate/biomass prices, objective weights,
and the operating bounds. Initial state is given in g/L as measured and
converted at the boundary.
"""

import numpy as np

from .components import DEFAULT_MOLAR_MASS, to_molar

#: Initial reactor composition, g/L, state order.
INITIAL_STATE_GL = np.array([
    2.00, 2.31e-2, 3.77e-2, 4.03e-1, 9.10e-1,
    3.07e-3, 2.23e-7, 6.29e-1, 1.11, 1.05,
])

#: Initial inlet flows, L/h, feed order (water, ammonia, acid, base, CH4, O2).
INITIAL_INPUT = np.array([
    1.00e-2, 6.84e-5, 6.71e-7, 5.62e-11, 8.96e-3, 8.53e-3,
])

#: Feed stream prices, USD/L, feed order.
FEED_PRICES = np.array([0.00, 1.00e-3, 1.00e-1, 1.00e-1, 1.00e-3, 1.00e-3])

#: Biomass value, USD/g dry weight.
BIOMASS_PRICE = 1.0e-2

#: Objective weights: economics, pH tracking, input rate-of-movement.
WEIGHT_ECONOMIC = 1.0
WEIGHT_PH = 2.0e2
WEIGHT_MOVEMENT = 1.0

#: pH tracking weight (scalar) and per-stream movement weights.
PH_WEIGHT = 1.0
MOVEMENT_WEIGHTS = np.array([1.0, 1.0, 10.0, 10.0, 0.1, 0.1])

#: Horizon of the production-optimization experiment.
HORIZON_H = 48.0
STEPS = 200

#: Operating limits: biomass and total-ammonia caps (others unbounded).
BIOMASS_MAX_GL = 20.0
AMMONIA_TOTAL_MAX_M = 1.0

#: Batch/continuous phase switch point for the laboratory protocol.
INOCULUM_MAX_GL = 0.1
CONTINUOUS_MIN_GL = 2.0


def initial_state_molar() -> np.ndarray:
    """Initial composition converted to mol/L."""
    return to_molar(INITIAL_STATE_GL, DEFAULT_MOLAR_MASS)
