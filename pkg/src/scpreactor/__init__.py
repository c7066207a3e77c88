"""Simulation and economic optimal control of single-cell-protein
production in a laboratory stirred-tank fermentor.

The model couples Monod-type growth of a methanotroph to aqueous pH
equilibria: growth consumes the equilibrium-resolved ammonium species,
so reactor dynamics and speciation solve together as one
differential-algebraic system.
"""

from .components import (
    DEFAULT_MOLAR_MASS,
    Feed,
    ModelParameters,
    N_FEEDS,
    N_SPECIES,
    N_STATES,
    Species,
    State,
    from_molar,
    load_parameters,
    parameters_from_mapping,
    to_molar,
    validate_parameters,
)
from .equilibrium import (
    DEFAULT_EQUATION_SCALE,
    ScalingPair,
    default_species_guess,
    jacobian_g,
    ph_of,
    residual_g,
    scale_system,
    solve_speciation,
    speciate,
)
from .errors import ConfigError, NonConvergenceError, SingularSystemError
from .integrator import (
    ControlTrajectory,
    Trajectory,
    absolute_newton_solve,
    integrate,
    step_jacobian,
    step_residual,
)
from .kinetics import (
    STOICHIOMETRY,
    GrowthRates,
    growth_rates,
    production_rates,
    specific_growth_rates,
)
from .nlp import (
    NlpProblem,
    SolverReport,
    SolverSettings,
    check_gradients,
    minimize,
)
from .ocp import (
    DecisionLayout,
    ObjectiveBreakdown,
    OcpConfig,
    OcpSolution,
    initial_guess,
    objective_terms,
    solve_ocp,
    transcribe,
)
from .reactor import gas_holdup, inlet_matrix, mass_transfer, rhs_f

__version__ = "0.1.0"
