"""Component indexing, model parameters, molar masses, and unit conversions.

All concentrations are mol/L internally; g/L appears only at I/O
boundaries (initial conditions, reports). Vectors are plain numpy arrays
ordered by the enums below.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace
from enum import IntEnum

import numpy as np

from .errors import ConfigError

N_STATES = 10
N_SPECIES = 8
N_FEEDS = 6


class State(IntEnum):
    """Differential-state components (mol/L)."""

    BIOMASS = 0         # CH1.8 O0.5 N0.2 cells
    METHANE = 1         # dissolved CH4
    OXYGEN = 2          # dissolved O2
    AMMONIA_TOTAL = 3   # NH3 + NH4+
    CARBON_TOTAL = 4    # CO2 + H2CO3 + HCO3- + CO3--
    NITRATE = 5         # NO3-
    SODIUM = 6          # Na+
    METHANE_GAS = 7     # CH4(g)
    OXYGEN_GAS = 8      # O2(g)
    CO2_GAS = 9         # CO2(g)


class Species(IntEnum):
    """Equilibrium species resolved by the pH subsystem (mol/L)."""

    HYDRONIUM = 0
    HYDROXIDE = 1
    AMMONIA = 2
    AMMONIUM = 3
    CO2 = 4
    CARBONIC_ACID = 5
    BICARBONATE = 6
    CARBONATE = 7


class Feed(IntEnum):
    """Inlet streams (L/h)."""

    WATER = 0
    AMMONIA = 1   # ammonia medium
    ACID = 2      # nitric acid
    BASE = 3      # sodium hydroxide
    METHANE = 4
    OXYGEN = 5


# Component subsets. Dissolved states ride the liquid outlet; gas-phase
# states ride the gas outlet. Only S/O/C exchange between the two phases.
AQUEOUS_ONLY_STATES = (State.BIOMASS, State.AMMONIA_TOTAL, State.NITRATE, State.SODIUM)
GAS_EXCHANGING_STATES = (State.METHANE, State.OXYGEN, State.CARBON_TOTAL)
LIQUID_PHASE_STATES = tuple(State)[:7]
GAS_PHASE_STATES = (State.METHANE_GAS, State.OXYGEN_GAS, State.CO2_GAS)
LIQUID_FEEDS = (Feed.WATER, Feed.AMMONIA, Feed.ACID, Feed.BASE)
GAS_FEEDS = (Feed.METHANE, Feed.OXYGEN)

_ATOMIC = {"H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "Na": 22.990}

#: Default molar masses, g/mol, in state order. Biomass from its elemental
#: composition; total ammonia on an NH3 basis fixed at 17.03 g/mol; total
#: carbonate carried on a CO2 basis; gas states match their dissolved twin.
DEFAULT_MOLAR_MASS = np.array([
    _ATOMIC["C"] + 1.8 * _ATOMIC["H"] + 0.5 * _ATOMIC["O"] + 0.2 * _ATOMIC["N"],
    _ATOMIC["C"] + 4 * _ATOMIC["H"],          # CH4
    2 * _ATOMIC["O"],                         # O2
    17.03,                                    # total ammonia
    _ATOMIC["C"] + 2 * _ATOMIC["O"],          # total carbonate as CO2
    _ATOMIC["N"] + 3 * _ATOMIC["O"],          # NO3-
    _ATOMIC["Na"],                            # Na+
    _ATOMIC["C"] + 4 * _ATOMIC["H"],
    2 * _ATOMIC["O"],
    _ATOMIC["C"] + 2 * _ATOMIC["O"],
])

CHARGE_CONVENTIONS = ("physical", "paper-literal")
CARBON_BALANCES = ("liquid-only", "paper-literal")


@dataclass(frozen=True)
class ModelParameters:
    """Growth, equilibrium, transfer, and reactor constants.

    Defaults are the laboratory-fermentor values used throughout. Kinetic
    and equilibrium constants are mol/L based; flows are L/h.
    """

    mu_max: float = 2.28e-1     # 1/h
    m: float = 9.80e-5          # 1/h, maintenance
    alpha: float = 2.00e-2      # -, ATP production factor
    delta: float = 2.00e-2      # -, ATP consumption factor
    K_S: float = 7.50e-5        # mol/L, methane half-saturation
    K_Nox: float = 3.30e-3      # mol/L, ammonium inhibition
    K_O: float = 5.50e-5        # mol/L, oxygen half-saturation
    K_N: float = 1.30e-3        # mol/L, ammonium half-saturation
    K_eW: float = 1.00e-14      # -, water autoprotolysis
    K_eN: float = 5.62e-10      # -, ammonia equilibrium
    K_eC1: float = 1.58e-7      # -, CO2 hydration
    K_eC2: float = 4.27e-7      # -, carbonic acid dissociation
    K_eC3: float = 4.79e-11     # -, bicarbonate dissociation
    c_In_N: float = 5.88        # mol/L, ammonia feed strength
    c_In_Na: float = 1.00       # mol/L, hydroxide feed strength
    c_In_NO: float = 1.00       # mol/L, acid feed strength
    c_Sg: float = 1.90e-1       # mol/L, methane gas feed
    c_Og: float = 1.90e-1       # mol/L, oxygen gas feed
    kLa_S: float = 3.89e2       # 1/h
    kLa_O: float = 3.71e2       # 1/h
    kLa_C: float = 3.26e2       # 1/h
    Hpc_S: float = 7.05e2       # atm/M
    Hpc_O: float = 7.59e2       # atm/M
    Hpc_C: float = 2.99e1       # atm/M
    R_gas: float = 8.21e-2      # atm/(K M)
    T_kelvin: float = 3.15e2    # K
    V: float = 1.00             # L
    charge_balance_convention: str = "physical"
    carbon_balance: str = "liquid-only"
    eps_min: float = 1e-6       # -, gas-holdup clamp

    def henry_ratios(self) -> np.ndarray:
        """Gas/liquid saturation ratios RT/H for S, O, C (dimensionless)."""
        rt = self.R_gas * self.T_kelvin
        return np.array([rt / self.Hpc_S, rt / self.Hpc_O, rt / self.Hpc_C])

    def transfer_coefficients(self) -> np.ndarray:
        """kLa for S, O, C (1/h)."""
        return np.array([self.kLa_S, self.kLa_O, self.kLa_C])


_POSITIVE_FIELDS = (
    "mu_max", "m", "alpha", "delta", "K_S", "K_Nox", "K_O", "K_N",
    "K_eW", "K_eN", "K_eC1", "K_eC2", "K_eC3",
    "kLa_S", "kLa_O", "kLa_C", "Hpc_S", "Hpc_O", "Hpc_C",
    "R_gas", "T_kelvin", "V", "eps_min",
)
_NONNEGATIVE_FIELDS = ("c_In_N", "c_In_Na", "c_In_NO", "c_Sg", "c_Og")


def validate_parameters(p: ModelParameters) -> list[str]:
    """Return a list of violated constraints; empty means valid."""
    problems = []
    for name in _POSITIVE_FIELDS:
        if not getattr(p, name) > 0:
            problems.append(f"{name} must be > 0")
    for name in _NONNEGATIVE_FIELDS:
        if getattr(p, name) < 0:
            problems.append(f"{name} must be >= 0")
    if p.eps_min >= 0.5:
        problems.append("eps_min must be < 0.5")
    if p.charge_balance_convention not in CHARGE_CONVENTIONS:
        problems.append(
            f"charge_balance_convention must be one of {CHARGE_CONVENTIONS}")
    if p.carbon_balance not in CARBON_BALANCES:
        problems.append(f"carbon_balance must be one of {CARBON_BALANCES}")
    return problems


def _check_nonnegative(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")


def to_molar(conc_gl, table: np.ndarray | None = None) -> np.ndarray:
    """Convert per-component g/L concentrations to mol/L."""
    conc = np.asarray(conc_gl, dtype=float)
    if conc.shape[-1] != N_STATES:
        raise ValueError(f"expected {N_STATES} state entries, got {conc.shape[-1]}")
    _check_nonnegative(conc, "mass concentration")
    mm = DEFAULT_MOLAR_MASS if table is None else np.asarray(table, dtype=float)
    if np.any(mm <= 0):
        raise ValueError("molar masses must be > 0")
    return conc / mm


def from_molar(state, table: np.ndarray | None = None) -> np.ndarray:
    """Convert a mol/L state vector to per-component g/L."""
    x = np.asarray(state, dtype=float)
    if x.shape[-1] != N_STATES:
        raise ValueError(f"expected {N_STATES} state entries, got {x.shape[-1]}")
    _check_nonnegative(x, "state")
    mm = DEFAULT_MOLAR_MASS if table is None else np.asarray(table, dtype=float)
    if np.any(mm <= 0):
        raise ValueError("molar masses must be > 0")
    return x * mm


_FLOAT_FIELDS = {
    f.name for f in fields(ModelParameters)
    if f.name not in ("charge_balance_convention", "carbon_balance")
}
_OPTION_FIELDS = {
    "charge_balance_convention": CHARGE_CONVENTIONS,
    "carbon_balance": CARBON_BALANCES,
}


def parameters_from_mapping(mapping) -> ModelParameters:
    """Build ModelParameters from string key/value pairs.

    Unknown keys are rejected; omitted keys keep their defaults.
    """
    updates = {}
    for key, raw in mapping.items():
        if key in _OPTION_FIELDS:
            value = str(raw).strip()
            if value not in _OPTION_FIELDS[key]:
                raise ConfigError(
                    f"{key} must be one of {_OPTION_FIELDS[key]}, got {value!r}")
            updates[key] = value
        elif key in _FLOAT_FIELDS:
            try:
                updates[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: not a number: {raw!r}") from exc
        else:
            raise ConfigError(f"unknown model parameter {key!r}")
    p = replace(ModelParameters(), **updates)
    problems = validate_parameters(p)
    if problems:
        raise ConfigError("invalid model parameters: " + "; ".join(problems))
    return p


def load_parameters(path) -> ModelParameters:
    """Load parameters from a key = value text file.

    The file may be flat or carry a [model] section; other sections are
    ignored here so a full scenario file can be reused.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # parameter names are case sensitive
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError:
        parser.read_file(io.StringIO("[model]\n" + text))
    if parser.has_section("model"):
        mapping = dict(parser.items("model"))
    else:
        mapping = dict(parser.defaults())
    return parameters_from_mapping(mapping)
