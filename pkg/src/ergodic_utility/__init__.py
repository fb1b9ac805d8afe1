"""Map utility functions to stochastic wealth dynamics and back.

A utility ``u`` turns a wealth process ``x`` into Brownian motion with drift,
``du = a_u dt + b_u dW``. This package derives the wealth dynamic implied
by a utility, recovers the utility from a dynamic, checks the ergodicity of
the growth-rate observable by simulation, decides between two processes by
their time-average growth, and computes the implied wealth distribution.
"""

__version__ = "0.1.0"

from .catalog import catalog_lookup
from .dist import NormalizationError, utility_density, validate_density, wealth_density
from .duality import (
    ConsistencyReport,
    InconsistentDynamicError,
    check_consistency,
    dynamic_from_utility,
    implied_brownian_drift,
    utility_from_dynamic,
)
from .ergodic import decide, ensemble_average_rate, ergodicity_check, time_average_rate
from .expr import DomainError, ExprSyntaxError, compile_expr, differentiate, parse, to_text
from .functions import (
    BrownianDrift,
    InversionError,
    ItoProcess,
    UtilityFunction,
    ValidationError,
    make_process_from_expr,
    make_utility_from_expr,
)
from .sde import SimConfig, simulate, transform_path
from .specs import load_spec

__all__ = [
    "BrownianDrift", "ConsistencyReport", "DomainError", "ExprSyntaxError", "InconsistentDynamicError",
    "InversionError", "ItoProcess", "NormalizationError", "SimConfig", "UtilityFunction", "ValidationError",
    "catalog_lookup", "check_consistency", "compile_expr", "decide", "differentiate", "dynamic_from_utility",
    "ensemble_average_rate", "ergodicity_check", "implied_brownian_drift", "load_spec", "make_process_from_expr",
    "make_utility_from_expr", "parse", "simulate", "time_average_rate", "to_text", "transform_path",
    "utility_density", "utility_from_dynamic", "validate_density", "wealth_density",
]
