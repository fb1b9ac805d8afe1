"""Closed-form utilities and dynamics with analytic derivatives and inverses.

Utilities: ``linear_utility``, ``log_utility``, ``sqrt_utility`` (Cramer)
and ``exp_utility`` (``b_u * e^x + C``). Dynamics: ``additive_dynamic``,
``gbm_dynamic``, ``cramer_dynamic`` (the square-root utility's wealth
process) and ``exp_test_dynamic``.
"""

from __future__ import annotations

import math

import numpy as np

from . import expr as ex
from .functions import ItoProcess, UtilityFunction, ValidationError

__all__ = ["UTILITIES", "DYNAMICS", "ALIASES", "catalog_lookup", "canonical_name", "is_utility", "is_dynamic"]

INF = math.inf

ALIASES = {
    "linear": "linear_utility",
    "log": "log_utility",
    "ln": "log_utility",
    "sqrt": "sqrt_utility",
    "cramer": "sqrt_utility",
    "exp": "exp_utility",
    "exp_test_u": "exp_utility",
    "additive": "additive_dynamic",
    "bm": "additive_dynamic",
    "gbm": "gbm_dynamic",
    "cramer_dyn": "cramer_dynamic",
    "exp_test": "exp_test_dynamic",
}

_PARAM_ALIASES = {"μ": "mu", "σ": "sigma"}


def canonical_name(name: str) -> str:
    return ALIASES.get(name, name)


def _params(name, given, required, optional=None):
    given = {_PARAM_ALIASES.get(k, k): v for k, v in (given or {}).items()}
    missing = [k for k in required if k not in given]
    if missing:
        raise ValidationError(f"{name}: missing parameter(s) {', '.join(missing)}")
    unknown = set(given) - set(required) - set(optional or {})
    if unknown:
        raise ValidationError(f"{name}: unknown parameter(s) {', '.join(sorted(unknown))}")
    out = dict(optional or {})
    out.update(given)
    for k, v in out.items():
        try:
            out[k] = float(v)
        except (TypeError, ValueError):
            raise ValidationError(f"{name}: parameter {k} must be a number, got {v!r}") from None
        if not math.isfinite(out[k]):
            raise ValidationError(f"{name}: parameter {k} must be finite")
    return out


def _positive(name, params, *keys):
    for k in keys:
        if params[k] <= 0:
            raise ValidationError(f"{name}: {k} must be positive, got {params[k]:g}")


def _arr(x):
    return np.asarray(x, dtype=float) if np.ndim(x) else float(x)


# ---------------------------------------------------------------- utilities


def linear_utility(params=None) -> UtilityFunction:
    _params("linear_utility", params, [])
    one = lambda x: np.ones_like(x, dtype=float) if np.ndim(x) else 1.0  # noqa: E731
    zero = lambda x: np.zeros_like(x, dtype=float) if np.ndim(x) else 0.0  # noqa: E731
    ident = lambda x: _arr(x)  # noqa: E731
    return UtilityFunction(ident, one, zero, ident, one, zero, (-INF, INF), name="linear_utility",
                           source=ex.parse("x"), range=(-INF, INF), reference_x0=0.0)


def log_utility(params=None) -> UtilityFunction:
    _params("log_utility", params, [])
    return UtilityFunction(
        u=lambda x: np.log(_arr(x)),
        u_prime=lambda x: 1.0 / _arr(x),
        u_double_prime=lambda x: -1.0 / _arr(x) ** 2,
        inverse=lambda v: np.exp(_arr(v)),
        inverse_prime=lambda v: np.exp(_arr(v)),
        inverse_double_prime=lambda v: np.exp(_arr(v)),
        domain=(0.0, INF), name="log_utility", source=ex.parse("ln(x)"), range=(-INF, INF),
    )


def sqrt_utility(params=None) -> UtilityFunction:
    _params("sqrt_utility", params, [])
    return UtilityFunction(
        u=lambda x: np.sqrt(_arr(x)),
        u_prime=lambda x: 0.5 / np.sqrt(_arr(x)),
        u_double_prime=lambda x: -0.25 * _arr(x) ** -1.5,
        inverse=lambda v: _arr(v) ** 2,
        inverse_prime=lambda v: 2.0 * _arr(v),
        inverse_double_prime=lambda v: 2.0 * np.ones_like(v, dtype=float) if np.ndim(v) else 2.0,
        domain=(0.0, INF), name="sqrt_utility", source=ex.parse("x^(1/2)"), range=(0.0, INF),
    )


def exp_utility(params=None) -> UtilityFunction:
    """``u(x) = b_u * e^x + C``; convex, bounded below by ``C``."""
    p = _params("exp_utility", params, [], {"b_u": 1.0, "C": 0.0})
    _positive("exp_utility", p, "b_u")
    b, c = p["b_u"], p["C"]

    def inverse(v):
        v = _arr(v)
        if np.any(np.asarray(v) <= c):
            raise ex.DomainError(f"exp_utility inverse needs u > C = {c:g}")
        return np.log((v - c) / b)

    source = ex.parse(f"{b!r}*exp(x) + {c!r}" if c else f"{b!r}*exp(x)")
    return UtilityFunction(
        u=lambda x: b * np.exp(_arr(x)) + c,
        u_prime=lambda x: b * np.exp(_arr(x)),
        u_double_prime=lambda x: b * np.exp(_arr(x)),
        inverse=inverse,
        inverse_prime=lambda v: 1.0 / (_arr(v) - c),
        inverse_double_prime=lambda v: -1.0 / (_arr(v) - c) ** 2,
        domain=(-INF, INF), name="exp_utility", constant=c, source=source, range=(c, INF), params=p,
        # u(3) = 20 b_u: Brownian utility started here rarely reaches the lower bound C
        reference_x0=3.5,
    )


# ----------------------------------------------------------------- dynamics


def additive_dynamic(params) -> ItoProcess:
    p = _params("additive_dynamic", params, ["a", "b"], {"x0": 0.0})
    _positive("additive_dynamic", p, "b")
    a, b = p["a"], p["b"]
    const = lambda c: (lambda x: np.full_like(x, c, dtype=float) if np.ndim(x) else c)  # noqa: E731
    return ItoProcess(const(a), const(b), const(0.0), (-INF, INF), p["x0"], "additive_dynamic",
                      formulas={"drift": f"{a:g}", "diffusion": f"{b:g}"})


def gbm_dynamic(params) -> ItoProcess:
    p = _params("gbm_dynamic", params, ["mu", "sigma"], {"x0": 1.0})
    _positive("gbm_dynamic", p, "sigma")
    mu, s = p["mu"], p["sigma"]
    return ItoProcess(
        lambda x: mu * _arr(x),
        lambda x: s * _arr(x),
        lambda x: np.full_like(x, s, dtype=float) if np.ndim(x) else s,
        (0.0, INF), p["x0"], "gbm_dynamic",
        formulas={"drift": f"{mu:g}*x", "diffusion": f"{s:g}*x"},
    )


def cramer_dynamic(params) -> ItoProcess:
    p = _params("cramer_dynamic", params, ["a_u", "b_u"], {"x0": 1.0})
    _positive("cramer_dynamic", p, "b_u")
    a, b = p["a_u"], p["b_u"]
    return ItoProcess(
        lambda x: 2.0 * a * np.sqrt(_arr(x)) + b * b,
        lambda x: 2.0 * b * np.sqrt(_arr(x)),
        lambda x: b / np.sqrt(_arr(x)),
        (0.0, INF), p["x0"], "cramer_dynamic",
        formulas={"drift": f"{2 * a:g}*x^(1/2) + {b * b:g}", "diffusion": f"{2 * b:g}*x^(1/2)"},
    )


def exp_test_dynamic(params) -> ItoProcess:
    """``dx = (a_u/b_u e^-x - e^-2x / 2) dt + e^-x dW``."""
    p = _params("exp_test_dynamic", params, ["a_u", "b_u"], {"x0": 1.0})
    _positive("exp_test_dynamic", p, "b_u")
    r = p["a_u"] / p["b_u"]
    return ItoProcess(
        lambda x: r * np.exp(-_arr(x)) - 0.5 * np.exp(-2.0 * _arr(x)),
        lambda x: np.exp(-_arr(x)),
        lambda x: -np.exp(-_arr(x)),
        (-INF, INF), p["x0"], "exp_test_dynamic",
        formulas={"drift": f"{r:g}*exp(-x) - 1/2*exp(-2*x)", "diffusion": "exp(-x)"},
    )


UTILITIES = {
    "linear_utility": linear_utility,
    "log_utility": log_utility,
    "sqrt_utility": sqrt_utility,
    "exp_utility": exp_utility,
}

DYNAMICS = {
    "additive_dynamic": additive_dynamic,
    "gbm_dynamic": gbm_dynamic,
    "cramer_dynamic": cramer_dynamic,
    "exp_test_dynamic": exp_test_dynamic,
}


def is_utility(name: str) -> bool:
    return canonical_name(name) in UTILITIES


def is_dynamic(name: str) -> bool:
    return canonical_name(name) in DYNAMICS


def catalog_lookup(name: str, params: dict | None = None):
    """Return the named closed-form utility or dynamic.

    >>> catalog_lookup("gbm_dynamic", {"mu": 0.05, "sigma": 0.2, "x0": 1}).drift(2.0)
    0.1
    """
    key = canonical_name(name)
    if key in UTILITIES:
        return UTILITIES[key](params or {})
    if key in DYNAMICS:
        return DYNAMICS[key](params or {})
    known = ", ".join(sorted(UTILITIES) + sorted(DYNAMICS))
    raise ValidationError(f"unknown catalog entry {name!r}; known: {known}")
