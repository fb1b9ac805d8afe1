"""Transforms between utility functions and wealth dynamics.

A utility ``u`` under which utility performs Brownian motion
``du = a_u dt + b_u dW`` fixes the wealth dynamic via Itô's formula
applied to the inverse ``x(u)``. Conversely a dynamic
``dx = a_x dt + b_x dW`` admits such a utility only if

    a_x(x) = (a_u / b_u) b_x(x) + b_x(x) b_x'(x) / 2

for a constant ratio ``a_u / b_u``; the utility is then
``u(x) = int b_u / b_x``. Only the ratio is identifiable from the dynamic,
so callers supply ``b_u`` to fix the scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import expr as ex
from .functions import (
    BrownianDrift,
    ItoProcess,
    UtilityFunction,
    ValidationError,
    domain_grid,
    invert_monotone,
)

__all__ = [
    "ConsistencyReport",
    "InconsistentDynamicError",
    "dynamic_from_utility",
    "check_consistency",
    "utility_from_dynamic",
    "implied_brownian_drift",
    "derived_formulas",
    "DEFAULT_TOL",
    "DEFAULT_GRID",
]

DEFAULT_TOL = 1e-6
DEFAULT_GRID = 256


@dataclass
class ConsistencyReport:
    consistent: bool
    inferred_a_u_over_b_u: float
    residual: float
    grid: list = field(default_factory=list)
    tolerance: float = DEFAULT_TOL

    def to_dict(self, include_grid: bool = False) -> dict:
        out = {
            "consistent": self.consistent,
            "ratio": self.inferred_a_u_over_b_u,
            "residual": self.residual,
            "tolerance": self.tolerance,
        }
        if include_grid:
            out["grid"] = [[float(x), float(r)] for x, r in self.grid]
        return out


class InconsistentDynamicError(ValidationError):
    def __init__(self, message: str, report: ConsistencyReport):
        self.report = report
        super().__init__(message)


def dynamic_from_utility(u: UtilityFunction, bd: BrownianDrift, x0: float | None = None,
                         name: str | None = None) -> ItoProcess:
    """Wealth process under which ``u`` performs Brownian motion with ``bd``.

    ``a_x = a_u x'(u) + b_u^2 x''(u) / 2`` and ``b_x = b_u x'(u)``, evaluated
    at ``u = u(x)``. Since ``x'(u(x)) = 1/u'(x)`` and
    ``x''(u(x)) = -u''(x)/u'(x)^3``, no inversion is needed.
    """
    a, b = bd.a_u, bd.b_u
    x0 = u.reference_x0 if x0 is None else float(x0)

    def inv1(x):
        return 1.0 / u.u_prime(x)

    def inv2(x):
        return -u.u_double_prime(x) / u.u_prime(x) ** 3

    def drift(x):
        return a * inv1(x) + 0.5 * b * b * inv2(x)

    def diffusion(x):
        return b * inv1(x)

    def diffusion_prime(x):
        # d/dx [b_u / u'(x)]
        return -b * u.u_double_prime(x) / u.u_prime(x) ** 2

    formulas = derived_formulas(u, bd)
    label = name or f"dynamic[{u.name}]"
    if b == 0:
        return ItoProcess.deterministic(drift, u.domain, x0, label, formulas)
    return ItoProcess(drift, diffusion, diffusion_prime, u.domain, x0, label, False, formulas)


_CLOSED_FORMS = {
    "linear_utility": lambda a, b: ("{a}", "{b}"),
    "log_utility": lambda a, b: ("{c}*x", "{b}*x"),
    "sqrt_utility": lambda a, b: ("{2a}*x^(1/2) + {b2}", "{2b}*x^(1/2)"),
}


def _g(v: float) -> str:
    return f"{v:.12g}"


def derived_formulas(u: UtilityFunction, bd: BrownianDrift) -> dict:
    """Printable drift and diffusion of the derived dynamic.

    Catalog utilities get their closed forms; anything else gets symbolic
    derivatives of its expression (unsimplified beyond constant folding).
    """
    a, b = bd.a_u, bd.b_u
    subs = {"{a}": _g(a), "{b}": _g(b), "{c}": _g(a + 0.5 * b * b), "{2a}": _g(2 * a),
            "{b2}": _g(b * b), "{2b}": _g(2 * b)}
    if u.name == "exp_utility":
        k = u.params.get("b_u", 1.0)
        return {"drift": f"{_g(a / k)}*exp(-x) - {_g(b * b / (2 * k * k))}*exp(-2*x)",
                "diffusion": f"{_g(b / k)}*exp(-x)"}
    if u.name in _CLOSED_FORMS:
        drift, diff = _CLOSED_FORMS[u.name](a, b)
        for k, v in subs.items():
            drift, diff = drift.replace(k, v), diff.replace(k, v)
        return {"drift": drift, "diffusion": diff}
    if u.source is None:
        return {}
    d1 = ex.differentiate(u.source)
    d2 = ex.differentiate(d1)
    # a_u / u' - b_u^2 u'' / (2 u'^3),  b_u / u'
    drift = ex._bin(
        "-",
        ex._bin("/", ex._num(a), d1),
        ex._bin("/", ex._bin("*", ex._num(0.5 * b * b), d2), ex._bin("^", d1, ex.Num(3.0))),
    )
    diff = ex._bin("/", ex._num(b), d1)
    return {"drift": ex.to_text(drift), "diffusion": ex.to_text(diff)}


def _consistency_grid(p: ItoProcess, n: int) -> np.ndarray:
    lo, hi = p.domain
    if math.isfinite(lo) and math.isfinite(hi):
        return domain_grid(p.domain, n)
    return domain_grid(p.domain, n, center=p.x0, span=10.0)


def check_consistency(p: ItoProcess, grid_size: int = DEFAULT_GRID, tol: float = DEFAULT_TOL,
                      grid=None) -> ConsistencyReport:
    """Test whether ``p`` admits a utility under which utility is Brownian.

    The implied ratio ``rho(x) = (a_x - b_x b_x' / 2) / b_x`` must be constant;
    the report carries its median and the largest deviation from it.
    """
    if grid_size < 16:
        raise ValidationError("grid_size must be at least 16")
    if p.zero_noise:
        raise ValidationError(f"{p.name}: consistency is undefined for a zero-noise process")
    x = _consistency_grid(p, grid_size) if grid is None else np.asarray(grid, dtype=float)
    with np.errstate(all="ignore"):
        b = np.asarray(p.diffusion(x), dtype=float)
        if np.any(~(np.abs(b) > 0)) or not np.all(np.isfinite(b)):
            bad = x[np.argmax(~(np.abs(b) > 0) | ~np.isfinite(b))]
            raise ValidationError(f"{p.name}: diffusion vanishes or is not finite at x={bad:.6g}")
        a = np.asarray(p.drift(x), dtype=float)
        bp = np.asarray(p.diffusion_slope(x), dtype=float)
        rho = (a - 0.5 * b * bp) / b
    if not np.all(np.isfinite(rho)):
        raise ValidationError(f"{p.name}: implied ratio is not finite on the grid")
    med = float(np.median(rho))
    residual = float(np.max(np.abs(rho - med)))
    consistent = residual <= tol * (1.0 + abs(med))
    return ConsistencyReport(consistent, med, residual, list(zip(x.tolist(), rho.tolist())), tol)


def implied_brownian_drift(p: ItoProcess, u: UtilityFunction, grid_size: int = DEFAULT_GRID,
                           tol: float = DEFAULT_TOL):
    """Utility drift and volatility seen when ``u`` is applied to ``p``.

    Returns ``(BrownianDrift | None, residual)``: the pair when both
    ``a_x u' + b_x^2 u''/2`` and ``b_x u'`` are constant over the grid.
    """
    lo = max(p.domain[0], u.domain[0])
    hi = min(p.domain[1], u.domain[1])
    x = domain_grid((lo, hi), grid_size, center=p.x0)
    with np.errstate(all="ignore"):
        b = np.asarray(p.diffusion(x)) * np.asarray(u.u_prime(x))
        a = np.asarray(p.drift(x)) * np.asarray(u.u_prime(x)) + 0.5 * np.asarray(p.diffusion(x)) ** 2 * np.asarray(
            u.u_double_prime(x))
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return None, math.inf
    am, bm = float(np.median(a)), float(np.median(b))
    residual = max(float(np.max(np.abs(a - am))) / (1.0 + abs(am)), float(np.max(np.abs(b - bm))) / (1.0 + abs(bm)))
    if residual > tol or bm < 0:
        return None, residual
    return BrownianDrift(am, bm), residual


def utility_from_dynamic(p: ItoProcess, bd: BrownianDrift, x_ref: float | None = None,
                         u_ref: float = 0.0, tol: float = DEFAULT_TOL,
                         grid_size: int = DEFAULT_GRID) -> UtilityFunction:
    """Integrate ``u' = b_u / b_x`` from ``x_ref`` (where ``u = u_ref``).

    Requires ``p`` consistent and ``bd.a_u / bd.b_u`` equal to the inferred
    ratio. ``u'`` and ``u''`` are exact; ``u`` is adaptive quadrature at
    ``1e-10`` relative tolerance; the inverse is bracketed bisection.
    """
    if bd.b_u <= 0:
        raise ValidationError("utility_from_dynamic needs b_u > 0")
    report = check_consistency(p, grid_size, tol)
    if not report.consistent:
        raise InconsistentDynamicError(
            f"{p.name}: no utility makes this dynamic Brownian (residual {report.residual:.3g})", report)
    if abs(bd.ratio - report.inferred_a_u_over_b_u) > tol * (1.0 + abs(report.inferred_a_u_over_b_u)):
        raise InconsistentDynamicError(
            f"{p.name}: a_u/b_u = {bd.ratio:.12g} does not match the dynamic's ratio "
            f"{report.inferred_a_u_over_b_u:.12g}", report)
    x_ref = p.x0 if x_ref is None else float(x_ref)
    lo, hi = p.domain
    if not lo < x_ref < hi:
        raise ValidationError(f"x_ref={x_ref} outside domain")
    b_u = bd.b_u

    def u_prime(x):
        return b_u / p.diffusion(x)

    def u_double_prime(x):
        bx = p.diffusion(x)
        return -b_u * p.diffusion_slope(x) / bx**2

    def integrand(s):
        bx = float(p.diffusion(s))
        if not (bx > 0 and math.isfinite(bx)):
            raise ValidationError(f"{p.name}: 1/b_x is singular at x={s:.6g}")
        return b_u / bx

    def piece(a, b):
        if a == b:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(integrand, a, b, epsrel=1e-10, epsabs=0.0, limit=200)
            except integrate.IntegrationWarning as err:
                raise ValidationError(f"{p.name}: quadrature of 1/b_x failed on [{a:.6g}, {b:.6g}]: {err}") from None
        return val

    def u(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((xs <= lo) | (xs >= hi)):
            raise ex.DomainError(f"utility evaluated outside domain ({lo}, {hi})")
        out = np.empty_like(xs)
        order = np.argsort(xs)
        # integrate outward from x_ref through sorted points so each piece is short
        above = [i for i in order if xs[i] >= x_ref]
        below = [i for i in order[::-1] if xs[i] < x_ref]
        for chain in (above, below):
            acc, prev = u_ref, x_ref
            for i in chain:
                acc += piece(prev, xs[i])
                prev = xs[i]
                out[i] = acc
        return out if np.ndim(x) else float(out[0])

    def inverse(v):
        return invert_monotone(u, v, (lo, hi), anchor=x_ref)

    def inverse_prime(v):
        return 1.0 / u_prime(inverse(v))

    def inverse_double_prime(v):
        xs = inverse(v)
        return -u_double_prime(xs) / u_prime(xs) ** 3

    return UtilityFunction(
        u, u_prime, u_double_prime, inverse, inverse_prime, inverse_double_prime, (lo, hi),
        name=f"utility[{p.name}]", constant=u_ref, reference_x0=p.x0,
    )
