"""Utility and wealth densities implied by Brownian utility, and KS validation.

Utility starting at ``u0 = u(x0)`` is normal with mean ``u0 + a_u t`` and
variance ``b_u^2 t``. Wealth density follows by change of variables,
``P_x(x) = P_u(u(x)) u'(x)``. The CDF used for KS tests is built by
adaptive quadrature of the pdf over a grid laid out along utility
quantiles and interpolated with cubic Hermite splines (exact slopes from
the pdf).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate
from scipy.special import ndtri

from .functions import BrownianDrift, UtilityFunction, ValidationError

__all__ = [
    "Density",
    "NormalizationError",
    "KSReport",
    "utility_density",
    "wealth_density",
    "validate_density",
    "ks_statistic",
    "density_to_csv",
    "BROWNIAN",
    "PRINTED_T_SQUARED",
]

BROWNIAN = "brownian"
PRINTED_T_SQUARED = "t_squared"
NORM_TOL = 1e-6
_GRID_POINTS = 2049
_Q_EDGE = 1e-13  # outermost utility quantile of the CDF grid


class NormalizationError(ValidationError):
    """The pdf does not integrate to one over its support."""


def _quad(f, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-10, limit=200)
    return val


@dataclass
class Density:
    """A pdf on ``support`` with a cached quadrature CDF.

    ``params`` holds ``a_u``, ``b_u``, ``C`` (the utility constant) and
    ``u0``. ``grid`` are the CDF breakpoints; ``mass`` the total integral.
    """

    pdf: Callable
    support: tuple[float, float]
    t: float
    params: dict
    grid: np.ndarray
    cdf_grid: np.ndarray = field(init=False)
    mass: float = field(init=False)
    tail_lo: float = field(init=False)
    _spline: object = field(init=False, repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        lo, hi = self.support
        g = g[(g > lo) & (g < hi)]
        if g.size < 8:
            raise ValidationError("density grid has too few points inside the support")
        dens = np.asarray(self.pdf(g), dtype=float)
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValidationError("pdf must be finite and non-negative")
        cells = np.array([_quad(self.pdf, a, b) for a, b in zip(g[:-1], g[1:])])
        self.tail_lo = _quad(self.pdf, lo, g[0]) if g[0] > lo else 0.0
        tail_hi = _quad(self.pdf, g[-1], hi) if g[-1] < hi else 0.0
        cum = self.tail_lo + np.concatenate([[0.0], np.cumsum(cells)])
        self.mass = float(cum[-1] + tail_hi)
        self.grid = g
        self.cdf_grid = cum
        self._spline = interpolate.CubicHermiteSpline(g, cum, dens, extrapolate=False)

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        if abs(self.mass - 1.0) > tol:
            raise NormalizationError(
                f"density integrates to {self.mass:.9f}, not 1 (tolerance {tol:g}); "
                "probability mass falls outside the utility's range")

    def cdf(self, x):
        """CDF from the cached grid; tails beyond it use direct quadrature."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.asarray(self._spline(xs), dtype=float)
        g = self.grid
        below, above = xs < g[0], xs > g[-1]
        for i in np.flatnonzero(below):
            out[i] = self.tail_lo - _quad(self.pdf, xs[i], g[0]) if xs[i] > self.support[0] else 0.0
        for i in np.flatnonzero(above):
            out[i] = self.cdf_grid[-1] + _quad(self.pdf, g[-1], xs[i]) if xs[i] < self.support[1] else self.mass
        out = np.clip(out, 0.0, 1.0)
        return out if np.ndim(x) else float(out[0])

    def ppf(self, q):
        """Inverse CDF on the cached grid, refined by Newton steps."""
        q = np.asarray(q, dtype=float)
        x = np.interp(q, self.cdf_grid, self.grid)
        for _ in range(3):
            f = np.asarray(self.pdf(x), dtype=float)
            step = np.where(f > 0, (self.cdf(x) - q) / np.where(f > 0, f, 1.0), 0.0)
            x = np.clip(x - step, self.grid[0], self.grid[-1])
        return x

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.cdf_grid[0], self.cdf_grid[-1]
        return self.ppf(lo + (hi - lo) * rng.random(n))

    def integral(self, a: float, b: float) -> float:
        return _quad(self.pdf, a, b)


def _variance(bd: BrownianDrift, t: float, convention: str) -> float:
    if convention == BROWNIAN:
        return bd.b_u**2 * t
    if convention == PRINTED_T_SQUARED:
        return bd.b_u**2 * t**2
    raise ValidationError(f"unknown variance convention {convention!r}")


def _u_quantile_grid(mean: float, sd: float, n: int = _GRID_POINTS) -> np.ndarray:
    q = np.linspace(ndtri(_Q_EDGE), -ndtri(_Q_EDGE), n)
    return mean + sd * q


def utility_density(bd: BrownianDrift, u0: float, t: float, convention: str = BROWNIAN) -> Density:
    """Normal density of utility at time ``t`` started from ``u0``.

    ``convention="t_squared"`` uses variance ``b_u^2 t^2`` instead of the
    Brownian ``b_u^2 t``; it exists to show that form is inconsistent with
    simulation.
    """
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    if not bd.b_u > 0:
        raise ValidationError("utility density needs b_u > 0")
    mean = u0 + bd.a_u * t
    sd = math.sqrt(_variance(bd, t, convention))

    def pdf(v):
        z = (np.asarray(v, dtype=float) - mean) / sd
        out = np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))
        return out if np.ndim(v) else float(out)

    params = {"a_u": bd.a_u, "b_u": bd.b_u, "C": 0.0, "u0": u0, "mean": mean, "variance": sd * sd,
              "convention": convention}
    d = Density(pdf, (-math.inf, math.inf), t, params, _u_quantile_grid(mean, sd))
    d.check_normalized()
    return d


def wealth_density(u: UtilityFunction, bd: BrownianDrift, x0: float, t: float,
                   convention: str = BROWNIAN) -> Density:
    """Density of wealth at ``t`` for a process whose utility is Brownian with ``bd``.

    Raises :class:`NormalizationError` when a non-negligible part of the
    utility distribution lies outside the range of ``u`` (a utility bounded
    on one side leaves that mass with nowhere to go in wealth space).
    """
    if not u.contains(x0):
        raise ValidationError(f"x0={x0} outside {u.name}'s domain")
    ud = utility_density(bd, float(u.u(x0)), t, convention)
    mean, sd = ud.params["mean"], math.sqrt(ud.params["variance"])
    lo, hi = u.domain

    def pdf(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(xs)
        inside = (xs > lo) & (xs < hi)
        if inside.any():
            with np.errstate(over="ignore", invalid="ignore"):
                v = np.asarray(u.u(xs[inside]), dtype=float)
                z = (v - mean) / sd
                vals = np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi)) * np.asarray(u.u_prime(xs[inside]))
            out[inside] = np.where(np.isfinite(vals), vals, 0.0)
        return out if np.ndim(x) else float(out[0])

    u_grid = _u_quantile_grid(mean, sd)
    rng = u.range
    if rng is not None:
        u_grid = u_grid[(u_grid > rng[0]) & (u_grid < rng[1])]
    try:
        x_grid = np.asarray(u.inverse(u_grid), dtype=float)
    except ValidationError:
        x_grid = _reachable_inverse(u, u_grid)
    x_grid = np.unique(x_grid[np.isfinite(x_grid)])
    params = dict(ud.params, C=u.constant)
    d = Density(pdf, (lo, hi), t, params, x_grid)
    d.check_normalized()
    return d


def _reachable_inverse(u: UtilityFunction, u_grid: np.ndarray) -> np.ndarray:
    keep = []
    for v in u_grid:
        try:
            keep.append(float(u.inverse(v)))
        except (ValidationError, ArithmeticError):
            continue
    return np.array(keep)


# -------------------------------------------------------------- validation


@dataclass
class KSReport:
    ks_statistic: float
    critical: float
    n: int
    passed: bool

    def to_dict(self) -> dict:
        return {"ks_statistic": self.ks_statistic, "critical": self.critical, "n": self.n, "pass": self.passed}


def ks_statistic(samples, cdf) -> float:
    """Two-sided one-sample Kolmogorov-Smirnov statistic."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = xs.size
    F = np.asarray(cdf(xs), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def validate_density(d: Density, samples) -> KSReport:
    """KS test of ``samples`` against ``d``; passes when ``D < 1.63 / sqrt(n)``."""
    xs = np.asarray(samples, dtype=float).ravel()
    if xs.size < 1000:
        raise ValidationError(f"need at least 1000 samples, got {xs.size}")
    lo, hi = d.support
    outside = ~((xs > lo) & (xs < hi))
    if outside.any():
        raise ValidationError(f"{int(outside.sum())} sample(s) outside the support {d.support}")
    D = ks_statistic(xs, d.cdf)
    crit = 1.63 / math.sqrt(xs.size)
    return KSReport(D, crit, int(xs.size), bool(D < crit))


def density_to_csv(d: Density, grid=None) -> str:
    """``x,pdf`` rows over ``grid`` (default: the density's CDF grid)."""
    xs = d.grid if grid is None else np.asarray(grid, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "pdf"])
    for x, f in zip(xs, np.asarray(d.pdf(xs), dtype=float)):
        w.writerow([repr(float(x)), repr(float(f))])
    return buf.getvalue()
