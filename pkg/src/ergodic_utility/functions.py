"""Utility functions, Itô wealth processes and Brownian utility parameters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex

__all__ = [
    "Interval",
    "UtilityFunction",
    "ItoProcess",
    "BrownianDrift",
    "ValidationError",
    "InversionError",
    "UnboundedWarning",
    "invert_monotone",
    "domain_grid",
    "make_utility_from_expr",
    "make_process_from_expr",
    "central_difference",
    "check_utility",
    "check_process",
]

Func = Callable[[np.ndarray], np.ndarray]
Interval = tuple  # (lo, hi); open interval, either end may be infinite

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1 / 3)


class ValidationError(ValueError):
    """A function or process violates one of its structural invariants."""


class InversionError(ValidationError):
    """The inverse of a utility could not be bracketed."""


class UnboundedWarning(UserWarning):
    """Utility appears bounded toward an endpoint of its domain."""


def _as_interval(domain) -> tuple[float, float]:
    lo, hi = (float(v) for v in domain)
    if not lo < hi:
        raise ValidationError(f"empty domain ({lo}, {hi})")
    return lo, hi


def central_difference(f: Func, x, h=None):
    """Central finite difference with step ``cbrt(eps) * (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = FD_STEP * (1.0 + np.abs(x))
    return (f(x + h) - f(x - h)) / (2.0 * h)


def domain_grid(domain, n: int, center: float | None = None, span: float = 10.0) -> np.ndarray:
    """Sample ``n`` points strictly inside ``domain``.

    Finite endpoints are approached geometrically (clustering toward the
    singular end); infinite ends are cut off ``span`` units from ``center``
    on a linear scale. A half-line ``(lo, inf)`` is sampled as
    ``lo + (center - lo) * 10**s`` for ``s`` in ``[-4, 4]``.
    """
    lo, hi = _as_interval(domain)
    finite_lo, finite_hi = math.isfinite(lo), math.isfinite(hi)
    if finite_lo and finite_hi:
        s = (np.arange(n) + 0.5) / n
        return lo + (hi - lo) * (1.0 - np.cos(np.pi * s)) / 2.0
    if center is None:
        if finite_lo:
            center = lo + 1.0
        elif finite_hi:
            center = hi - 1.0
        else:
            center = 0.0
    if finite_lo:
        return lo + (center - lo) * np.logspace(-4, 4, n)
    if finite_hi:
        return (hi - (hi - center) * np.logspace(-4, 4, n))[::-1]
    return np.linspace(center - span, center + span, n)


def _interior_anchor(lo: float, hi: float) -> float:
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo + max(1.0, abs(lo))
    if math.isfinite(hi):
        return hi - max(1.0, abs(hi))
    return 0.0


def _ladder(end: float, anchor: float, sign: float):
    """Expansion points from ``anchor`` toward ``end``: geometric in distance."""
    k = 1
    while True:
        if math.isfinite(end):
            cand = end + (anchor - end) * 0.5**k
            if cand == end:
                return
        else:
            if k > 1024:
                return
            cand = anchor + sign * 2.0 ** (k - 1)
            if not math.isfinite(cand):
                return
        yield cand
        k += 1


def invert_monotone(f: Func, targets, domain, anchor: float | None = None, rtol: float = 1e-12):
    """Solve ``f(x) = target`` for increasing ``f`` by vectorised bisection.

    A bracket ladder is grown geometrically from ``anchor`` toward each
    domain end until it covers every target, then each target is bisected
    until its bracket is narrower than ``rtol * (1 + |x|)``. Targets outside
    the range reachable inside the domain raise :class:`InversionError`.
    """
    lo, hi = _as_interval(domain)
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    if anchor is None:
        anchor = _interior_anchor(lo, hi)

    def fs(v):
        with np.errstate(all="ignore"):
            return float(np.asarray(f(np.array([v]))).ravel()[0])

    pts, vals = [float(anchor)], [fs(anchor)]
    tmin, tmax = np.min(t), np.max(t)
    for cand in _ladder(lo, anchor, -1.0):
        if vals[0] <= tmin:
            break
        pts.insert(0, cand)
        vals.insert(0, fs(cand))
    for cand in _ladder(hi, anchor, +1.0):
        if vals[-1] >= tmax:
            break
        pts.append(cand)
        vals.append(fs(cand))
    pts_a, vals_a = np.array(pts), np.array(vals)
    finite = np.isfinite(vals_a)
    pts_a, vals_a = pts_a[finite], vals_a[finite]
    outside = (t < vals_a[0]) | (t > vals_a[-1]) | ~np.isfinite(t)
    if outside.any():
        raise InversionError(
            f"cannot bracket inverse for target(s) {t[outside][:5]} inside {tuple(domain)}; "
            f"reachable utility range is about [{vals_a[0]:.6g}, {vals_a[-1]:.6g}]"
        )
    idx = np.clip(np.searchsorted(vals_a, t, side="left"), 1, len(vals_a) - 1)
    lo_b, hi_b = pts_a[idx - 1], pts_a[idx]
    hit = vals_a[idx - 1] == t
    for _ in range(2200):
        if np.all(hi_b - lo_b <= rtol * (1.0 + np.abs(lo_b))):
            break
        mid = 0.5 * (lo_b + hi_b)
        go_up = np.asarray(f(mid), dtype=float) < t
        lo_b = np.where(go_up, mid, lo_b)
        hi_b = np.where(go_up, hi_b, mid)
    x = np.where(hit, pts_a[idx - 1], 0.5 * (lo_b + hi_b))
    return x if np.ndim(targets) else float(x[0])


@dataclass(frozen=True, eq=False)
class UtilityFunction:
    """Increasing map of wealth into utils, with derivatives and inverse.

    ``constant`` is the additive constant of integration; it is part of
    ``u`` but ignored by :meth:`same_shape`, since only utility changes
    carry meaning.
    """

    u: Func
    u_prime: Func
    u_double_prime: Func
    inverse: Func
    inverse_prime: Func
    inverse_double_prime: Func
    domain: tuple[float, float]
    name: str = "utility"
    constant: float = 0.0
    source: Optional[ex.Expr] = None
    range: tuple[float, float] | None = None
    reference_x0: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.u(x)

    def contains(self, x) -> np.ndarray:
        lo, hi = self.domain
        x = np.asarray(x)
        return (x > lo) & (x < hi)

    def affine(self, scale: float, shift: float = 0.0) -> "UtilityFunction":
        """``scale * u + shift`` (``scale > 0``); the same preferences in another gauge."""
        if not (scale > 0 and math.isfinite(scale) and math.isfinite(shift)):
            raise ValidationError("affine rescaling needs a finite scale > 0 and a finite shift")
        u, inv, inv1, inv2 = self.u, self.inverse, self.inverse_prime, self.inverse_double_prime
        rng = None if self.range is None else tuple(scale * v + shift for v in self.range)
        return UtilityFunction(
            lambda x: scale * u(x) + shift,
            lambda x: scale * self.u_prime(x),
            lambda x: scale * self.u_double_prime(x),
            lambda v: inv((v - shift) / scale),
            lambda v: inv1((v - shift) / scale) / scale,
            lambda v: inv2((v - shift) / scale) / scale**2,
            self.domain, f"{scale:g}*{self.name}+{shift:g}", scale * self.constant + shift, None, rng,
            self.reference_x0, dict(self.params),
        )

    def same_shape(self, other: "UtilityFunction", grid=None, rtol=1e-9) -> bool:
        """Equality up to the additive constant, checked on a sample grid."""
        grid = domain_grid(self.domain, 64) if grid is None else grid
        a = self.u(grid) - self.constant
        b = other.u(grid) - other.constant
        return bool(np.allclose(a, b, rtol=rtol, atol=rtol))


@dataclass(frozen=True, eq=False)
class ItoProcess:
    """Wealth dynamic ``dx = drift(x) dt + diffusion(x) dW``."""

    drift: Func
    diffusion: Func
    diffusion_prime: Optional[Func]
    domain: tuple[float, float]
    x0: float
    name: str = "process"
    zero_noise: bool = False
    formulas: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = _as_interval(self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        if not lo < self.x0 < hi:
            raise ValidationError(f"x0={self.x0} outside domain ({lo}, {hi})")

    @classmethod
    def deterministic(cls, drift: Func, domain, x0: float, name="deterministic", formulas=None):
        """Zero-noise process; the only sanctioned way to get ``b_x = 0``."""
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls(drift, zero, zero, tuple(domain), float(x0), name, True, dict(formulas or {}))

    def with_x0(self, x0: float) -> "ItoProcess":
        return ItoProcess(self.drift, self.diffusion, self.diffusion_prime, self.domain,
                          float(x0), self.name, self.zero_noise, dict(self.formulas))

    def diffusion_slope(self, x):
        """``b_x'(x)``: symbolic when available, else a central difference."""
        if self.diffusion_prime is not None:
            return self.diffusion_prime(x)
        return central_difference(self.diffusion, x)


@dataclass(frozen=True)
class BrownianDrift:
    """Parameters of ``du = a_u dt + b_u dW``."""

    a_u: float
    b_u: float

    def __post_init__(self):
        if not (math.isfinite(self.a_u) and math.isfinite(self.b_u)):
            raise ValidationError("a_u and b_u must be finite")
        if self.b_u < 0:
            raise ValidationError(f"b_u must be non-negative, got {self.b_u}")

    @property
    def ratio(self) -> float:
        if self.b_u == 0:
            raise ValidationError("a_u/b_u undefined for b_u = 0")
        return self.a_u / self.b_u

    def scaled(self, factor: float) -> "BrownianDrift":
        return BrownianDrift(self.a_u * factor, self.b_u * factor)


# ------------------------------------------------------------ construction


def make_utility_from_expr(e, domain, name=None, grid_size=1024, anchor=None) -> UtilityFunction:
    """Build a :class:`UtilityFunction` from an expression.

    Derivatives are symbolic; the inverse is bracketed bisection. Raises
    :class:`ValidationError` if ``u'`` is not positive on a ``grid_size``
    point grid of the domain.
    """
    if isinstance(e, str):
        e = ex.parse(e)
    lo, hi = _as_interval(domain)
    d1 = ex.differentiate(e)
    d2 = ex.differentiate(d1)
    f, f1, f2 = ex.compile_expr(e), ex.compile_expr(d1), ex.compile_expr(d2)

    def u(x):
        with np.errstate(over="ignore"):
            return f(np.asarray(x, dtype=float)) if np.ndim(x) else float(f(float(x)))

    def u1(x):
        with np.errstate(over="ignore"):
            return f1(np.asarray(x, dtype=float)) if np.ndim(x) else float(f1(float(x)))

    def u2(x):
        with np.errstate(over="ignore"):
            return f2(np.asarray(x, dtype=float)) if np.ndim(x) else float(f2(float(x)))

    grid = domain_grid((lo, hi), grid_size)
    try:
        slope = np.asarray(u1(grid))
        values = np.asarray(u(grid))
    except ex.DomainError as err:
        raise ValidationError(f"utility undefined on its domain: {err}") from err
    if not np.all(np.isfinite(values)):
        raise ValidationError("utility is not finite on domain samples")
    if np.any(slope <= 0) or np.any(np.diff(values) < 0):
        bad = grid[np.argmax(slope <= 0)] if np.any(slope <= 0) else grid[np.argmax(np.diff(values) < 0)]
        raise ValidationError(f"utility '{ex.to_text(e)}' is not strictly increasing near x={bad:.6g}")
    anchor = _interior_anchor(lo, hi) if anchor is None else anchor

    def inverse(v):
        return invert_monotone(u, v, (lo, hi), anchor)

    def inverse_prime(v):
        return 1.0 / u1(inverse(v))

    def inverse_double_prime(v):
        x = inverse(v)
        return -u2(x) / u1(x) ** 3

    return UtilityFunction(
        u, u1, u2, inverse, inverse_prime, inverse_double_prime, (lo, hi),
        name=name or ex.to_text(e), source=e,
    )


def make_process_from_expr(drift, diffusion, domain, x0, name=None, zero_noise=False) -> ItoProcess:
    """Build an :class:`ItoProcess` from drift and diffusion expressions."""
    drift = ex.parse(drift) if isinstance(drift, str) else drift
    if zero_noise:
        fd = ex.compile_expr(drift)
        return ItoProcess.deterministic(lambda x: fd(np.asarray(x, dtype=float)), domain, x0,
                                        name or "expr", {"drift": ex.to_text(drift), "diffusion": "0"})
    diffusion = ex.parse(diffusion) if isinstance(diffusion, str) else diffusion
    fa, fb = ex.compile_expr(drift), ex.compile_expr(diffusion)
    fbp = ex.compile_expr(ex.differentiate(diffusion))
    formulas = {"drift": ex.to_text(drift), "diffusion": ex.to_text(diffusion)}

    def wrap(g):
        def h(x):
            with np.errstate(over="ignore"):
                return g(np.asarray(x, dtype=float)) if np.ndim(x) else float(g(float(x)))
        return h

    return ItoProcess(wrap(fa), wrap(fb), wrap(fbp), tuple(domain), float(x0), name or "expr", False, formulas)


# -------------------------------------------------------------- validation


def check_utility(uf: UtilityFunction, n: int = 1024, center=None, bound: float = 1e6) -> list[str]:
    """Validate the invariants of a utility function on a sample grid.

    Raises :class:`ValidationError` on monotonicity, round-trip or
    derivative failures. Returns warnings; an apparently bounded end on an
    unbounded domain is reported there, not raised, because boundedness
    cannot be decided from samples.
    """
    grid = domain_grid(uf.domain, n, center=center)
    slope = np.asarray(uf.u_prime(grid))
    if np.any(~(slope > 0)):
        raise ValidationError(f"{uf.name}: u' not positive at x={grid[np.argmax(~(slope > 0))]:.6g}")
    values = np.asarray(uf.u(grid))
    back = np.asarray(uf.inverse(values))
    err = np.abs(back - grid) / (1.0 + np.abs(grid))
    if np.max(err) > 1e-9:
        raise ValidationError(f"{uf.name}: inverse round-trip error {np.max(err):.3g}")
    lo, hi = uf.domain
    # shrink the step near a finite endpoint so x +- h stays well inside
    reach = np.minimum(1.0 + np.abs(grid), np.minimum(grid - lo, hi - grid))
    fd = central_difference(uf.u, grid, FD_STEP * reach)
    if np.any(np.abs(fd - slope) > 1e-6 * (1.0 + np.abs(slope))):
        raise ValidationError(f"{uf.name}: u' disagrees with finite differences")
    notes = []
    for end, sign in ((lo, -1.0), (hi, +1.0)):
        if math.isfinite(end) and end != 0.0:
            continue
        if not _looks_unbounded(uf, end, sign, bound):
            msg = f"{uf.name}: u appears bounded approaching x -> {end}"
            notes.append(msg)
            warnings.warn(msg, UnboundedWarning, stacklevel=2)
    return notes


def _looks_unbounded(uf: UtilityFunction, end: float, sign: float, bound: float) -> bool:
    """Heuristic: |u| passes ``bound``, or its growth per decade of approach does not die out."""
    probe = _endpoint_probe(end, sign)
    with np.errstate(all="ignore"):
        vals = np.asarray(uf.u(probe), dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size < 4:
        return True  # overflowed on the way out
    if np.max(np.abs(vals)) > bound:
        return True
    steps = np.abs(np.diff(vals))
    # logarithmic growth gives constant steps; a bounded approach gives shrinking ones
    return bool(steps[-1] > 0.5 * steps[len(steps) // 2])


def _endpoint_probe(end: float, sign: float) -> np.ndarray:
    if math.isfinite(end):
        return end - sign * np.logspace(-1, -300, 64)
    return sign * np.logspace(0, 300, 64)


def check_process(p: ItoProcess, n: int = 256) -> None:
    """Validate ``x0`` membership and positivity of the diffusion."""
    lo, hi = p.domain
    if not lo < p.x0 < hi:
        raise ValidationError(f"{p.name}: x0 outside domain")
    if p.zero_noise:
        return
    grid = domain_grid(p.domain, n, center=p.x0 if not (math.isfinite(lo) and math.isfinite(hi)) else None)
    with np.errstate(all="ignore"):
        b = np.asarray(p.diffusion(grid))
    ok = np.isfinite(b)
    if np.any(b[ok] <= 0):
        raise ValidationError(f"{p.name}: diffusion not positive at x={grid[ok][np.argmax(b[ok] <= 0)]:.6g}")
