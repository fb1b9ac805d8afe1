"""Growth-rate estimators, the ergodicity check and the time-based decision rule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .duality import implied_brownian_drift
from .functions import ItoProcess, UtilityFunction, ValidationError
from .sde import SamplePath, SimConfig, simulate, simulate_at, transform_path

__all__ = [
    "GrowthEstimate",
    "ErgodicityReport",
    "DecisionResult",
    "LadderPoint",
    "time_average_rate",
    "ensemble_average_rate",
    "ergodicity_check",
    "decide",
    "wilson_interval",
    "dominance_ladder",
]

TIME_AVERAGE = "time_average"
ENSEMBLE_AVERAGE = "ensemble_average"


@dataclass(frozen=True)
class GrowthEstimate:
    rate: float
    std_error: float
    method: str
    delta_t: float
    n: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValidationError("std_error must be non-negative")
        if self.n < 2:
            raise ValidationError("a growth estimate needs at least two samples")

    def to_dict(self) -> dict:
        return asdict(self)


def _sem(values: np.ndarray) -> float:
    """Standard error of the mean; exactly zero for constant samples."""
    if np.all(values == values[0]):
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def time_average_rate(u_path: SamplePath, block_dt: float) -> GrowthEstimate:
    """Mean of block increments ``du_m / block_dt`` along one path.

    ``block_dt`` is rounded to a whole number of path steps. Needs at least
    ten blocks.
    """
    steps = int(round(block_dt / u_path.dt))
    if steps < 1:
        raise ValidationError(f"block_dt={block_dt} is shorter than the path step {u_path.dt}")
    M = (len(u_path.values) - 1) // steps
    if M < 10:
        raise ValidationError(f"only {M} blocks of length {block_dt} fit in the path; need at least 10")
    marks = u_path.values[: M * steps + 1 : steps]
    actual = steps * u_path.dt
    rates = np.diff(marks) / actual
    return GrowthEstimate(float(np.mean(rates)), _sem(rates), TIME_AVERAGE, actual, M)


def ensemble_average_rate(u_increments, delta_t) -> GrowthEstimate:
    """Mean of independent increments ``du_n / delta_t``.

    ``delta_t`` may be a scalar or one value per increment; the latter must
    all agree.
    """
    du = np.asarray(u_increments, dtype=float).ravel()
    if du.size < 2:
        raise ValidationError("need at least two increments")
    dts = np.atleast_1d(np.asarray(delta_t, dtype=float))
    if dts.size > 1:
        if dts.size != du.size:
            raise ValidationError("one delta_t per increment expected")
        if not np.allclose(dts, dts[0], rtol=1e-12, atol=0.0):
            raise ValidationError("increments measured over different delta_t")
    dt = float(dts[0])
    if not dt > 0:
        raise ValidationError("delta_t must be positive")
    if not np.all(np.isfinite(du)):
        raise ValidationError("increments must be finite")
    n = du.size
    return GrowthEstimate(float(np.mean(du) / dt), _sem(du) / dt, ENSEMBLE_AVERAGE, dt, n)


@dataclass
class ErgodicityReport:
    time_rate: GrowthEstimate
    ensemble_rate: GrowthEstimate
    compatible: bool
    rates_agree: bool
    stationary: bool
    stationarity_pvalue: float
    z_score: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["time_rate"] = self.time_rate.to_dict()
        out["ensemble_rate"] = self.ensemble_rate.to_dict()
        return out


def ergodicity_check(p: ItoProcess, u: UtilityFunction, cfg: SimConfig, block_dt: float = 1.0,
                     stationarity_alpha: float = 1e-3, workers: int = 1) -> ErgodicityReport:
    """Compare the time average of ``du/dt`` along one long path with its ensemble average.

    One path of length ``cfg.horizon`` (stream ``cfg.stream``) gives the
    time average over blocks of ``block_dt``; ``cfg.n_paths`` independent
    paths over ``block_dt`` (stream ``cfg.stream + 1``) give the ensemble
    average. The rates agree when they differ by at most three combined
    standard errors. Agreement alone does not make the observable ergodic
    when its increments drift in distribution, so ``compatible`` also
    requires that the first and second halves of the block increments pass
    a two-sample KS test at ``stationarity_alpha``.
    """
    long_cfg = cfg.replace(n_paths=1)
    ens = simulate(p, long_cfg, workers=1)
    if len(ens) == 0:
        raise ValidationError(f"the long path failed: {ens.diagnostics()}")
    u_path = transform_path(ens[0], u)
    t_rate = time_average_rate(u_path, block_dt)

    ens_cfg = cfg.replace(horizon=block_dt, stream=cfg.stream + 1)
    short = simulate_at(p, ens_cfg, [block_dt], workers=workers)
    good = short.ok
    if good.sum() < 2:
        raise ValidationError(f"ensemble paths failed: {short.diagnostics()}")
    x_end = short.values[good, -1]
    du = np.asarray(u.u(x_end)) - float(u.u(p.x0))
    e_rate = ensemble_average_rate(du, short.times[-1])

    se = math.hypot(t_rate.std_error, e_rate.std_error)
    gap = t_rate.rate - e_rate.rate
    agree = abs(gap) <= 3.0 * se
    steps = int(round(block_dt / u_path.dt))
    blocks = np.diff(u_path.values[: t_rate.n * steps + 1 : steps])
    half = len(blocks) // 2
    pval = float(stats.ks_2samp(blocks[:half], blocks[half:]).pvalue)
    stationary = pval >= stationarity_alpha
    diag = {
        "long_path": ens.diagnostics(),
        "ensemble": {k: v for k, v in short.diagnostics().items() if k != "aborted" or v},
        "config": cfg.to_dict(),
        "block_dt": block_dt,
    }
    z = gap / se if se > 0 else (0.0 if gap == 0 else math.copysign(math.inf, gap))
    return ErgodicityReport(t_rate, e_rate, bool(agree and stationary), bool(agree), bool(stationary),
                            pval, float(z), diag)


# ----------------------------------------------------------------- decision


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class LadderPoint:
    delta_t: float
    p_hat: float
    lower: float
    upper: float
    n: int


@dataclass
class DecisionResult:
    chosen: str | None
    p_dominance: float
    delta_t_used: float
    epsilon: float
    rate_gap: float
    converged: bool
    outcome: str
    rate: GrowthEstimate | None = None
    rate_star: GrowthEstimate | None = None
    ladder: list = field(default_factory=list)
    names: tuple = ("p", "p_star")
    seeds: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_dominance <= 1.0:
            raise ValidationError("p_dominance must lie in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValidationError("epsilon must lie in (0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rate"] = self.rate.to_dict() if self.rate else None
        out["rate_star"] = self.rate_star.to_dict() if self.rate_star else None
        out["ladder"] = [asdict(pt) for pt in self.ladder]
        out["names"] = list(self.names)
        return out


def _ladder_times(horizon: float) -> list[float]:
    out, t = [], 1.0
    while t <= horizon * (1 + 1e-12):
        out.append(t)
        t *= 2.0
    if not out:
        raise ValidationError("horizon must be at least 1 for the decision ladder")
    return out


def dominance_ladder(xa: np.ndarray, xb: np.ndarray, x0a: float, x0b: float, times, ok) -> list[LadderPoint]:
    """Fraction of pairs with ``dx > dx*`` at each horizon, with Wilson bounds."""
    pts = []
    for j, t in enumerate(times):
        da, db = xa[ok, j] - x0a, xb[ok, j] - x0b
        wins = int(np.sum(da > db))
        n = int(ok.sum())
        lo, hi = wilson_interval(wins, n)
        pts.append(LadderPoint(float(t), wins / n, lo, hi, n))
    return pts


def decide(p: ItoProcess, p_star: ItoProcess, u: UtilityFunction, epsilon: float = 0.05,
           cfg: SimConfig | None = None, ladder=None, common_noise: bool = False,
           pure_simulation: bool = False, workers: int = 1, names=None) -> DecisionResult:
    """Pick the process whose wealth ends up ahead with probability near one.

    Both processes are simulated ``cfg.n_paths`` times with independent
    noise (``common_noise`` reuses one stream for both; a variance-reduction
    extension). The choice follows the larger utility growth rate, each
    estimated from the per-path time averages ``(u(x_T) - u(x_0)) / T`` at
    the horizon; when the rates differ by less than three combined standard
    errors the outcome is ``no_decision``. ``P(dx > dx*)`` is tabulated on
    the ladder ``1, 2, 4, ...`` and reported at the largest ``dt`` whose 95%
    Wilson interval clears ``1 - epsilon`` on the chosen side; otherwise at
    the horizon with ``converged = False``.

    Unless ``pure_simulation`` is set, ``u`` must turn both processes into
    Brownian motions.
    """
    cfg = cfg or SimConfig(dt=0.01, horizon=64.0, n_paths=4000)
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("epsilon must lie in (0, 1)")
    if cfg.n_paths < 2:
        raise ValidationError("decide needs at least two paths per process")
    names = tuple(names or (p.name, p_star.name))
    if names[0] == names[1]:
        names = (names[0] + "#1", names[1] + "#2")
    fits = {}
    if not pure_simulation:
        for label, proc in zip(names, (p, p_star)):
            bd, residual = implied_brownian_drift(proc, u)
            if bd is None:
                raise ValidationError(
                    f"{label}: utility {u.name} does not make this process Brownian (residual {residual:.3g}); "
                    "pass pure_simulation=True to decide by simulation alone")
            fits[label] = {"a_u": bd.a_u, "b_u": bd.b_u}
    times = _ladder_times(cfg.horizon) if ladder is None else sorted(float(t) for t in ladder)
    horizon = max(times)
    cfg_a = cfg.replace(horizon=max(horizon, cfg.dt))
    cfg_b = cfg_a.replace(stream=cfg.stream if common_noise else cfg.stream + 1)
    ea = simulate_at(p, cfg_a, times, workers=workers)
    eb = simulate_at(p_star, cfg_b, times, workers=workers)
    ok = ea.ok & eb.ok
    if ok.sum() < 2:
        raise ValidationError("too few surviving path pairs to decide")
    cols = [int(np.argmin(np.abs(ea.times - t))) for t in times]
    xa, xb = ea.values[:, cols], eb.values[:, cols]
    pts = dominance_ladder(xa, xb, p.x0, p_star.x0, times, ok)

    T = float(ea.times[cols[-1]])
    ra = (np.asarray(u.u(xa[ea.ok, -1])) - float(u.u(p.x0))) / T
    rb = (np.asarray(u.u(xb[eb.ok, -1])) - float(u.u(p_star.x0))) / T
    rate = GrowthEstimate(float(np.mean(ra)), _sem(ra), TIME_AVERAGE, T, ra.size)
    rate_star = GrowthEstimate(float(np.mean(rb)), _sem(rb), TIME_AVERAGE, T, rb.size)
    gap = rate.rate - rate_star.rate
    se = math.hypot(rate.std_error, rate_star.std_error)
    seeds = {"seed": cfg.seed, "stream": cfg_a.stream, "stream_star": cfg_b.stream}
    diag = {"paths": ea.diagnostics(), "paths_star": eb.diagnostics(), "config": cfg.to_dict(),
            "utility_fit": fits, "common_noise": common_noise}
    if abs(gap) < 3.0 * se or se == 0 and gap == 0:
        last = pts[-1]
        return DecisionResult(None, last.p_hat, last.delta_t, epsilon, gap, False, "no_decision",
                              rate, rate_star, pts, names, seeds, diag)
    first_wins = gap > 0
    chosen = names[0] if first_wins else names[1]
    cleared = [pt for pt in pts if (pt.lower > 1 - epsilon if first_wins else pt.upper < epsilon)]
    best = cleared[-1] if cleared else pts[-1]
    return DecisionResult(chosen, best.p_hat, best.delta_t, epsilon, gap, bool(cleared),
                          "decided" if cleared else "decided_not_converged",
                          rate, rate_star, pts, names, seeds, diag)
