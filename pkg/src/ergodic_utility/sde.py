"""Euler-Maruyama simulation of Itô wealth processes.

Every path draws its normals from its own counter-based stream (Philox
keyed by ``(seed, stream, path_index)``), turned into normals by the
inverse normal CDF. Paths are integrated in fixed-size blocks whose
layout depends only on the configuration, so results are bit-identical
for any number of worker threads.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtri

from .functions import ItoProcess, UtilityFunction, ValidationError

__all__ = [
    "BoundaryPolicy",
    "SimConfig",
    "SamplePath",
    "PathEnsemble",
    "SimulationError",
    "normal_stream",
    "simulate",
    "simulate_at",
    "transform_path",
    "paths_to_csv",
]

_BLOCK_BUDGET = 1 << 21  # normals held in memory per block


class BoundaryPolicy(str, enum.Enum):
    REFLECT_AT_EPSILON = "reflect_at_epsilon"
    REJECT_PATH = "reject_path"


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    horizon: float = 1.0
    n_paths: int = 1
    seed: int = 0
    scheme: str = "euler_maruyama"
    boundary_policy: BoundaryPolicy = BoundaryPolicy.REFLECT_AT_EPSILON
    boundary_epsilon: float | None = None
    stream: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not self.horizon >= self.dt:
            raise ValidationError(f"horizon ({self.horizon}) must be at least dt ({self.dt})")
        if int(self.n_paths) < 1:
            raise ValidationError("n_paths must be at least 1")
        if self.scheme != "euler_maruyama":
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "boundary_policy", BoundaryPolicy(self.boundary_policy))
        object.__setattr__(self, "n_paths", int(self.n_paths))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def replace(self, **changes) -> "SimConfig":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SimConfig(**values)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt, "horizon": self.horizon, "n_paths": self.n_paths, "seed": self.seed,
            "scheme": self.scheme, "boundary_policy": self.boundary_policy.value,
            "boundary_epsilon": self.boundary_epsilon, "stream": self.stream,
        }


@dataclass(frozen=True)
class SamplePath:
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if len(values) < 2:
            raise ValidationError("a sample path needs at least two values")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not np.all(np.isfinite(values)):
            raise ValidationError("sample path values must be finite")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.values) - 1)


@dataclass
class PathEnsemble(Sequence):
    """Simulated paths; iterates over the :class:`SamplePath` of good paths.

    ``values`` has one row per path (NaN after a path was aborted or
    rejected). ``aborted`` maps path index to the step at which the state
    stopped being finite; ``rejected`` does the same for boundary crossings
    under ``reject_path``.
    """

    times: np.ndarray
    values: np.ndarray
    config: SimConfig
    aborted: dict = field(default_factory=dict)
    rejected: dict = field(default_factory=dict)
    reflections: int = 0

    @property
    def ok(self) -> np.ndarray:
        mask = np.ones(self.values.shape[0], dtype=bool)
        for i in list(self.aborted) + list(self.rejected):
            mask[i] = False
        return mask

    @property
    def good_indices(self) -> np.ndarray:
        return np.flatnonzero(self.ok)

    def _path(self, i: int) -> SamplePath:
        return SamplePath(float(self.times[0]), float(self.times[1] - self.times[0]), self.values[i])

    def __len__(self) -> int:
        return int(self.ok.sum())

    def __getitem__(self, k):
        idx = self.good_indices
        if isinstance(k, slice):
            return [self._path(i) for i in idx[k]]
        return self._path(int(idx[k]))

    def __iter__(self) -> Iterator[SamplePath]:
        for i in self.good_indices:
            yield self._path(int(i))

    def diagnostics(self) -> dict:
        return {
            "n_paths": int(self.values.shape[0]),
            "n_good": len(self),
            "aborted": {int(k): int(v) for k, v in sorted(self.aborted.items())},
            "rejected": {int(k): int(v) for k, v in sorted(self.rejected.items())},
            "reflections": int(self.reflections),
        }


# ------------------------------------------------------------------ streams


def _stream_key(seed: int, stream: int, path: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(path)])
    return ss.generate_state(2, dtype=np.uint64)


def normal_stream(seed: int, stream: int, path: int, n: int, offset: int = 0) -> np.ndarray:
    """Standard normals ``z[offset : offset + n]`` of one path's stream.

    Each Philox counter block yields four 64-bit words; ``offset`` jumps the
    counter directly, so any window of the stream is reproducible on its own.
    """
    bg = np.random.Philox(key=_stream_key(seed, stream, path))
    blocks, rem = divmod(int(offset), 4)
    if blocks:
        bg.advance(blocks)
    raw = bg.random_raw(n + rem)[rem:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


# ---------------------------------------------------------------- stepping


def _epsilon(p: ItoProcess, cfg: SimConfig) -> float:
    if cfg.boundary_epsilon is not None:
        return float(cfg.boundary_epsilon)
    return 1e-12 * (1.0 + abs(p.x0))


def _run_single(p: ItoProcess, cfg: SimConfig, path: int, record: np.ndarray):
    """One path with plain float arithmetic; numpy overhead dominates otherwise."""
    n_steps = cfg.n_steps
    z = normal_stream(cfg.seed, cfg.stream, path, n_steps).tolist() if not p.zero_noise else None
    dt, sq = cfg.dt, math.sqrt(cfg.dt)
    lo, hi = p.domain
    eps = _epsilon(p, cfg)
    reflect = cfg.boundary_policy is BoundaryPolicy.REFLECT_AT_EPSILON
    floor = lo + eps if math.isfinite(lo) else -math.inf
    ceil = hi - eps if math.isfinite(hi) else math.inf
    drift, diffusion = p.drift, p.diffusion
    xs = [math.nan] * (n_steps + 1)
    x = xs[0] = float(p.x0)
    aborted, rejected, reflections = {}, {}, 0
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            try:
                a = float(drift(x))
                new = x + a * dt if z is None else x + a * dt + float(diffusion(x)) * sq * z[k]
            except ArithmeticError:
                new = math.nan
            if not math.isfinite(new):
                aborted[path] = k + 1
                break
            if new <= lo or new >= hi:
                if not reflect:
                    rejected[path] = k + 1
                    break
                reflections += 1
                if new <= lo:
                    new = max(2.0 * floor - new, floor)
                else:
                    new = min(2.0 * ceil - new, ceil)
                new = min(max(new, floor), ceil)
            x = xs[k + 1] = new
    out = np.asarray(xs)[record][None, :]
    return out, aborted, rejected, reflections


def _run_block(p: ItoProcess, cfg: SimConfig, paths: np.ndarray, record: np.ndarray):
    n_steps = cfg.n_steps
    m = len(paths)
    if m == 1:
        return _run_single(p, cfg, int(paths[0]), record)
    noise = np.empty((m, n_steps))
    if not p.zero_noise:
        for j, i in enumerate(paths):
            noise[j] = normal_stream(cfg.seed, cfg.stream, int(i), n_steps)
    sq = math.sqrt(cfg.dt)
    lo, hi = p.domain
    eps = _epsilon(p, cfg)
    reflect = cfg.boundary_policy is BoundaryPolicy.REFLECT_AT_EPSILON
    x = np.full(m, float(p.x0))
    alive = np.ones(m, dtype=bool)
    out = np.full((m, len(record)), np.nan)
    rec_pos = {int(k): j for j, k in enumerate(record)}
    aborted, rejected = {}, {}
    reflections = 0
    if 0 in rec_pos:
        out[:, rec_pos[0]] = x
    for k in range(n_steps):
        idx = np.flatnonzero(alive) if not alive.all() else None
        xa = x if idx is None else x[idx]
        if xa.size == 0:
            break
        with np.errstate(all="ignore"):
            a = np.asarray(p.drift(xa), dtype=float)
            if p.zero_noise:
                new = xa + a * cfg.dt
            else:
                b = np.asarray(p.diffusion(xa), dtype=float)
                z = noise[:, k] if idx is None else noise[idx, k]
                new = xa + a * cfg.dt + b * sq * z
        bad = ~np.isfinite(new)
        low = new <= lo
        high = new >= hi
        crossed = (low | high) & ~bad
        if crossed.any():
            if reflect:
                reflections += int(crossed.sum())
                if math.isfinite(lo):
                    floor = lo + eps
                    new = np.where(low, np.maximum(2.0 * floor - new, floor), new)
                if math.isfinite(hi):
                    ceil = hi - eps
                    new = np.where(high, np.minimum(2.0 * ceil - new, ceil), new)
                # reflection can overshoot the opposite end of a narrow domain
                new = np.clip(new, lo + eps if math.isfinite(lo) else None,
                              hi - eps if math.isfinite(hi) else None)
            else:
                for j in np.flatnonzero(crossed):
                    rejected[int(paths[j if idx is None else idx[j]])] = k + 1
        dead = bad if reflect else (bad | crossed)
        if idx is None:
            x = new
            if dead.any():
                alive[dead] = False
                x = np.where(dead, np.nan, x)
        else:
            x[idx] = np.where(dead, np.nan, new)
            alive[idx[dead]] = False
        for j in np.flatnonzero(bad):
            aborted[int(paths[j if idx is None else idx[j]])] = k + 1
        if k + 1 in rec_pos:
            out[:, rec_pos[k + 1]] = np.where(alive, x, np.nan)
    return out, aborted, rejected, reflections


def _block_layout(n_paths: int, n_steps: int) -> list[np.ndarray]:
    size = max(1, min(4096, _BLOCK_BUDGET // max(1, n_steps)))
    return [np.arange(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def _integrate(p: ItoProcess, cfg: SimConfig, record: np.ndarray, workers: int = 1):
    if not p.domain[0] < p.x0 < p.domain[1]:
        raise ValidationError(f"{p.name}: x0 must lie inside the domain")
    blocks = _block_layout(cfg.n_paths, cfg.n_steps)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: _run_block(p, cfg, b, record), blocks))
    else:
        results = [_run_block(p, cfg, b, record) for b in blocks]
    values = np.concatenate([r[0] for r in results], axis=0)
    aborted, rejected, refl = {}, {}, 0
    for _, ab, rj, rf in results:
        aborted.update(ab)
        rejected.update(rj)
        refl += rf
    return values, aborted, rejected, refl


def simulate(p: ItoProcess, cfg: SimConfig, workers: int = 1) -> PathEnsemble:
    """Integrate ``cfg.n_paths`` paths of ``p`` on the full time grid.

    Paths whose state stops being finite are aborted (``aborted`` records
    the step index); boundary crossings follow ``cfg.boundary_policy``.
    """
    n = cfg.n_steps
    record = np.arange(n + 1)
    values, aborted, rejected, refl = _integrate(p, cfg, record, workers)
    return PathEnsemble(cfg.dt * record, values, cfg, aborted, rejected, refl)


def simulate_at(p: ItoProcess, cfg: SimConfig, times, workers: int = 1) -> PathEnsemble:
    """Like :func:`simulate` but keeps only the states at ``times``.

    ``times`` are rounded to the step grid; 0 is always included. The noise
    is the same as in :func:`simulate` with the same configuration.
    """
    steps = np.unique(np.concatenate([[0], np.rint(np.asarray(times, dtype=float) / cfg.dt).astype(int)]))
    if steps[-1] > cfg.n_steps or steps[0] < 0:
        raise ValidationError("requested times fall outside [0, horizon]")
    values, aborted, rejected, refl = _integrate(p, cfg, steps, workers)
    return PathEnsemble(steps * cfg.dt, values, cfg, aborted, rejected, refl)


def transform_path(path: SamplePath, u: UtilityFunction) -> SamplePath:
    """Apply ``u`` pointwise; raises ``ValidationError`` naming the first bad step."""
    inside = u.contains(path.values)
    if not inside.all():
        k = int(np.argmin(inside))
        raise ValidationError(f"path value {path.values[k]:.6g} at step {k} is outside {u.name}'s domain")
    return SamplePath(path.t0, path.dt, np.asarray(u.u(path.values), dtype=float))


def paths_to_csv(paths, t0: float | None = None, dt: float | None = None) -> str:
    """CSV text: ``t,value`` for one path, ``t,path_0,...`` for an ensemble."""
    if isinstance(paths, SamplePath):
        paths = [paths]
        single = True
    else:
        paths = list(paths)
        single = False
    if not paths:
        raise ValidationError("no paths to write")
    times = paths[0].times
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value"] if single else ["t"] + [f"path_{i}" for i in range(len(paths))])
    cols = np.column_stack([times] + [q.values for q in paths])
    for row in cols:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
