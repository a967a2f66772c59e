"""Path engine: seeded Brownian ensembles and pathwise functionals.

The single-path API here is the reference implementation.  The chunked
ensemble sweeps in rtlab.sweeps consume the identical keyed noise (see
rtlab.rng), so a sweep path and a sample_bm path with the same
(master_seed, path_index) agree bit for bit; tests rely on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng

# Chunk length of the per-path noise streams.  Part of the stream layout:
# changing it changes the (seed, path) -> increments mapping.
CHUNK_STEPS = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon]; time of index k is exactly k*dt."""
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def index_at(self, t: float) -> int:
        """Grid index of time t (must sit on the grid up to rounding)."""
        k = int(round(t / self.dt))
        if not (0 <= k <= self.n_steps):
            raise ValueError(f"time {t} outside grid")
        return k


@dataclass(frozen=True)
class RngStream:
    """Identifies one path's increment stream; pure function of the pair."""
    master_seed: int
    path_index: int


@dataclass
class SamplePath:
    """Discretized trajectory; values frozen after absorbed_at if set."""
    grid: TimeGrid
    values: np.ndarray
    absorbed_at: Optional[int] = None
    # interpolated absorption time, when absorbed_at is set
    absorbed_time: Optional[float] = None

    def __post_init__(self):
        if len(self.values) != self.grid.n_steps + 1:
            raise ValueError("values length must be n_steps + 1")


def sample_bm(grid: TimeGrid, stream: RngStream, drift: float = 0.0,
              start: float = 0.0, absorb_at_zero: bool = False,
              phase: int = 0, purpose: int = rng.MAIN) -> SamplePath:
    """Brownian path with constant drift on the grid.

    Increments are Gaussian with mean drift*dt and variance dt.  With
    absorb_at_zero the path freezes at the first grid-interpolated zero
    crossing and absorbed_at records the straddle's right index.
    """
    z = rng.path_normals(stream.master_seed, purpose, stream.path_index,
                         phase, grid.n_steps, CHUNK_STEPS)
    inc = drift * grid.dt + math.sqrt(grid.dt) * z
    values = np.empty(grid.n_steps + 1)
    values[0] = start
    np.cumsum(inc, out=values[1:])
    values[1:] += start
    path = SamplePath(grid, values)
    if absorb_at_zero:
        _absorb_at_zero(path)
    return path


def _absorb_at_zero(path: SamplePath) -> None:
    v = path.values
    below = v <= 0.0
    if v[0] <= 0.0:
        k = 0
        frac = 0.0
    elif not below.any():
        return
    else:
        k = int(np.argmax(below))
        # linear interpolation of the crossing inside [k-1, k]
        frac = v[k - 1] / (v[k - 1] - v[k])
    v[k:] = 0.0
    path.absorbed_at = k
    path.absorbed_time = (k - 1 + frac) * path.grid.dt if k > 0 else 0.0


def running_max(path: SamplePath) -> SamplePath:
    return SamplePath(path.grid, np.maximum.accumulate(path.values),
                      path.absorbed_at, path.absorbed_time)


def running_min(path: SamplePath) -> SamplePath:
    return SamplePath(path.grid, np.minimum.accumulate(path.values),
                      path.absorbed_at, path.absorbed_time)


def positive_part(path: SamplePath) -> SamplePath:
    return SamplePath(path.grid, np.maximum(path.values, 0.0),
                      path.absorbed_at, path.absorbed_time)


def first_hit(path: SamplePath, level: float) -> Optional[int]:
    """Smallest index k with a sign change of values-level on [k-1, k].

    Linear-interpolation convention: a crossing is a strict sign change
    between adjacent grid points.  A path starting at the level reports its
    first return (the t > 0 convention), not index 0.  Returns None when
    the level is never hit within the horizon.
    """
    d = path.values - level
    s = d[:-1] * d[1:]
    hit = (s < 0.0) | (d[1:] == 0.0)
    if not hit.any():
        return None
    return int(np.argmax(hit)) + 1


def crossing_time(path: SamplePath, k: int, level: float) -> float:
    """Interpolated time of the crossing detected on [k-1, k]."""
    v = path.values
    d0, d1 = v[k - 1] - level, v[k] - level
    frac = 0.5 if d0 == d1 else d0 / (d0 - d1)
    return (k - 1 + frac) * path.grid.dt


def local_time_at_zero(path: SamplePath) -> SamplePath:
    """Crossing-count estimator of the local time at zero.

    L_t = sqrt(pi*dt/2) * #{grid intervals up to t with a sign change}.
    """
    v = path.values
    cross = (v[:-1] * v[1:]) < 0.0
    out = np.zeros(len(v))
    np.cumsum(cross, out=out[1:])
    out *= math.sqrt(math.pi * path.grid.dt / 2.0)
    return SamplePath(path.grid, out, path.absorbed_at, path.absorbed_time)


def local_time_tanaka(path: SamplePath) -> SamplePath:
    """Tanaka-form estimator |B_t| - |B_0| - sum sgn(B) dB (cross-check)."""
    v = path.values
    out = np.empty(len(v))
    out[0] = 0.0
    np.cumsum(np.sign(v[:-1]) * np.diff(v), out=out[1:])
    np.subtract(np.abs(v[1:]) - abs(v[0]), out[1:], out=out[1:])
    return SamplePath(path.grid, out, path.absorbed_at, path.absorbed_time)
