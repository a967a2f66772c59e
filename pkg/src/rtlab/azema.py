"""Azema supermartingales: closed forms, decompositions, nested MC oracle.

Closed forms per scenario (B is the driving path, N the absorbed one):
  S1: Z = 1 - B^+ stopped at T1; dZ = -1{B>0}dB - dL/2, so A = L/2.
  S2: Z = 1 - Bbar stopped at T1; decreasing, so A = Bbar, N = 1, D = Z.
  S3: Z = N/Nbar; A = log Nbar; D = 1/Nbar.
  S6: Z = sqrt(2/pi) * int_{|W|/sqrt(1-t)}^inf x^2 e^{-x^2/2} dx, with the
      printed dA density and D by trapezoidal accumulation of dA/Z.
  S7: the conditional-density forms of the |B_1|-tilted measure: k = |B|,
      rho_t the Gaussian mixture, Z = 1 - k/rho_t; A accumulates on {B = 0}
      through the local-time increment scaled by 1/rho.
The multiplicative factor always uses D = exp(-int dA/Z) with a floor on Z
(bundles where D -> 0 would otherwise divide by zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import rng
from .engine import SamplePath, first_hit
from .numerics import gauss_tail_x2, norm_cdf
from .scenarios import ScenarioId, RandomTimeResult

Z_FLOOR = 1e-12
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class SupermartingaleBundle:
    Z: np.ndarray
    A: np.ndarray
    m: np.ndarray
    N: np.ndarray
    D: np.ndarray

    def check_invariants(self, rel_tol: float = 1e-9) -> None:
        if np.any(self.Z < -1e-12) or np.any(self.Z > 1.0 + 1e-12):
            raise AssertionError("Z outside [0, 1]")
        if np.any(np.diff(self.A) < -1e-12):
            raise AssertionError("A not nondecreasing")
        if np.any(np.diff(self.D) > 1e-12):
            raise AssertionError("D not nonincreasing")
        err = np.abs(self.Z - self.N * self.D)
        scale = np.maximum(np.abs(self.Z), 1e-3)
        if np.max(err / scale) > rel_tol:
            raise AssertionError("Z != N*D beyond tolerance")


@dataclass
class QBundle:
    rho_t: np.ndarray
    Z_Q: np.ndarray
    N_Q: np.ndarray
    D_Q: np.ndarray
    D_P: np.ndarray


def _d_from_a(Z: np.ndarray, A: np.ndarray) -> np.ndarray:
    """D = exp(-int dA/Z), trapezoidal in dA with a floored Z."""
    zf = np.maximum(Z, Z_FLOOR)
    da = np.diff(A)
    integrand = 0.5 * da * (1.0 / zf[:-1] + 1.0 / zf[1:])
    out = np.empty_like(Z)
    out[0] = 0.0
    np.cumsum(integrand, out=out[1:])
    np.exp(-out, out=out)
    return out


def local_time_raw(values: np.ndarray, dt: float, upto: int) -> np.ndarray:
    """Crossing-count local time on the grid, frozen after index upto."""
    cross = np.zeros(len(values), dtype=bool)
    cross[1:upto + 1] = values[:upto] * values[1:upto + 1] < 0.0
    out = np.cumsum(cross).astype(float)
    out *= math.sqrt(math.pi * dt / 2.0)
    return out


def closed_form_bundle(scenario: ScenarioId, path: SamplePath,
                       result: Optional[RandomTimeResult] = None
                       ) -> SupermartingaleBundle:
    v = path.values
    grid = path.grid
    n = grid.n_steps

    if scenario is ScenarioId.S1_excursion_honest:
        t1 = first_hit(path, 1.0)
        upto = t1 if t1 is not None else n
        vs = v.copy()
        vs[upto:] = 1.0 if t1 is not None else vs[upto:]
        Z = 1.0 - np.maximum(np.minimum.reduce([vs, np.ones_like(vs)]), 0.0)
        if np.any(Z[:max(upto, 1)] < -1e-12):
            raise ValueError("Z <= 0 before sigma: discretization failure")
        A = 0.5 * local_time_raw(v, grid.dt, upto)
        m = Z + A
        D = _d_from_a(Z, A)
        N = Z / np.maximum(D, Z_FLOOR)
        return SupermartingaleBundle(Z, A, m, N, D)

    if scenario is ScenarioId.S2_pi_pseudo:
        t1 = first_hit(path, 1.0)
        upto = t1 if t1 is not None else n
        mbar = np.maximum.accumulate(v)
        mbar = np.minimum(mbar, 1.0)
        if t1 is not None:
            mbar[upto:] = 1.0
        A = np.maximum(mbar, 0.0)
        Z = 1.0 - A
        return SupermartingaleBundle(Z, A, np.ones_like(Z), np.ones_like(Z), Z)

    if scenario is ScenarioId.S3_stopped_max_honest:
        nbar = np.maximum.accumulate(v)
        Z = v / nbar
        Z = np.clip(Z, 0.0, 1.0)
        A = np.log(nbar)
        m = Z + A
        D = 1.0 / nbar
        N = v.copy()
        return SupermartingaleBundle(Z, A, m, N, D)

    if scenario is ScenarioId.S6_half_bridge:
        t = grid.times()
        sq = np.sqrt(np.maximum(1.0 - t, grid.dt * 1e-6))
        a = np.abs(v) / sq
        Z = SQRT_2_OVER_PI * gauss_tail_x2(a)
        Z = np.clip(Z, 0.0, 1.0)
        dens = SQRT_2_OVER_PI * np.abs(v) * np.exp(-0.5 * a * a) \
            / np.maximum(1.0 - t, grid.dt * 1e-6) ** 1.5
        A = np.empty_like(Z)
        A[0] = 0.0
        np.cumsum(0.5 * (dens[1:] + dens[:-1]) * grid.dt, out=A[1:])
        m = Z + A
        D = _d_from_a(Z, A)
        N = Z / np.maximum(D, Z_FLOOR)
        return SupermartingaleBundle(Z, A, m, N, D)

    if scenario is ScenarioId.S7_last_zero_unit:
        t = grid.times()
        rho_t, k = s7_density_forms(v, t)
        Z = np.clip(1.0 - k / rho_t, 0.0, 1.0)
        # A accumulates on {B = 0} via dL/rho
        cross = np.zeros(n + 1, dtype=bool)
        cross[1:] = v[:-1] * v[1:] < 0.0
        dl = math.sqrt(math.pi * grid.dt / 2.0)
        da = np.where(cross, dl / rho_t, 0.0)
        A = np.cumsum(da)
        m = Z + A
        D = _d_from_a(Z, A)
        N = Z / np.maximum(D, Z_FLOOR)
        return SupermartingaleBundle(Z, A, m, N, D)

    raise ValueError(f"no closed-form bundle for {scenario}")


def s7_density_forms(b, t):
    """(rho_t, k_t) for rho = |B_1| (unnormalized): the Gaussian mixture
    rho_t = |B_t|(2 Phi(|B_t|/sqrt(1-t)) - 1) + sqrt(2(1-t)/pi) e^{-B_t^2/(2(1-t))}
    and the relative martingale k_t = |B_t|."""
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    s = np.sqrt(np.maximum(1.0 - t, 1e-300))
    a = np.abs(b) / s
    rho_t = np.abs(b) * (2.0 * norm_cdf(a) - 1.0) \
        + np.sqrt(2.0 * np.maximum(1.0 - t, 0.0) / math.pi) * np.exp(-0.5 * a * a)
    return rho_t, np.abs(b)


def counterexample_bundle(path: SamplePath) -> QBundle:
    """Closed forms of the log(Nbar)-tilted measure on an S3 path:
    rho_t = log Nbar + N/Nbar, Z_Q = (N + N log Nbar)/(N + Nbar log Nbar),
    N_Q = N/rho_t, D_Q = (1 + log Nbar)/Nbar (vs D_P = 1/Nbar)."""
    v = path.values
    nbar = np.maximum.accumulate(v)
    lg = np.log(nbar)
    rho_t = lg + v / nbar
    Z_Q = (v + v * lg) / (v + nbar * lg + 1e-300)
    Z_Q[0] = 1.0
    D_Q = (1.0 + lg) / nbar
    N_Q = v / np.maximum(rho_t, 1e-300)
    D_P = 1.0 / nbar
    return QBundle(rho_t, Z_Q, N_Q, D_Q, D_P)


# ---------------------------------------------------------------------------
# Nested Monte Carlo oracle for Z_t = P(sigma > t | F_t)
# ---------------------------------------------------------------------------

def _inner_normals(seed: int, key_path: int, key_t: int, inner: int,
                   n_steps: int) -> np.ndarray:
    g = np.random.Generator(np.random.Philox(
        key=rng.stream_key(seed, rng.INNER, key_path, key_t, inner)))
    return g.standard_normal(n_steps)


def _inner_block(seed: int, key_path: int, key_t: int, n_inner: int,
                 n_steps: int) -> np.ndarray:
    out = np.empty((n_inner, n_steps))
    for i in range(n_inner):
        out[i] = _inner_normals(seed, key_path, key_t, i, n_steps)
    return out


def nested_mc_Z(scenario: ScenarioId, state: Tuple[float, ...], t: float,
                n_inner: int, seed: int, key: Tuple[int, int] = (0, 0),
                dt: float = 1e-3, cap: float = 20.0
                ) -> Tuple[float, float]:
    """Resimulate n_inner futures from a frozen prefix state; the fraction
    in which sigma occurs after t estimates Z_t.  Returns (estimate, SE)."""
    kp, kt = key
    if scenario is ScenarioId.S1_excursion_honest:
        # sigma > t iff the future from B_t hits 0 before 1
        (x,) = state
        hit0 = _future_hits_zero_first(x, seed, kp, kt, n_inner, dt, cap)
        p = hit0.mean()
        return float(p), math.sqrt(p * (1.0 - p) / n_inner)

    if scenario is ScenarioId.S2_pi_pseudo:
        # pi > t iff the future touches the running max again and then
        # reaches 0 before 1
        x, mbar = state
        ok = _future_new_max_then_zero(x, mbar, seed, kp, kt, n_inner, dt, cap)
        p = ok.mean()
        return float(p), math.sqrt(p * (1.0 - p) / n_inner)

    if scenario is ScenarioId.S3_stopped_max_honest:
        x, nbar = state
        sup = future_sup_absorbed(x, seed, kp, kt, n_inner, dt, cap)
        p = (sup > nbar).mean()
        return float(p), math.sqrt(p * (1.0 - p) / n_inner)

    if scenario is ScenarioId.S6_half_bridge:
        (w,) = state
        n_steps = max(int(round((1.0 - t) / dt)), 1)
        z = _inner_block(seed, kp, kt, n_inner, n_steps) * math.sqrt(dt)
        wm = np.cumsum(z, axis=1) + w
        w1 = wm[:, -1]
        y = 2.0 * wm - w1[:, None]
        y0 = 2.0 * w - w1
        prev = np.empty_like(y)
        prev[:, 0] = y0
        prev[:, 1:] = y[:, :-1]
        crossed = (prev * y < 0.0).any(axis=1)
        p = crossed.mean()
        return float(p), math.sqrt(p * (1.0 - p) / n_inner)

    raise ValueError(f"nested MC not available for {scenario}")


def _future_hits_zero_first(x: float, seed, kp, kt, n_inner, dt, cap):
    """Indicator per inner path of reaching 0 before 1 from x (exact tail)."""
    n_steps = int(round(cap / dt))
    chunk = 8192
    out = np.zeros(n_inner, dtype=bool)
    undecided = np.ones(n_inner, dtype=bool)
    xs = np.full(n_inner, x)
    c = 0
    while undecided.any() and c * chunk < n_steps:
        idx = np.flatnonzero(undecided)
        z = np.empty((idx.size, chunk))
        for j, i in enumerate(idx):
            z[j] = _inner_normals(seed, kp, kt, int(i), chunk * (c + 1))[c * chunk:]
        z *= math.sqrt(dt)
        xm = np.cumsum(z, axis=1) + xs[idx][:, None]
        hit1 = xm >= 1.0
        hit0 = xm <= 0.0
        i1 = np.where(hit1.any(1), np.argmax(hit1, 1), chunk + 1)
        i0 = np.where(hit0.any(1), np.argmax(hit0, 1), chunk + 1)
        done = (i1 <= chunk) | (i0 <= chunk)
        out[idx[done]] = i0[done] < i1[done]
        undecided[idx[done]] = False
        live = ~done
        xs[idx[live]] = xm[live, -1]
        c += 1
    if undecided.any():
        # ruin completion from the current state
        u = rng.indexed_uniforms(seed, rng.TAIL, 9000 + kp * 31 + kt, n_inner)
        xs_c = np.clip(xs[undecided], 0.0, 1.0)
        out[undecided] = u[undecided] >= xs_c
    return out


def _future_new_max_then_zero(x, mbar, seed, kp, kt, n_inner, dt, cap):
    """Future touches level mbar (its old max) and afterwards reaches 0
    before 1.  Touch is certain before T1; so equivalent to: after first
    reaching mbar, hit 0 before 1."""
    n_steps = int(round(cap / dt))
    chunk = 8192
    touched = np.zeros(n_inner, dtype=bool)
    out = np.zeros(n_inner, dtype=bool)
    undecided = np.ones(n_inner, dtype=bool)
    xs = np.full(n_inner, x)
    c = 0
    while undecided.any() and c * chunk < n_steps:
        idx = np.flatnonzero(undecided)
        z = np.empty((idx.size, chunk))
        for j, i in enumerate(idx):
            z[j] = _inner_normals(seed, kp, kt, int(i), chunk * (c + 1))[c * chunk:]
        z *= math.sqrt(dt)
        xm = np.cumsum(z, axis=1) + xs[idx][:, None]
        reach = xm >= mbar
        it = np.where(reach.any(1), np.argmax(reach, 1), chunk + 1)
        newly = ~touched[idx] & (it <= chunk)
        # after the touch: hit 0 before 1 from the touch point onward
        hit1 = xm >= 1.0
        hit0 = xm <= 0.0
        i1 = np.where(hit1.any(1), np.argmax(hit1, 1), chunk + 2)
        i0 = np.where(hit0.any(1), np.argmax(hit0, 1), chunk + 2)
        # handle: decision only counts after the touch index
        eff_t = np.where(touched[idx], -1, it)
        i0p = np.where(i0 >= eff_t, i0, chunk + 2)
        i1p = np.where(i1 >= eff_t, i1, chunk + 2)
        decided = (np.minimum(i0p, i1p) <= chunk) & (touched[idx] | (it <= chunk))
        out[idx[decided]] = i0p[decided] < i1p[decided]
        touched[idx] |= it <= chunk
        undecided[idx[decided]] = False
        live = ~decided
        xs[idx[live]] = xm[live, -1]
        c += 1
    if undecided.any():
        u = rng.indexed_uniforms(seed, rng.TAIL, 9100 + kp * 31 + kt, n_inner)
        xs_c = np.clip(xs[undecided], 0.0, 1.0)
        tch = touched[undecided]
        # touched: P(0 before 1) = 1 - x;  untouched: touch certain, then 1 - mbar
        p = np.where(tch, 1.0 - xs_c, 1.0 - mbar)
        out[undecided] = u[undecided] < p
    return out


def future_sup_absorbed(x, seed, kp, kt, n_inner, dt, cap):
    """Supremum of the absorbed-at-zero future from x (exact ruin tail)."""
    n_steps = int(round(cap / dt))
    chunk = 8192
    sup = np.full(n_inner, x)
    alive = np.ones(n_inner, dtype=bool)
    xs = np.full(n_inner, x)
    c = 0
    while alive.any() and c * chunk < n_steps:
        idx = np.flatnonzero(alive)
        z = np.empty((idx.size, chunk))
        for j, i in enumerate(idx):
            z[j] = _inner_normals(seed, kp, kt, int(i), chunk * (c + 1))[c * chunk:]
        z *= math.sqrt(dt)
        xm = np.cumsum(z, axis=1) + xs[idx][:, None]
        hit0 = xm <= 0.0
        has0 = hit0.any(1)
        t0 = np.where(has0, np.argmax(hit0, 1), chunk)
        cols = np.arange(chunk)
        cm = np.where(cols[None, :] <= t0[:, None], xm, -np.inf).max(axis=1)
        sup[idx] = np.maximum(sup[idx], cm)
        alive[idx[has0]] = False
        live = ~has0
        xs[idx[live]] = xm[live, -1]
        c += 1
    if alive.any():
        u = rng.indexed_uniforms(seed, rng.TAIL, 9200 + kp * 31 + kt, n_inner)
        sup[alive] = np.maximum(sup[alive],
                                xs[alive] / np.maximum(u[alive], 1e-300))
    return sup
