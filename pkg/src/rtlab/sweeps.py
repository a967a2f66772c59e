"""Chunked, vectorized ensemble sweeps.

Paths are processed in blocks (vectorized across paths) and chunks
(vectorized across steps); registers carry per-path detection state between
chunks so memory stays O(block).  Detection follows the grid conventions of
rtlab.scenarios, whose per-path implementations are the test oracle for
these sweeps.

Long-horizon scenarios use a tiered grid: the fine step up to fine_until,
then coarsened phases out to the extended cap.  Late-resolving paths carry
the coarse-phase discretization bias, which only touches the small fraction
still unresolved there.  Paths censored at the final cap are completed
exactly (see rtlab.scenarios), vectorized below, so capped simulation stays
unbiased in law.

Step bookkeeping: within a phase, column j of a chunk starting at base
holds the value at phase step base+j+1; a crossing detected at column j
lives on [base+j, base+j+1] and its recorded index is the right endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import rng
from .engine import CHUNK_STEPS

BLOCK_PATHS = 4096
_BIG = np.iinfo(np.int64).max

# fixed uniform-slot layout for tail completion (keyed, order-independent)
_TAIL_BRANCH, _TAIL_SEG, _TAIL_PASS2, _TAIL_PASS1, _TAIL_R0 = 0, 1, 2, 3, 4
_TAIL_CHAIN0 = 16      # four slots per chain round from here on
_ABS_SUP, _ABS_DIP, _ABS_THETA = 0, 1, 2


@dataclass(frozen=True)
class Phase:
    dt: float
    n_steps: int
    t0: float

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps


def build_phases(dt: float, fine_until: float, cap: float,
                 extend_to: float = 0.0,
                 coarsen: Tuple[int, int] = (16, 64)) -> List[Phase]:
    """Tiered grid: fine to fine_until, coarse to cap, coarser to extend_to."""
    end1 = min(fine_until, cap)
    phases = [Phase(dt, int(round(end1 / dt)), 0.0)]
    t = phases[-1].t_end
    if cap > t + 1e-12:
        d2 = dt * coarsen[0]
        phases.append(Phase(d2, int(math.ceil((cap - t) / d2)), t))
        t = phases[-1].t_end
    if extend_to > t + 1e-12:
        d3 = dt * coarsen[1]
        phases.append(Phase(d3, int(math.ceil((extend_to - t) / d3)), t))
    return phases


def _first_true(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return mask.any(axis=1), np.argmax(mask, axis=1)


def _last_true(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return mask.any(axis=1), mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)


# ===========================================================================
# Hitting-scenario sweep (S1 / S2 / S5): B from 0 until it first hits 1
# ===========================================================================

@dataclass
class HittingConfig:
    n_paths: int
    dt: float = 1e-4
    fine_until: float = 4.0
    cap: float = 50.0
    extend_factor: int = 4          # one automatic extension of the cap
    coarsen: Tuple[int, int] = (16, 64)
    drift: float = 0.0
    master_seed: int = 20260809
    purpose: int = rng.MAIN
    snapshot_times: Tuple[float, ...] = ()
    track_levels: bool = True       # -1 / -2 passage registers
    shadow_stride: int = 0          # paired coarse detection (refinement runs)
    complete_tails: bool = True
    block_paths: int = BLOCK_PATHS
    chunk_steps: int = CHUNK_STEPS


class _HitRegisters:
    """Detection registers for one resolution side of a hitting sweep."""

    def __init__(self, n: int, track_levels: bool):
        self.mbar = np.zeros(n)
        self.zbar = np.zeros(n)
        self.sigma_step = np.zeros(n, dtype=np.int64)
        self.sigma_phase = np.zeros(n, dtype=np.int8)
        self.sigma_time = np.zeros(n)
        self.resolved = np.zeros(n, dtype=bool)
        self.t1_time = np.full(n, np.inf)
        self.t1_step = np.full(n, _BIG, dtype=np.int64)
        self.t1_phase = np.full(n, -1, dtype=np.int8)
        self.track_levels = track_levels
        if track_levels:
            self.m1_hit = np.zeros(n, dtype=bool)
            self.m1_mbar = np.zeros(n)
            self.m2_hit = np.zeros(n, dtype=bool)
            self.m2_mbar = np.zeros(n)

    def advance(self, ids: np.ndarray, xm: np.ndarray, x0: np.ndarray,
                dt: float, phase_idx: int, phase_t0: float, base: int,
                snap_jobs=None, snap=None, ncross=None) -> None:
        """Consume one chunk of values; ids/xm/x0 aligned, all rows live paths."""
        act = ~self.resolved[ids]
        if not act.any():
            return
        rows = np.flatnonzero(act)
        g = ids[rows]
        xm = xm[rows]
        x0 = x0[rows]
        mb = self.mbar[g]
        n_rows, k = xm.shape
        cols = np.arange(k)

        hit = xm >= 1.0
        has_hit, term = _first_true(hit)
        term = np.where(has_hit, term, k)
        valid = cols[None, :] <= term[:, None]

        cm = np.maximum.accumulate(xm, axis=1)
        np.maximum(cm, mb[:, None], out=cm)

        prev = np.empty_like(xm)
        prev[:, 0] = x0
        prev[:, 1:] = xm[:, :-1]
        cross = (prev * xm < 0.0) & valid

        rr = np.arange(n_rows)
        any_z, z_idx = _last_true(cross)
        if any_z.any():
            zr = rr[any_z]
            zi = z_idx[any_z]
            gz = g[any_z]
            self.zbar[gz] = np.where(zi > 0, cm[zr, np.maximum(zi - 1, 0)], mb[zr])
            left = np.where(zi > 0, xm[zr, np.maximum(zi - 1, 0)], x0[zr])
            right = xm[zr, zi]
            frac = left / (left - right)
            self.sigma_step[gz] = base + zi + 1
            self.sigma_phase[gz] = phase_idx
            self.sigma_time[gz] = phase_t0 + (base + zi + frac) * dt

        if self.track_levels:
            for lev, hit_name, mbar_name in ((-1.0, "m1_hit", "m1_mbar"),
                                             (-2.0, "m2_hit", "m2_mbar")):
                hflag = getattr(self, hit_name)
                fresh = ~hflag[g]
                if fresh.any():
                    below = (xm <= lev) & valid
                    has_b, f_idx = _first_true(below)
                    upd = fresh & has_b
                    if upd.any():
                        ur = rr[upd]
                        ui = f_idx[upd]
                        getattr(self, mbar_name)[g[upd]] = np.where(
                            ui > 0, cm[ur, np.maximum(ui - 1, 0)], mb[ur])
                        hflag[g[upd]] = True

        if snap_jobs:
            ccount = np.cumsum(cross, axis=1)
            for col, t in snap_jobs:
                ok = col <= term
                gi = g
                snap[t]["B"][gi] = np.where(ok, xm[:, col], np.nan)
                snap[t]["mbar"][gi] = np.where(ok, cm[:, col], np.nan)
                snap[t]["ncross"][gi] = np.where(
                    ok, ncross[gi] + ccount[:, col], -1)
        if ncross is not None:
            ncross[g] += cross.sum(axis=1)

        if has_hit.any():
            ri = rr[has_hit]
            ti = term[has_hit]
            gi = g[ri]
            left = np.where(ti > 0, xm[ri, np.maximum(ti - 1, 0)], x0[ri])
            right = xm[ri, ti]
            frac = (1.0 - left) / (right - left)
            self.t1_time[gi] = phase_t0 + (base + ti + frac) * dt
            self.t1_step[gi] = base + ti + 1
            self.t1_phase[gi] = phase_idx
            self.resolved[gi] = True
        live = ~has_hit
        if live.any():
            self.mbar[g[live]] = cm[rr[live], -1]


@dataclass
class HittingSweepResult:
    cfg: HittingConfig
    n_paths: int
    resolved: np.ndarray          # T1 reached within the extended cap
    censored: np.ndarray          # unresolved at the cap (completed exactly)
    bbar_sigma: np.ndarray        # running max at sigma (tail-completed)
    post_cap_zero: np.ndarray     # sigma beyond the cap
    sigma_time: np.ndarray        # valid where not post_cap_zero
    sigma_fine_step: np.ndarray   # right straddle index when sigma in phase 0
    t1_fine_step: np.ndarray
    t1_time: np.ndarray
    m1_before_pi: Optional[np.ndarray] = None
    m2_before_pi: Optional[np.ndarray] = None
    snap: Dict[float, Dict[str, np.ndarray]] = field(default_factory=dict)
    ncross_final: Optional[np.ndarray] = None
    shadow_bbar_sigma: Optional[np.ndarray] = None

    @property
    def mpi_bounded2(self) -> np.ndarray:
        """B stopped on exiting (-2, 2), evaluated at pi."""
        return np.where(self.m2_before_pi, -2.0, self.bbar_sigma)

    @property
    def rho_m_sigma(self) -> np.ndarray:
        """M_pi for the bounded martingale M = 1 + B stopped on exiting (0, 2)."""
        return np.where(self.m1_before_pi, 0.0, 1.0 + self.bbar_sigma)

    def pi_after(self, t: float) -> np.ndarray:
        """pi > t holds exactly when the max still updates after t."""
        return self.bbar_sigma > self.snap[t]["mbar"]

    def sigma_after(self, t: float) -> np.ndarray:
        return self.post_cap_zero | (self.sigma_time > t)

    def max_at_pi_and(self, t: float) -> np.ndarray:
        """Running max at t AND pi, i.e. A of the pseudo-stopping time."""
        return np.minimum(self.snap[t]["mbar"], self.bbar_sigma)


def sweep_hitting(cfg: HittingConfig) -> HittingSweepResult:
    n = cfg.n_paths
    extend_to = cfg.cap * cfg.extend_factor if cfg.extend_factor else cfg.cap
    phases = build_phases(cfg.dt, cfg.fine_until, cfg.cap, extend_to,
                          cfg.coarsen)
    main = _HitRegisters(n, cfg.track_levels)
    shadow = _HitRegisters(n, False) if cfg.shadow_stride else None
    stride = cfg.shadow_stride

    snap_steps: Dict[int, float] = {}
    for t in cfg.snapshot_times:
        kk = int(round(t / cfg.dt))
        if not (0 < kk <= phases[0].n_steps):
            raise ValueError(f"snapshot time {t} outside the fine phase")
        snap_steps[kk] = t
    snap = {t: {"B": np.full(n, np.nan), "mbar": np.full(n, np.nan),
                "ncross": np.zeros(n, dtype=np.int64)}
            for t in cfg.snapshot_times}
    ncross = np.zeros(n, dtype=np.int64)

    x_carry = np.zeros(n)
    buf = np.empty((cfg.block_paths, cfg.chunk_steps))
    xbuf = np.empty((cfg.block_paths, cfg.chunk_steps))

    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        for p_idx, ph in enumerate(phases):
            if ids.size == 0:
                break
            n_chunks = (ph.n_steps + cfg.chunk_steps - 1) // cfg.chunk_steps
            for c in range(n_chunks):
                if ids.size == 0:
                    break
                base = c * cfg.chunk_steps
                k = min(cfg.chunk_steps, ph.n_steps - base)
                eps = buf[:ids.size, :k]
                rng.chunk_normals(eps, cfg.master_seed, cfg.purpose, ids,
                                  p_idx, c)
                eps *= math.sqrt(ph.dt)
                if cfg.drift:
                    eps += cfg.drift * ph.dt
                xm = xbuf[:ids.size, :k]
                np.cumsum(eps, axis=1, out=xm)
                x0 = x_carry[ids]
                xm += x0[:, None]

                jobs = None
                if p_idx == 0 and snap_steps:
                    jobs = [(kk - base - 1, t) for kk, t in snap_steps.items()
                            if base < kk <= base + k]
                main.advance(ids, xm, x0, ph.dt, p_idx, ph.t0, base,
                             snap_jobs=jobs, snap=snap,
                             ncross=ncross if p_idx == 0 else None)
                if shadow is not None:
                    if p_idx == 0:
                        if k % stride:
                            raise ValueError("chunk not divisible by stride")
                        shadow.advance(ids, xm[:, stride - 1::stride], x0,
                                       ph.dt * stride, p_idx, ph.t0,
                                       base // stride)
                    else:
                        shadow.advance(ids, xm, x0, ph.dt, p_idx, ph.t0, base)

                x_carry[ids] = xm[:, -1]
                done = main.resolved[ids]
                if shadow is not None:
                    done = done & shadow.resolved[ids]
                if done.any():
                    ids = ids[~done]

    censored = ~main.resolved
    res = HittingSweepResult(
        cfg=cfg, n_paths=n,
        resolved=main.resolved.copy(),
        censored=censored,
        bbar_sigma=main.zbar.copy(),
        post_cap_zero=np.zeros(n, dtype=bool),
        sigma_time=main.sigma_time.copy(),
        sigma_fine_step=np.where(main.sigma_phase == 0, main.sigma_step, _BIG),
        t1_fine_step=np.where(main.t1_phase == 0, main.t1_step, _BIG),
        t1_time=main.t1_time.copy(),
        snap=snap, ncross_final=ncross,
    )
    if cfg.track_levels:
        res.m1_before_pi = main.m1_hit & (main.zbar > main.m1_mbar)
        res.m2_before_pi = main.m2_hit & (main.zbar > main.m2_mbar)

    if censored.any():
        if cfg.complete_tails:
            _complete_hitting_side(res.bbar_sigma, res.post_cap_zero,
                                   res.m1_before_pi, res.m2_before_pi,
                                   main, x_carry, censored, cfg)
        else:
            res.bbar_sigma[censored] = np.nan

    # snapshots for paths resolved at or before the snapshot time: the path
    # is frozen at 1 from T1 on and the crossing count stops there
    for t in cfg.snapshot_times:
        late = main.resolved & (main.t1_time <= t)
        snap[t]["B"][late] = 1.0
        snap[t]["mbar"][late] = 1.0
        snap[t]["ncross"][late] = ncross[late]

    if shadow is not None:
        res.shadow_bbar_sigma = shadow.zbar.copy()
        sh_cens = ~shadow.resolved
        if sh_cens.any() and cfg.complete_tails:
            _complete_hitting_side(res.shadow_bbar_sigma, None, None, None,
                                   shadow, x_carry, sh_cens, cfg)
    return res


def _tail_u(cfg: HittingConfig, slot: int) -> np.ndarray:
    return rng.indexed_uniforms(cfg.master_seed, rng.TAIL, slot, cfg.n_paths)


def _complete_hitting_side(bbar_out, post_zero_out, m1_out, m2_out,
                           regs: _HitRegisters, x_carry, cens, cfg) -> None:
    """Vectorized exact tail completion for censored hitting paths.

    Mirrors scenarios.complete_hitting_tail with slot-indexed uniforms, so
    the draws are a pure function of (master_seed, path_index).
    """
    ids = np.flatnonzero(cens)
    x = x_carry[ids]
    mbar = regs.mbar[ids]
    zbar = regs.zbar[ids]
    levels = regs.track_levels
    if levels:
        fz1 = regs.m1_hit[ids].copy()
        fz2 = regs.m2_hit[ids].copy()
        h1 = fz1 & (mbar > regs.m1_mbar[ids])
        h2 = fz2 & (mbar > regs.m2_mbar[ids])
    else:
        fz1 = fz2 = h1 = h2 = np.zeros(ids.size, dtype=bool)

    u_branch = _tail_u(cfg, _TAIL_BRANCH)[ids]
    stay = (x > 0.0) & (u_branch < x)          # hits 1 first: nothing changes
    go = ~stay                                 # a post-cap zero occurs
    if post_zero_out is not None:
        post_zero_out[ids[go]] = True

    r = mbar.copy()
    pos = go & (x > 0.0)
    if pos.any():
        u_seg = _tail_u(cfg, _TAIL_SEG)[ids]
        a = x / (x + u_seg * (1.0 - x))
        new_rec = pos & (a > r)
        r = np.where(pos, np.maximum(r, a), r)
        h1 = np.where(new_rec, fz1, h1)
        h2 = np.where(new_rec, fz2, h2)
    neg = go & (x <= 0.0)
    if neg.any() and levels:
        u2 = _tail_u(cfg, _TAIL_PASS2)[ids]
        u1 = _tail_u(cfg, _TAIL_PASS1)[ids]
        p2 = np.clip(-x / 2.0, 0.0, 1.0)
        hit2 = neg & ~fz2 & (u2 < p2)
        fz1 = fz1 | hit2
        fz2 = fz2 | hit2
        p1 = np.where(p2 < 1.0, p2 / np.maximum(1.0 - p2, 1e-300), 1.0)
        hit1 = neg & ~fz2 & ~fz1 & (u1 < p1) & ~hit2
        fz1 = fz1 | hit1

    zero_rec = go & (r <= 0.0)
    if zero_rec.any():
        u0 = _tail_u(cfg, _TAIL_R0)[ids]
        bbar_out[ids[zero_rec]] = u0[zero_rec]
        if m1_out is not None:
            m1_out[ids[zero_rec]] = fz1[zero_rec]
            m2_out[ids[zero_rec]] = fz2[zero_rec]

    active = go & (r > 0.0)
    for rnd in range(128):
        if not active.any():
            break
        s0 = _TAIL_CHAIN0 + 4 * rnd
        ua = _tail_u(cfg, s0 + 0)[ids]
        ub = _tail_u(cfg, s0 + 1)[ids]
        uc = _tail_u(cfg, s0 + 2)[ids]
        ud = _tail_u(cfg, s0 + 3)[ids]
        minus1 = active & (ua < r / (1.0 + r))
        fz1 = fz1 | minus1
        minus2 = minus1 & (ub < (1.0 + r) / (2.0 + r))
        fz2 = fz2 | minus2
        touched = active & ~minus2
        end = touched & (uc < r)
        if end.any():
            bbar_out[ids[end]] = r[end]
            if m1_out is not None:
                m1_out[ids[end]] = h1[end]
                m2_out[ids[end]] = h2[end]
            active = active & ~end
        grow = touched & ~end & active
        h1 = np.where(grow, fz1, h1)
        h2 = np.where(grow, fz2, h2)
        r = np.where(grow, r / (r + ud * (1.0 - r)), r)
    if active.any():
        bbar_out[ids[active]] = r[active]
        if m1_out is not None:
            m1_out[ids[active]] = h1[active]
            m2_out[ids[active]] = h2[active]


# ===========================================================================
# Absorbing-scenario sweep (S3 / S4): N from 1, absorbed at 0
# ===========================================================================

@dataclass
class AbsorbingConfig:
    n_paths: int
    dt: float = 1e-4
    fine_until: float = 4.0
    cap: float = 50.0
    extend_factor: int = 4
    coarsen: Tuple[int, int] = (16, 64)
    master_seed: int = 20260809
    purpose: int = rng.MAIN
    snapshot_time: float = 1.0      # state snapshot (sup test, Thm 6.7)
    track_ratio: bool = True        # S4 registers
    weight_g_c: Optional[float] = None   # accumulate rho for g(x) = x - c
    complete_tails: bool = True
    block_paths: int = BLOCK_PATHS
    chunk_steps: int = CHUNK_STEPS


@dataclass
class AbsorbingSweepResult:
    cfg: AbsorbingConfig
    n_paths: int
    resolved: np.ndarray           # absorbed within the extended cap
    censored: np.ndarray
    final_max: np.ndarray          # Nbar at absorption (tail-completed)
    post_cap_max: np.ndarray       # sigma beyond the cap
    sigma_time: np.ndarray
    sigma_fine_step: np.ndarray
    t0_time: np.ndarray            # absorption time (inf when censored)
    n_at_snap: np.ndarray          # N at the snapshot time (0 if absorbed)
    nbar_at_snap: np.ndarray
    alive_at_snap: np.ndarray
    sup_after_snap: np.ndarray     # sup of N over [snap, absorption)
    inf_ratio: Optional[np.ndarray] = None   # S4 statistic ingredient
    rho_cap: Optional[np.ndarray] = None     # stochastic exponential weight

    @property
    def log_final_max(self) -> np.ndarray:
        return np.log(self.final_max)

    @property
    def deflator_terminal(self) -> np.ndarray:
        return 1.0 / self.final_max

    def n_at_sigma_or(self, t: float) -> np.ndarray:
        """N at sigma wedge t (t must be the snapshot time)."""
        sig_after = self.post_cap_max | (self.sigma_time > t)
        return np.where(sig_after, self.n_at_snap, self.final_max)


def sweep_absorbing(cfg: AbsorbingConfig) -> AbsorbingSweepResult:
    n = cfg.n_paths
    extend_to = cfg.cap * cfg.extend_factor if cfg.extend_factor else cfg.cap
    phases = build_phases(cfg.dt, cfg.fine_until, cfg.cap, extend_to,
                          cfg.coarsen)
    k_snap = int(round(cfg.snapshot_time / cfg.dt))
    if not (0 < k_snap <= phases[0].n_steps):
        raise ValueError("snapshot time outside the fine phase")

    nbar = np.ones(n)
    i_run = np.ones(n)
    inf_at_l = np.ones(n)
    dipmin = np.ones(n)
    sigma_step = np.zeros(n, dtype=np.int64)
    sigma_phase = np.zeros(n, dtype=np.int8)
    sigma_time = np.zeros(n)
    resolved = np.zeros(n, dtype=bool)
    final_max = np.full(n, np.nan)
    t0_time = np.full(n, np.inf)
    n_at_snap = np.zeros(n)
    nbar_at_snap = np.full(n, np.nan)
    alive_at_snap = np.zeros(n, dtype=bool)
    sup_after_snap = np.zeros(n)
    y_acc = np.zeros(n)
    qv_acc = np.zeros(n)

    x_carry = np.ones(n)
    buf = np.empty((cfg.block_paths, cfg.chunk_steps))
    xbuf = np.empty((cfg.block_paths, cfg.chunk_steps))

    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        for p_idx, ph in enumerate(phases):
            if ids.size == 0:
                break
            n_chunks = (ph.n_steps + cfg.chunk_steps - 1) // cfg.chunk_steps
            for c in range(n_chunks):
                if ids.size == 0:
                    break
                base = c * cfg.chunk_steps
                k = min(cfg.chunk_steps, ph.n_steps - base)
                eps = buf[:ids.size, :k]
                rng.chunk_normals(eps, cfg.master_seed, cfg.purpose, ids,
                                  p_idx, c)
                eps *= math.sqrt(ph.dt)
                xm = xbuf[:ids.size, :k]
                np.cumsum(eps, axis=1, out=xm)
                x0 = x_carry[ids]
                xm += x0[:, None]
                n_rows = ids.size
                rr = np.arange(n_rows)
                cols = np.arange(k)

                below = xm <= 0.0
                has_a, term = _first_true(below)
                term = np.where(has_a, term, k)

                cm = np.maximum.accumulate(xm, axis=1)
                np.maximum(cm, nbar[ids][:, None], out=cm)

                # running-max updates strictly before absorption
                upd = np.empty((n_rows, k), dtype=bool)
                upd[:, 0] = cm[:, 0] > nbar[ids]
                np.greater(cm[:, 1:], cm[:, :-1], out=upd[:, 1:])
                upd &= cols[None, :] <= term[:, None]

                any_u, u_idx = _last_true(upd)
                if cfg.track_ratio:
                    ratio = xm / cm
                    cmin = np.minimum.accumulate(ratio, axis=1)
                    np.minimum(cmin, i_run[ids][:, None], out=cmin)
                if any_u.any():
                    ur = rr[any_u]
                    ui = u_idx[any_u]
                    gu = ids[any_u]
                    sigma_step[gu] = base + ui + 1
                    sigma_phase[gu] = p_idx
                    sigma_time[gu] = ph.t0 + (base + ui + 1) * ph.dt
                    if cfg.track_ratio:
                        inf_at_l[gu] = cmin[ur, ui]
                        sfx = np.minimum.accumulate(ratio[:, ::-1],
                                                    axis=1)[:, ::-1]
                        last = np.minimum(ui + 1, k - 1)
                        dipmin[gu] = np.where(ui + 1 <= k - 1,
                                              sfx[ur, last], 1.0)

                if cfg.weight_g_c is not None:
                    c_const = cfg.weight_g_c
                    xl = np.empty_like(xm)
                    xl[:, 0] = x0
                    xl[:, 1:] = xm[:, :-1]
                    cml = np.empty_like(cm)
                    cml[:, 0] = nbar[ids]
                    cml[:, 1:] = cm[:, :-1]
                    gl = (xl / cml - c_const) / (2.0 * cml)
                    # include the absorbing step: term is a discrete stopping
                    # time, so the stopped exponential has mean exactly one
                    wmask = cols[None, :] <= term[:, None]
                    y_acc[ids] += np.sum(gl * (xm - xl) * wmask, axis=1)
                    qv_acc[ids] += np.sum(gl * gl * wmask, axis=1) * ph.dt

                # snapshot and the post-snapshot running sup
                in_snap = p_idx == 0 and base < k_snap <= base + k
                if in_snap:
                    colk = k_snap - base - 1
                    ok = colk <= term
                    n_at_snap[ids] = np.where(ok, xm[:, colk], 0.0)
                    nbar_at_snap[ids] = cm[:, colk]
                    alive_at_snap[ids] = ok
                    if colk < k - 1:
                        smax = np.where((cols[None, :] > colk) & (cols[None, :] <= term[:, None]),
                                        xm, -np.inf).max(axis=1)
                        sup_after_snap[ids] = np.maximum(
                            sup_after_snap[ids], np.where(ok, smax, 0.0))
                elif (p_idx > 0 or base >= k_snap):
                    wmax = np.where(cols[None, :] <= term[:, None], xm,
                                    -np.inf).max(axis=1)
                    sup_after_snap[ids] = np.maximum(sup_after_snap[ids], wmax)

                if has_a.any():
                    ri = rr[has_a]
                    ti = term[has_a]
                    gi = ids[has_a]
                    left = np.where(ti > 0, xm[ri, np.maximum(ti - 1, 0)], x0[ri])
                    right = xm[ri, ti]
                    frac = left / (left - right)
                    t0_time[gi] = ph.t0 + (base + ti + frac) * ph.dt
                    resolved[gi] = True
                    final_max[gi] = cm[ri, ti]
                live = ~has_a
                if live.any():
                    li = rr[live]
                    gl_ = ids[live]
                    nbar[gl_] = cm[li, -1]
                    if cfg.track_ratio:
                        i_run[gl_] = cmin[li, -1]
                        no_u = live & ~any_u
                        if no_u.any():
                            dipmin[ids[no_u]] = np.minimum(
                                dipmin[ids[no_u]],
                                ratio[rr[no_u], :].min(axis=1))
                        # rows with updates had dipmin reset above
                x_carry[ids] = xm[:, -1]
                ids = ids[~resolved[ids]]

    censored = ~resolved
    res = AbsorbingSweepResult(
        cfg=cfg, n_paths=n, resolved=resolved, censored=censored.copy(),
        final_max=final_max,
        post_cap_max=np.zeros(n, dtype=bool),
        sigma_time=sigma_time,
        sigma_fine_step=np.where(sigma_phase == 0, sigma_step, _BIG),
        t0_time=t0_time,
        n_at_snap=n_at_snap, nbar_at_snap=nbar_at_snap,
        alive_at_snap=alive_at_snap, sup_after_snap=sup_after_snap,
        inf_ratio=inf_at_l.copy() if cfg.track_ratio else None,
        rho_cap=np.exp(y_acc - 0.5 * qv_acc) if cfg.weight_g_c is not None else None,
    )

    if censored.any():
        if not cfg.complete_tails:
            res.final_max[censored] = np.nan
            return res
        ids = np.flatnonzero(censored)
        x = x_carry[ids]
        nb = nbar[ids]
        u_sup = rng.indexed_uniforms(cfg.master_seed, rng.TAIL, _ABS_SUP, n)[ids]
        sup_pc = x / np.maximum(u_sup, 1e-300)
        res.sup_after_snap[ids] = np.maximum(res.sup_after_snap[ids], sup_pc)
        res.final_max[ids] = np.maximum(nb, sup_pc)
        beyond = sup_pc > nb
        res.post_cap_max[ids[beyond]] = True
        if cfg.track_ratio:
            u_dip = rng.indexed_uniforms(cfg.master_seed, rng.TAIL, _ABS_DIP, n)[ids]
            u_th = rng.indexed_uniforms(cfg.master_seed, rng.TAIL, _ABS_THETA, n)[ids]
            d = u_dip * x * nb / (nb - x + u_dip * x)
            dip = np.minimum(dipmin[ids] * nb, d) / nb
            e = -np.log(np.maximum(u_th, 1e-300))
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = e / (e + np.log(np.maximum(sup_pc / nb, 1.0)))
            cand = np.minimum(np.minimum(inf_at_l[ids], dip), theta)
            res.inf_ratio[ids] = np.where(beyond, cand, inf_at_l[ids])
    return res


# ===========================================================================
# Unit-interval sweeps (S6 / S7): whole paths on [0, 1]
# ===========================================================================

@dataclass
class UnitConfig:
    n_paths: int
    dt: float = 1e-4
    master_seed: int = 20260809
    purpose: int = rng.MAIN
    block_paths: int = 1024
    # S6 extras
    d_epsilons: Tuple[float, ...] = (1e-2, 3.16e-3, 1e-3)
    state_times: Tuple[float, ...] = ()
    n_state_paths: int = 0


def _unit_paths_block(cfg: UnitConfig, ids: np.ndarray, n_steps: int,
                      buf: np.ndarray) -> np.ndarray:
    """Values w[:, 0..n_steps] of the unit-interval Brownian block."""
    k = 0
    chunk = CHUNK_STEPS
    out = buf[:ids.size]
    out[:, 0] = 0.0
    c = 0
    while k < n_steps:
        m = min(chunk, n_steps - k)
        view = out[:, 1 + k:1 + k + m]
        rng.chunk_normals(view, cfg.master_seed, cfg.purpose, ids, 0, c)
        k += m
        c += 1
    out[:, 1:] *= math.sqrt(cfg.dt)
    np.cumsum(out[:, 1:], axis=1, out=out[:, 1:])
    return out


@dataclass
class BridgeSweepResult:
    cfg: UnitConfig
    sigma_time: np.ndarray
    w1: np.ndarray
    d_at_eps: Dict[float, np.ndarray]
    state_w: Dict[float, np.ndarray]      # W_t snapshots for nested states


def sweep_bridge(cfg: UnitConfig) -> BridgeSweepResult:
    """S6: sigma = last time 2W_t = W_1; multiplicative factor D by quadrature.

    D_t = exp(-int dA/Z) with the A-density sqrt(2/pi)|W_u|(1-u)^(-3/2)
    exp(-W_u^2/(2(1-u))) and the closed-form Z; trapezoidal accumulation with
    a floor on Z.
    """
    from .numerics import gauss_tail_x2
    n = cfg.n_paths
    n_steps = int(round(1.0 / cfg.dt))
    sigma_time = np.zeros(n)
    w1 = np.empty(n)
    d_at_eps = {e: np.empty(n) for e in cfg.d_epsilons}
    state_w = {t: np.full(n, np.nan) for t in cfg.state_times}
    eps_cols = {e: n_steps - int(round(e / cfg.dt)) for e in cfg.d_epsilons}
    c0 = math.sqrt(2.0 / math.pi)
    u_grid = cfg.dt * np.arange(n_steps + 1)
    sq1mu = np.sqrt(np.maximum(1.0 - u_grid, cfg.dt * 1e-3))

    buf = np.empty((cfg.block_paths, n_steps + 1))
    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        w = _unit_paths_block(cfg, ids, n_steps, buf)
        wl = w[:ids.size]
        w1_b = wl[:, -1]
        w1[ids] = w1_b

        y = 2.0 * wl - w1_b[:, None]
        cross = y[:, :-1] * y[:, 1:] < 0.0
        has, z = _last_true(cross)
        left = y[np.arange(ids.size), z]
        right = y[np.arange(ids.size), z + 1]
        frac = left / (left - right)
        sigma_time[ids] = np.where(has, (z + frac) * cfg.dt, 0.0)

        # dA/Z on the grid up to the last epsilon point
        kmax = max(eps_cols.values())
        a = np.abs(wl[:, :kmax + 1]) / sq1mu[None, :kmax + 1]
        dens = c0 * np.abs(wl[:, :kmax + 1]) * np.exp(-0.5 * a * a) \
            / (1.0 - u_grid[None, :kmax + 1]) ** 1.5
        zcf = np.maximum(c0 * gauss_tail_x2(a), 1e-12)
        integ = dens / zcf
        # trapezoid, cumulative
        cum = np.empty_like(integ)
        cum[:, 0] = 0.0
        np.cumsum(0.5 * (integ[:, 1:] + integ[:, :-1]) * cfg.dt, axis=1,
                  out=cum[:, 1:])
        for e, colk in eps_cols.items():
            d_at_eps[e][ids] = np.exp(-cum[:, colk])
        for t in cfg.state_times:
            state_w[t][ids] = wl[:, int(round(t / cfg.dt))]
    return BridgeSweepResult(cfg, sigma_time, w1, d_at_eps, state_w)


@dataclass
class LastZeroSweepResult:
    cfg: UnitConfig
    sigma_time: np.ndarray
    sigma_step: np.ndarray      # right straddle index; 0 when no crossing
    b1: np.ndarray


def sweep_last_zero(cfg: UnitConfig) -> LastZeroSweepResult:
    """S7: sigma = last zero of B on [0, 1]."""
    n = cfg.n_paths
    n_steps = int(round(1.0 / cfg.dt))
    sigma_time = np.zeros(n)
    sigma_step = np.zeros(n, dtype=np.int64)
    b1 = np.empty(n)
    buf = np.empty((cfg.block_paths, n_steps + 1))
    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        w = _unit_paths_block(cfg, ids, n_steps, buf)[:ids.size]
        b1[ids] = w[:, -1]
        cross = w[:, :-1] * w[:, 1:] < 0.0
        has, z = _last_true(cross)
        rr = np.arange(ids.size)
        left = w[rr, z]
        right = w[rr, z + 1]
        frac = left / (left - right)
        sigma_time[ids] = np.where(has, (z + frac) * cfg.dt, 0.0)
        sigma_step[ids] = np.where(has, z + 1, 0)
    return LastZeroSweepResult(cfg, sigma_time, sigma_step, b1)


# ===========================================================================
# Drift-regression passes (second pass over regenerated noise)
# ===========================================================================

class DriftBins:
    """Weighted per-bin accumulators for increment regressions."""

    def __init__(self, edges: np.ndarray):
        self.edges = np.asarray(edges, dtype=float)
        nb = len(self.edges) - 1
        self.count = np.zeros(nb, dtype=np.int64)
        self.w = np.zeros(nb)
        self.w2 = np.zeros(nb)
        self.wdx = np.zeros(nb)
        self.wdx2 = np.zeros(nb)
        self.wmu = np.zeros(nb)

    def add(self, state, dx, mu, w):
        """Accumulate increments dx with predicted drift mu(state), weights w."""
        nb = len(self.edges) - 1
        idx = np.searchsorted(self.edges, state, side="right") - 1
        ok = (idx >= 0) & (idx < nb)
        idx = idx[ok]
        dx = dx[ok]
        mu = mu[ok]
        w = w[ok] if w.ndim else np.broadcast_to(w, dx.shape)[ok]
        self.count += np.bincount(idx, minlength=nb)
        self.w += np.bincount(idx, weights=w, minlength=nb)
        self.w2 += np.bincount(idx, weights=w * w, minlength=nb)
        self.wdx += np.bincount(idx, weights=w * dx, minlength=nb)
        self.wdx2 += np.bincount(idx, weights=w * dx * dx, minlength=nb)
        self.wmu += np.bincount(idx, weights=w * mu, minlength=nb)


def drift_pass_hitting(cfg: HittingConfig, res: HittingSweepResult,
                       pre_jobs: List[Tuple[DriftBins, object, np.ndarray]],
                       bins_post: Optional[DriftBins],
                       pre_region: Tuple[float, float] = (0.0, 1.0),
                       post_region: Tuple[float, float] = (0.1, 1.0),
                       ) -> None:
    """Re-generate the fine phase and bin pre/post-sigma increments of B.

    pre_jobs are (bins, mu(b, bmax), per-path weights) triples evaluated at
    the left state of each pre-sigma increment.  Post-sigma prediction is
    fixed at +1/B; post increments come from (sigma, T1) on paths whose
    final ascent is in horizon (resolved or completed with no further zero).
    """
    n = cfg.n_paths
    n_fine = int(round(cfg.fine_until / cfg.dt))
    sig = res.sigma_fine_step
    t1 = res.t1_fine_step
    post_ok = ~res.post_cap_zero
    buf = np.empty((cfg.block_paths, cfg.chunk_steps))
    xbuf = np.empty((cfg.block_paths, cfg.chunk_steps))
    x_carry = np.zeros(n)
    mbar_carry = np.zeros(n)
    sqdt = math.sqrt(cfg.dt)

    n_chunks = (n_fine + cfg.chunk_steps - 1) // cfg.chunk_steps
    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        alive = np.ones(ids.size, dtype=bool)
        for c in range(n_chunks):
            act = ids[alive]
            if act.size == 0:
                break
            base = c * cfg.chunk_steps
            k = min(cfg.chunk_steps, n_fine - base)
            eps = buf[:act.size, :k]
            rng.chunk_normals(eps, cfg.master_seed, cfg.purpose, act, 0, c)
            eps *= sqdt
            if cfg.drift:
                eps += cfg.drift * cfg.dt
            xm = xbuf[:act.size, :k]
            np.cumsum(eps, axis=1, out=xm)
            x0 = x_carry[act]
            xm += x0[:, None]
            cm = np.maximum.accumulate(xm, axis=1)
            np.maximum(cm, mbar_carry[act][:, None], out=cm)

            # left states of the increments in this chunk
            bl = np.empty_like(xm)
            bl[:, 0] = x0
            bl[:, 1:] = xm[:, :-1]
            ml = np.empty_like(cm)
            ml[:, 0] = mbar_carry[act]
            ml[:, 1:] = cm[:, :-1]
            dx = xm - bl
            # increment at column j spans steps [base+j, base+j+1]
            right_step = base + np.arange(k) + 1

            lo, hi = pre_region
            pre_mask = right_step[None, :] <= \
                np.minimum(sig[act], t1[act])[:, None] - 1
            sel = pre_mask & (bl > lo) & (bl < hi)
            if sel.any():
                st = bl[sel]
                mst = ml[sel]
                dxs = dx[sel]
                for bins, mu_pre, w_paths in pre_jobs:
                    w = np.broadcast_to(w_paths[act][:, None], sel.shape)[sel]
                    bins.add(st, dxs, mu_pre(st, mst), w)

            if bins_post is not None:
                lo, hi = post_region
                post_mask = (right_step[None, :] - 1 >= sig[act][:, None]) & \
                            (right_step[None, :] <= t1[act][:, None] - 1) & \
                            post_ok[act][:, None]
                selp = post_mask & (bl > lo) & (bl < hi)
                if selp.any():
                    st = bl[selp]
                    bins_post.add(st, dx[selp], 1.0 / st, np.ones(st.size))
            x_carry[act] = xm[:, -1]
            mbar_carry[act] = cm[:, -1]
            # retire paths that cannot contribute further increments
            t1_here = res.t1_time[act] <= cfg.fine_until
            done_rows = t1_here & (res.t1_fine_step[act] <= base + k)
            alive[np.flatnonzero(alive)[done_rows]] = False


def drift_pass_last_zero(cfg: UnitConfig, res: LastZeroSweepResult,
                         bins_pre: DriftBins, bins_post: DriftBins,
                         bins_post_b: DriftBins,
                         weights: np.ndarray, t_max: float = 0.98,
                         post_min_abs: float = 0.1) -> None:
    """Bin pre/post-sigma increments of the S7 path against the
    Gaussian-CDF drift (pre) and +1/B (post), weighted by rho."""
    from .numerics import norm_cdf
    n = cfg.n_paths
    n_steps = int(round(1.0 / cfg.dt))
    k_max = int(round(t_max / cfg.dt))
    buf = np.empty((cfg.block_paths, n_steps + 1))
    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        w = _unit_paths_block(cfg, ids, n_steps, buf)[:ids.size]
        bl = w[:, :k_max]
        dx = w[:, 1:k_max + 1] - bl
        t_left = cfg.dt * np.arange(k_max)
        sq = np.sqrt(1.0 - t_left)
        zstate = bl / sq[None, :]
        right_step = np.arange(k_max) + 1
        wrow = np.broadcast_to(weights[ids][:, None], bl.shape)

        pre = right_step[None, :] <= res.sigma_step[ids][:, None] - 1
        if pre.any():
            a = np.abs(zstate[pre])
            h = 2.0 * np.abs(bl[pre]) * (norm_cdf(a) - 1.0) + \
                np.sqrt(2.0 * (1.0 - np.broadcast_to(t_left, bl.shape)[pre])
                        / math.pi) * np.exp(-0.5 * a * a)
            mu = 2.0 * np.sign(bl[pre]) * (norm_cdf(a) - 1.0) / np.maximum(h, 1e-12)
            bins_pre.add(zstate[pre], dx[pre], mu, wrow[pre])

        post = (right_step[None, :] - 1 >= res.sigma_step[ids][:, None]) & \
               (res.sigma_step[ids][:, None] > 0)
        post &= np.abs(bl) > post_min_abs
        if post.any():
            st = bl[post]
            bins_post.add(st, dx[post], 1.0 / st, wrow[post])
            bins_post_b.add(st, dx[post], -1.0 / st, wrow[post])


def drift_pass_deflator(cfg: AbsorbingConfig, res: AbsorbingSweepResult,
                        bins: DriftBins) -> None:
    """Bin increments of 1/N before sigma (S3) against a zero drift.

    Under the enlarged filtration before sigma the deflator 1/N_{t and sigma}
    is driftless; the raw 1/N under the small filtration is not, so this
    regression has teeth.
    """
    n = cfg.n_paths
    n_fine = int(round(cfg.fine_until / cfg.dt))
    sig = res.sigma_fine_step
    buf = np.empty((cfg.block_paths, cfg.chunk_steps))
    xbuf = np.empty((cfg.block_paths, cfg.chunk_steps))
    x_carry = np.ones(n)
    sqdt = math.sqrt(cfg.dt)
    n_chunks = (n_fine + cfg.chunk_steps - 1) // cfg.chunk_steps
    for b0 in range(0, n, cfg.block_paths):
        ids = np.arange(b0, min(b0 + cfg.block_paths, n))
        alive = np.ones(ids.size, dtype=bool)
        for c in range(n_chunks):
            act = ids[alive]
            if act.size == 0:
                break
            base = c * cfg.chunk_steps
            k = min(cfg.chunk_steps, n_fine - base)
            eps = buf[:act.size, :k]
            rng.chunk_normals(eps, cfg.master_seed, cfg.purpose, act, 0, c)
            eps *= sqdt
            xm = xbuf[:act.size, :k]
            np.cumsum(eps, axis=1, out=xm)
            xm += x_carry[act][:, None]
            nl = np.empty_like(xm)
            nl[:, 0] = x_carry[act]
            nl[:, 1:] = xm[:, :-1]
            right_step = base + np.arange(k) + 1
            pre = right_step[None, :] <= sig[act][:, None] - 1
            pre &= (nl > 0.05) & (xm > 0.05)
            if pre.any():
                dinv = 1.0 / xm[pre] - 1.0 / nl[pre]
                bins.add(nl[pre], dinv, np.zeros(dinv.size), np.ones(dinv.size))
            x_carry[act] = xm[:, -1]
            done_rows = res.t0_time[act] <= cfg.dt * (base + k)
            alive[np.flatnonzero(alive)[done_rows]] = False
