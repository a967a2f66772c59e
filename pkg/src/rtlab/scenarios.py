"""Random-time detectors and exact tail completion.

Every random time in the catalog is a last-passage functional, so detection
runs on the completed path (two-pass).  Paths that have not resolved their
terminal event by the capped horizon are not discarded: their statistics
are completed exactly through first-passage (gambler's ruin) identities of
the post-cap Brownian future.  The chain samplers here are the scalar
reference implementations; rtlab.sweeps vectorizes the identical logic.

Grid conventions:
  * a zero crossing lives on the interval [k-1, k] when values[k-1] and
    values[k] have opposite signs; its right index k is the recorded index
    and the interpolated time is stored for bias reduction;
  * a running-max event is the index where the running maximum was last
    updated (strict increase), which avoids float equality tests.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .engine import SamplePath, first_hit, crossing_time


class ScenarioId(enum.Enum):
    S1_excursion_honest = "S1"     # last zero of B before it first hits 1
    S2_pi_pseudo = "S2"            # last supremum time before S1's sigma
    S3_stopped_max_honest = "S3"   # last maximum of N (BM from 1 stopped at 0)
    S4_invariance = "S4"           # last running-inf time of N/Nbar before S3's sigma
    S5_scale_drift = "S5"          # S2-type time driven by drifted Brownian motion
    S6_half_bridge = "S6"          # last time 2W_t = W_1 in [0, 1]
    S7_last_zero_unit = "S7"       # last zero of B in [0, 1]


@dataclass
class RandomTimeResult:
    sigma_index: int
    sigma_time: float
    aux_indices: Dict[str, int] = field(default_factory=dict)
    aux_values: Dict[str, float] = field(default_factory=dict)
    censored: bool = False


def _last_zero_cross(v: np.ndarray, upto: int) -> int:
    """Right index of the last sign change on intervals ending <= upto; 0 if none."""
    if upto < 1:
        return 0
    s = v[:upto] * v[1:upto + 1]
    idx = np.nonzero(s < 0.0)[0]
    return int(idx[-1]) + 1 if idx.size else 0


def _last_max_update(v: np.ndarray, upto: int) -> int:
    """Last index <= upto where the running maximum strictly increased."""
    cm = np.maximum.accumulate(v[:upto + 1])
    upd = np.nonzero(cm[1:] > cm[:-1])[0]
    return int(upd[-1]) + 1 if upd.size else 0


def detect(scenario: ScenarioId, path: SamplePath) -> RandomTimeResult:
    """Reference per-path detector for the scenario's random time."""
    v = path.values
    grid = path.grid

    if scenario in (ScenarioId.S1_excursion_honest, ScenarioId.S2_pi_pseudo,
                    ScenarioId.S5_scale_drift):
        t1 = first_hit(path, 1.0)
        if t1 is None:
            return RandomTimeResult(0, 0.0, censored=True)
        sig = _last_zero_cross(v, t1)
        sig_time = crossing_time(path, sig, 0.0) if sig > 0 else 0.0
        if scenario is ScenarioId.S1_excursion_honest:
            return RandomTimeResult(sig, sig_time, aux_indices={"T1": t1})
        pi = _last_max_update(v, max(sig - 1, 0))
        max_at_sigma = float(np.max(v[:max(sig, 1)]))
        return RandomTimeResult(
            pi, pi * grid.dt,
            aux_indices={"T1": t1, "sigma_honest": sig},
            aux_values={"max_at_sigma": max_at_sigma,
                        "sigma_honest_time": sig_time})

    if scenario is ScenarioId.S3_stopped_max_honest:
        if path.absorbed_at is None:
            return RandomTimeResult(0, 0.0, censored=True)
        a = path.absorbed_at
        sig = _last_max_update(v, max(a - 1, 0))
        return RandomTimeResult(sig, sig * grid.dt, aux_indices={"T0": a},
                                aux_values={"max": float(np.max(v[:a + 1]))})

    if scenario is ScenarioId.S4_invariance:
        if path.absorbed_at is None:
            return RandomTimeResult(0, 0.0, censored=True)
        a = path.absorbed_at
        big_l = _last_max_update(v, max(a - 1, 0))
        cm = np.maximum.accumulate(v[:big_l + 1])
        ratio = v[:big_l + 1] / cm
        ci = np.minimum.accumulate(ratio)
        upd = np.nonzero(ci[1:] < ci[:-1])[0]
        sig = int(upd[-1]) + 1 if upd.size else 0
        return RandomTimeResult(
            sig, sig * grid.dt, aux_indices={"L": big_l, "T0": a},
            aux_values={"inf_ratio": float(ci[-1])})

    if scenario is ScenarioId.S6_half_bridge:
        y = 2.0 * v - v[-1]
        sig = _last_zero_cross(y, grid.n_steps)
        if sig > 0:
            d0, d1 = y[sig - 1], y[sig]
            sig_time = (sig - 1 + d0 / (d0 - d1)) * grid.dt
        else:
            sig_time = 0.0
        return RandomTimeResult(sig, sig_time, aux_values={"W1": float(v[-1])})

    if scenario is ScenarioId.S7_last_zero_unit:
        sig = _last_zero_cross(v, grid.n_steps)
        sig_time = crossing_time(path, sig, 0.0) if sig > 0 else 0.0
        return RandomTimeResult(sig, sig_time, aux_values={"B1": float(v[-1])})

    raise ValueError(f"unknown scenario {scenario}")


# ---------------------------------------------------------------------------
# Exact tail completion
# ---------------------------------------------------------------------------
# Post-cap futures of a Brownian path are resolved through first-passage
# identities: from x in (0, 1), P(hit 1 before 0) = x; from x the maximum S
# before reaching 0, given 0 is reached before 1, has
# P(S > a | .) = x(1-a)/(a(1-x)); from a fresh zero the maximum before the
# last zero preceding the first hit of 1 satisfies P(> a) = 1 - a.  All are
# gambler's-ruin facts, independent of the compensator identities the lab
# is testing.

MAX_CHAIN_ROUNDS = 128


@dataclass
class HittingTailState:
    """Censored S1/S2 path state at the capped horizon."""
    x: float                # B at the cap
    mbar: float             # running max
    zbar: float             # running max at the last zero
    m1_hit: bool = False    # B reached -1 (stops the martingale on (0,2))
    m1_mbar: float = 0.0    # running max when -1 was first hit
    m2_hit: bool = False    # B reached -2 (stops the martingale on (-2,2))
    m2_mbar: float = 0.0


@dataclass
class HittingTailResult:
    max_at_sigma: float     # final running max at the last zero
    post_cap_zero: bool     # whether sigma lies beyond the cap
    m1_before_pi: bool      # -1 was passed before the last supremum time
    m2_before_pi: bool


def complete_hitting_tail(st: HittingTailState, u) -> HittingTailResult:
    """Resolve a censored S1/S2 path exactly; u() supplies U(0,1) draws.

    Returns a draw from the exact joint law of (max at sigma, sigma beyond
    cap, order of the -1 / -2 passages relative to pi) given the cap state.
    """
    if st.x > 0.0 and u() < st.x:
        # hits 1 before 0: no further zeros, everything already recorded
        return HittingTailResult(
            st.zbar, False,
            st.m1_hit and st.zbar > st.m1_mbar,
            st.m2_hit and st.zbar > st.m2_mbar)

    # a post-cap zero occurs; pending order flags from the in-horizon part
    h1 = st.m1_hit and st.mbar > st.m1_mbar
    h2 = st.m2_hit and st.mbar > st.m2_mbar
    fz1, fz2 = st.m1_hit, st.m2_hit
    r = st.mbar

    if st.x > 0.0:
        # maximum of the segment until that zero, given no hit of 1
        a = st.x / (st.x + u() * (1.0 - st.x))
        if a > r:
            r = a
            h1, h2 = fz1, fz2   # validated touch after any in-horizon passage
    else:
        # the descent to the first post-cap zero may pass -1 and -2
        if not fz2:
            p2 = min(1.0, max(0.0, -st.x) / 2.0)
            if u() < p2:
                fz1 = fz2 = True
            elif not fz1:
                p1_rest = max(0.0, -st.x) / 2.0   # P(-1 but not -2)
                if u() < p1_rest / max(1.0 - p2, 1e-300):
                    fz1 = True

    if r <= 0.0:
        # no positive record ever; the future record is uniform and any
        # passage so far predates its touch
        return HittingTailResult(u(), True, fz1, fz2)

    for _ in range(MAX_CHAIN_ROUNDS):
        # race from the zero: touch the record r before -1 / -2?
        if u() < r / (1.0 + r):
            fz1 = True                        # -1 first
            if u() < (1.0 + r) / (2.0 + r):   # then -2 before recovering to r
                fz2 = True
                continue                      # back at a zero, record intact
        # the record is touched; from r race 1 against 0
        if u() < r:
            # ascends to 1 with no further zero: the touch came after sigma
            return HittingTailResult(r, True, h1, h2)
        # returns to 0: touch validated, record grows en route to the zero
        h1, h2 = fz1, fz2
        s = u()
        r = r / (r + s * (1.0 - r))   # P(new record > a | return) = r(1-a)/(a(1-r))
    return HittingTailResult(r, True, h1, h2)


@dataclass
class AbsorbingTailState:
    """Censored S3/S4 path state at the capped horizon."""
    x: float                 # N at the cap (> 0)
    nbar: float              # running max
    inf_at_l: float = 1.0    # running inf of N/Nbar at the last max update
    dipmin: float = 1.0      # min of N/Nbar since the last max update


@dataclass
class AbsorbingTailResult:
    final_max: float         # Nbar at absorption
    post_cap_max: bool       # sigma (last max time) beyond the cap
    sup_after_cap: float     # sup of N over [cap, absorption)
    inf_ratio: float         # inf of N/Nbar over [0, last max time]


def complete_absorbing_tail(st: AbsorbingTailState, u) -> AbsorbingTailResult:
    """Resolve a censored S3/S4 path exactly via ruin laws of the tail.

    The post-cap supremum of Brownian motion absorbed at zero started from
    x is x/U.  When it exceeds the old record, the dip depth on the way up
    and the deepest proportional dip along the record growth have the
    closed first-passage laws sampled here.
    """
    sup_pc = st.x / max(u(), 1e-300)
    if sup_pc <= st.nbar:
        return AbsorbingTailResult(st.nbar, False, sup_pc, st.inf_at_l)
    f = sup_pc
    # dip depth from x back up to the old record, given the record is reached
    uu = u()
    d = uu * st.x * st.nbar / (st.nbar - st.x + uu * st.x)
    dip = min(st.dipmin * st.nbar, d) / st.nbar
    # deepest ratio dip while the record grows from nbar to f:
    # P(no dip of N/Nbar below theta) = (nbar/f)^(theta/(1-theta))
    e = -math.log(max(u(), 1e-300))
    theta = e / (e + math.log(f / st.nbar))
    return AbsorbingTailResult(f, True, f, min(st.inf_at_l, dip, theta))


# ---------------------------------------------------------------------------
# Avoidance diagnostics
# ---------------------------------------------------------------------------

def atom_masses(sigma_times: np.ndarray) -> tuple[int, int]:
    """Largest exact-tie count among positive detected times.

    The mass parked at exactly zero is a discretization artifact (paths with
    no detected interior crossing, vanishing like sqrt(dt)); continuity of
    the true law is judged on the interior values.
    """
    pos = sigma_times[sigma_times > 0.0]
    if pos.size == 0:
        return 0, 0
    _, counts = np.unique(pos, return_counts=True)
    return int(counts.max()), int(pos.size)
