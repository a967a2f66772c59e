"""Density families rho, induced closed forms h / k / hazard, drift
predictions, the deflator, and the scale-invariance machinery.

Normalizations: pseudo-stopping kinds need int_0^1 f = 1; honest kinds need
int_0^inf f(x) e^{-x} dx = 1; the stochastic-exponential kind needs
int_0^1 exp(int_z^1 g) dz = 1.  All are verified by adaptive Simpson to
1e-10 when a spec is built.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .engine import SamplePath
from .numerics import adaptive_simpson, bisect, norm_cdf
from .scenarios import ScenarioId, RandomTimeResult, detect
from .azema import s7_density_forms

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class Kind(enum.Enum):
    f_of_A_pseudo = "f_of_A_pseudo"      # rho = f(A_sigma), pseudo-stopping
    M_sigma = "M_sigma"                  # rho = M_sigma, bounded martingale M
    f_of_A_honest = "f_of_A_honest"      # rho = f(A_sigma), honest time
    generalized_pi = "generalized_pi"    # rho = f(A^pi_pi) on the honest pair
    two_Z_sigma = "two_Z_sigma"          # rho = 2 Z_sigma (counterexample)
    log_Nbar = "log_Nbar"                # rho = log Nbar_inf (= A_sigma, honest)
    stoch_exp_g = "stoch_exp_g"          # rho_t = E(int g(M/Mbar) dM/(2Mbar))
    abs_B1 = "abs_B1"                    # rho proportional to |B_1|


# --- named density families -------------------------------------------------

@dataclass(frozen=True)
class PseudoDensity:
    """f > 0 on [0, 1] with unit integral; closed tail int_a^1 f."""
    name: str
    f: Callable
    tail: Callable          # int_a^1 f(x) dx

    def check(self, tol: float = 1e-10) -> float:
        return adaptive_simpson(self.f, 0.0, 1.0, tol=tol)


@dataclass(frozen=True)
class HonestDensity:
    """f >= 0 with int f(x) e^-x dx = 1; closed tail int_a^inf f e^-x."""
    name: str
    f: Callable
    tail: Callable          # int_a^inf f(x) e^{-x} dx

    def check(self, tol: float = 1e-10, upper: float = 60.0) -> float:
        return adaptive_simpson(lambda x: self.f(x) * math.exp(-x), 0.0,
                                upper, tol=tol)


PSEUDO_F: Dict[str, PseudoDensity] = {
    "one": PseudoDensity("one", lambda x: np.ones_like(np.asarray(x, float)),
                         lambda a: 1.0 - a),
    "2x": PseudoDensity("2x", lambda x: 2.0 * np.asarray(x, float),
                        lambda a: 1.0 - np.asarray(a, float) ** 2),
}

HONEST_F: Dict[str, HonestDensity] = {
    "one": HonestDensity("one", lambda x: np.ones_like(np.asarray(x, float)),
                         lambda a: np.exp(-np.asarray(a, float))),
    "x": HonestDensity("x", lambda x: np.asarray(x, float),
                       lambda a: (1.0 + np.asarray(a, float)) * np.exp(-np.asarray(a, float))),
    "2exp": HonestDensity("2exp", lambda x: 2.0 * np.exp(-np.asarray(x, float)),
                          lambda a: np.exp(-2.0 * np.asarray(a, float))),
}


@dataclass
class MeasureChangeSpec:
    kind: Kind
    f_name: str = "one"
    g: Optional[Callable] = None          # stoch_exp_g drift shape on [0, 1]
    c: Optional[float] = None             # constant for g(x) = x - c
    drift_b: float = 0.5                  # S5 scale-function drift
    norm_tol: float = 1e-10

    def __post_init__(self):
        if self.kind in (Kind.f_of_A_pseudo, Kind.generalized_pi,
                         Kind.two_Z_sigma):
            err = abs(PSEUDO_F[self.f_name].check() - 1.0)
        elif self.kind in (Kind.f_of_A_honest, Kind.log_Nbar):
            name = "x" if self.kind is Kind.log_Nbar else self.f_name
            err = abs(HONEST_F[name].check() - 1.0)
        elif self.kind is Kind.stoch_exp_g and self.g is not None:
            err = abs(exp_g_normalization(self.g) - 1.0)
        else:
            err = 0.0
        if err > 100.0 * self.norm_tol:
            raise ValueError(f"density not normalized: err = {err:.2e}")


# --- weights -----------------------------------------------------------------

def weight(spec: MeasureChangeSpec, scenario: ScenarioId, path: SamplePath,
           result: Optional[RandomTimeResult] = None) -> float:
    """Per-path weight rho (reference single-path implementation)."""
    if result is None:
        result = detect(scenario, path)
    if result.censored:
        raise ValueError("censored path: excluded from weighting")
    v = path.values

    if spec.kind in (Kind.f_of_A_pseudo, Kind.generalized_pi):
        a = result.aux_values["max_at_sigma"]
        return float(PSEUDO_F[spec.f_name].f(a))
    if spec.kind is Kind.two_Z_sigma:
        return 2.0 * (1.0 - result.aux_values["max_at_sigma"])
    if spec.kind is Kind.M_sigma:
        # M = 1 + B stopped on exiting (0, 2); value at pi
        pi = result.sigma_index
        upto = v[:pi + 1] if pi > 0 else v[:1]
        stopped = np.flatnonzero(upto <= -1.0)
        if stopped.size:
            return 0.0
        return 1.0 + float(result.aux_values["max_at_sigma"])
    if spec.kind in (Kind.f_of_A_honest, Kind.log_Nbar):
        a_sig = math.log(result.aux_values["max"])
        if spec.kind is Kind.log_Nbar:
            return a_sig
        return float(HONEST_F[spec.f_name].f(a_sig))
    if spec.kind is Kind.abs_B1:
        return abs(result.aux_values["B1"]) / SQRT_2_OVER_PI
    raise ValueError(f"no single-path weight for {spec.kind}")


# --- h and the hazard mu^F ---------------------------------------------------

def h_and_muF(spec: MeasureChangeSpec, scenario: ScenarioId,
              state: Dict[str, float]) -> Tuple[float, float]:
    """Closed forms of h_t and mu^F_t at one state; raises for unsupported
    pairings.  States use the scenario's natural coordinates."""
    if spec.kind is Kind.f_of_A_pseudo and scenario is ScenarioId.S2_pi_pseudo:
        a = state["A"]                      # running max at t and sigma
        tail = float(PSEUDO_F[spec.f_name].tail(a))
        return tail, -math.log(tail)
    if spec.kind is Kind.M_sigma and scenario is ScenarioId.S2_pi_pseudo:
        m = state["M"]
        z = 1.0 - state["A"]
        return m * z, -math.log(z)
    if spec.kind in (Kind.f_of_A_honest, Kind.log_Nbar) \
            and scenario is ScenarioId.S3_stopped_max_honest:
        name = "x" if spec.kind is Kind.log_Nbar else spec.f_name
        a = state["A"]                      # log Nbar
        tail = float(HONEST_F[name].tail(a))
        return state["N"] * tail, -math.log(tail)
    if spec.kind is Kind.generalized_pi \
            and scenario is ScenarioId.S1_excursion_honest:
        dens = PSEUDO_F[spec.f_name]
        bbar, bplus = state["Bbar"], max(state["B"], 0.0)
        h = float(dens.tail(bbar)) + float(dens.f(bbar)) * (bbar - bplus)
        # mu^F accumulates on {B = 0} only; the pointwise hazard density is
        # f(Bbar) dL/2 over (tail + f(Bbar)*Bbar); return the denominator form
        mu_f = state.get("muF_accumulated", math.nan)
        return h, mu_f
    if spec.kind is Kind.abs_B1 and scenario is ScenarioId.S7_last_zero_unit:
        rho_t, k = s7_density_forms(np.array([state["B"]]),
                                    np.array([state["t"]]))
        return float(rho_t[0] - k[0]) / SQRT_2_OVER_PI, math.nan
    raise ValueError(f"unsupported pairing ({spec.kind}, {scenario})")


def muF_generalized_increments(bbar_at_cross: np.ndarray, dl: float,
                               f_name: str) -> np.ndarray:
    """Hazard increments f(Bbar) dL/2 / (tail(Bbar) + f(Bbar) Bbar) at the
    zero crossings of the S1 path (support of dA^sigma)."""
    dens = PSEUDO_F[f_name]
    return np.asarray(dens.f(bbar_at_cross)) * (dl / 2.0) / (
        np.asarray(dens.tail(bbar_at_cross))
        + np.asarray(dens.f(bbar_at_cross)) * bbar_at_cross)


# --- predicted drifts ---------------------------------------------------------

def predicted_drift(spec: MeasureChangeSpec, scenario: ScenarioId,
                    state: Dict[str, float], regime: str = "pre_sigma"
                    ) -> float:
    """Predicted drift of the driving Brownian motion at one state."""
    if regime == "post_sigma":
        b = state["B"]
        if abs(b) < 1e-12:
            raise ValueError("singular state: B = 0 after sigma")
        return 1.0 / b

    if scenario is ScenarioId.S1_excursion_honest \
            and spec.kind is Kind.generalized_pi:
        b, bbar = state["B"], state["Bbar"]
        if b <= 0.0:
            return 0.0
        dens = PSEUDO_F[spec.f_name]
        denom = float(dens.tail(bbar)) + float(dens.f(bbar)) * (bbar - max(b, 0.0))
        if denom < 1e-12:
            raise ValueError("singular state: h = 0")
        return -float(dens.f(bbar)) / denom
    if scenario is ScenarioId.S2_pi_pseudo \
            and spec.kind in (Kind.f_of_A_pseudo, Kind.two_Z_sigma):
        return 0.0
    if scenario is ScenarioId.S2_pi_pseudo and spec.kind is Kind.M_sigma:
        m = state["M"]
        if m < 1e-12:
            raise ValueError("singular state: M = 0")
        return state.get("dMdB", 1.0) / m
    if scenario is ScenarioId.S3_stopped_max_honest \
            and spec.kind in (Kind.f_of_A_honest, Kind.log_Nbar):
        # drift of U picks up d<U, N>/N; for U = N itself that is 1/N
        n = state["N"]
        if state.get("U", "B") == "N":
            return 1.0 / n
        return 0.0
    if scenario is ScenarioId.S7_last_zero_unit and spec.kind is Kind.abs_B1:
        b, t = state["B"], state["t"]
        a = abs(b) / math.sqrt(1.0 - t)
        phi_m1 = float(norm_cdf(a)) - 1.0
        h = 2.0 * abs(b) * phi_m1 \
            + math.sqrt(2.0 * (1.0 - t) / math.pi) * math.exp(-0.5 * a * a)
        if h < 1e-12:
            raise ValueError("singular state: h = 0")
        return 2.0 * math.copysign(1.0, b) * phi_m1 / h
    raise ValueError(f"no drift prediction for ({spec.kind}, {scenario})")


# --- deflator ------------------------------------------------------------------

def deflator(path: SamplePath, result: Optional[RandomTimeResult] = None
             ) -> Tuple[np.ndarray, float]:
    """1/N stopped at sigma on an S3 path; (path of values, terminal)."""
    if result is None:
        result = detect(ScenarioId.S3_stopped_max_honest, path)
    if result.censored:
        raise ValueError("censored path")
    v = np.maximum(path.values, 1e-12)
    sig = result.sigma_index
    out = np.empty_like(v)
    out[:sig + 1] = 1.0 / v[:sig + 1]
    out[sig + 1:] = out[sig]
    return out, float(out[sig])


# --- scale-invariance machinery (Thm 5.3-type construction) --------------------

def exp_g_normalization(g: Callable, tol: float = 1e-10) -> float:
    """int_0^1 exp(int_z^1 g(y) dy) dz via nested adaptive Simpson."""
    def inner(z):
        return math.exp(adaptive_simpson(g, z, 1.0, tol=tol * 0.01))
    return adaptive_simpson(inner, 0.0, 1.0, tol=tol)


def solve_c_linear(tol: float = 1e-10) -> float:
    """c such that int_0^1 exp((1-z^2)/2 - c(1-z)) dz = 1 (g(x) = x - c)."""
    def resid(c):
        return adaptive_simpson(
            lambda z: math.exp(0.5 * (1.0 - z * z) - c * (1.0 - z)),
            0.0, 1.0, tol=tol * 0.01) - 1.0
    return bisect(resid, 0.0, 5.0, tol=tol)


def h_of_x(g: Callable, tol: float = 1e-10) -> Callable:
    """h(x) = int_0^x exp(int_z^1 g) dz; satisfies g h' + h'' = 0 and, for a
    normalized g, h(1) = h'(1) = 1, h(0) = 0."""
    def h(x: float) -> float:
        return adaptive_simpson(
            lambda z: math.exp(adaptive_simpson(g, z, 1.0, tol=tol * 0.01)),
            0.0, x, tol=tol)
    return h


def h_prime(g: Callable, x: float, tol: float = 1e-10) -> float:
    return math.exp(adaptive_simpson(g, x, 1.0, tol=tol))


def scale_function(b: float) -> Callable:
    """Scale function of Brownian motion with constant drift b."""
    if b == 0.0:
        return lambda x: np.asarray(x, dtype=float)
    return lambda x: (1.0 - np.exp(-2.0 * b * np.asarray(x, dtype=float))) / (2.0 * b)
