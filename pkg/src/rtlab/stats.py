"""Weighted statistical tests turning identities into pass/fail verdicts.

Weighted data use the effective sample size N_eff = (sum w)^2 / sum w^2;
standard errors scale with 1/sqrt(N_eff).  Every test is a pure function of
its inputs, and aggregations run in path-index order, so reports reproduce
bit for bit under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .sweeps import DriftBins


@dataclass
class TestReport:
    name: str
    statistic: float
    se: float                 # standard error or critical value context
    threshold: float
    passed: bool
    n_effective: float
    metadata: Dict[str, object] = field(default_factory=dict)
    inverted: bool = False    # diagnostic: the test is expected to FAIL

    @property
    def ok(self) -> bool:
        """Suite-level verdict contribution (inverted tests must fail)."""
        return (not self.passed) if self.inverted else self.passed


def n_effective(weights: np.ndarray) -> float:
    s = float(weights.sum())
    s2 = float((weights * weights).sum())
    return s * s / s2 if s2 > 0 else 0.0


# ---------------------------------------------------------------------------
# Reference CDFs for the weighted KS test
# ---------------------------------------------------------------------------

def _cdf_uniform01(x):
    return np.clip(x, 0.0, 1.0)


def _cdf_exp1(x):
    return -np.expm1(-np.maximum(x, 0.0))


def _cdf_density_2x(x):
    return np.clip(x, 0.0, 1.0) ** 2


REFERENCE_CDFS: Dict[str, Callable] = {
    "uniform01": _cdf_uniform01,
    "exp1": _cdf_exp1,
    "density_2x": _cdf_density_2x,
}


def weighted_ks(samples: np.ndarray, weights: Optional[np.ndarray],
                reference: str, threshold: float = 0.02,
                name: str = "ks", metadata: Optional[dict] = None,
                inverted: bool = False) -> TestReport:
    """KS distance of the weighted empirical CDF against a reference law.

    The default threshold 0.02 is calibrated for N_eff >= 1e5 at the desk
    discretization (it absorbs the O(sqrt(dt)) bias of last-passage laws on
    a grid); use noise_threshold for pure sampling-noise tests.
    """
    samples = np.asarray(samples, dtype=float)
    if weights is None:
        weights = np.ones_like(samples)
    if np.any(weights < 0.0):
        raise ValueError("weights must be nonnegative")
    neff = n_effective(weights)
    if neff < 100.0:
        raise ValueError(f"degenerate weights: N_eff = {neff:.1f} < 100")
    order = np.argsort(samples, kind="stable")
    x = samples[order]
    w = weights[order]
    cdf_hi = np.cumsum(w)
    cdf_hi /= cdf_hi[-1]
    cdf_lo = cdf_hi - w / float(weights.sum())
    ref = REFERENCE_CDFS[reference](x)
    dist = max(float(np.max(np.abs(cdf_hi - ref))),
               float(np.max(np.abs(ref - cdf_lo))))
    md = dict(metadata or {})
    md["reference"] = reference
    return TestReport(name, dist, ks_noise_level(neff), threshold,
                      dist < threshold, neff, md, inverted)


def ks_noise_level(neff: float, alpha_coeff: float = 1.36) -> float:
    """95% sampling-noise scale of the KS statistic at N_eff."""
    return alpha_coeff / math.sqrt(max(neff, 1.0))


def mean_test(samples: np.ndarray, weights: Optional[np.ndarray],
              target: float, k_sigma: float = 3.0,
              abs_tol: Optional[float] = None, name: str = "mean",
              metadata: Optional[dict] = None,
              inverted: bool = False) -> TestReport:
    """Weighted-mean test: |mean - target| below k_sigma*SE (or abs_tol)."""
    samples = np.asarray(samples, dtype=float)
    if weights is None:
        weights = np.ones_like(samples)
    sw = float(weights.sum())
    m = float((weights * samples).sum()) / sw
    resid = samples - m
    se = math.sqrt(float((weights * weights * resid * resid).sum())) / sw
    neff = n_effective(weights)
    stat = abs(m - target)
    threshold = abs_tol if abs_tol is not None else k_sigma * se
    md = dict(metadata or {})
    md["mean"] = m
    md["target"] = target
    return TestReport(name, stat, se, threshold, stat < threshold, neff, md,
                      inverted)


def identity_test(lhs: np.ndarray, rhs: np.ndarray,
                  weights: Optional[np.ndarray] = None, k_sigma: float = 3.0,
                  name: str = "identity", metadata: Optional[dict] = None,
                  inverted: bool = False) -> TestReport:
    """Paired two-estimator agreement on one ensemble: mean difference vs 0."""
    d = np.asarray(lhs, dtype=float) - np.asarray(rhs, dtype=float)
    return mean_test(d, weights, 0.0, k_sigma=k_sigma, name=name,
                     metadata=metadata, inverted=inverted)


# ---------------------------------------------------------------------------
# Drift regression
# ---------------------------------------------------------------------------

@dataclass
class DriftReport:
    name: str
    edges: np.ndarray
    count: np.ndarray
    estimated: np.ndarray
    predicted: np.ndarray
    se: np.ndarray
    z: np.ndarray
    contributing: np.ndarray
    passed: bool
    inconclusive: bool
    inverted: bool = False
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        if self.inconclusive:
            return False
        return (not self.passed) if self.inverted else self.passed

    @property
    def max_abs_z(self) -> float:
        if not self.contributing.any():
            return math.nan
        return float(np.max(np.abs(self.z[self.contributing])))

    def to_test_report(self, z_max: float = 4.0) -> TestReport:
        return TestReport(self.name, self.max_abs_z, 1.0, z_max,
                          self.passed and not self.inconclusive,
                          float(self.count[self.contributing].sum()),
                          dict(self.metadata), self.inverted)


def drift_regression(bins: DriftBins, dt: float, name: str,
                     min_count: int = 500, z_max: float = 4.0,
                     negate_prediction: bool = False,
                     inverted: bool = False,
                     metadata: Optional[dict] = None) -> DriftReport:
    """Compare binned mean(dX)/dt against the state-averaged prediction.

    The prediction is averaged over the observed states in each bin (not the
    bin center), removing the within-bin occupation-tilt artifact; bins with
    fewer than min_count increments do not contribute.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        est = bins.wdx / (bins.w * dt)
        pred = bins.wmu / bins.w
        var_dx = bins.wdx2 / bins.w - (bins.wdx / bins.w) ** 2
        se = np.sqrt(bins.w2 * np.maximum(var_dx, 0.0)) / (bins.w * dt)
        z = (est - pred) / se
    if negate_prediction:
        pred = -pred
        with np.errstate(invalid="ignore"):
            z = (est - pred) / se
    contributing = bins.count >= min_count
    inconclusive = not contributing.any()
    passed = bool(np.all(np.abs(z[contributing]) < z_max)) if not inconclusive \
        else False
    return DriftReport(name, bins.edges, bins.count.copy(), est, pred, se, z,
                       contributing, passed, inconclusive, inverted,
                       dict(metadata or {}))


def martingale_orthogonality(dv: np.ndarray, functionals: Dict[str, np.ndarray],
                             weights: Optional[np.ndarray] = None,
                             k_sigma: float = 3.0, name: str = "orth",
                             metadata: Optional[dict] = None,
                             inverted: bool = False) -> List[TestReport]:
    """E_Q[(V_t - V_s) G_s] = 0 for each bounded functional of the s-past."""
    out = []
    for fname, g in functionals.items():
        md = dict(metadata or {})
        md["functional"] = fname
        out.append(mean_test(dv * g, weights, 0.0, k_sigma=k_sigma,
                             name=f"{name}[{fname}]", metadata=md,
                             inverted=inverted))
    return out


def binned_conditional_test(cond: np.ndarray, outcome: np.ndarray,
                            predicted: np.ndarray, edges: np.ndarray,
                            min_count: int = 200, k_sigma: float = 3.0,
                            name: str = "binned",
                            metadata: Optional[dict] = None) -> TestReport:
    """Binned empirical frequencies against state-averaged predictions.

    Used for the conditional-supremum law: bin by the conditioning state,
    compare mean(outcome) to mean(predicted) per bin, worst |z| decides.
    """
    idx = np.searchsorted(edges, cond, side="right") - 1
    nb = len(edges) - 1
    ok = (idx >= 0) & (idx < nb)
    idx = idx[ok]
    o = outcome[ok].astype(float)
    p = predicted[ok].astype(float)
    cnt = np.bincount(idx, minlength=nb)
    zmax = 0.0
    n_contrib = 0
    for b in range(nb):
        if cnt[b] < min_count:
            continue
        sel = idx == b
        d = o[sel] - p[sel]
        se = d.std(ddof=1) / math.sqrt(cnt[b])
        if se == 0.0:
            continue
        zmax = max(zmax, abs(d.mean()) / se)
        n_contrib += 1
    md = dict(metadata or {})
    md["bins_contributing"] = n_contrib
    return TestReport(name, zmax, 1.0, k_sigma, 0 < n_contrib and zmax < k_sigma,
                      float(cnt.sum()), md)
