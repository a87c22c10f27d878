"""Standard errors and confidence intervals.

Three routes are offered:

``eif_plugin``  the empirical variance of the efficient influence function
                evaluated at the fitted nuisances;
``sandwich``    the same influence function corrected for estimation of the
                nuisance coefficients, ``S - D A^{-1} S_beta`` with
                ``D = d P_n S / d beta'`` (central differences) and
                ``A = P_n d S_beta / d beta'``;
``bootstrap``   nonparametric row resampling of the whole pipeline.

Effects on ratio scales use the delta method on the joint influence vectors
of (theta0, delta0, delta1); their Wald intervals are formed on the log scale.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .data import EstimateReport, MediationDataset
from .errors import ConfigError, ConvergenceError, MediationError, PreconditionError
from .estimators import (
    THETA_KINDS,
    WEIGHT_FLOOR,
    check_scale,
    delta_rows,
    effect_value,
    log_effect_gradient,
    theta_rows,
)
from .nuisance import NuisanceFit, NuisanceValues

COMPONENTS = ("theta0", "delta0", "delta1")
DEFAULT_STEP = 1e-5
MIN_BOOT = 50
BOOT_FAILURE_WARN = 0.10


@dataclass(frozen=True)
class InfluenceVector:
    values: np.ndarray
    estimand: str
    correction: str = "none"

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class VarianceReport:
    variance: float
    se: float
    method: str
    replicates: int = 0
    influence: InfluenceVector | None = field(default=None, repr=False)


def _component_rows(d: MediationDataset, v: NuisanceValues, theta_kind: str, floor: float) -> np.ndarray:
    """(n, 3) uncentred rows for theta0, delta0, delta1."""
    return np.column_stack([
        theta_rows(theta_kind, d, v, floor)[0],
        delta_rows(0, d, v, floor)[0],
        delta_rows(1, d, v, floor)[0],
    ])


def _combination(estimand: str) -> np.ndarray:
    return log_effect_gradient(estimand, "difference", 0.0, 0.0, 0.0)


def _check_kind(theta_kind: str) -> None:
    if theta_kind not in THETA_KINDS:
        raise PreconditionError(
            f"no analytic influence function for estimator {theta_kind!r}; use the bootstrap"
        )


def component_influence(d: MediationDataset, fit: NuisanceFit, theta_kind: str = "triply",
                        estimates=None, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Centred (n, 3) influence matrix of (theta0, delta0, delta1).

    ``estimates`` optionally supplies the centring values; by default the
    estimates themselves are used, so every column has mean zero.
    """
    _check_kind(theta_kind)
    d.require_both_arms()
    rows = _component_rows(d, fit.values(d), theta_kind, floor)
    centre = rows.mean(axis=0) if estimates is None else np.asarray(estimates, dtype=float)
    return rows - centre


def eif_values(d: MediationDataset, fit: NuisanceFit, estimand: str, estimate=None,
               theta_kind: str = "triply") -> InfluenceVector:
    """Per-row efficient influence function of ``estimand``.

    ``estimate`` is a mapping with any of ``theta0``, ``delta0``, ``delta1``
    (missing components are replaced by their estimates), or a single number
    when the estimand is one of those components.
    """
    if estimand not in COMPONENTS + ("NDE", "NIE", "total"):
        raise ValueError(f"unknown estimand {estimand!r}")
    _check_kind(theta_kind)
    d.require_both_arms()
    rows = _component_rows(d, fit.values(d), theta_kind, WEIGHT_FLOOR)
    centre = rows.mean(axis=0)
    if estimate is not None:
        if np.isscalar(estimate):
            if estimand not in COMPONENTS:
                raise ValueError("a scalar estimate needs a component estimand")
            centre[COMPONENTS.index(estimand)] = float(estimate)
        else:
            for key, val in dict(estimate).items():
                centre[COMPONENTS.index(key)] = float(val)
    return InfluenceVector((rows - centre) @ _combination(estimand), estimand, "none")


def correction_derivative(d: MediationDataset, fit: NuisanceFit, theta_kind: str = "triply",
                          step: float = DEFAULT_STEP, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """``d P_n[rows] / d beta'`` for the three components, shape (3, q)."""
    beta = fit.coefficients
    out = np.empty((3, beta.shape[0]))
    for j in range(beta.shape[0]):
        h = step * (1.0 + abs(beta[j]))
        bp, bm = beta.copy(), beta.copy()
        bp[j] += h
        bm[j] -= h
        up = _component_rows(d, fit.with_coefficients(bp).values_at(d.x), theta_kind, floor).mean(axis=0)
        down = _component_rows(d, fit.with_coefficients(bm).values_at(d.x), theta_kind, floor).mean(axis=0)
        out[:, j] = (up - down) / (2.0 * h)
    return out


def corrected_influence(d: MediationDataset, fit: NuisanceFit, theta_kind: str = "triply",
                        step: float = DEFAULT_STEP, zero_correction: bool = False) -> np.ndarray:
    """(n, 3) influence matrix corrected for the estimated nuisance coefficients."""
    base = component_influence(d, fit, theta_kind)
    if zero_correction:
        return base
    dmat = correction_derivative(d, fit, theta_kind, step)
    jac = fit.score_jacobian(d)
    try:
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > 1e14:
            raise linalg.LinAlgError("ill-conditioned")
        coef = linalg.solve(jac.T, dmat.T)
    except linalg.LinAlgError:
        raise ConvergenceError("nuisance score Jacobian is singular; use bootstrap inference") from None
    return base - fit.scores(d) @ coef


def sandwich_variance(d: MediationDataset, fit: NuisanceFit, estimand: str, theta_kind: str = "triply",
                      step: float = DEFAULT_STEP, zero_correction: bool = False) -> VarianceReport:
    """Variance of an estimand (difference scale) by the corrected influence function."""
    infl = corrected_influence(d, fit, theta_kind, step, zero_correction) @ _combination(estimand)
    var = float(np.mean(infl**2))
    return VarianceReport(var, math.sqrt(var / d.n), "sandwich", 0,
                          InfluenceVector(infl, estimand, "score_corrected"))


def eif_variance(d: MediationDataset, fit: NuisanceFit, estimand: str, theta_kind: str = "triply") -> VarianceReport:
    infl = eif_values(d, fit, estimand, theta_kind=theta_kind)
    var = float(np.mean(infl.values**2))
    return VarianceReport(var, math.sqrt(var / d.n), "eif_plugin", 0, infl)


def delta_method_scale(points, influence: np.ndarray, estimand: str, scale: str = "difference",
                       level: float = 0.95, method: str = "sandwich") -> EstimateReport:
    """Estimate, standard error and Wald interval of an effect on any scale.

    ``points`` are (theta0, delta0, delta1) and ``influence`` their (n, 3)
    joint influence matrix.  Ratio-scale intervals are computed for the log
    ratio and exponentiated; the reported standard error is on the ratio scale.
    """
    theta, d0, d1 = (float(p) for p in points)
    value = effect_value(estimand, scale, theta, d0, d1)
    grad = log_effect_gradient(estimand, scale, theta, d0, d1)
    infl = np.asarray(influence) @ grad
    n = infl.shape[0]
    se_a = math.sqrt(float(np.mean(infl**2)) / n)
    z = float(norm.ppf(0.5 + level / 2.0))
    if scale == "difference":
        se, lo, hi = se_a, value - z * se_a, value + z * se_a
    else:
        se, lo, hi = value * se_a, value * math.exp(-z * se_a), value * math.exp(z * se_a)
    return EstimateReport(estimand, scale, float(value), float(se), float(lo), float(hi), method)


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap summary for a (possibly vector-valued) pipeline."""

    estimates: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    replicates: int
    failures: int
    warning: str | None = None

    def report(self, j: int = 0) -> VarianceReport:
        return VarianceReport(float(self.se[j] ** 2), float(self.se[j]), "bootstrap", self.replicates)


def _boot_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(b), 0xB007])))


def bootstrap(d: MediationDataset, pipeline, B: int = 500, seed: int = 0, level: float = 0.95,
              workers: int = 1) -> BootstrapResult:
    """Nonparametric bootstrap of ``pipeline(dataset) -> float or vector``.

    Rows are put in a canonical order before resampling, so the result does
    not depend on the input row order.  Replicates whose pipeline raises a
    package error (empty exposure arm, failed fit) are dropped and counted.
    """
    if B < MIN_BOOT:
        raise ConfigError(f"bootstrap needs at least {MIN_BOOT} replicates, got {B}")
    dc = d.take(d.canonical_order())

    def one(b: int):
        idx = _boot_rng(seed, b).integers(0, dc.n, dc.n)
        try:
            with np.errstate(all="ignore"):
                out = np.atleast_1d(np.asarray(pipeline(dc.take(idx)), dtype=float))
        except (MediationError, np.linalg.LinAlgError, FloatingPointError):
            return None
        return out if np.all(np.isfinite(out)) else None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    kept = [r for r in results if r is not None]
    failures = B - len(kept)
    warning = None
    if failures > BOOT_FAILURE_WARN * B:
        warning = f"{failures} of {B} bootstrap replicates failed and were dropped"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    if len(kept) < 2:
        raise ConvergenceError(f"only {len(kept)} of {B} bootstrap replicates succeeded")
    est = np.vstack(kept)
    alpha = 1.0 - level
    lo, hi = np.quantile(est, [alpha / 2, 1 - alpha / 2], axis=0)
    return BootstrapResult(est, est.std(axis=0, ddof=1), lo, hi, len(kept), failures, warning)


def bootstrap_report(estimand: str, scale: str, point: float, boot: BootstrapResult, j: int = 0,
                     method: str = "bootstrap", diagnostics=None) -> EstimateReport:
    """EstimateReport with bootstrap SE and percentile interval.

    A percentile interval can exclude the point estimate when the bootstrap
    distribution is strongly skewed; the interval is then widened to reach the
    point and ``ci_adjusted`` is set in the diagnostics.
    """
    diag = dict(diagnostics or {})
    lo, hi = float(boot.ci_low[j]), float(boot.ci_high[j])
    if not lo <= point <= hi:
        lo, hi = min(lo, point), max(hi, point)
        diag["ci_adjusted"] = 1.0
    diag["bootstrap_failures"] = float(boot.failures)
    return EstimateReport(estimand, scale, float(point), float(boot.se[j]), lo, hi, method, diag)


def effect_reports(d: MediationDataset, fit: NuisanceFit, estimands, scale: str = "difference",
                   theta_kind: str = "triply", level: float = 0.95, method: str = "sandwich"):
    """Analytic reports (sandwich or EIF plug-in) for several effects at once."""
    check_scale(d, scale)
    _check_kind(theta_kind)
    rows = _component_rows(d, fit.values(d), theta_kind, WEIGHT_FLOOR)
    points = rows.mean(axis=0)
    if method == "sandwich":
        infl = corrected_influence(d, fit, theta_kind)
    elif method == "eif_plugin":
        infl = component_influence(d, fit, theta_kind)
    else:
        raise ConfigError(f"unknown analytic method {method!r}")
    return [delta_method_scale(points, infl, est, scale, level, method) for est in estimands]
