"""Weight-stabilized versions of the augmented estimator.

The mediator model is refitted among the unexposed with inverse-propensity
weights and the outcome model (linear, additive in the mediator) among the
exposed with the density-ratio weights of the augmented estimator.  With an
intercept in both refits the two augmentation terms have empirical mean zero,
so the estimator reduces to the plug-in ``P_n eta(1, 0, X)`` computed from the
refitted models and inherits its boundedness.

Variant ``dag1`` uses the fitted propensity.  Variant ``dag2`` first shifts
the propensity on the logit scale by

    C1 = -log(1 - P_n E) + log P_n[E f(0|X) / f(1|X)]

so that ``P_n[E f(0|X)/f(1|X)] = 1 - P_n E`` holds for the shifted model,
which makes inverse-propensity means of bounded quantities bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .data import MediationDataset
from .design import DesignSpec, NuisanceSpecs
from .errors import DegenerateInputError, PreconditionError
from .estimators import WEIGHT_FLOOR, theta_rows
from .nuisance import NuisanceFit, NuisanceValues, _fit_one, fit_nuisances
from .regression import FitResult, LinkFunction

VARIANTS = ("dag1", "dag2")


@dataclass(frozen=True)
class PropensityShift:
    """Logit-scale shift ``C1`` of a fitted propensity model."""

    c1: float
    base: NuisanceFit

    def probabilities(self, x: np.ndarray):
        """Shifted (f(0|x), f(1|x)) and their logs, each stacked as (2, n)."""
        _, log_fe = self.base.propensity_probs(np.atleast_2d(x))
        lin = log_fe[1] - log_fe[0] + self.c1
        fe = np.vstack([expit(-lin), expit(lin)])
        return fe, np.vstack([log_expit(-lin), log_expit(lin)])


def shift_propensity(d: MediationDataset, fit: NuisanceFit) -> PropensityShift:
    """Compute ``C1`` from the fitted propensity in ``fit``."""
    d.require_both_arms()
    log_fe = fit.values(d).log_fe
    odds0 = np.mean(d.e * np.exp(log_fe[0] - log_fe[1]))
    if not odds0 > 0 or not np.isfinite(odds0):
        raise DegenerateInputError("P_n[E f(0|X)/f(1|X)] is zero or not finite")
    c1 = -np.log1p(-np.mean(d.e)) + np.log(odds0)
    return PropensityShift(float(c1), fit)


def dag_outcome_spec(spec: DesignSpec) -> DesignSpec:
    """The exposed-arm outcome design: the outcome model terms with E set to 1.

    Only a linear model with an intercept, additive in a single mediator
    column, is accepted.
    """
    if spec.link != "identity":
        raise PreconditionError("the stabilized outcome refit needs an identity-link outcome model")
    if not spec.intercept:
        raise PreconditionError("the stabilized outcome refit needs an intercept")
    terms = []
    for term in spec.terms:
        reduced = tuple(f for f in term if f != "e")
        if reduced and reduced not in terms:
            terms.append(reduced)
    for term in terms:
        if any(f.startswith("m@") for f in term) or (("m" in term) and term != ("m",)):
            raise PreconditionError(
                f"outcome term {':'.join(term)} is not additive in the mediator; "
                "the stabilized refit needs the design [1, covariates, M]"
            )
    if ("m",) not in terms:
        terms.append(("m",))
    return spec.replace(terms=tuple(terms))


def dag_mediator_spec(spec: DesignSpec) -> DesignSpec:
    if not spec.intercept:
        raise PreconditionError("the stabilized mediator refit needs an intercept")
    # the residual form keeps the intercept equation that makes the mediator
    # augmentation term vanish, whatever the link
    return spec.replace(terms=tuple(t for t in spec.terms if "e" not in t), score="residual")


@dataclass(frozen=True, eq=False)
class StabilizedFit:
    """Refitted mediator (unexposed arm) and outcome (exposed arm) models.

    ``values(d)`` exposes the nuisance quantities that enter the augmented
    estimator at the stabilized fits: the refitted outcome mean under
    exposure, the refitted mediator law under non-exposure, the original
    mediator law under exposure, and the (possibly shifted) propensity.
    """

    variant: str
    beta_e_shift: float
    beta_m_dag: FitResult
    beta_y_dag: FitResult
    mediator_spec: DesignSpec
    outcome_spec: DesignSpec
    base: NuisanceFit
    diagnostics: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def values_at(self, x: np.ndarray) -> NuisanceValues:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        base = self.base.values_at(x)
        mu = base.mu.copy()
        fm = base.fm.copy()
        cov, names = self.outcome_spec.covariates(x, self.base.x_names)
        for m in (0, 1):
            h = self.outcome_spec.features(cov, names, m=m)
            mu[1, :, m] = h @ self.beta_y_dag.coefficients
        cov, names = self.mediator_spec.covariates(x, self.base.x_names)
        lin = self.mediator_spec.features(cov, names) @ self.beta_m_dag.coefficients
        link = LinkFunction(self.mediator_spec.link)
        fm[0] = np.column_stack([link.complement(lin), link.forward(lin)])
        if self.beta_e_shift != 0.0:
            fe, log_fe = PropensityShift(self.beta_e_shift, self.base).probabilities(x)
        else:
            fe, log_fe = base.fe, base.log_fe
        return NuisanceValues(mu, fm, fe, log_fe)

    def values(self, d: MediationDataset) -> NuisanceValues:
        hit = self._cache.get("values")
        if hit is not None and hit[0] is d:
            return hit[1]
        v = self.values_at(d.x)
        self._cache["values"] = (d, v)
        return v


def fit_dag_nuisances(
    d: MediationDataset,
    specs: NuisanceSpecs,
    variant: str = "dag2",
    base: NuisanceFit | None = None,
    floor: float = WEIGHT_FLOOR,
) -> StabilizedFit:
    """Fit the stabilized nuisance models.

    The pipeline runs in a fixed order: (shift the propensity,) refit the
    mediator model on the unexposed, then refit the outcome model on the
    exposed.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if d.mediator_support_size != 2:
        raise PreconditionError("stabilized estimators need a binary mediator")
    d.require_both_arms()
    y_spec = dag_outcome_spec(specs.outcome)
    m_spec = dag_mediator_spec(specs.mediator)
    base = base or fit_nuisances(d, specs)
    v = base.values(d)
    events = 0

    if variant == "dag2":
        shift = shift_propensity(d, base)
        c1 = shift.c1
        fe = shift.probabilities(d.x)[0]
    else:
        c1 = 0.0
        fe = v.fe

    unexposed = d.e == 0
    low = fe[0][unexposed] < floor
    events += int(np.count_nonzero(low))
    w_m = 1.0 / np.maximum(fe[0][unexposed], floor)
    cov, names = m_spec.covariates(d.x[unexposed], d.x_names)
    h_m = m_spec.features(cov, names)
    beta_m = _fit_one("mediator", m_spec, h_m, d.m[unexposed].astype(float), 2, weights=w_m)

    exposed = d.e == 1
    x1, m1 = d.x[exposed], d.m[exposed]
    link = LinkFunction(m_spec.link)
    cov, names = m_spec.covariates(x1, d.x_names)
    lin = m_spec.features(cov, names) @ beta_m.coefficients
    f_m0 = np.where(m1 == 1, link.forward(lin), link.complement(lin))
    f_m1 = v.fm[1, exposed, m1]
    f_e1 = fe[1][exposed]
    events += int(np.count_nonzero(f_e1 < floor)) + int(np.count_nonzero(f_m1 < floor))
    w_y = f_m0 / (np.maximum(f_e1, floor) * np.maximum(f_m1, floor))
    cov, names = y_spec.covariates(x1, d.x_names)
    h_y = y_spec.features(cov, names, m=m1)
    beta_y = _fit_one("outcome", y_spec, h_y, d.y[exposed], 2, weights=w_y)

    diagnostics = {
        "floor_events": float(events),
        "max_mediator_weight": float(np.max(w_m)),
        "max_outcome_weight": float(np.max(w_y)),
    }
    return StabilizedFit(variant, c1, beta_m, beta_y, m_spec, y_spec, base, diagnostics)


def theta_dag(d: MediationDataset, sfit: StabilizedFit) -> float:
    """Plug-in estimate ``P_n eta(1, 0, X)`` at the stabilized fits."""
    d.require_both_arms()
    return float(np.mean(sfit.values(d).eta(1, 0)))


def augmented_at_dag(d: MediationDataset, sfit: StabilizedFit, floor: float = WEIGHT_FLOOR):
    """The full augmented estimator at the stabilized fits and its two augmentation means."""
    rows, diag = theta_rows("triply", d, sfit.values(d), floor)
    return float(np.mean(rows)), diag["aug_outcome_mean"], diag["aug_mediator_mean"]


def _as_rows(d: MediationDataset, r) -> np.ndarray:
    if callable(r):
        r = r(d.y, d.m)
    r = np.broadcast_to(np.asarray(r, dtype=float), (d.n,))
    return r


def bounded_ipw_decomposition(d: MediationDataset, sfit: StabilizedFit, r):
    """Split ``P_n[E R / f(1|X)]`` under the shifted propensity.

    Returns ``(direct, exposed_part, convex_mean)`` with
    ``direct = exposed_part + (1 - P_n E) * convex_mean``, where
    ``exposed_part = P_n[E R]`` and ``convex_mean`` is a weighted average of R
    over the exposed rows with weights proportional to ``f(0|X)/f(1|X)``.
    """
    if sfit.variant != "dag2":
        raise PreconditionError("the boundedness identity needs the shifted propensity (dag2)")
    rr = _as_rows(d, r)
    v = sfit.values(d)
    exposed = d.e == 1
    direct = float(np.mean(exposed * rr * np.exp(-v.log_fe[1])))
    odds = np.exp(v.log_fe[0][exposed] - v.log_fe[1][exposed])
    convex = float(np.sum(odds * rr[exposed]) / np.sum(odds))
    return direct, float(np.mean(exposed * rr)), convex


def bounded_ipw_mean(d: MediationDataset, sfit: StabilizedFit, r) -> float:
    """``P_n[E R / f(1|X)]`` computed through its bounded decomposition.

    ``r`` is an array of per-row values or a callable ``r(y, m)``.
    """
    _, exposed_part, convex = bounded_ipw_decomposition(d, sfit, r)
    return exposed_part + (1.0 - float(np.mean(d.e))) * convex
