"""Fit-and-estimate pipelines shared by the bootstrap, the simulation harness
and the command line."""

from __future__ import annotations

import numpy as np

from .data import MediationDataset
from .design import NuisanceSpecs
from .estimators import THETA_KINDS, delta_estimate, effect_value, theta_estimate
from .nuisance import NuisanceFit, fit_nuisances
from .stabilized import VARIANTS, fit_dag_nuisances, theta_dag

ALL_KINDS = THETA_KINDS + VARIANTS


def theta_value(d: MediationDataset, kind: str, base: NuisanceFit, specs: NuisanceSpecs):
    """Estimate of theta0 by any estimator kind; returns ``(value, diagnostics)``."""
    if kind in VARIANTS:
        sfit = fit_dag_nuisances(d, specs, kind, base=base)
        return theta_dag(d, sfit), dict(sfit.diagnostics)
    est = theta_estimate(d, base, kind)
    return est.value, est.diagnostics


def point_components(d: MediationDataset, specs: NuisanceSpecs, kind: str = "triply") -> np.ndarray:
    """(theta0, delta0, delta1) after fitting every working model on ``d``."""
    base = fit_nuisances(d, specs)
    theta, _ = theta_value(d, kind, base, specs)
    return np.array([theta, delta_estimate(d, base, 0).value, delta_estimate(d, base, 1).value])


def effect_pipeline(specs: NuisanceSpecs, kind: str, estimands, scale: str = "difference"):
    """Closure mapping a dataset to a vector of effects; used for bootstrapping."""
    estimands = tuple(estimands)

    def run(d: MediationDataset) -> np.ndarray:
        t, d0, d1 = point_components(d, specs, kind)
        return np.array([effect_value(est, scale, t, d0, d1) for est in estimands])

    return run
