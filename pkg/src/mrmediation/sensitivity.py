"""Sensitivity analysis for unmeasured mediator-outcome confounding.

A selection-bias function ``t(e, m, x)`` is the difference in the mean
counterfactual outcome ``Y(1, m)`` between subjects with ``M = m`` and
subjects with ``M != m`` at exposure level e and covariates x.  ``t = 0``
is mediator ignorability.  For a given t the mediation functional is
estimated by

    P_n[ E f(M|0,X) / {f(1|X) f(M|1,X)} (Y - E(Y|X,M,1)) + eta_t(X) ]

with ``eta_t(x) = sum_m {E(Y|x,m,1) + t(0,m,x)(1 - f(m|0,x))
- t(1,m,x)(1 - f(m|1,x))} f(m|0,x)``, and the direct effect by subtracting the
doubly robust estimate of ``E(Y(0))``, which does not depend on t.  The
estimate is affine in the values of t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import EstimateReport, MediationDataset
from .design import NuisanceSpecs
from .errors import ConfigError
from .estimators import WEIGHT_FLOOR, _Inverter, delta_rows
from .inference import bootstrap, bootstrap_report
from .nuisance import NuisanceFit, NuisanceValues, fit_nuisances


def _zero(e, m, x):
    return np.zeros(np.shape(x)[0])


@dataclass(frozen=True)
class SelectionFunction:
    """A selection-bias function ``t(e, m, x)``.

    ``evaluator(e, m, x)`` receives an exposure level, a mediator value and an
    (n, p) covariate matrix, and returns n values (or a scalar).
    """

    label: str
    lam: tuple[float, ...]
    evaluator: Callable = field(default=_zero, compare=False, repr=False)

    def evaluate(self, e: int, m: int, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.asarray(self.evaluator(e, m, x), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)).astype(float)

    @property
    def is_zero(self) -> bool:
        return all(v == 0 for v in self.lam)

    def to_dict(self) -> dict:
        return {"label": self.label, "lambda": list(self.lam)}


def zero_function() -> SelectionFunction:
    return SelectionFunction("zero", (0.0,), _zero)


def constant(lam: float) -> SelectionFunction:
    """``t(e, m, x) = lam``."""
    lam = float(lam)
    return SelectionFunction("constant", (lam,), lambda e, m, x: np.full(x.shape[0], lam))


def exposure_asymmetric(lam0: float, lam1: float) -> SelectionFunction:
    """``t(0, m, x) = lam0`` and ``t(1, m, x) = lam1``."""
    lam0, lam1 = float(lam0), float(lam1)
    return SelectionFunction("exposure_asymmetric", (lam0, lam1),
                             lambda e, m, x: np.full(x.shape[0], lam1 if e == 1 else lam0))


def mediator_linear(lam0: float, lam1: float) -> SelectionFunction:
    """``t(e, m, x) = lam_e * m``."""
    lam0, lam1 = float(lam0), float(lam1)
    return SelectionFunction("mediator_linear", (lam0, lam1),
                             lambda e, m, x: np.full(x.shape[0], (lam1 if e == 1 else lam0) * m))


FAMILIES: dict[str, Callable[..., SelectionFunction]] = {
    "constant": constant,
    "exposure_asymmetric": exposure_asymmetric,
    "mediator_linear": mediator_linear,
}


def register_family(name: str, constructor: Callable[..., SelectionFunction]) -> None:
    FAMILIES[name] = constructor


def make_grid(family: str, lambdas) -> list[SelectionFunction]:
    """Selection functions of ``family`` at each parameter value.

    A scalar parameter is accepted for two-parameter families and then used
    for both exposure levels.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown sensitivity family {family!r}; choose from {sorted(FAMILIES)}")
    lambdas = list(lambdas)
    if not lambdas:
        raise ConfigError("sensitivity grid is empty")
    grid = []
    for lam in lambdas:
        params = list(np.atleast_1d(np.asarray(lam, dtype=float)))
        if family != "constant" and len(params) == 1:
            params = params * 2
        try:
            grid.append(FAMILIES[family](*params))
        except TypeError:
            raise ConfigError(f"bad parameter {lam!r} for family {family!r}") from None
    if not any(t.is_zero for t in grid):
        raise ConfigError("sensitivity grid must include lambda = 0")
    return grid


def _t_table(t: SelectionFunction, x: np.ndarray, k: int) -> np.ndarray:
    """``tt[e, i, m] = t(e, m, x_i)``."""
    n = x.shape[0]
    tt = np.empty((2, n, k))
    for e in (0, 1):
        for m in range(k):
            tt[e, :, m] = t.evaluate(e, m, x)
    return tt


def eta_tilde_from_values(v: NuisanceValues, x: np.ndarray, t: SelectionFunction) -> np.ndarray:
    k = v.mu.shape[2]
    tt = _t_table(t, np.atleast_2d(x), k)
    inner = v.mu[1] + tt[0] * (1.0 - v.fm[0]) - tt[1] * (1.0 - v.fm[1])
    return np.sum(inner * v.fm[0], axis=-1)


def eta_tilde(x, fit: NuisanceFit, t: SelectionFunction):
    """Bias-corrected ``eta(1, 0, x)`` at one row or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    out = eta_tilde_from_values(fit.values_at(np.atleast_2d(x)), np.atleast_2d(x), t)
    return float(out[0]) if x.ndim == 1 else out


def sensitivity_rows(d: MediationDataset, v: NuisanceValues, t: SelectionFunction,
                     floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Per-row terms of the doubly robust estimator of theta0 under ``t``."""
    inv = _Inverter(floor)
    idx = np.arange(d.n)
    exposed = d.e == 1
    w = exposed * v.fm[0, idx, d.m] * inv(v.fe[1], exposed) * inv(v.fm[1, idx, d.m], exposed)
    return w * (d.y - v.mu[1, idx, d.m]) + eta_tilde_from_values(v, d.x, t)


def weighting_rows(d: MediationDataset, v: NuisanceValues, t: SelectionFunction,
                   floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Per-row terms of the pure weighting representation under ``t``:
    ``E f(M|0,X)/{f(1|X) f(M|1,X)} {Y - t(1,M,X)(1 - f(M|1,X)) + t(0,M,X)(1 - f(M|0,X))}``."""
    inv = _Inverter(floor)
    idx = np.arange(d.n)
    exposed = d.e == 1
    tt = _t_table(t, d.x, v.mu.shape[2])
    f0, f1 = v.fm[0, idx, d.m], v.fm[1, idx, d.m]
    w = exposed * f0 * inv(v.fe[1], exposed) * inv(f1, exposed)
    return w * (d.y - tt[1, idx, d.m] * (1.0 - f1) + tt[0, idx, d.m] * (1.0 - f0))


def theta_doubly_sens(d: MediationDataset, fit, t: SelectionFunction) -> float:
    d.require_both_arms()
    return float(np.mean(sensitivity_rows(d, fit.values(d), t)))


@dataclass(frozen=True)
class SensitivityGrid:
    functions: tuple[SelectionFunction, ...]
    reports: tuple[EstimateReport, ...]
    delta0: float
    replicates: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "delta0": self.delta0,
            "bootstrap_replicates": self.replicates,
            "bootstrap_failures": self.failures,
            "rows": [{**t.to_dict(), **r.to_dict()} for t, r in zip(self.functions, self.reports)],
        }


def _nde_vector(d: MediationDataset, fit: NuisanceFit, grid) -> tuple[np.ndarray, float]:
    v = fit.values(d)
    # column means of one stacked array, the same reduction the analytic
    # effect reports use, so the t = 0 entry matches them bit for bit
    cols = [delta_rows(0, d, v)[0]] + [sensitivity_rows(d, v, t) for t in grid]
    means = np.column_stack(cols).mean(axis=0)
    return means[1:] - means[0], float(means[0])


def sensitivity_curve(d: MediationDataset, specs: NuisanceSpecs, grid, B: int = 500, seed: int = 0,
                      level: float = 0.95, fit: NuisanceFit | None = None, workers: int = 1) -> SensitivityGrid:
    """Direct-effect estimates and bootstrap percentile intervals over ``grid``.

    Every bootstrap replicate refits the working models once and evaluates
    all grid points, sharing one estimate of ``E(Y(0))``.
    """
    grid = tuple(grid)
    if not grid:
        raise ConfigError("sensitivity grid is empty")
    if not any(t.is_zero for t in grid):
        raise ConfigError("sensitivity grid must include lambda = 0")
    d.require_both_arms()
    fit = fit or fit_nuisances(d, specs)
    points, delta0 = _nde_vector(d, fit, grid)

    def pipeline(db: MediationDataset) -> np.ndarray:
        db.require_both_arms()
        return _nde_vector(db, fit_nuisances(db, specs), grid)[0]

    boot = bootstrap(d, pipeline, B=B, seed=seed, level=level, workers=workers)
    reports = tuple(
        bootstrap_report("NDE", "difference", float(points[j]), boot, j, method="sensitivity_doubly")
        for j in range(len(grid))
    )
    return SensitivityGrid(grid, reports, float(delta0), boot.replicates, boot.failures)
