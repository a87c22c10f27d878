"""Point estimators of the mediation functional, the counterfactual means and
the natural direct and indirect effects.

Each estimator is the sample mean of a per-row function of the data and the
fitted nuisance values; the row functions are exposed so the inference code
can reuse them as (uncentred) influence functions.

Kinds of estimator for ``theta0 = E(Y(1, M(0)))``:

``ym``      plug-in of the outcome and mediator models
``ye``      outcome model weighted by the inverse propensity of the unexposed
``em``      inverse-propensity and mediator-density-ratio weighting of Y
``triply``  the augmented estimator combining all three models
``doubly``  the ``triply`` estimator without the propensity augmentation
            (the zero-bias member of the sensitivity family)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EstimateReport, MediationDataset
from .errors import DomainError
from .nuisance import NuisanceValues

THETA_KINDS = ("ym", "ye", "em", "triply", "doubly")
EFFECTS = ("NDE", "NIE", "total")
WEIGHT_FLOOR = 1e-12


class _Inverter:
    """Reciprocals with a floor on the denominator; counts floored rows that matter."""

    def __init__(self, floor: float):
        self.floor = floor
        self.events = 0
        self.max_weight = 0.0

    def __call__(self, p: np.ndarray, used: np.ndarray | None = None) -> np.ndarray:
        low = p < self.floor
        if used is not None:
            low = low & used
        self.events += int(np.count_nonzero(low))
        w = 1.0 / np.maximum(p, self.floor)
        if used is not None and np.any(used):
            self.max_weight = max(self.max_weight, float(np.max(w[used])))
        return w


@dataclass(frozen=True)
class RowEstimate:
    """An estimate together with the rows it averages."""

    value: float
    rows: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _observed(d: MediationDataset, v: NuisanceValues):
    idx = np.arange(d.n)
    mu_obs = v.mu[:, idx, d.m]
    fm_obs = v.fm[:, idx, d.m]
    return mu_obs, fm_obs


def theta_rows(kind: str, d: MediationDataset, v: NuisanceValues, floor: float = WEIGHT_FLOOR):
    """Per-row terms whose mean is the ``kind`` estimator of theta0.

    Returns ``(rows, diagnostics)``.
    """
    if kind not in THETA_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}; choose from {THETA_KINDS}")
    inv = _Inverter(floor)
    exposed = d.e == 1
    unexposed = ~exposed
    mu_obs, fm_obs = _observed(d, v)
    eta10 = v.eta(1, 0)
    diag = {}
    if kind == "ym":
        rows = eta10
    elif kind == "ye":
        rows = unexposed * inv(v.fe[0], unexposed) * mu_obs[1]
    elif kind == "em":
        rows = d.y * exposed * inv(v.fe[1], exposed) * fm_obs[0] * inv(fm_obs[1], exposed)
    else:
        w1 = exposed * fm_obs[0] * inv(v.fe[1], exposed) * inv(fm_obs[1], exposed)
        aug_y = w1 * (d.y - mu_obs[1])
        diag["aug_outcome_mean"] = float(np.mean(aug_y))
        rows = aug_y + eta10
        if kind == "triply":
            aug_m = unexposed * inv(v.fe[0], unexposed) * (mu_obs[1] - eta10)
            diag["aug_mediator_mean"] = float(np.mean(aug_m))
            rows = rows + aug_m
    diag["floor_events"] = float(inv.events)
    diag["max_weight"] = inv.max_weight
    return rows, diag


def delta_rows(e: int, d: MediationDataset, v: NuisanceValues, floor: float = WEIGHT_FLOOR):
    """Per-row augmented inverse-propensity terms for ``E(Y(e))``."""
    inv = _Inverter(floor)
    arm = d.e == e
    eta_ee = v.eta(e, e)
    rows = arm * inv(v.fe[e], arm) * (d.y - eta_ee) + eta_ee
    return rows, {"floor_events": float(inv.events), "max_weight": inv.max_weight}


def _check_arms(d: MediationDataset) -> None:
    d.require_both_arms()


def theta_estimate(d: MediationDataset, fit, kind: str = "triply", floor: float = WEIGHT_FLOOR) -> RowEstimate:
    """``kind`` estimate of theta0; ``fit`` is anything with ``values(d)``."""
    _check_arms(d)
    v = fit.values(d)
    rows, diag = theta_rows(kind, d, v, floor)
    diag["min_propensity"] = float(np.min(v.fe))
    diag["min_mediator_density"] = float(np.min(v.fm))
    return RowEstimate(float(np.mean(rows)), rows, diag)


def delta_estimate(d: MediationDataset, fit, e: int, floor: float = WEIGHT_FLOOR) -> RowEstimate:
    if e not in (0, 1):
        raise ValueError("exposure level must be 0 or 1")
    _check_arms(d)
    rows, diag = delta_rows(e, d, fit.values(d), floor)
    return RowEstimate(float(np.mean(rows)), rows, diag)


def theta_ym(d: MediationDataset, fit) -> float:
    return theta_estimate(d, fit, "ym").value


def theta_ye(d: MediationDataset, fit) -> float:
    return theta_estimate(d, fit, "ye").value


def theta_em(d: MediationDataset, fit) -> float:
    return theta_estimate(d, fit, "em").value


def theta_triply(d: MediationDataset, fit) -> float:
    return theta_estimate(d, fit, "triply").value


def theta_doubly(d: MediationDataset, fit) -> float:
    return theta_estimate(d, fit, "doubly").value


def delta_doubly(d: MediationDataset, fit, e: int) -> float:
    return delta_estimate(d, fit, e).value


# effect scales ---------------------------------------------------------


def _require_open_unit(values, what):
    for v in values:
        if not 0.0 < v < 1.0:
            raise DomainError(f"{what} needs component estimates in (0, 1); got {v!r}")


def effect_value(estimand: str, scale: str, theta: float, delta0: float, delta1: float) -> float:
    """Map the component means to an estimand on the requested scale."""
    if estimand in ("theta0", "delta0", "delta1"):
        if scale != "difference":
            raise DomainError(f"{estimand} is a mean, not a contrast; use the difference scale")
        return {"theta0": theta, "delta0": delta0, "delta1": delta1}[estimand]
    num, den = {"NDE": (theta, delta0), "NIE": (delta1, theta), "total": (delta1, delta0)}[estimand]
    if scale == "difference":
        return num - den
    if scale == "risk_ratio":
        if not (num > 0 and den > 0):
            raise DomainError(f"risk ratio needs positive component means; got {num!r}, {den!r}")
        return num / den
    if scale == "odds_ratio":
        _require_open_unit((num, den), "odds ratio")
        return num * (1 - den) / (den * (1 - num))
    raise DomainError(f"unknown scale {scale!r}")


def log_effect_gradient(estimand: str, scale: str, theta: float, delta0: float, delta1: float) -> np.ndarray:
    """Gradient in (theta, delta0, delta1) of the effect on the analysis scale.

    The analysis scale is the difference itself, or the log of a ratio.
    """
    pos = {"theta0": (0, None), "delta0": (1, None), "delta1": (2, None),
           "NDE": (0, 1), "NIE": (2, 0), "total": (2, 1)}[estimand]
    comps = (theta, delta0, delta1)
    g = np.zeros(3)
    a, b = pos
    if scale == "difference":
        g[a] += 1.0
        if b is not None:
            g[b] -= 1.0
        return g
    if scale == "risk_ratio":
        dfun = lambda p: 1.0 / p  # noqa: E731
    else:
        dfun = lambda p: 1.0 / (p * (1.0 - p))  # noqa: E731
    g[a] += dfun(comps[a])
    g[b] -= dfun(comps[b])
    return g


@dataclass(frozen=True)
class EffectRequest:
    effect: str = "NDE"
    scale: str = "difference"
    theta_kind: str = "triply"

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.scale not in ("difference", "risk_ratio", "odds_ratio"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.theta_kind not in THETA_KINDS:
            raise ValueError(f"unknown estimator kind {self.theta_kind!r}")


def check_scale(d: MediationDataset, scale: str) -> None:
    if scale != "difference" and d.outcome_kind != "binary":
        raise DomainError(f"{scale} scale requires a binary outcome")


def components(d: MediationDataset, fit, theta_kind: str = "triply", floor: float = WEIGHT_FLOOR):
    """theta0, delta0 and delta1 estimates as ``RowEstimate`` objects."""
    theta = theta_estimate(d, fit, theta_kind, floor)
    return {
        "theta0": theta,
        "delta0": delta_estimate(d, fit, 0, floor),
        "delta1": delta_estimate(d, fit, 1, floor),
    }


def effect(d: MediationDataset, fit, req: EffectRequest) -> EstimateReport:
    """Point estimate of a natural effect (standard error left empty)."""
    check_scale(d, req.scale)
    comp = components(d, fit, req.theta_kind)
    point = effect_value(req.effect, req.scale, comp["theta0"].value, comp["delta0"].value, comp["delta1"].value)
    diag = {f"theta0.{k}": v for k, v in comp["theta0"].diagnostics.items()}
    diag["floor_events"] = sum(c.diagnostics["floor_events"] for c in comp.values())
    return EstimateReport(req.effect, req.scale, float(point), method=req.theta_kind, diagnostics=diag)

